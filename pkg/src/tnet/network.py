"""Declarative model of a transitory queueing network instance.

A network is K FIFO single-server nodes coupled by a substochastic routing
matrix P (source-row convention: P[i, j] is the probability that a job
finishing at node i joins node j; 1 - sum_j P[i, j] is the exit
probability).  A fixed population of n jobs enters each entry node at epochs
drawn i.i.d. from that node's arrival law, jointly coupled across entry
nodes by a correlation model.  Service is a unit-rate renewal process time
changed by the cumulative rate M_k(t) = integral of mu_k from t0.

All value objects here are immutable and validated; specs round-trip through
a strict JSON schema (unknown fields rejected).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .paths import TimeGrid, default_grid

SPECTRAL_RADIUS_MARGIN = 1e-8
_POWER_ITERATIONS = 200
_POWER_TOL = 1e-10


class SpecValidationError(ValueError):
    """Raised when a NetworkSpec violates its invariants."""

    def __init__(self, issues: list[str]):
        self.issues = issues
        super().__init__("; ".join(issues))


# ---------------------------------------------------------------------------
# Arrival laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArrivalLaw:
    """Distribution of a single job's arrival epoch, with compact support."""

    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def cdf(self, t):
        raise NotImplementedError

    def pdf(self, t):
        raise NotImplementedError

    def quantile(self, u):
        raise NotImplementedError


@dataclass(frozen=True)
class UniformLaw(ArrivalLaw):
    a: float
    b: float

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"uniform law needs b > a, got [{self.a}, {self.b}]")

    @property
    def support(self):
        return (self.a, self.b)

    def cdf(self, t):
        return np.clip((np.asarray(t, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= self.a) & (t <= self.b), 1.0 / (self.b - self.a), 0.0)

    def quantile(self, u):
        return self.a + (self.b - self.a) * np.asarray(u, dtype=float)


@dataclass(frozen=True)
class TriangularLaw(ArrivalLaw):
    """Symmetric triangular density on [a, b], peaking at the midpoint."""

    a: float
    b: float

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"triangular law needs b > a, got [{self.a}, {self.b}]")

    @property
    def support(self):
        return (self.a, self.b)

    def cdf(self, t):
        u = np.clip((np.asarray(t, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)
        return np.where(u <= 0.5, 2.0 * u * u, 1.0 - 2.0 * (1.0 - u) ** 2)

    def pdf(self, t):
        w = self.b - self.a
        u = (np.asarray(t, dtype=float) - self.a) / w
        core = np.where(u <= 0.5, 4.0 * u, 4.0 * (1.0 - u)) / w
        return np.where((u >= 0.0) & (u <= 1.0), core, 0.0)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        lo = np.sqrt(u / 2.0)
        hi = 1.0 - np.sqrt((1.0 - u) / 2.0)
        return self.a + (self.b - self.a) * np.where(u <= 0.5, lo, hi)


@dataclass(frozen=True)
class PiecewiseLinearCdfLaw(ArrivalLaw):
    """CDF given by knots (t_i, F_i), strictly increasing in both coordinates,
    F_0 = 0 and F_last = 1; linear in between."""

    knots: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ts = np.array([k[0] for k in self.knots], dtype=float)
        fs = np.array([k[1] for k in self.knots], dtype=float)
        if len(ts) < 2:
            raise ValueError("piecewise-linear CDF needs at least two knots")
        if np.any(np.diff(ts) <= 0) or np.any(np.diff(fs) <= 0):
            raise ValueError("piecewise-linear CDF knots must be strictly increasing")
        if abs(fs[0]) > 1e-12 or abs(fs[-1] - 1.0) > 1e-12:
            raise ValueError("piecewise-linear CDF must run from 0 to 1")
        object.__setattr__(self, "knots", tuple((float(t), float(f)) for t, f in self.knots))

    def _arrays(self):
        ts = np.array([k[0] for k in self.knots])
        fs = np.array([k[1] for k in self.knots])
        return ts, fs

    @property
    def support(self):
        return (self.knots[0][0], self.knots[-1][0])

    def cdf(self, t):
        ts, fs = self._arrays()
        return np.interp(np.asarray(t, dtype=float), ts, fs, left=0.0, right=1.0)

    def pdf(self, t):
        ts, fs = self._arrays()
        slopes = np.diff(fs) / np.diff(ts)
        t = np.asarray(t, dtype=float)
        seg = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(slopes) - 1)
        return np.where((t >= ts[0]) & (t < ts[-1]), slopes[seg], 0.0)

    def quantile(self, u):
        ts, fs = self._arrays()
        return np.interp(np.asarray(u, dtype=float), fs, ts)


def cdf_eval(law: ArrivalLaw, t):
    """F(t); 0 below the support, 1 above it."""
    return law.cdf(t)


# ---------------------------------------------------------------------------
# Correlation models for joint arrival epochs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Independent:
    kind: str = field(default="independent", init=False)


@dataclass(frozen=True)
class Comonotone:
    """One shared uniform per job: identical quantile at every entry node."""

    kind: str = field(default="comonotone", init=False)


@dataclass(frozen=True)
class GaussianCopula:
    """Gaussian copula with correlation matrix rho (unit diagonal, SPD)."""

    rho: tuple[tuple[float, ...], ...]
    kind: str = field(default="gaussian_copula", init=False)

    def __post_init__(self):
        r = self.rho_matrix
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError("copula correlation must be square")
        if not np.allclose(r, r.T, atol=1e-12):
            raise ValueError("copula correlation must be symmetric")
        if not np.allclose(np.diag(r), 1.0, atol=1e-12):
            raise ValueError("copula correlation must have unit diagonal")
        if np.min(np.linalg.eigvalsh(r)) <= 0:
            raise ValueError("copula correlation must be positive definite")
        object.__setattr__(self, "rho", tuple(tuple(float(v) for v in row) for row in self.rho))

    @property
    def rho_matrix(self) -> np.ndarray:
        return np.asarray(self.rho, dtype=float)


CorrelationModel = Independent | Comonotone | GaussianCopula


# ---------------------------------------------------------------------------
# Service profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Deterministic:
    kind: str = field(default="deterministic", init=False)
    scv: float = field(default=0.0, init=False)


@dataclass(frozen=True)
class Exponential:
    kind: str = field(default="exponential", init=False)
    scv: float = field(default=1.0, init=False)


@dataclass(frozen=True)
class GammaScv:
    """Gamma inter-renewal times with unit mean and squared CV `scv`."""

    scv: float
    kind: str = field(default="gamma_scv", init=False)

    def __post_init__(self):
        if not self.scv > 0:
            raise ValueError("gamma base needs scv > 0")


BaseRenewal = Deterministic | Exponential | GammaScv


@dataclass(frozen=True)
class ServiceProfile:
    """Piecewise-constant rate mu(t) >= 0 plus the unit-rate renewal base.

    `segments` is a sequence of (start_time, rate) pairs; the first start
    must equal the horizon t0 and the rate holds on [start, next_start).
    Past the final segment (and past t1, for the post-horizon drain) the last
    rate continues.  The rate argument is the node's operational clock, which
    coincides with wall time for every constant-after-start profile.
    """

    segments: tuple[tuple[float, float], ...]
    base: BaseRenewal = Exponential()

    def __post_init__(self):
        segs = tuple((float(t), float(r)) for t, r in self.segments)
        if not segs:
            raise ValueError("service profile needs at least one rate segment")
        starts = np.array([s[0] for s in segs])
        rates = np.array([s[1] for s in segs])
        if np.any(np.diff(starts) <= 0):
            raise ValueError("rate segment starts must be strictly increasing")
        if np.any(rates < 0):
            raise ValueError("service rates must be nonnegative")
        object.__setattr__(self, "segments", segs)

    @staticmethod
    def constant(rate: float, t0: float, base: BaseRenewal = Exponential()) -> "ServiceProfile":
        return ServiceProfile(((t0, rate),), base)

    @staticmethod
    def delayed_constant(
        rate: float, t0: float, start: float, base: BaseRenewal = Exponential()
    ) -> "ServiceProfile":
        """Rate 0 on [t0, start), `rate` afterwards."""
        if start <= t0:
            return ServiceProfile.constant(rate, t0, base)
        return ServiceProfile(((t0, 0.0), (start, rate)), base)

    def _arrays(self):
        starts = np.array([s[0] for s in self.segments])
        rates = np.array([s[1] for s in self.segments])
        return starts, rates

    @property
    def t0(self) -> float:
        return self.segments[0][0]

    def rate_at(self, t):
        starts, rates = self._arrays()
        t = np.asarray(t, dtype=float)
        seg = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(rates) - 1)
        return rates[seg]

    def cumulative(self, t):
        """M(t) = integral of mu over [t0, t]; exact, extends past the last segment."""
        starts, rates = self._arrays()
        ends = np.append(starts[1:], np.inf)
        t_arr = np.asarray(t, dtype=float)
        tt = t_arr.reshape(-1)
        chunks = np.clip(np.minimum(ends[None, :], tt[:, None]) - starts[None, :], 0.0, None)
        out = chunks @ rates
        return float(out[0]) if t_arr.ndim == 0 else out.reshape(t_arr.shape)

    def inverse_cumulative(self, v) -> float:
        """Earliest u >= t0 with M(u) = v; inf when v is never reached."""
        starts, rates = self._arrays()
        level = 0.0
        for i, (s, r) in enumerate(zip(starts, rates)):
            end = starts[i + 1] if i + 1 < len(starts) else np.inf
            gain = r * (end - s) if np.isfinite(end) else np.inf
            if v <= level + gain + 1e-300:
                if r == 0.0:
                    if v <= level:
                        return s
                    continue
                return s + (v - level) / r
            level += gain
        return np.inf

    def diffusion_coefficient(self) -> float:
        """Scale of the centered-service Brownian term: sqrt(scv) of the base."""
        return float(np.sqrt(self.base.scv))

    def stationary_rate(self, t1: float) -> float | None:
        """The single positive rate if the profile is constant (after an
        optional leading zero stretch) through t1; None otherwise."""
        starts, rates = self._arrays()
        live = [i for i, s in enumerate(starts) if s < t1]
        rs = [rates[i] for i in live]
        if len(rs) == 1 and rs[0] > 0:
            return float(rs[0])
        if len(rs) == 2 and rs[0] == 0.0 and rs[1] > 0:
            return float(rs[1])
        return None


def rate_cumulative(profile: ServiceProfile, t, horizon: TimeGrid | None = None):
    """M(t) with an explicit horizon check (spec operation surface)."""
    if horizon is not None:
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < horizon.t0 - 1e-12) or np.any(t_arr > horizon.t1 + 1e-12):
            raise ValueError(f"time {t} outside horizon [{horizon.t0}, {horizon.t1}]")
    return profile.cumulative(t)


# ---------------------------------------------------------------------------
# Network spec
# ---------------------------------------------------------------------------


def spectral_radius(P: np.ndarray, iterations: int = _POWER_ITERATIONS, tol: float = _POWER_TOL) -> float:
    """Perron root of a nonnegative matrix by power iteration."""
    P = np.asarray(P, dtype=float)
    k = P.shape[0]
    v = np.full(k, 1.0 / k)
    radius = 0.0
    for _ in range(iterations):
        w = P @ v
        norm = np.sum(np.abs(w))
        if norm < 1e-300:
            return 0.0
        estimate = norm / np.sum(np.abs(v))
        w = w / norm
        if abs(estimate - radius) < tol:
            return float(estimate)
        radius, v = estimate, w
    return float(radius)


@dataclass(frozen=True)
class NetworkSpec:
    """K nodes, routing P, entry nodes with arrival laws, service profiles,
    and the analysis horizon.  Node indices are 0-based internally and
    1-based in the JSON schema."""

    K: int
    P: np.ndarray
    entry_nodes: tuple[int, ...]
    arrivals: tuple[ArrivalLaw, ...]
    correlation: CorrelationModel
    services: tuple[ServiceProfile, ...]
    horizon: TimeGrid

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float).copy()
        P.flags.writeable = False
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "entry_nodes", tuple(int(e) for e in self.entry_nodes))
        object.__setattr__(self, "arrivals", tuple(self.arrivals))
        object.__setattr__(self, "services", tuple(self.services))

    @property
    def J(self) -> int:
        return len(self.entry_nodes)

    def arrival_law_for(self, node: int) -> ArrivalLaw | None:
        for j, e in enumerate(self.entry_nodes):
            if e == node:
                return self.arrivals[j]
        return None

    def reflection_matrix(self) -> np.ndarray:
        return np.eye(self.K) - self.P.T

    def validation_issues(self) -> list[str]:
        issues: list[str] = []
        if self.K < 1:
            issues.append(f"node count K={self.K} must be >= 1")
            return issues
        if self.P.shape != (self.K, self.K):
            issues.append(f"routing matrix shape {self.P.shape} != ({self.K}, {self.K})")
            return issues
        if np.any(self.P < 0):
            bad = np.argwhere(self.P < 0)[0]
            issues.append(f"negative routing probability at P[{bad[0] + 1}, {bad[1] + 1}]")
        rows = self.P.sum(axis=1)
        for i, s in enumerate(rows):
            if s > 1.0 + 1e-12:
                issues.append(f"row {i + 1} of P sums to {s:.6g} > 1")
        radius = spectral_radius(self.P)
        if not radius < 1.0 - SPECTRAL_RADIUS_MARGIN:
            issues.append(f"spectral radius {radius:.8g} violates the H-R condition (< 1)")
        if len(set(self.entry_nodes)) != len(self.entry_nodes):
            issues.append("entry nodes must be distinct")
        if not self.entry_nodes:
            issues.append("at least one entry node required")
        for e in self.entry_nodes:
            if not 0 <= e < self.K:
                issues.append(f"entry node {e + 1} outside 1..{self.K}")
        if len(self.arrivals) != len(self.entry_nodes):
            issues.append(
                f"{len(self.arrivals)} arrival laws for {len(self.entry_nodes)} entry nodes"
            )
        for j, law in enumerate(self.arrivals):
            lo, hi = law.support
            if lo < self.horizon.t0 - 1e-12 or hi > self.horizon.t1 + 1e-12:
                issues.append(
                    f"arrival support [{lo}, {hi}] of entry node "
                    f"{self.entry_nodes[j] + 1} outside horizon [{self.horizon.t0}, {self.horizon.t1}]"
                )
        if len(self.services) != self.K:
            issues.append(f"{len(self.services)} service profiles for K={self.K} nodes")
        for k, prof in enumerate(self.services):
            if abs(prof.t0 - self.horizon.t0) > 1e-9:
                issues.append(f"service profile of node {k + 1} must start at t0={self.horizon.t0}")
        if isinstance(self.correlation, GaussianCopula):
            if self.correlation.rho_matrix.shape != (self.J, self.J):
                issues.append("copula correlation dimension != number of entry nodes")
        return issues

    def validate(self) -> None:
        issues = self.validation_issues()
        if issues:
            raise SpecValidationError(issues)

    # -- JSON schema ----------------------------------------------------------

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "K": self.K,
            "P": [float(v) for v in self.P.reshape(-1)],
            "entry_nodes": [e + 1 for e in self.entry_nodes],
            "arrivals": [_law_to_json(law) for law in self.arrivals],
            "correlation": _correlation_to_json(self.correlation),
            "services": [_service_to_json(s) for s in self.services],
            "horizon": {"t0": self.horizon.t0, "t1": self.horizon.t1, "h": self.horizon.h},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    @staticmethod
    def from_json_dict(doc: dict[str, Any]) -> "NetworkSpec":
        return _spec_from_json(doc)

    @staticmethod
    def from_json(text: str) -> "NetworkSpec":
        return _spec_from_json(json.loads(text))


def validate_spec(spec: NetworkSpec) -> list[str]:
    """All violated invariants, with 1-based node/entry indices; empty if valid."""
    return spec.validation_issues()


# ---------------------------------------------------------------------------
# JSON (de)serialization; unknown fields are rejected at every level
# ---------------------------------------------------------------------------


def _require_keys(doc: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown field(s) {sorted(unknown)} in {where}")
    missing = required - set(doc)
    if missing:
        raise ValueError(f"missing field(s) {sorted(missing)} in {where}")


def _law_to_json(law: ArrivalLaw) -> dict:
    if isinstance(law, UniformLaw):
        return {"kind": "uniform", "a": law.a, "b": law.b}
    if isinstance(law, TriangularLaw):
        return {"kind": "triangular", "a": law.a, "b": law.b}
    if isinstance(law, PiecewiseLinearCdfLaw):
        return {"kind": "piecewise_linear_cdf", "knots": [list(k) for k in law.knots]}
    raise TypeError(f"unknown arrival law {law!r}")


def _law_from_json(doc: dict) -> ArrivalLaw:
    kind = doc.get("kind")
    if kind == "uniform":
        _require_keys(doc, {"kind", "a", "b"}, {"kind", "a", "b"}, "uniform arrival law")
        return UniformLaw(float(doc["a"]), float(doc["b"]))
    if kind == "triangular":
        _require_keys(doc, {"kind", "a", "b"}, {"kind", "a", "b"}, "triangular arrival law")
        return TriangularLaw(float(doc["a"]), float(doc["b"]))
    if kind == "piecewise_linear_cdf":
        _require_keys(doc, {"kind", "knots"}, {"kind", "knots"}, "piecewise-linear arrival law")
        return PiecewiseLinearCdfLaw(tuple((float(t), float(f)) for t, f in doc["knots"]))
    raise ValueError(f"unknown arrival law kind {kind!r}")


def _correlation_to_json(c: CorrelationModel) -> dict:
    if isinstance(c, Independent):
        return {"kind": "independent"}
    if isinstance(c, Comonotone):
        return {"kind": "comonotone"}
    if isinstance(c, GaussianCopula):
        return {"kind": "gaussian_copula", "rho": [list(r) for r in c.rho]}
    raise TypeError(f"unknown correlation model {c!r}")


def _correlation_from_json(doc: dict) -> CorrelationModel:
    kind = doc.get("kind")
    if kind == "independent":
        _require_keys(doc, {"kind"}, {"kind"}, "correlation model")
        return Independent()
    if kind == "comonotone":
        _require_keys(doc, {"kind"}, {"kind"}, "correlation model")
        return Comonotone()
    if kind == "gaussian_copula":
        _require_keys(doc, {"kind", "rho"}, {"kind", "rho"}, "correlation model")
        return GaussianCopula(tuple(tuple(float(v) for v in row) for row in doc["rho"]))
    raise ValueError(f"unknown correlation kind {kind!r}")


def _base_to_json(base: BaseRenewal) -> dict:
    if isinstance(base, Deterministic):
        return {"kind": "deterministic"}
    if isinstance(base, Exponential):
        return {"kind": "exponential"}
    if isinstance(base, GammaScv):
        return {"kind": "gamma_scv", "scv": base.scv}
    raise TypeError(f"unknown renewal base {base!r}")


def _base_from_json(doc: dict) -> BaseRenewal:
    kind = doc.get("kind")
    if kind == "deterministic":
        _require_keys(doc, {"kind"}, {"kind"}, "renewal base")
        return Deterministic()
    if kind == "exponential":
        _require_keys(doc, {"kind"}, {"kind"}, "renewal base")
        return Exponential()
    if kind == "gamma_scv":
        _require_keys(doc, {"kind", "scv"}, {"kind", "scv"}, "renewal base")
        return GammaScv(float(doc["scv"]))
    raise ValueError(f"unknown renewal base kind {kind!r}")


def _service_to_json(s: ServiceProfile) -> dict:
    return {"rate": [list(seg) for seg in s.segments], "base": _base_to_json(s.base)}


def _service_from_json(doc: dict, k: int) -> ServiceProfile:
    _require_keys(doc, {"rate", "base"}, {"rate"}, f"service profile of node {k + 1}")
    base = _base_from_json(doc["base"]) if "base" in doc else Exponential()
    return ServiceProfile(tuple((float(t), float(r)) for t, r in doc["rate"]), base)


def _spec_from_json(doc: dict) -> NetworkSpec:
    _require_keys(
        doc,
        {"K", "P", "entry_nodes", "arrivals", "correlation", "services", "horizon"},
        {"K", "P", "entry_nodes", "arrivals", "correlation", "services", "horizon"},
        "network spec",
    )
    k = int(doc["K"])
    flat = [float(v) for v in doc["P"]]
    if len(flat) != k * k:
        raise ValueError(f"routing matrix has {len(flat)} entries, expected {k * k}")
    hdoc = doc["horizon"]
    _require_keys(hdoc, {"t0", "t1", "h"}, {"t0", "t1"}, "horizon")
    horizon = (
        TimeGrid(float(hdoc["t0"]), float(hdoc["t1"]), float(hdoc["h"]))
        if "h" in hdoc
        else default_grid(float(hdoc["t0"]), float(hdoc["t1"]))
    )
    return NetworkSpec(
        K=k,
        P=np.array(flat).reshape(k, k),
        entry_nodes=tuple(int(e) - 1 for e in doc["entry_nodes"]),
        arrivals=tuple(_law_from_json(a) for a in doc["arrivals"]),
        correlation=_correlation_from_json(doc["correlation"]),
        services=tuple(_service_from_json(s, i) for i, s in enumerate(doc["services"])),
        horizon=horizon,
    )


def load_spec(path: str) -> NetworkSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return NetworkSpec.from_json(fh.read())


def tandem_spec(
    rates: Sequence[float],
    law: ArrivalLaw,
    horizon: TimeGrid,
    bases: Sequence[BaseRenewal] | None = None,
    service_start: float | None = None,
) -> NetworkSpec:
    """Single-entry chain 1 -> 2 -> ... -> K with the given service rates."""
    K = len(rates)
    P = np.zeros((K, K))
    for i in range(K - 1):
        P[i, i + 1] = 1.0
    if bases is None:
        bases = [Exponential()] * K
    t0 = horizon.t0
    start = service_start if service_start is not None else max(t0, 0.0)
    services = tuple(
        ServiceProfile.delayed_constant(r, t0, start, base=b) if start > t0
        else ServiceProfile.constant(r, t0, base=b)
        for r, b in zip(rates, bases)
    )
    return NetworkSpec(
        K=K,
        P=P,
        entry_nodes=(0,),
        arrivals=(law,),
        correlation=Independent(),
        services=services,
        horizon=horizon,
    )
