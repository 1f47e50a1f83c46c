"""Samplers for the stochastic primitives.

Covers arrival epochs (jointly coupled across entry nodes), the
multidimensional Brownian bridge driving the arrival FCLT, time-changed
Brownian motions and renewal counting processes for service, and categorical
routing streams.

Reproducibility: every sampler takes an :class:`RngStream`; identical
(seed, key) pairs reproduce identical draws bit for bit.  One stream per
(replication, primitive) pair; streams are never shared across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import multivariate_normal, norm

from .network import (
    ArrivalLaw,
    BaseRenewal,
    Comonotone,
    CorrelationModel,
    Deterministic,
    Exponential,
    GammaScv,
    GaussianCopula,
    Independent,
    NetworkSpec,
    ServiceProfile,
)
from .paths import STEP, TimeGrid, VectorPath

_PIVOT_CLAMP = 1e-12


class CovarianceError(ValueError):
    """Bridge covariance failed positive semidefiniteness beyond tolerance."""


@dataclass(frozen=True)
class RngStream:
    """Deterministic stream: (seed, key) fully determine the sample sequence."""

    seed: int
    key: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, *self.key])))

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(int(i) for i in ids))


# ---------------------------------------------------------------------------
# Joint arrival-epoch CDFs and the bridge covariance
# ---------------------------------------------------------------------------


def _gaussian_copula_cdf(u, v, rho: float):
    """C(u, v) = Phi2(Phi^-1(u), Phi^-1(v); rho), elementwise on broadcast u, v."""
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    if abs(rho) < 1e-15:
        return u * v
    out = np.where(
        (u <= 0.0) | (v <= 0.0), 0.0, np.where(u >= 1.0, v, np.where(v >= 1.0, u, np.nan))
    )
    interior = np.isnan(out)
    if np.any(interior):
        a = norm.ppf(np.clip(u[interior], 1e-16, 1 - 1e-16))
        b = norm.ppf(np.clip(v[interior], 1e-16, 1 - 1e-16))
        dist = multivariate_normal(mean=[0.0, 0.0], cov=[[1.0, rho], [rho, 1.0]])
        vals = np.atleast_1d(dist.cdf(np.stack([a, b], axis=-1)))
        out[interior] = vals
    return out


def joint_arrival_cdf(
    law_i: ArrivalLaw, law_j: ArrivalLaw, correlation: CorrelationModel, i: int, j: int, t, s
):
    """F_{ij}(t, s) = P(T_i <= t, T_j <= s) under the correlation model.

    Defined for every (t, s); broadcasts over array arguments.
    """
    u = np.asarray(law_i.cdf(t), dtype=float)
    v = np.asarray(law_j.cdf(s), dtype=float)
    if i == j:
        return np.minimum(u, v)
    if isinstance(correlation, Independent):
        return u * v
    if isinstance(correlation, Comonotone):
        return np.minimum(u, v)
    if isinstance(correlation, GaussianCopula):
        return _gaussian_copula_cdf(u, v, float(correlation.rho_matrix[i, j]))
    raise TypeError(f"unknown correlation model {correlation!r}")


@dataclass(frozen=True)
class BridgeCovariance:
    """Covariance data of the J-dimensional arrival bridge.

    `matrix(t, s)` returns the uncentered joint-CDF matrix [F_{ij}(t, s)];
    the bridge covariance for t <= s is F_{ij}(t, s) - F_i(t) F_j(s), zero
    at the horizon start and tied down to zero at the support ends.
    """

    laws: tuple[ArrivalLaw, ...]
    correlation: CorrelationModel

    @property
    def J(self) -> int:
        return len(self.laws)

    @staticmethod
    def from_spec(spec: NetworkSpec) -> "BridgeCovariance":
        return BridgeCovariance(tuple(spec.arrivals), spec.correlation)

    def marginal_cdf(self, j: int, t):
        return self.laws[j].cdf(t)

    def matrix(self, t: float, s: float) -> np.ndarray:
        out = np.empty((self.J, self.J))
        for i in range(self.J):
            for j in range(self.J):
                out[i, j] = joint_arrival_cdf(
                    self.laws[i], self.laws[j], self.correlation, i, j, t, s
                )
        return out

    def bridge_cov(self, t: float, s: float) -> np.ndarray:
        """Cov[W0_i(t), W0_j(s)] = F_{ij}(t, s) - F_i(t) F_j(s)."""
        raw = self.matrix(t, s)
        fi = np.array([law.cdf(t) for law in self.laws])
        fj = np.array([law.cdf(s) for law in self.laws])
        return raw - np.outer(fi, fj)


def _clamped_cholesky(sigma: np.ndarray) -> tuple[np.ndarray, int]:
    """Cholesky factor of a PSD matrix, clamping conditional variances in
    [-1e-12, 0] to zero; raises CovarianceError below -1e-12."""
    n = sigma.shape[0]
    L = np.array(sigma, dtype=float)
    clamped = 0
    for j in range(n):
        d = L[j, j]
        if d < -_PIVOT_CLAMP:
            raise CovarianceError(
                f"conditional variance {d:.3e} at pivot {j} below the -1e-12 tolerance"
            )
        if d <= 0.0:
            clamped += d < 0.0
            L[j, j] = 0.0
            L[j + 1 :, j] = 0.0
            L[j, j + 1 :] = 0.0
            continue
        root = np.sqrt(d)
        L[j, j] = root
        col = L[j + 1 :, j] / root
        L[j + 1 :, j] = col
        L[j + 1 :, j + 1 :] -= np.outer(col, col)
        L[j, j + 1 :] = 0.0
    return np.tril(L), clamped


class BridgeSampler:
    """Exact grid sampler for the arrival bridge W0 o F.

    The joint Gaussian over all (coordinate, interior-grid-time) pairs is
    factored once (sequential conditional Gaussians realized as a clamped
    Cholesky); each sample is then a single matrix product.  Outside its
    law's support a coordinate is identically zero, which enforces the
    terminal tie-down exactly.
    """

    def __init__(self, cov: BridgeCovariance, grid: TimeGrid):
        self.cov = cov
        self.grid = grid
        times = grid.times
        J = cov.J
        fvals = np.stack([np.asarray(cov.laws[j].cdf(times), dtype=float) for j in range(J)])
        interior = (fvals > 0.0) & (fvals < 1.0)  # (J, m)
        # Active (time, coord) pairs in chronological order: the Cholesky then
        # realizes the sequential conditional-Gaussian recursion in time.
        active = [(i, j) for i in range(grid.m) for j in range(J) if interior[j, i]]
        self.active = active
        n = len(active)
        sigma = np.empty((n, n))
        rows: list[np.ndarray] = [
            np.array([a for a, (_, jj) in enumerate(active) if jj == j], dtype=int)
            for j in range(J)
        ]
        tidx: list[np.ndarray] = [
            np.array([ii for (ii, jj) in active if jj == j], dtype=int) for j in range(J)
        ]
        for i in range(J):
            fi = fvals[i, tidx[i]]
            for j in range(J):
                fj = fvals[j, tidx[j]]
                raw = joint_arrival_cdf(
                    self.cov.laws[i],
                    self.cov.laws[j],
                    self.cov.correlation,
                    i,
                    j,
                    times[tidx[i]][:, None],
                    times[tidx[j]][None, :],
                )
                sigma[np.ix_(rows[i], rows[j])] = raw - np.outer(fi, fj)
        self.factor, self.clamped_pivots = _clamped_cholesky(sigma) if n else (np.zeros((0, 0)), 0)

    def sample_many(self, rng: RngStream, count: int) -> np.ndarray:
        """(count, J, m) array of bridge paths."""
        gen = rng.generator()
        J, m = self.cov.J, self.grid.m
        out = np.zeros((count, J, m))
        n = len(self.active)
        if n:
            zs = gen.standard_normal((n, count))
            vals = self.factor @ zs  # (n, count)
            idx_t = np.array([a[0] for a in self.active])
            idx_j = np.array([a[1] for a in self.active])
            out[:, idx_j, idx_t] = vals.T
        return out

    def sample(self, rng: RngStream) -> VectorPath:
        return VectorPath(self.grid, self.sample_many(rng, 1)[0], interpolation="linear")


def sample_brownian_bridge(cov: BridgeCovariance, grid: TimeGrid, rng: RngStream) -> VectorPath:
    """One draw of the J-dimensional arrival bridge on the grid (exact at
    grid points; W0 vanishes at and beyond each law's support end)."""
    return BridgeSampler(cov, grid).sample(rng)


# ---------------------------------------------------------------------------
# Arrival epochs
# ---------------------------------------------------------------------------


def sample_arrival_epochs(spec: NetworkSpec, n: int, rng: RngStream) -> list[np.ndarray]:
    """Per entry node, the n arrival epochs sorted ascending.

    Job index m draws one joint vector across entry nodes per the
    correlation model; sorting is per node afterwards.
    """
    if n < 1:
        raise ValueError("need at least one job")
    gen = rng.generator()
    J = spec.J
    corr = spec.correlation
    if isinstance(corr, Independent):
        us = gen.random((J, n))
    elif isinstance(corr, Comonotone):
        shared = gen.random(n)
        us = np.tile(shared, (J, 1))
    elif isinstance(corr, GaussianCopula):
        zs = gen.multivariate_normal(np.zeros(J), corr.rho_matrix, size=n).T
        us = norm.cdf(zs)
    else:
        raise TypeError(f"unknown correlation model {corr!r}")
    return [np.sort(spec.arrivals[j].quantile(us[j])) for j in range(J)]


def counting_path(epochs: np.ndarray, grid: TimeGrid) -> VectorPath:
    """Step path t -> #{epochs <= t} on the grid."""
    counts = np.searchsorted(np.sort(epochs), grid.times, side="right")
    return VectorPath(grid, counts[None, :].astype(float), interpolation=STEP)


# ---------------------------------------------------------------------------
# Service processes
# ---------------------------------------------------------------------------


def draw_unit_renewals(base: BaseRenewal, gen: np.random.Generator, size: int) -> np.ndarray:
    """`size` i.i.d. unit-mean inter-renewal times from the base."""
    if isinstance(base, Deterministic):
        return np.ones(size)
    if isinstance(base, Exponential):
        return gen.exponential(1.0, size)
    if isinstance(base, GammaScv):
        shape = 1.0 / base.scv
        return gen.gamma(shape, base.scv, size)
    raise TypeError(f"unknown renewal base {base!r}")


def sample_service_process(
    profile: ServiceProfile, n: int, grid: TimeGrid, rng: RngStream
) -> VectorPath:
    """Counting path S_n(t) = N(n * M(t)) for the unit-rate renewal base N."""
    if n < 1:
        raise ValueError("need scale n >= 1")
    gen = rng.generator()
    levels = n * np.asarray(profile.cumulative(grid.times), dtype=float)
    total = levels[-1]
    if isinstance(profile.base, Deterministic):
        counts = np.floor(levels + 1e-9)
    elif isinstance(profile.base, Exponential):
        # Poisson increments per grid cell: exact at grid points.
        increments = gen.poisson(np.diff(levels))
        counts = np.concatenate(([gen.poisson(levels[0])], increments)).cumsum()
    else:
        budget = int(total + 10.0 * np.sqrt(max(total, 1.0) * profile.base.scv) + 10)
        epochs = np.cumsum(draw_unit_renewals(profile.base, gen, budget))
        while epochs.size and epochs[-1] < total:
            extra = np.cumsum(draw_unit_renewals(profile.base, gen, budget)) + epochs[-1]
            epochs = np.concatenate([epochs, extra])
        counts = np.searchsorted(epochs, levels, side="right")
    return VectorPath(grid, counts[None, :].astype(float), interpolation=STEP)


# ---------------------------------------------------------------------------
# Routing
# ---------------------------------------------------------------------------


def routing_row_is_deterministic(row: np.ndarray) -> bool:
    return bool(np.all((np.abs(row) < 1e-15) | (np.abs(row - 1.0) < 1e-15)))


def sample_routing(P: np.ndarray, node: int, count: int, rng: RngStream) -> np.ndarray:
    """Destinations of the first `count` departures from `node`.

    Values in 0..K-1 are node indices; K means exit.  Deterministic rows
    (single destination with probability one, or pure exit) consume no
    randomness.
    """
    P = np.asarray(P, dtype=float)
    K = P.shape[0]
    row = P[node]
    if routing_row_is_deterministic(row):
        targets = np.flatnonzero(row > 0.5)
        dest = targets[0] if targets.size else K
        return np.full(count, dest, dtype=np.int64)
    probs = np.concatenate([row, [max(0.0, 1.0 - row.sum())]])
    probs = probs / probs.sum()
    gen = rng.generator()
    return gen.choice(K + 1, size=count, p=probs)


def cumulative_routing_counts(destinations: np.ndarray, K: int) -> np.ndarray:
    """(K, count) matrix R^k(l) = #{first l departures routed to node k}."""
    count = destinations.shape[0]
    out = np.zeros((K, count), dtype=np.int64)
    for k in range(K):
        out[k] = np.cumsum(destinations == k)
    return out
