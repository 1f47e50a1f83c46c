"""Time-varying load classes, chains, discontinuity events, bottleneck timelines.

At each grid time the fluid solution partitions the nodes into
overloaded (z > 0), underloaded (z = 0 with the regulator strictly
increasing on both sides) and critically loaded (the rest), with the
critical subsets "end of overloading" (z > 0 throughout a left window),
"start of underloading" (regulator flat left, increasing right) and
"start of overloading" (z > 0 throughout a right window).  One-sided
window width is 5h by default; zero tests use the reflection tolerance.

Chains walk upstream: a chain (j0, ..., jm) requires each j_k to feed
j_{k-1} (P[j_k, j_{k-1}] > 0), is empty at t when the regulators of
j_1..j_m vanish there, critical when cyclic or its terminal node is at
the end of overloading, and sub-critical when cyclic or its terminal is
at the start of overloading.  Two-sided discontinuities of the queue
limit can only occur under the necessary conditions (a) end of
overloading plus a sub-critical chain, (b) start of underloading plus a
critical chain, (c) not underloaded with both chain types (separated
when also overloaded); events are labelled "consistent with" these
conditions, never caused by them.

A node is a transitory bottleneck at t when its diffusion workload is
not degenerate at zero; the Monte Carlo rule flags node k at grid t when
the fraction of replications with |Zhat_k(t)| > delta_b exceeds theta_b.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .diffusion import DiffusionNetputSampler
from .fluid import FluidSolution, fluid_solve
from .network import NetworkSpec
from .reflection import DirectionalRegulator
from .runtime import map_ordered
from .stochastic import RngStream

DEFAULT_WINDOW_STEPS = 5
DEFAULT_THETA = 0.5
DEFAULT_DELTA_FACTOR = 1e-6

OVERLOADED = 0
UNDERLOADED = 1
CRITICAL = 2


@dataclass(frozen=True)
class LoadClassification:
    """Per-grid-time load classes; class codes O/U/C plus EO/SU/SO masks."""

    times: np.ndarray
    codes: np.ndarray        # (K, m) in {OVERLOADED, UNDERLOADED, CRITICAL}
    end_overload: np.ndarray  # (K, m) bool, subset of critical
    start_underload: np.ndarray
    start_overload: np.ndarray
    window_steps: int
    tol_c: float

    def overloaded(self, idx: int) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.codes[:, idx] == OVERLOADED))

    def underloaded(self, idx: int) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.codes[:, idx] == UNDERLOADED))

    def critical(self, idx: int) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.codes[:, idx] == CRITICAL))

    def boundaries(self) -> np.ndarray:
        """Grid indices where any node's class changes (candidate event times)."""
        change = np.any(self.codes[:, 1:] != self.codes[:, :-1], axis=0)
        return np.flatnonzero(change) + 1


def classify_loads(
    fluid: FluidSolution, window_steps: int = DEFAULT_WINDOW_STEPS
) -> LoadClassification:
    z = fluid.queue.values
    y = fluid.regulator.values
    K, m = z.shape
    tol = fluid.tol_c
    w = window_steps

    def left_all_positive(row: np.ndarray, idx: int) -> bool:
        lo = max(0, idx - w)
        return idx > 0 and bool(np.all(row[lo:idx] > tol))

    def right_all_positive(row: np.ndarray, idx: int) -> bool:
        hi = min(m, idx + 1 + w)
        return idx < m - 1 and bool(np.all(row[idx + 1 : hi] > tol))

    codes = np.full((K, m), CRITICAL, dtype=np.int8)
    eo = np.zeros((K, m), dtype=bool)
    su = np.zeros((K, m), dtype=bool)
    so = np.zeros((K, m), dtype=bool)
    for k in range(K):
        zk, yk = z[k], y[k]
        over = zk > tol
        codes[k, over] = OVERLOADED
        # one-sided regulator increments over the window
        left_inc = np.zeros(m)
        right_inc = np.zeros(m)
        left_inc[1:] = yk[1:] - yk[np.maximum(np.arange(1, m) - w, 0)]
        right_inc[:-1] = yk[np.minimum(np.arange(m - 1) + w, m - 1)] - yk[:-1]
        grows_left = left_inc > tol
        grows_right = right_inc > tol
        under = (~over) & grows_left & grows_right
        codes[k, under] = UNDERLOADED
        crit = codes[k] == CRITICAL
        for idx in np.flatnonzero(crit):
            eo[k, idx] = left_all_positive(zk, idx)
            so[k, idx] = right_all_positive(zk, idx)
            su[k, idx] = (not grows_left[idx]) and grows_right[idx]
    return LoadClassification(
        times=fluid.queue.grid.times,
        codes=codes,
        end_overload=eo,
        start_underload=su,
        start_overload=so,
        window_steps=w,
        tol_c=tol,
    )


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Chain:
    """Upstream chain (j0, ..., jm): each j_k feeds j_{k-1}."""

    nodes: tuple[int, ...]
    cyclic: bool
    empty: bool
    critical: bool
    subcritical: bool


def find_chains(
    spec: NetworkSpec,
    fluid: FluidSolution,
    t: float,
    classification: LoadClassification | None = None,
) -> list[Chain]:
    """All empty chains at time t, flagged critical/sub-critical.

    Depth is capped at K+1 links, enough to expose any cycle.
    """
    if classification is None:
        classification = classify_loads(fluid)
    grid = spec.horizon
    idx = grid.nearest_index(t)
    tol = fluid.tol_c
    y_now = fluid.regulator.values[:, idx]
    feeders = [list(np.flatnonzero(spec.P[:, i] > 1e-15)) for i in range(spec.K)]
    eo = classification.end_overload[:, idx]
    so = classification.start_overload[:, idx]
    out: list[Chain] = []

    def extend(seq: list[int]) -> None:
        head = seq[-1]
        for nxt in feeders[head]:
            if y_now[nxt] > tol:
                continue  # chain must be empty past its head
            cyclic = nxt in seq
            chain_nodes = seq + [nxt]
            terminal = nxt
            out.append(
                Chain(
                    nodes=tuple(chain_nodes),
                    cyclic=cyclic,
                    empty=True,
                    critical=cyclic or bool(eo[terminal]),
                    subcritical=cyclic or bool(so[terminal]),
                )
            )
            if not cyclic and len(chain_nodes) <= spec.K + 1:
                extend(chain_nodes)

    for i in range(spec.K):
        extend([i])
    return out


# ---------------------------------------------------------------------------
# Discontinuity events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscontinuityEvent:
    time: float
    node: int
    conditions: tuple[str, ...]   # subset of ("a", "b", "c")
    separated: bool
    predicted_pattern: str
    observed_left: float | None = None
    observed_value: float | None = None
    observed_right: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "t": self.time,
            "node": self.node + 1,
            "type": "separated" if self.separated else ("two-sided" if self.conditions else "one-sided"),
            "conditions": list(self.conditions),
            "pattern": self.predicted_pattern,
            "observed": {
                "left": self.observed_left,
                "value": self.observed_value,
                "right": self.observed_right,
            },
        }


_PATTERNS = {
    "a": "left < value = 0 < right",
    "b": "left > value > right = 0",
    "c": "value < min(left, right)",
}


def discontinuity_report(
    spec: NetworkSpec,
    fluid: FluidSolution,
    delta_paths: np.ndarray | None = None,
    window_steps: int = DEFAULT_WINDOW_STEPS,
) -> list[DiscontinuityEvent]:
    """Candidate two-sided discontinuities of the queue limit.

    Candidates are the load-class boundaries; each (time, node) is tested
    against the necessary conditions and, when sampled directional-derivative
    paths are supplied as a (reps, K, m) array, annotated with the mean
    left/value/right grid values around the event.
    """
    classification = classify_loads(fluid, window_steps)
    grid = spec.horizon
    events: list[DiscontinuityEvent] = []
    for idx in classification.boundaries():
        t = float(grid.times[idx])
        chains = find_chains(spec, fluid, t, classification)
        for node in range(spec.K):
            preceding = [c for c in chains if c.nodes[0] == node and len(c.nodes) > 1]
            has_crit = any(c.critical for c in preceding)
            has_sub = any(c.subcritical for c in preceding)
            conds: list[str] = []
            if classification.end_overload[node, idx] and has_sub:
                conds.append("a")
            if classification.start_underload[node, idx] and has_crit:
                conds.append("b")
            not_under = classification.codes[node, idx] != UNDERLOADED
            if not_under and has_crit and has_sub:
                conds.append("c")
            if not conds:
                continue
            separated = "c" in conds and classification.codes[node, idx] == OVERLOADED
            obs_l = obs_v = obs_r = None
            if delta_paths is not None:
                w = window_steps
                lo = max(0, idx - w)
                hi = min(grid.m - 1, idx + w)
                obs_l = float(np.mean(delta_paths[:, node, lo]))
                obs_v = float(np.mean(delta_paths[:, node, idx]))
                obs_r = float(np.mean(delta_paths[:, node, hi]))
            events.append(
                DiscontinuityEvent(
                    time=t,
                    node=node,
                    conditions=tuple(conds),
                    separated=separated,
                    predicted_pattern="; ".join(_PATTERNS[c] for c in conds),
                    observed_left=obs_l,
                    observed_value=obs_v,
                    observed_right=obs_r,
                )
            )
    return events


# ---------------------------------------------------------------------------
# Monte Carlo bottleneck timeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BottleneckReport:
    times: np.ndarray
    exceed_fraction: np.ndarray        # (K, m)
    flagged: np.ndarray                # (K, m) bool
    intervals: list[list[tuple[float, float]]]  # per node, maximal flagged spans
    counts: np.ndarray                 # (m,) number of flagged nodes per time
    discontinuities: list[DiscontinuityEvent]
    delta_b: float
    theta_b: float
    reps: int

    def bottleneck_nodes(self) -> frozenset[int]:
        return frozenset(k for k, spans in enumerate(self.intervals) if spans)

    def phases(self) -> list[tuple[float, float, frozenset[int]]]:
        """Maximal spans of constant flagged set: (start, end, node set)."""
        out: list[tuple[float, float, frozenset[int]]] = []
        start = 0
        for i in range(1, len(self.times) + 1):
            if i == len(self.times) or np.any(self.flagged[:, i] != self.flagged[:, start]):
                nodes = frozenset(np.flatnonzero(self.flagged[:, start]))
                out.append((float(self.times[start]), float(self.times[i - 1]), nodes))
                if i < len(self.times):
                    start = i
        return out

    def to_json_dict(self) -> dict:
        return {
            "nodes": [
                {"node": k + 1, "intervals": [[a, b] for a, b in spans]}
                for k, spans in enumerate(self.intervals)
            ],
            "counts": [
                {"t": float(t), "count": int(c)} for t, c in zip(self.times, self.counts)
            ],
            "discontinuities": [e.to_json_dict() for e in self.discontinuities],
            "params": {"delta_b": self.delta_b, "theta_b": self.theta_b, "reps": self.reps},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def _maximal_intervals(flag_row: np.ndarray, times: np.ndarray) -> list[tuple[float, float]]:
    spans = []
    start = None
    for i, f in enumerate(flag_row):
        if f and start is None:
            start = i
        elif not f and start is not None:
            spans.append((float(times[start]), float(times[i - 1])))
            start = None
    if start is not None:
        spans.append((float(times[start]), float(times[-1])))
    return spans


def bottleneck_timeline(
    spec: NetworkSpec,
    reps: int,
    rng: RngStream,
    delta_b: float | None = None,
    theta_b: float = DEFAULT_THETA,
    batch: int = 64,
) -> BottleneckReport:
    """Monte Carlo bottleneck report from the diffusion workload law.

    Per replication, a netput draw is pushed through the directional
    regulator against the fluid netput and scaled to workload; node k is
    flagged at grid t when the |Zhat_k(t)| > delta_b exceedance fraction
    is above theta_b.  delta_b defaults to 1e-6 times the fluid workload
    scale (1 + sup |Zbar|).  Replications are reduced in a fixed order, so
    results are reproducible for a given stream.
    """
    fluid = fluid_solve(spec)
    if fluid.workload is None:
        raise ValueError("bottleneck timeline needs stationary service rates")
    if delta_b is None:
        delta_b = DEFAULT_DELTA_FACTOR * (1.0 + fluid.workload.sup_norm())
    rates = np.asarray(fluid.stationary_rates, dtype=float)
    sampler = DiffusionNetputSampler(spec)
    regulator = DirectionalRegulator(fluid.netput, spec.P)
    K, m = spec.K, spec.horizon.m
    batches = []
    start = 0
    while start < reps:
        batches.append((len(batches), min(batch, reps - start)))
        start += batch

    def run_batch(job: tuple[int, int]) -> np.ndarray:
        index, count = job
        chis = sampler.sample_values(rng.child(index), count)
        values, _, _, _ = regulator.solve_batch(chis)
        return values / rates[None, :, None]

    workload_batches = map_ordered(run_batch, batches)
    exceed = np.zeros((K, m))
    for workloads in workload_batches:
        exceed += np.sum(np.abs(workloads) > delta_b, axis=0)
    keep = workload_batches[:1]
    fraction = exceed / reps
    flagged = fraction > theta_b
    times = spec.horizon.times
    intervals = [_maximal_intervals(flagged[k], times) for k in range(K)]
    counts = flagged.sum(axis=0)
    events = discontinuity_report(spec, fluid, delta_paths=keep[0] if keep else None)
    return BottleneckReport(
        times=times,
        exceed_fraction=fraction,
        flagged=flagged,
        intervals=intervals,
        counts=counts,
        discontinuities=events,
        delta_b=float(delta_b),
        theta_b=theta_b,
        reps=reps,
    )
