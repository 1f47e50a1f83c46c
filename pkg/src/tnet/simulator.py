"""Exact discrete-event simulation of the pre-limit network.

Each node is a FIFO single server.  Service completions are generated on a
per-node operational clock: a unit-mean renewal draw xi requires xi/n of
cumulative-rate measure M, and the clock advances during busy periods (and
through zero-rate stretches while idle, so a node idle before its service
start is not left behind).  Wall times are recovered through the exact
piecewise-linear inverse of M.  This realizes the non-idling identity
D_k = S_k o B_k exactly for every constant-after-start rate profile.

Tie-breaking at equal event times is deterministic: completions before
arrivals, then node index, then insertion order.

RNG stream layout (shared with the fast path below, so both engines produce
bit-identical trajectories from the same stream):

    rng.child(0)        arrival epochs
    rng.child(1, k)     service renewal draws of node k
    rng.child(2, k)     routing decisions of node k (skipped for
                        deterministic rows, which consume no randomness)

simulate() dispatches single-entry constant-rate chains to a vectorized
FIFO recursion (departure_i = max(arrival_i, departure_{i-1}, start) +
service_i); the general event loop covers everything else.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

from .network import NetworkSpec, ServiceProfile
from .paths import LINEAR, STEP, TimeGrid, VectorPath
from .stochastic import RngStream, draw_unit_renewals, routing_row_is_deterministic

CUTOFF_HORIZONS = 3.0
_EXIT = -1

_ARRIVAL_STREAM = 0
_SERVICE_STREAM = 1
_ROUTING_STREAM = 2

_RENEWAL_BLOCK = 4096


@dataclass
class NodeLog:
    """Exact per-node event record, in processing order."""

    arrival_times: np.ndarray      # inflow into the node (exogenous + routed)
    arrival_jobs: np.ndarray
    start_times: np.ndarray        # service start of each departure, FIFO order
    completion_times: np.ndarray
    completion_jobs: np.ndarray
    completion_targets: np.ndarray  # node index or -1 for exit


@dataclass
class Trajectory:
    """One simulated realization with exact event lists."""

    spec: NetworkSpec
    n: int
    nodes: list[NodeLog]
    exogenous: list[np.ndarray]    # per entry node, sorted arrival epochs
    cutoff: float
    truncated: bool
    jobs_in_system_at_cutoff: int

    # -- gridded paths ---------------------------------------------------------

    def grid(self) -> TimeGrid:
        return self.spec.horizon

    def _counting(self, events_per_node: Iterable[np.ndarray]) -> VectorPath:
        times = self.grid().times
        rows = [np.searchsorted(np.sort(ev), times, side="right") for ev in events_per_node]
        return VectorPath(self.grid(), np.array(rows, dtype=float), interpolation=STEP)

    def exogenous_path(self) -> VectorPath:
        """A_{n,k}: exogenous arrivals only (zero rows off the entry nodes)."""
        per_node = [np.array([])] * self.spec.K
        for j, e in enumerate(self.spec.entry_nodes):
            per_node[e] = self.exogenous[j]
        return self._counting(per_node)

    def inflow_path(self) -> VectorPath:
        return self._counting([log.arrival_times for log in self.nodes])

    def departure_path(self) -> VectorPath:
        return self._counting([log.completion_times for log in self.nodes])

    def queue_path(self) -> VectorPath:
        return self.inflow_path() - self.departure_path()

    def busy_path(self) -> VectorPath:
        """B_k(t): Lebesgue measure of {s <= t: Q_k(s) > 0}, exact at grid points."""
        times = self.grid().times
        rows = []
        for log in self.nodes:
            if log.arrival_times.size == 0:
                rows.append(np.zeros(times.size))
                continue
            arr = np.sort(log.arrival_times)
            dep = np.sort(log.completion_times)
            events = np.concatenate([arr, dep])
            signs = np.concatenate([np.ones(arr.size), -np.ones(dep.size)])
            order = np.argsort(events, kind="stable")
            events, signs = events[order], signs[order]
            # Busy while the running count is positive; accumulate interval lengths.
            count = np.cumsum(signs)
            ends = np.append(events[1:], np.inf)
            busy_len = np.where(count > 0, ends - events, 0.0)
            cum = np.concatenate(([0.0], np.cumsum(np.where(np.isfinite(busy_len), busy_len, 0.0))))
            idx = np.searchsorted(events, times, side="right")
            # closed intervals up to the last event, plus the live partial one
            last_event = np.where(idx > 0, events[np.maximum(idx - 1, 0)], times)
            active = np.where(idx > 0, count[np.maximum(idx - 1, 0)] > 0, False)
            partial = np.where(active, times - last_event, 0.0)
            full = np.where(idx > 0, cum[np.maximum(idx - 1, 0)] + partial, 0.0)
            rows.append(full)
        return VectorPath(self.grid(), np.array(rows), interpolation=LINEAR)

    def idle_path(self) -> VectorPath:
        elapsed = self.grid().times - self.grid().t0
        b = self.busy_path()
        return b.with_values(elapsed[None, :] - b.values)

    # -- exact invariants -------------------------------------------------------

    def check_invariants(self) -> None:
        """Flow/job/work conservation and FIFO, on exact event lists."""
        spec = self.spec
        exo_total = sum(len(e) for e in self.exogenous)
        completions_exit = 0
        for k, log in enumerate(self.nodes):
            if np.any(np.diff(log.completion_times) < 0):
                raise AssertionError(f"node {k + 1}: departures not in time order")
            # FIFO: the completion job sequence is a prefix of the arrival one
            # (ids may repeat under feedback; order is what matters)
            served = len(log.completion_jobs)
            if not np.array_equal(log.completion_jobs, log.arrival_jobs[:served]):
                raise AssertionError(f"node {k + 1}: FIFO order violated")
            # Work conservation: service starts the instant the job reaches the
            # head with the server free and the rate live (never later).
            floor = _zero_stretch_end(spec.services[k], spec.horizon.t0)
            served = len(log.start_times)
            arr_sorted = np.sort(log.arrival_times)[:served]
            prev_done = np.concatenate(([-np.inf], log.completion_times[: served - 1]))
            earliest = np.maximum(np.maximum(arr_sorted, prev_done), floor)
            if served and np.max(np.abs(log.start_times - earliest)) > 1e-9:
                raise AssertionError(f"node {k + 1}: server idled with work in queue")
            completions_exit += int(np.sum(log.completion_targets == _EXIT))
        # Flow conservation: inflow = exogenous + routed-in, per node, by count
        routed_in = np.zeros(spec.K, dtype=int)
        for log in self.nodes:
            for tgt in log.completion_targets:
                if tgt != _EXIT:
                    routed_in[tgt] += 1
        for k, log in enumerate(self.nodes):
            exo_k = sum(
                len(self.exogenous[j]) for j, e in enumerate(spec.entry_nodes) if e == k
            )
            if len(log.arrival_times) != exo_k + routed_in[k]:
                raise AssertionError(f"node {k + 1}: inflow != exogenous + routed-in")
        in_system = sum(len(l.arrival_times) - len(l.completion_times) for l in self.nodes)
        if exo_total != completions_exit + in_system:
            raise AssertionError("job conservation violated")
        if in_system != self.jobs_in_system_at_cutoff:
            raise AssertionError("in-system count inconsistent with cutoff record")

    def write_event_log(self, out: TextIO) -> None:
        """CSV rows `time,node,event,job_id` with events arrive/depart/exit."""
        rows: list[tuple[float, int, int, str, int]] = []
        for k, log in enumerate(self.nodes):
            for t, j in zip(log.arrival_times, log.arrival_jobs):
                rows.append((float(t), 1, k, "arrive", int(j)))
            for t, j, tgt in zip(log.completion_times, log.completion_jobs, log.completion_targets):
                rows.append((float(t), 0, k, "exit" if tgt == _EXIT else "depart", int(j)))
        rows.sort(key=lambda r: (r[0], r[1], r[2], r[4]))
        out.write("time,node,event,job_id\n")
        for t, _, k, ev, j in rows:
            out.write(f"{t:.12g},{k + 1},{ev},{j}\n")


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScaledTrajectory:
    queue: VectorPath
    busy: VectorPath
    idle: VectorPath
    inflow: VectorPath
    departures: VectorPath
    exogenous: VectorPath


def fluid_scale(traj: Trajectory) -> ScaledTrajectory:
    """n^{-1} Q_n on the grid, plus companions for B, I, E, D, A."""
    inv = 1.0 / traj.n
    return ScaledTrajectory(
        queue=traj.queue_path() * inv,
        busy=traj.busy_path(),
        idle=traj.idle_path(),
        inflow=traj.inflow_path() * inv,
        departures=traj.departure_path() * inv,
        exogenous=traj.exogenous_path() * inv,
    )


def diffusion_scale(traj: Trajectory, fluid_ref: VectorPath) -> VectorPath:
    """sqrt(n) (n^{-1} Q_n - Qbar) on the grid."""
    q = traj.queue_path()
    if not q.grid.same(fluid_ref.grid) or q.dim != fluid_ref.dim:
        raise ValueError("fluid reference does not match the trajectory grid")
    root = np.sqrt(traj.n)
    return fluid_ref.with_values(root * (q.values / traj.n - fluid_ref.values))


# ---------------------------------------------------------------------------
# General event-driven engine
# ---------------------------------------------------------------------------


class _RenewalStream:
    """Blockwise lazy draws of unit-mean renewals from one node's stream."""

    def __init__(self, profile: ServiceProfile, rng: RngStream):
        self.base = profile.base
        self.gen = rng.generator()
        self.block = np.empty(0)
        self.pos = 0

    def next(self) -> float:
        if self.pos >= self.block.size:
            self.block = draw_unit_renewals(self.base, self.gen, _RENEWAL_BLOCK)
            self.pos = 0
        v = float(self.block[self.pos])
        self.pos += 1
        return v


class _RoutingStream:
    def __init__(self, P: np.ndarray, node: int, rng: RngStream):
        self.P = P
        self.node = node
        self.K = P.shape[0]
        row = P[node]
        self.deterministic = routing_row_is_deterministic(row)
        if self.deterministic:
            targets = np.flatnonzero(row > 0.5)
            self.fixed = int(targets[0]) if targets.size else _EXIT
        else:
            self.probs = np.concatenate([row, [max(0.0, 1.0 - row.sum())]])
            self.probs = self.probs / self.probs.sum()
            self.gen = rng.generator()
            self.block = np.empty(0, dtype=np.int64)
            self.pos = 0

    def next(self) -> int:
        if self.deterministic:
            return self.fixed
        if self.pos >= self.block.size:
            self.block = self.gen.choice(self.K + 1, size=_RENEWAL_BLOCK, p=self.probs)
            self.pos = 0
        v = int(self.block[self.pos])
        self.pos += 1
        return _EXIT if v == self.K else v


def _zero_stretch_end(profile: ServiceProfile, u: float) -> float:
    """End of the contiguous zero-rate stretch at clock position u (u itself
    when the rate there is positive)."""
    starts = [s for s, _ in profile.segments]
    rates = [r for _, r in profile.segments]
    idx = 0
    for i, s in enumerate(starts):
        if s <= u + 1e-15:
            idx = i
    if rates[idx] > 0:
        return u
    for i in range(idx + 1, len(starts)):
        if rates[i] > 0:
            return starts[i]
    return np.inf


def _simulate_events(spec: NetworkSpec, n: int, rng: RngStream) -> Trajectory:
    from .stochastic import sample_arrival_epochs

    K = spec.K
    horizon = spec.horizon
    cutoff = horizon.t1 + CUTOFF_HORIZONS * (horizon.t1 - horizon.t0)
    epochs = sample_arrival_epochs(spec, n, rng.child(_ARRIVAL_STREAM))
    renewals = [_RenewalStream(spec.services[k], rng.child(_SERVICE_STREAM, k)) for k in range(K)]
    routing = [_RoutingStream(spec.P, k, rng.child(_ROUTING_STREAM, k)) for k in range(K)]

    # Per-node state
    queues: list[deque[int]] = [deque() for _ in range(K)]
    clock_u = [horizon.t0] * K          # operational clock position
    clock_wall = [horizon.t0] * K       # wall time of the last clock update
    busy = [False] * K
    arr_t: list[list[float]] = [[] for _ in range(K)]
    arr_j: list[list[int]] = [[] for _ in range(K)]
    start_t: list[list[float]] = [[] for _ in range(K)]
    comp_t: list[list[float]] = [[] for _ in range(K)]
    comp_j: list[list[int]] = [[] for _ in range(K)]
    comp_tgt: list[list[int]] = [[] for _ in range(K)]

    heap: list[tuple[float, int, int, int, int]] = []  # (time, kind, node, seq, job)
    seq = 0
    job_id = 0
    for j, e in enumerate(spec.entry_nodes):
        for t in epochs[j]:
            heap.append((float(t), 1, e, seq, job_id))
            seq += 1
            job_id += 1
    heapq.heapify(heap)

    def advance_idle_clock(k: int, now: float) -> None:
        # While idle the clock moves only through zero-rate stretches.
        u = clock_u[k]
        elapsed = now - clock_wall[k]
        end = _zero_stretch_end(spec.services[k], u)
        clock_u[k] = min(u + elapsed, end) if end > u else u
        clock_wall[k] = now

    def schedule_completion(k: int, now: float) -> None:
        # Node k starts serving at `now` with clock position clock_u[k].
        xi = renewals[k].next()
        prof = spec.services[k]
        u = clock_u[k]
        target = prof.cumulative(u) + xi / n
        u_done = prof.inverse_cumulative(target)
        # recorded start = wall time the rate first becomes positive for this job
        start_t[k].append(now + max(0.0, _zero_stretch_end(prof, u) - u))
        if not np.isfinite(u_done):
            return  # rate vanishes forever: job stuck until cutoff
        done = now + (u_done - u)
        nonlocal seq
        heapq.heappush(heap, (done, 0, k, seq, queues[k][0]))
        seq += 1

    truncated = False
    while heap:
        t, kind, k, _, job = heapq.heappop(heap)
        if t > cutoff:
            truncated = True
            break
        if kind == 1:  # arrival at node k
            if not busy[k]:
                advance_idle_clock(k, t)
            arr_t[k].append(t)
            arr_j[k].append(job)
            queues[k].append(job)
            if not busy[k]:
                busy[k] = True
                schedule_completion(k, t)
        else:  # completion at node k
            # clock advanced in wall time while busy
            clock_u[k] += t - clock_wall[k]
            clock_wall[k] = t
            queues[k].popleft()
            tgt = routing[k].next()
            comp_t[k].append(t)
            comp_j[k].append(job)
            comp_tgt[k].append(tgt)
            if queues[k]:
                schedule_completion(k, t)
            else:
                busy[k] = False
            if tgt != _EXIT:
                heapq.heappush(heap, (t, 1, tgt, seq, job))
                seq += 1

    nodes = [
        NodeLog(
            arrival_times=np.array(arr_t[k]),
            arrival_jobs=np.array(arr_j[k], dtype=np.int64),
            start_times=np.array(start_t[k][: len(comp_t[k])]),
            completion_times=np.array(comp_t[k]),
            completion_jobs=np.array(comp_j[k], dtype=np.int64),
            completion_targets=np.array(comp_tgt[k], dtype=np.int64),
        )
        for k in range(K)
    ]
    in_system = sum(len(a) - len(c) for a, c in zip(arr_t, comp_t))
    return Trajectory(
        spec=spec,
        n=n,
        nodes=nodes,
        exogenous=epochs,
        cutoff=cutoff,
        truncated=truncated or in_system > 0,
        jobs_in_system_at_cutoff=in_system,
    )


# ---------------------------------------------------------------------------
# Vectorized fast path: single-entry constant-rate chains
# ---------------------------------------------------------------------------


def _chain_order(spec: NetworkSpec) -> list[int] | None:
    """Node order 0..K-1 along a pure chain i1 -> i2 -> ... -> iK starting at
    the single entry node; None when the topology is not such a chain."""
    if spec.J != 1:
        return None
    P = spec.P
    order = [spec.entry_nodes[0]]
    seen = {order[0]}
    while True:
        row = P[order[-1]]
        if not routing_row_is_deterministic(row):
            return None
        nxt = np.flatnonzero(row > 0.5)
        if nxt.size == 0:
            break
        nxt = int(nxt[0])
        if nxt in seen:
            return None
        order.append(nxt)
        seen.add(nxt)
    if len(order) != spec.K:
        return None
    for k in range(spec.K):
        if k not in seen:
            return None
    return order


def _fast_path_applicable(spec: NetworkSpec) -> list[int] | None:
    order = _chain_order(spec)
    if order is None:
        return None
    for prof in spec.services:
        if prof.stationary_rate(spec.horizon.t1) is None:
            return None
    return order


def _simulate_chain(spec: NetworkSpec, n: int, rng: RngStream, order: list[int]) -> Trajectory:
    from .stochastic import sample_arrival_epochs

    horizon = spec.horizon
    cutoff = horizon.t1 + CUTOFF_HORIZONS * (horizon.t1 - horizon.t0)
    epochs = sample_arrival_epochs(spec, n, rng.child(_ARRIVAL_STREAM))
    arrivals = epochs[0]
    jobs = np.arange(n, dtype=np.int64)

    nodes: list[NodeLog | None] = [None] * spec.K
    truncated = False
    in_system = 0
    current_times = arrivals
    for k in order:
        prof = spec.services[k]
        rate = prof.stationary_rate(horizon.t1)
        start_floor = _zero_stretch_end(prof, horizon.t0)
        gen = rng.child(_SERVICE_STREAM, k).generator()
        count = current_times.size
        xis = draw_unit_renewals(prof.base, gen, count)
        durations = xis / (n * rate)
        # FIFO recursion: start_i = max(arr_i, done_{i-1}, start_floor);
        # done_i = start_i + s_i  =>  done_i = max_j<=i (adj_j + sum_{j..i} s)
        cums = np.cumsum(durations)
        adj = np.maximum(current_times, start_floor) - np.concatenate(([0.0], cums[:-1]))
        done = np.maximum.accumulate(adj) + cums
        starts = done - durations
        served = done <= cutoff
        m = int(np.searchsorted(done, cutoff, side="right")) if not served.all() else count
        # `done` is nondecreasing, so the first m entries are the completions.
        truncated = truncated or m < count
        in_system += count - m
        is_last = k == order[-1]
        targets = np.full(m, _EXIT if is_last else order[order.index(k) + 1], dtype=np.int64)
        nodes[k] = NodeLog(
            arrival_times=current_times.copy(),
            arrival_jobs=jobs[: current_times.size].copy(),
            start_times=starts[:m],
            completion_times=done[:m],
            completion_jobs=jobs[:m].copy(),
            completion_targets=targets,
        )
        current_times = done[:m]
    return Trajectory(
        spec=spec,
        n=n,
        nodes=[log for log in nodes if log is not None],
        exogenous=epochs,
        cutoff=cutoff,
        truncated=truncated,
        jobs_in_system_at_cutoff=in_system,
    )


def simulate(spec: NetworkSpec, n: int, rng: RngStream, force_general: bool = False) -> Trajectory:
    """One exact realization of the n-job network.

    Runs until every job has exited or the cutoff (horizon plus three horizon
    lengths) is reached; a truncated run is flagged on the trajectory.
    """
    spec.validate()
    if n < 1:
        raise ValueError("population must be >= 1")
    order = None if force_general else _fast_path_applicable(spec)
    if order is not None:
        return _simulate_chain(spec, n, rng, order)
    return _simulate_events(spec, n, rng)
