"""Deterministic fluid limits: netput, queue, regulator, busy time, workload.

The fluid netput is

    Xbar_k(t) = F_k(t) - M_k(t) + sum_l P[l, k] M_l(t),

with F_k = 0 off the entry nodes, and the fluid queue/regulator pair is the
oblique reflection (Phi(Xbar), Psi(Xbar)).

Busy time: with stationary rates the regulator coordinate Psi(Xbar)_k is the
node's unused service capacity mu_k Ibar_k (the V-weighted combination of
unused capacities is what the queue decomposition adds to the netput), so

    "theorem"  : e 1 - diag(1/mu) Psi(Xbar)                  (default)

is the form the simulator reproduces.  The alternative printed form

    "corollary": e 1 - (I - P^T)^{-1} Psi(Xbar)

is exposed behind the busy_time_form flag for comparison; it disagrees with
simulation whenever the rates differ from one (see the tests).

Workload is only defined for stationary rates; otherwise the solution
carries workload=None with a flag.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .network import NetworkSpec
from .paths import LINEAR, VectorPath
from .reflection import ReflectionSolution, solve_oblique_reflection

BusyTimeForm = Literal["theorem", "corollary"]


@dataclass(frozen=True)
class FluidSolution:
    netput: VectorPath
    queue: VectorPath
    regulator: VectorPath
    busy: VectorPath | None
    workload: VectorPath | None
    reflection: ReflectionSolution
    stationary_rates: tuple[float, ...] | None
    busy_time_form: str

    @property
    def workload_defined(self) -> bool:
        return self.workload is not None

    @property
    def tol_c(self) -> float:
        return self.reflection.tol_c


def fluid_netput(spec: NetworkSpec) -> VectorPath:
    """Piecewise-linear grid path of the fluid netput."""
    grid = spec.horizon
    times = grid.times
    K = spec.K
    M = np.stack([np.asarray(s.cumulative(times), dtype=float) for s in spec.services])
    F = np.zeros((K, grid.m))
    for j, e in enumerate(spec.entry_nodes):
        F[e] = spec.arrivals[j].cdf(times)
    values = F - M + spec.P.T @ M
    return VectorPath(grid, values, interpolation=LINEAR)


def _stationary_rates(spec: NetworkSpec) -> tuple[float, ...] | None:
    rates = [s.stationary_rate(spec.horizon.t1) for s in spec.services]
    if any(r is None for r in rates):
        return None
    return tuple(float(r) for r in rates)


def fluid_solve(spec: NetworkSpec, busy_time_form: BusyTimeForm = "theorem") -> FluidSolution:
    """Fluid queue, regulator, busy time and workload for a validated spec."""
    xbar = fluid_netput(spec)
    sol = solve_oblique_reflection(xbar, spec.P)
    rates = _stationary_rates(spec)
    elapsed = spec.horizon.times - spec.horizon.t0

    busy = None
    workload = None
    if rates is not None:
        m_diag = np.diag([1.0 / r for r in rates])
        if busy_time_form == "theorem":
            idle = m_diag @ sol.y.values
        elif busy_time_form == "corollary":
            idle = np.linalg.inv(np.eye(spec.K) - spec.P.T) @ sol.y.values
        else:
            raise ValueError(f"unknown busy_time_form {busy_time_form!r}")
        busy = VectorPath(spec.horizon, elapsed[None, :] - idle, interpolation=LINEAR)
        workload = VectorPath(spec.horizon, m_diag @ sol.z.values, interpolation=LINEAR)

    return FluidSolution(
        netput=xbar,
        queue=sol.z,
        regulator=sol.y,
        busy=busy,
        workload=workload,
        reflection=sol,
        stationary_rates=rates,
        busy_time_form=busy_time_form,
    )


# ---------------------------------------------------------------------------
# Crossing times (tandem topologies with a single entry node)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeCrossings:
    """Cumulative crossings (tau1, tau2) of F against M_k and density
    crossings (tau1p, tau2p) of F' against mu_k; None where absent."""

    node: int
    tau1: float | None
    tau2: float | None
    tau1p: float | None
    tau2p: float | None

    def to_json_dict(self) -> dict:
        return {
            "node": self.node + 1,
            "tau1": self.tau1,
            "tau2": self.tau2,
            "tau1p": self.tau1p,
            "tau2p": self.tau2p,
        }


def _bisect(fn, lo: float, hi: float, tol: float = 1e-12) -> float:
    flo = fn(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo < tol:
            break
        fm = fn(mid)
        if (flo <= 0) == (fm <= 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _sign_changes(fn, times: np.ndarray, max_hits: int, skip_equal_prefix: bool) -> list[float]:
    vals = np.asarray(fn(times), dtype=float)
    hits: list[float] = []
    started = not skip_equal_prefix
    prev_nonzero = 0.0
    for i in range(len(times) - 1):
        a, b = vals[i], vals[i + 1]
        if not started:
            if abs(a) > 1e-12:
                started = True
                prev_nonzero = a
            continue
        if abs(a) > 1e-12:
            prev_nonzero = a
        if prev_nonzero == 0.0:
            continue
        crossed = (prev_nonzero > 0 and b <= 1e-15) or (prev_nonzero < 0 and b >= -1e-15)
        if crossed:
            hits.append(_bisect(fn, times[i], times[i + 1]))
            prev_nonzero = b if abs(b) > 1e-12 else -prev_nonzero
            if len(hits) >= max_hits:
                break
    return hits


def crossing_times(spec: NetworkSpec) -> list[NodeCrossings]:
    """Per-node arrival/service balance times for single-entry chains.

    tau1/tau2: first two times t > t_start where the cumulative arrival mass
    F(t) meets the cumulative service capacity M_k(t) after separating from
    it (found by grid scan plus bisection).  tau1p/tau2p: first and last
    times where the arrival density F' crosses the rate mu_k.
    """
    if spec.J != 1:
        raise ValueError("crossing times are defined for single-entry-node networks")
    law = spec.arrivals[0]
    times = spec.horizon.times
    out: list[NodeCrossings] = []
    for k, prof in enumerate(spec.services):
        cum = lambda t: law.cdf(t) - prof.cumulative(t)  # noqa: E731
        cum_hits = _sign_changes(cum, times, max_hits=2, skip_equal_prefix=True)
        dens = lambda t: law.pdf(t) - prof.rate_at(t)  # noqa: E731
        dens_hits = _sign_changes(dens, times, max_hits=64, skip_equal_prefix=True)
        out.append(
            NodeCrossings(
                node=k,
                tau1=cum_hits[0] if len(cum_hits) > 0 else None,
                tau2=cum_hits[1] if len(cum_hits) > 1 else None,
                tau1p=dens_hits[0] if len(dens_hits) > 0 else None,
                tau2p=dens_hits[-1] if len(dens_hits) > 1 else None,
            )
        )
    return out
