"""Monte Carlo convergence harness: simulation against its limits.

Checks the strong-law and central-limit behaviour of the primitives and of
the queue state itself at desk scale: sup-norm decay rates for the arrival
and service counting processes, routing fluctuation variances, and
two-sample Kolmogorov-Smirnov agreement between simulated and limit queue
laws at fixed continuity times.  Thresholds are calibrated by negative
controls, not derived; all checks are deterministic given (seed, spec,
parameters).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ks_2samp

from .bottleneck import classify_loads
from .diffusion import diffusion_queue_pointwise
from .fluid import FluidSolution, fluid_solve
from .network import Deterministic, NetworkSpec
from .simulator import diffusion_scale, simulate
from .stochastic import RngStream, sample_arrival_epochs, sample_service_process

DEFAULT_SLOPE_BAND = (-0.6, -0.4)
DISCONTINUITY_GUARD_STEPS = 5


def fit_loglog_slope(ns: np.ndarray, medians: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of log(median) against log(n) with its SE."""
    x = np.log(ns)
    y = np.log(np.maximum(medians, 1e-300))
    coeffs, residuals, *_ = np.polyfit(x, y, 1, full=True)
    slope = float(coeffs[0])
    dof = max(len(x) - 2, 1)
    resid = float(residuals[0]) if len(residuals) else 0.0
    se = float(np.sqrt(resid / dof / np.sum((x - x.mean()) ** 2)))
    return slope, se


@dataclass(frozen=True)
class ConvergenceResult:
    check: str
    params: dict
    n_values: tuple[int, ...]
    statistics: dict[int, dict[str, float]]  # per n: median, q05, q95, reps
    slope: float | None
    slope_se: float | None
    passed: bool
    notes: tuple[str, ...] = field(default_factory=tuple)

    def to_json_dict(self) -> dict:
        return {
            "check": self.check,
            "params": self.params,
            "per_n": [
                {"n": n, **{k: v for k, v in self.statistics[n].items()}}
                for n in self.n_values
            ],
            "slope": self.slope,
            "slope_se": self.slope_se,
            "pass": self.passed,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def _summary(samples: np.ndarray) -> dict[str, float]:
    return {
        "median": float(np.median(samples)),
        "q05": float(np.quantile(samples, 0.05)),
        "q95": float(np.quantile(samples, 0.95)),
        "reps": int(samples.size),
    }


def _exact_ks_sup(epochs: np.ndarray, law) -> float:
    """sup_t |n^{-1} A_n(t) - F(t)| computed exactly from the order statistics."""
    n = epochs.size
    f = np.asarray(law.cdf(epochs), dtype=float)
    upper = np.max(np.arange(1, n + 1) / n - f)
    lower = np.max(f - np.arange(0, n) / n)
    return float(max(upper, lower))


def check_fslln_arrivals(
    spec: NetworkSpec,
    n_list: tuple[int, ...],
    reps: int,
    rng: RngStream,
    slope_band: tuple[float, float] = DEFAULT_SLOPE_BAND,
) -> ConvergenceResult:
    """Arrival strong law: sup-norm decay of n^{-1} A_n - F across n."""
    if len(n_list) < 3 or list(n_list) != sorted(n_list):
        raise ValueError("need an increasing list of at least three population sizes")
    stats: dict[int, dict[str, float]] = {}
    medians = []
    for i, n in enumerate(n_list):
        vals = np.empty(reps)
        for r in range(reps):
            epochs = sample_arrival_epochs(spec, n, rng.child(i, r))
            vals[r] = max(
                _exact_ks_sup(epochs[j], spec.arrivals[j]) for j in range(spec.J)
            )
        stats[n] = _summary(vals)
        medians.append(stats[n]["median"])
    slope, se = fit_loglog_slope(np.array(n_list, dtype=float), np.array(medians))
    passed = slope_band[0] <= slope <= slope_band[1]
    return ConvergenceResult(
        check="fslln_arrivals",
        params={"reps": reps, "slope_band": list(slope_band)},
        n_values=tuple(n_list),
        statistics=stats,
        slope=slope,
        slope_se=se,
        passed=bool(passed),
    )


def check_fclt_queue(
    spec: NetworkSpec,
    t: float,
    n: int,
    reps: int,
    rng: RngStream,
    level: float = 0.01,
    limit_spec: NetworkSpec | None = None,
    fluid: FluidSolution | None = None,
) -> ConvergenceResult:
    """Pointwise queue FCLT: two-sample KS between simulated and limit laws.

    The limit side (sampling and centering) uses `limit_spec` when given,
    which is how negative controls are run: a perturbed limit spec shifts
    the centering by sqrt(n) times the fluid gap and the test must reject.
    Refuses t within 5 grid steps of a detected load-class boundary.
    """
    lspec = limit_spec if limit_spec is not None else spec
    if fluid is None:
        fluid = fluid_solve(lspec)
    classification = classify_loads(fluid)
    idx = spec.horizon.nearest_index(t)
    guard = DISCONTINUITY_GUARD_STEPS
    near = [b for b in classification.boundaries() if abs(int(b) - idx) <= guard]
    if near:
        ts = ", ".join(f"{spec.horizon.times[b]:.4g}" for b in near)
        raise ValueError(
            f"t={t:.4g} is within {guard} grid steps of a load-class boundary "
            f"({ts}); pick a continuity point at least 5h away"
        )
    sim_vals = np.empty((spec.K, reps))
    for r in range(reps):
        traj = simulate(spec, n, rng.child(0, r))
        sim_vals[:, r] = diffusion_scale(traj, fluid.queue).eval(spec.horizon.times[idx])
    limit_vals = diffusion_queue_pointwise(lspec, t, rng.child(1), reps, fluid=fluid)
    stats: dict[int, dict[str, float]] = {}
    pvals = []
    notes = []
    for k in range(spec.K):
        a, b = sim_vals[k], limit_vals[k]
        if np.ptp(a) < 1e-12 and np.ptp(b) < 1e-12:
            d = float(np.max(np.abs(np.sort(a) - np.sort(b))))
            pvals.append(1.0)
            notes.append(f"node {k + 1}: both samples degenerate (gap {d:.2e})")
            continue
        res = ks_2samp(a, b)
        pvals.append(float(res.pvalue))
        notes.append(f"node {k + 1}: KS D={res.statistic:.4f} p={res.pvalue:.4g}")
    passed = all(p > level for p in pvals)
    stats[n] = {
        "median": float(np.median(sim_vals)),
        "q05": float(np.quantile(sim_vals, 0.05)),
        "q95": float(np.quantile(sim_vals, 0.95)),
        "reps": reps,
        "min_pvalue": float(min(pvals)),
    }
    return ConvergenceResult(
        check="fclt_queue",
        params={"t": t, "n": n, "reps": reps, "level": level},
        n_values=(n,),
        statistics=stats,
        slope=None,
        slope_se=None,
        passed=bool(passed),
        notes=tuple(notes),
    )


def check_service_routing(
    spec: NetworkSpec,
    n_list: tuple[int, ...],
    reps: int,
    rng: RngStream,
    slope_band: tuple[float, float] = DEFAULT_SLOPE_BAND,
    se_multiple: float = 5.0,
) -> ConvergenceResult:
    """Service strong law plus routing fluctuation variances.

    Service: sup-norm of n^{-1} S_n - M across n, slope in the band
    (flagged degenerate for deterministic bases, whose fluctuation is a
    floor-function artifact of order 1/n).  Routing: per source row, the
    summed per-destination variances of (R^k(n) - n p_k)/sqrt(n) against
    sum_k p_k (1 - p_k), within `se_multiple` standard errors.
    """
    if len(n_list) < 3 or list(n_list) != sorted(n_list):
        raise ValueError("need an increasing list of at least three population sizes")
    grid = spec.horizon
    notes: list[str] = []
    stats: dict[int, dict[str, float]] = {}
    medians = []
    degenerate = all(isinstance(s.base, Deterministic) for s in spec.services)
    for i, n in enumerate(n_list):
        vals = np.empty(reps)
        for r in range(reps):
            sup = 0.0
            for k, prof in enumerate(spec.services):
                s_path = sample_service_process(prof, n, grid, rng.child(0, i, r, k))
                m_vals = np.asarray(prof.cumulative(grid.times), dtype=float)
                sup = max(sup, float(np.max(np.abs(s_path.values[0] / n - m_vals))))
            vals[r] = sup
        stats[n] = _summary(vals)
        medians.append(stats[n]["median"])
    slope, se = fit_loglog_slope(np.array(n_list, dtype=float), np.array(medians))
    if degenerate:
        service_ok = True
        notes.append(
            f"service: deterministic base, fluctuation is a 1/n floor artifact "
            f"(slope {slope:.3f}); degenerate FCLT case"
        )
    else:
        service_ok = slope_band[0] <= slope <= slope_band[1]
        notes.append(f"service: sup-norm slope {slope:.3f}")

    routing_ok = True
    n_draw = n_list[-1]
    gen = rng.child(1).generator()
    for i in range(spec.K):
        row = spec.P[i]
        target = float(np.sum(row * (1.0 - row)))
        if target < 1e-15:
            continue
        probs = np.concatenate([row, [max(0.0, 1.0 - row.sum())]])
        counts = gen.multinomial(n_draw, probs / probs.sum(), size=reps)[:, : spec.K]
        fluct = (counts - n_draw * row[None, :]) / np.sqrt(n_draw)
        variances = np.var(fluct, axis=0, ddof=1)
        stat = float(np.sum(variances))
        # normal-approx SE of a summed sample variance
        se_stat = float(np.sqrt(np.sum(2.0 * variances**2 / max(reps - 1, 1))))
        ok = abs(stat - target) <= se_multiple * max(se_stat, 1e-12)
        routing_ok = routing_ok and ok
        notes.append(
            f"routing row {i + 1}: sum of variances {stat:.4f} vs target {target:.4f} "
            f"(se {se_stat:.4f})"
        )
    return ConvergenceResult(
        check="service_routing",
        params={"reps": reps, "slope_band": list(slope_band), "se_multiple": se_multiple},
        n_values=tuple(n_list),
        statistics=stats,
        slope=slope,
        slope_se=se,
        passed=bool(service_ok and routing_ok),
        notes=tuple(notes),
    )
