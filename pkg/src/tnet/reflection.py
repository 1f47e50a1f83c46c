"""Oblique reflection on the nonnegative orthant and its directional derivative.

Given a routing matrix P with spectral radius < 1 and V = I - P^T, the
oblique reflection problem maps a path x with x(t0) >= 0 to the unique pair
(z, y) with

    z = x + V y >= 0,   y(t0) = 0,  y nondecreasing,  z_j dy_j = 0.

The regulator y is computed as the fixed point of the monotone map

    y(t) <- sup_{s <= t} [ -x(s) + (P^T y)(s) ]^+,

iterated from y = 0 until the sup-norm change drops below ITERATION_TOL.

The directional derivative of the reflection at x in direction chi,
Delta_chi(x) = lim sqrt(n) (Phi(x + chi/sqrt(n)) - Phi(x)), equals
chi + V gamma where gamma solves a second fixed-point system whose sup at
time t runs only over the index set

    nabla_t^i = { s <= t : z_i(s) = 0 and y_i(s) = y_i(t) },

clipped at zero up to the first regulator-increase time t_u^i and
unclipped afterwards.  Both solvers operate on grid paths; zero membership
uses the relative tolerance tol_c = 1e-9 * (1 + sup|x|).

Conventions the continuous theory leaves open, pinned here:
  * sup over an empty nabla set is 0 in the clipped branch (it cannot occur
    in the unclipped branch: the grid argmax realizing y_i(t) > 0 is an
    exact zero of z_i and lies in the set).
  * at times where the nabla set changes abruptly the value is grid-resolution
    sensitive; compare against the finite-difference route away from
    discontinuities only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .paths import VectorPath

ITERATION_TOL = 1e-10
MAX_ITERATIONS = 10_000
DEFAULT_FD_SCALE = 1e8


class ReflectionError(RuntimeError):
    """Solver failure: precondition violation or non-convergence."""


def zero_tolerance(x: VectorPath) -> float:
    return 1e-9 * (1.0 + x.sup_norm())


@dataclass(frozen=True)
class ReflectionSolution:
    """(z, y) = (Phi(x), Psi(x)) plus solver diagnostics."""

    z: VectorPath
    y: VectorPath
    iterations: int
    residual: float
    tol_c: float

    def complementarity_defect(self) -> float:
        """Sum over nodes and grid cells of dy accrued into a state with
        z > tol_c.  A growth cell's running max lands on its right endpoint,
        where z vanishes, so the defect is at solver-residual scale."""
        zv, yv = self.z.values, self.y.values
        dy = np.diff(yv, axis=1)
        positive = zv[:, 1:] > self.tol_c
        return float(np.sum(dy * positive))


def _check_routing(P: np.ndarray, dim: int) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.shape != (dim, dim):
        raise ReflectionError(f"routing matrix shape {P.shape} does not match path dim {dim}")
    return P


def solve_oblique_reflection(
    x: VectorPath,
    P: np.ndarray,
    tol: float = ITERATION_TOL,
    max_iterations: int = MAX_ITERATIONS,
    allow_negative_start: bool = False,
) -> ReflectionSolution:
    """Unique (z, y) with z = x + (I - P^T) y, by fixed-point iteration.

    `allow_negative_start` relaxes the x(t0) >= 0 precondition by letting the
    regulator jump at t0 (used by the finite-difference directional
    derivative, whose bumped path may dip below zero at the start).
    """
    P = _check_routing(P, x.dim)
    xv = x.values
    if not allow_negative_start and np.any(xv[:, 0] < -1e-9 * (1.0 + np.max(np.abs(xv)))):
        raise ReflectionError(f"x(t0) = {xv[:, 0]} has a negative coordinate")
    G = P.T
    y = np.zeros_like(xv)
    residual = np.inf
    for it in range(1, max_iterations + 1):
        y_next = np.maximum.accumulate(np.maximum(-xv + G @ y, 0.0), axis=1)
        residual = float(np.max(np.abs(y_next - y)))
        y = y_next
        if residual < tol:
            break
    else:
        raise ReflectionError(
            f"reflection fixed point did not converge: residual {residual:.3e} "
            f"after {max_iterations} iterations"
        )
    z = xv + (np.eye(x.dim) - G) @ y
    return ReflectionSolution(
        z=x.with_values(z),
        y=x.with_values(y),
        iterations=it,
        residual=residual,
        tol_c=zero_tolerance(x),
    )


def tandem_closed_form(x: VectorPath, P: np.ndarray | None = None) -> ReflectionSolution:
    """Two-node chain solved by the nested-supremum formulas.

    y1(t) = sup_{s<=t} (-x1(s))^+,
    y2(t) = sup_{s<=t} (-x2(s) + y1(s))^+,
    z = (x1 + y1, x2 + y2 - y1).
    """
    if x.dim != 2:
        raise ReflectionError(f"closed form needs a 2-node chain, got dim {x.dim}")
    if P is not None:
        P = _check_routing(P, 2)
        expected = np.array([[0.0, 1.0], [0.0, 0.0]])
        if not np.allclose(P, expected, atol=1e-12):
            raise ReflectionError("closed form needs the 1->2 chain routing matrix")
    x1, x2 = x.values
    y1 = np.maximum.accumulate(np.maximum(-x1, 0.0))
    y2 = np.maximum.accumulate(np.maximum(-x2 + y1, 0.0))
    z = np.vstack([x1 + y1, x2 + y2 - y1])
    return ReflectionSolution(
        z=x.with_values(z),
        y=x.with_values(np.vstack([y1, y2])),
        iterations=1,
        residual=0.0,
        tol_c=zero_tolerance(x),
    )


def directional_derivative_fd(
    x: VectorPath, chi: VectorPath, P: np.ndarray, n_fd: float = DEFAULT_FD_SCALE
) -> VectorPath:
    """sqrt(n) * (Phi(x + chi/sqrt(n)) - Phi(x)) at n = n_fd."""
    root = float(np.sqrt(n_fd))
    base = solve_oblique_reflection(x, P)
    bumped = solve_oblique_reflection(
        x.with_values(x.values + chi.values / root), P, allow_negative_start=True
    )
    return x.with_values(root * (bumped.z.values - base.z.values))


@dataclass(frozen=True)
class DirectionalDerivativeSolution:
    """Delta = chi + V gamma, with the regulator geometry that produced it."""

    value: VectorPath
    gamma: VectorPath
    window_start: np.ndarray = field(repr=False)  # (K, m) first index of each nabla window
    zero_mask: np.ndarray = field(repr=False)     # (K, m) grid zeros of z
    t_u_index: np.ndarray                          # (K,) first grid index with y > tol_c, m if none
    t_u: np.ndarray                                # (K,) the matching times (inf if none)
    iterations: int = 0
    residual: float = 0.0

    def nabla_set(self, node: int, t_index: int) -> np.ndarray:
        """Grid indices forming nabla_t for one node at one grid time."""
        lo = int(self.window_start[node, t_index])
        window = np.arange(lo, t_index + 1)
        return window[self.zero_mask[node, lo : t_index + 1]]


class DirectionalRegulator:
    """Directional-derivative solver with the base reflection precomputed.

    The geometry (z, y, nabla windows, t_u) depends only on x; `solve` /
    `solve_batch` can then be called for many directions chi against the
    same base path.  The windowed maxima use a two-stack queue whose
    push/pop schedule depends only on the window geometry, so a whole batch
    of directions is swept with vectorized column operations.
    """

    def __init__(self, x: VectorPath, P: np.ndarray, tol_c: float | None = None):
        self.x = x
        self.P = _check_routing(P, x.dim)
        self.base = solve_oblique_reflection(x, P)
        self.tol_c = zero_tolerance(x) if tol_c is None else tol_c
        zv, yv = self.base.z.values, self.base.y.values
        K, m = zv.shape
        self.zero_mask = np.abs(zv) <= self.tol_c
        # y is nondecreasing: the window {s: y(s) = y(t)} starts at the first
        # index where y reaches y(t) - tol_c.
        self.window_start = np.empty((K, m), dtype=np.int64)
        for k in range(K):
            self.window_start[k] = np.searchsorted(yv[k], yv[k] - self.tol_c, side="left")
        grown = yv > self.tol_c
        self.t_u_index = np.where(grown.any(axis=1), grown.argmax(axis=1), m)
        times = x.grid.times
        self.t_u = np.where(
            self.t_u_index < m, times[np.minimum(self.t_u_index, m - 1)], np.inf
        )

    def _windowed_max(self, g: np.ndarray, k: int) -> np.ndarray:
        """Row-wise max of g (batch, m) over each window [window_start[k,t], t],
        restricted to grid zeros of z_k; -inf where that set is empty."""
        batch, m = g.shape
        masked = np.where(self.zero_mask[k][None, :], g, -np.inf)
        starts = self.window_start[k]
        out = np.empty_like(masked)
        neg_inf = np.full(batch, -np.inf)
        m_in = neg_inf.copy()      # max over positions pushed since last flush
        in_lo = 0                  # those positions are [in_lo, t]
        suffix = None              # (batch, block) suffix maxima of the out block
        front = 0
        block_len = 0
        lo = 0
        for t in range(m):
            col = masked[:, t]
            m_in = np.maximum(m_in, col)
            need = starts[t]
            while lo < need:
                if front == block_len:
                    # out block exhausted: flush [in_lo, t] into a suffix-max block
                    block = masked[:, in_lo : t + 1]
                    suffix = np.maximum.accumulate(block[:, ::-1], axis=1)[:, ::-1]
                    block_len = t + 1 - in_lo
                    front = 0
                    in_lo = t + 1
                    m_in = neg_inf.copy()
                front += 1
                lo += 1
            if front < block_len:
                out[:, t] = np.maximum(m_in, suffix[:, front])
            else:
                out[:, t] = m_in
        return out

    def solve_batch(
        self,
        chis: np.ndarray,
        tol: float = ITERATION_TOL,
        max_iterations: int = MAX_ITERATIONS,
    ) -> tuple[np.ndarray, np.ndarray, int, float]:
        """Solve the gamma system for a batch of directions.

        chis has shape (batch, K, m); returns (values, gammas, iterations,
        residual) with values = chi + V gamma, shapes matching chis.
        """
        chis = np.asarray(chis, dtype=float)
        K, m = self.x.dim, self.x.grid.m
        if chis.ndim != 3 or chis.shape[1:] != (K, m):
            raise ReflectionError(f"direction batch shape {chis.shape} != (batch, {K}, {m})")
        G = self.P.T
        clip_row = np.arange(m)[None, :] <= self.t_u_index[:, None]  # (K, m)
        gamma = np.zeros_like(chis)
        residual = np.inf
        for it in range(1, max_iterations + 1):
            drive = -chis + np.einsum("ij,bjm->bim", G, gamma)
            gamma_next = np.empty_like(gamma)
            for k in range(K):
                w = self._windowed_max(drive[:, k, :], k)
                gamma_next[:, k, :] = np.where(clip_row[k][None, :], np.maximum(w, 0.0), w)
            if np.any(np.isneginf(gamma_next)):
                raise ReflectionError(
                    "empty nabla set in the unclipped branch; the base regulator "
                    "geometry is inconsistent at the grid resolution"
                )
            residual = float(np.max(np.abs(gamma_next - gamma)))
            gamma = gamma_next
            if residual < tol:
                break
        else:
            raise ReflectionError(
                f"directional regulator did not converge: residual {residual:.3e} "
                f"after {max_iterations} iterations"
            )
        values = chis + np.einsum("ij,bjm->bim", np.eye(K) - G, gamma)
        return values, gamma, it, residual

    def solve(
        self,
        chi: VectorPath,
        tol: float = ITERATION_TOL,
        max_iterations: int = MAX_ITERATIONS,
    ) -> DirectionalDerivativeSolution:
        if chi.dim != self.x.dim or not chi.grid.same(self.x.grid):
            raise ReflectionError("direction path must share the base path's grid and dim")
        values, gammas, it, residual = self.solve_batch(
            chi.values[None, :, :], tol=tol, max_iterations=max_iterations
        )
        return DirectionalDerivativeSolution(
            value=chi.with_values(values[0]),
            gamma=chi.with_values(gammas[0]),
            window_start=self.window_start,
            zero_mask=self.zero_mask,
            t_u_index=self.t_u_index,
            t_u=self.t_u,
            iterations=it,
            residual=residual,
        )


def directional_regulator(
    x: VectorPath, chi: VectorPath, P: np.ndarray
) -> DirectionalDerivativeSolution:
    """One-shot Delta_chi(x); build a DirectionalRegulator for repeated chi."""
    return DirectionalRegulator(x, P).solve(chi)
