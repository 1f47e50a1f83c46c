"""Diffusion-limit sampling: netput, pointwise queue law, tandem paths, workload.

The centered netput limit decomposes per node k as

    Xhat_k = bridge_k - [(I - P^T)(c . W o M)]_k + routing_k,

where bridge is the arrival bridge W0 o F (zero off the entry nodes), W_k are
independent standard Brownian motions time-changed by M_k and scaled by the
service base's diffusion coefficient c_k, and routing_k sums independent
Brownian terms W_{l,k} o M_l with variance rate P[l,k](1 - P[l,k]) (zero for
deterministic rows).  The (I - P^T) factor carries each upstream service
fluctuation downstream with weight P[l,k], which is what deterministic-routing
chains require.

The queue limit is pointwise: Qhat(t) = Delta_{Xhat}(Xbar)(t), evaluated with
the directional regulator against the fluid netput.  Full sample paths are
produced only for two-node chains whose fluid structure is an initial
overload at node 1 (uniform or unimodal-with-initial-overload arrivals);
there the regulator admits explicit piecewise forms and the discontinuity
locations and left/right types are recorded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fluid import FluidSolution, fluid_solve
from .network import NetworkSpec
from .paths import LINEAR, VectorPath
from .reflection import DirectionalRegulator
from .stochastic import BridgeCovariance, BridgeSampler, RngStream

_BRIDGE_STREAM = 0
_SERVICE_STREAM = 1
_ROUTING_STREAM = 2


@dataclass(frozen=True)
class DiffusionSample:
    """One netput draw with its three components; queue/workload optional."""

    netput: VectorPath
    bridge: VectorPath
    service: VectorPath   # (I - P^T)(c . W o M): own minus inherited upstream
    routing: VectorPath   # categorical routing noise, zero for 0/1 rows
    queue: VectorPath | None = None
    workload: VectorPath | None = None
    discontinuities: tuple["Discontinuity", ...] = ()


@dataclass(frozen=True)
class Discontinuity:
    node: int
    time: float
    kind: str          # "right" or "left"
    left_limit: float
    value: float
    right_limit: float


class DiffusionNetputSampler:
    """Draws of the netput limit on the spec horizon, geometry cached."""

    def __init__(self, spec: NetworkSpec):
        spec.validate()
        self.spec = spec
        self.grid = spec.horizon
        times = self.grid.times
        K = spec.K
        self.bridge_sampler = BridgeSampler(BridgeCovariance.from_spec(spec), self.grid)
        self.dM = np.stack(
            [np.diff(np.asarray(s.cumulative(times), dtype=float)) for s in spec.services]
        )
        self.coeff = np.array([s.diffusion_coefficient() for s in spec.services])
        self.I_minus_Pt = np.eye(K) - spec.P.T
        # routing pairs (l, k) with nondegenerate variance p(1-p)
        self.routing_pairs = [
            (l, k, float(spec.P[l, k] * (1.0 - spec.P[l, k])))
            for l in range(K)
            for k in range(K)
            if spec.P[l, k] * (1.0 - spec.P[l, k]) > 1e-15
        ]

    def sample_many(self, rng: RngStream, count: int) -> list[DiffusionSample]:
        K, m = self.spec.K, self.grid.m
        bridges_j = self.bridge_sampler.sample_many(rng.child(_BRIDGE_STREAM), count)
        bridges = np.zeros((count, K, m))
        for j, e in enumerate(self.spec.entry_nodes):
            bridges[:, e, :] = bridges_j[:, j, :]
        gen_service = rng.child(_SERVICE_STREAM).generator()
        incr = gen_service.standard_normal((count, K, m - 1)) * np.sqrt(self.dM)[None, :, :]
        w_service = np.concatenate([np.zeros((count, K, 1)), np.cumsum(incr, axis=2)], axis=2)
        w_service *= self.coeff[None, :, None]
        service = np.einsum("ij,bjm->bim", self.I_minus_Pt, w_service)
        routing = np.zeros((count, K, m))
        if self.routing_pairs:
            gen_routing = rng.child(_ROUTING_STREAM).generator()
            for l, k, var in self.routing_pairs:
                inc = gen_routing.standard_normal((count, m - 1)) * np.sqrt(var * self.dM[l])
                routing[:, k, 1:] += np.cumsum(inc, axis=1)
        netput = bridges - service + routing
        out = []
        for b in range(count):
            out.append(
                DiffusionSample(
                    netput=VectorPath(self.grid, netput[b], LINEAR),
                    bridge=VectorPath(self.grid, bridges[b], LINEAR),
                    service=VectorPath(self.grid, service[b], LINEAR),
                    routing=VectorPath(self.grid, routing[b], LINEAR),
                )
            )
        return out

    def sample_values(self, rng: RngStream, count: int) -> np.ndarray:
        """(count, K, m) netput values only; cheaper than building paths."""
        samples = self.sample_many(rng, count)
        return np.stack([s.netput.values for s in samples])

    def sample(self, rng: RngStream) -> DiffusionSample:
        return self.sample_many(rng, 1)[0]


def sample_diffusion_netput(spec: NetworkSpec, rng: RngStream) -> DiffusionSample:
    return DiffusionNetputSampler(spec).sample(rng)


def diffusion_queue_pointwise(
    spec: NetworkSpec,
    t: float,
    rng: RngStream,
    reps: int,
    fluid: FluidSolution | None = None,
) -> np.ndarray:
    """Empirical sample of Qhat(t): (K, reps) array of pointwise queue values."""
    if fluid is None:
        fluid = fluid_solve(spec)
    sampler = DiffusionNetputSampler(spec)
    regulator = DirectionalRegulator(fluid.netput, spec.P)
    chis = np.stack([s.netput.values for s in sampler.sample_many(rng, reps)])
    values, _, _, _ = regulator.solve_batch(chis)
    idx = spec.horizon.nearest_index(t)
    return values[:, :, idx].T.copy()


def diffusion_workload(sample: DiffusionSample, spec: NetworkSpec) -> VectorPath:
    """Zhat = diag(1/mu) Qhat; defined for stationary service rates only."""
    if sample.queue is None:
        raise ValueError("sample carries no queue path; produce it first")
    rates = [s.stationary_rate(spec.horizon.t1) for s in spec.services]
    if any(r is None for r in rates):
        raise ValueError("workload is defined only for stationary service rates")
    m = np.diag([1.0 / r for r in rates])
    return sample.queue.with_values(m @ sample.queue.values)


# ---------------------------------------------------------------------------
# Two-node chain sample paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _TandemStructure:
    """Fluid landmarks of a 1->2 chain with initial overload at node 1."""

    tau1_idx: int          # grid index where node 1's fluid queue returns to zero
    tau1: float
    case: str              # "underloaded" | "overloaded" | "critical" (node 2)
    tau2_idx: int | None   # node 2's own emptying index (overloaded case)
    tau2: float | None


def _tandem_structure(spec: NetworkSpec, fluid: FluidSolution) -> _TandemStructure:
    grid = spec.horizon
    tol = fluid.tol_c
    z = fluid.queue.values
    y = fluid.regulator.values
    over1 = z[0] > tol
    if not over1.any():
        raise ValueError("node 1 has no initial fluid overload; path sampling unsupported")
    first = int(over1.argmax())
    after = over1[first:]
    end_rel = int((~after).argmax()) if (~after).any() else after.size
    tau1_idx = first + end_rel
    if over1[tau1_idx:].any():
        raise ValueError("node 1 re-enters overload; path sampling unsupported")
    if y[0][: max(first, 1)].max() > tol:
        raise ValueError("node 1 regulated before its overload; path sampling unsupported")
    tau1_idx = min(tau1_idx, grid.m - 1)
    over2 = z[1] > tol
    if over2.any():
        first2 = int(over2.argmax())
        after2 = over2[first2:]
        end2 = int((~after2).argmax()) if (~after2).any() else after2.size
        tau2_idx = min(first2 + end2, grid.m - 1)
        if over2[tau2_idx:].any() or first2 > 1:
            raise ValueError("node 2 overload is not a single initial interval")
        case = "overloaded"
        tau2 = float(grid.times[tau2_idx])
    else:
        # regulator flat at the start means full-capacity service: critical
        flat_end = int(np.searchsorted(y[1], tol, side="right"))
        case = "critical" if flat_end > 1 else "underloaded"
        tau2_idx, tau2 = None, None
    return _TandemStructure(
        tau1_idx=tau1_idx,
        tau1=float(grid.times[tau1_idx]),
        case=case,
        tau2_idx=tau2_idx,
        tau2=tau2,
    )


def _typed(node: int, t: float, left: float, value: float, right: float) -> Discontinuity:
    kind = "right" if abs(value - left) <= abs(value - right) else "left"
    return Discontinuity(node=node, time=t, kind=kind, left_limit=left, value=value, right_limit=right)


def tandem_diffusion_path(
    spec: NetworkSpec,
    rng: RngStream,
    sampler: DiffusionNetputSampler | None = None,
    fluid: FluidSolution | None = None,
) -> DiffusionSample:
    """Full-path queue limit for a two-node chain, by the piecewise regulator.

    Node 1: chi1 before tau1, max(chi1(tau1), 0) at tau1, zero after.
    Node 2 splits on its fluid load:
      underloaded: identically zero;
      overloaded:  chi2 before tau1, chi2 - max(0, -chi1(tau1)) at tau1,
                   chi1 + chi2 on (tau1, tau2), max(0, (chi1+chi2)(tau2)) at
                   tau2, zero after;
      critical:    chi2 + sup_{s<=t}[-chi2(s)]^+ before tau1, the clipped
                   supremum including the tau1 regulator at tau1, zero after.
    Each sample's discontinuity times and left/right types are recorded.
    """
    if spec.K != 2:
        raise ValueError("path sampling is implemented for two-node chains")
    if fluid is None:
        fluid = fluid_solve(spec)
    if sampler is None:
        sampler = DiffusionNetputSampler(spec)
    st = _tandem_structure(spec, fluid)
    sample = sampler.sample(rng)
    chi = sample.netput.values
    m = spec.horizon.m
    i1 = st.tau1_idx
    q = np.zeros((2, m))

    chi1_t1 = chi[0, i1]
    q[0, :i1] = chi[0, :i1]
    q[0, i1] = max(chi1_t1, 0.0)
    discs = [
        _typed(0, st.tau1, left=chi1_t1, value=q[0, i1], right=0.0)
    ]

    if st.case == "underloaded":
        pass
    elif st.case == "overloaded":
        i2 = st.tau2_idx
        assert i2 is not None and i2 >= i1
        q[1, :i1] = chi[1, :i1]
        q[1, i1] = chi[1, i1] - max(0.0, -chi1_t1)
        q[1, i1 + 1 : i2] = chi[0, i1 + 1 : i2] + chi[1, i1 + 1 : i2]
        combined = chi[0, i2] + chi[1, i2]
        q[1, i2] = max(0.0, combined)
        if i2 > i1:
            discs.append(
                _typed(1, st.tau1, left=chi[1, i1], value=q[1, i1], right=chi[0, i1] + chi[1, i1])
            )
            discs.append(_typed(1, st.tau2, left=combined, value=q[1, i2], right=0.0))
        else:
            discs.append(_typed(1, st.tau2, left=chi[1, i2], value=q[1, i2], right=0.0))
    else:  # critical
        refl = chi[1, : i1 + 1] + np.maximum.accumulate(np.maximum(-chi[1, : i1 + 1], 0.0))
        q[1, :i1] = refl[:i1]
        gamma1_t1 = max(0.0, -chi1_t1)
        gamma2_t1 = max(
            float(np.max(np.maximum(-chi[1, : i1 + 1], 0.0))),
            max(0.0, -chi[1, i1] + gamma1_t1),
        )
        q[1, i1] = chi[1, i1] + gamma2_t1 - gamma1_t1
        discs.append(_typed(1, st.tau1, left=refl[i1], value=q[1, i1], right=0.0))

    queue = VectorPath(spec.horizon, q, LINEAR)
    return DiffusionSample(
        netput=sample.netput,
        bridge=sample.bridge,
        service=sample.service,
        routing=sample.routing,
        queue=queue,
        discontinuities=tuple(discs),
    )
