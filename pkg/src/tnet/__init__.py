"""Transitory queueing networks: a finite population of jobs arrives over a
fixed horizon at FIFO single-server nodes coupled by substochastic routing.
The package simulates the pre-limit system exactly, computes its fluid and
diffusion limits through numerical oblique-reflection and
directional-derivative solvers, and classifies time-varying bottlenecks,
with a Monte Carlo harness tying simulation to the limits."""

from .bottleneck import (
    BottleneckReport,
    Chain,
    DiscontinuityEvent,
    LoadClassification,
    bottleneck_timeline,
    classify_loads,
    discontinuity_report,
    find_chains,
)
from .diffusion import (
    DiffusionNetputSampler,
    DiffusionSample,
    Discontinuity,
    diffusion_queue_pointwise,
    diffusion_workload,
    sample_diffusion_netput,
    tandem_diffusion_path,
)
from .fluid import FluidSolution, NodeCrossings, crossing_times, fluid_netput, fluid_solve
from .network import (
    ArrivalLaw,
    Comonotone,
    Deterministic,
    Exponential,
    GammaScv,
    GaussianCopula,
    Independent,
    NetworkSpec,
    PiecewiseLinearCdfLaw,
    ServiceProfile,
    SpecValidationError,
    TriangularLaw,
    UniformLaw,
    cdf_eval,
    load_spec,
    rate_cumulative,
    spectral_radius,
    tandem_spec,
    validate_spec,
)
from .paths import (
    LINEAR,
    STEP,
    PathDomainError,
    TimeGrid,
    VectorPath,
    default_grid,
    path_eval,
    path_integral,
    path_running_sup_plus,
    write_path_csv,
)
from .reflection import (
    DirectionalDerivativeSolution,
    DirectionalRegulator,
    ReflectionError,
    ReflectionSolution,
    directional_derivative_fd,
    directional_regulator,
    solve_oblique_reflection,
    tandem_closed_form,
)
from .simulator import (
    ScaledTrajectory,
    Trajectory,
    diffusion_scale,
    fluid_scale,
    simulate,
)
from .stochastic import (
    BridgeCovariance,
    BridgeSampler,
    CovarianceError,
    RngStream,
    joint_arrival_cdf,
    sample_arrival_epochs,
    sample_brownian_bridge,
    sample_routing,
    sample_service_process,
)
from .verify import (
    ConvergenceResult,
    check_fclt_queue,
    check_fslln_arrivals,
    check_service_routing,
)

__version__ = "0.1.0"
