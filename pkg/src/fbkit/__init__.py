"""fbkit: inertial forward-backward solvers with activity identification
and local linear-rate prediction for partly smooth regularizers."""

from .operators import (
    CircularConvOp,
    DenseOp,
    IdentityOp,
    SmoothTerm,
    estimate_beta,
    grad,
    hessian_apply,
)
from .regularizers import (
    GroupNorm,
    L1Norm,
    MaxNorm,
    NuclearNorm,
    TotalVariation1D,
)
from .solver import (
    ConstantSchedule,
    FistaSchedule,
    OnlineSchedule,
    PRuleSchedule,
    Problem,
    RestartRule,
    StoppingRule,
    check_unconditional,
    run,
)
from .identification import (
    check_nd,
    check_ri,
    detect_identification,
)
from .rates import (
    best_rates,
    build_restricted,
    eta_spectrum,
    explicit_M,
    optimal_inertia,
    oscillation_period,
    rate_curve,
    rate_report,
    region_map,
    sigma_roots,
    spectral_radius,
)
from .experiments import (
    PRESETS,
    InstanceSpec,
    choose_lambda,
    compare,
    finite_termination,
    gen_instance,
    observed_rate,
    quadratic_growth_check,
    reference_solution,
    required_measurements,
)

__version__ = "0.1.0"
