"""Queue-length distributions for large redundancy-d systems.

Mean-field, pair, and triplet ODE approximations for processor sharing,
FCFS, LCFS, and limited processor sharing, plus an exact event-driven
simulator and exact three-server chains for validation.
"""

from .model import (
    DISCIPLINES,
    ModelParams,
    QueueDist,
    dist_mean,
    qdist_from_tail,
    validate_params,
)
from .ode import (
    DivergenceError,
    FixedPointResult,
    IntegratorConfig,
    OdeSystem,
    euler_integrate,
    solve_fixed_point,
)
from .meanfield import (
    MeanFieldState,
    gamma_series_identity,
    mf_fixed_point,
    mf_fixed_point_by_integration,
    mf_ode_system,
    mf_rhs,
    solve_qbar,
)
from .exact3 import (
    fcfs_asymptotic_mean,
    fcfs_n3_chain,
    fcfs_n3_stationary,
    ps_n3_stationary,
)
from .pair_ps import (
    PairState,
    PairStateD,
    pair_ps_fixed_point,
    pair_ps_rhs,
    pair_ps_rhs_d,
    ps_buddy_rate,
)
from .triplet_ps import (
    TripletState,
    cond_degree,
    cond_degree_triplet,
    triplet_fixed_point,
    triplet_rhs,
)
from .positional import (
    PositionalMarginals,
    PositionalState,
    kappa,
    lps_p1,
    lps_psi,
    lps_rates,
    positional_fixed_point,
    positional_rhs,
)
from .simulate import (
    SimConfig,
    SimStats,
    run_replications,
    run_simulation,
    validate_simconfig,
)
from .analysis import (
    ComparisonRow,
    buddy_curves,
    buddy_rate_curve_ps,
    buddy_rate_curves_positional,
    compare_disciplines,
    write_buddy_csv,
    write_compare_csv,
    write_dist_csv,
)

__version__ = "0.1.0"

__all__ = [
    "DISCIPLINES",
    "ModelParams",
    "QueueDist",
    "dist_mean",
    "qdist_from_tail",
    "validate_params",
    "DivergenceError",
    "FixedPointResult",
    "IntegratorConfig",
    "OdeSystem",
    "euler_integrate",
    "solve_fixed_point",
    "MeanFieldState",
    "gamma_series_identity",
    "mf_fixed_point",
    "mf_fixed_point_by_integration",
    "mf_ode_system",
    "mf_rhs",
    "solve_qbar",
    "fcfs_asymptotic_mean",
    "fcfs_n3_chain",
    "fcfs_n3_stationary",
    "ps_n3_stationary",
    "PairState",
    "PairStateD",
    "pair_ps_fixed_point",
    "pair_ps_rhs",
    "pair_ps_rhs_d",
    "ps_buddy_rate",
    "TripletState",
    "cond_degree",
    "cond_degree_triplet",
    "triplet_fixed_point",
    "triplet_rhs",
    "PositionalMarginals",
    "PositionalState",
    "kappa",
    "lps_p1",
    "lps_psi",
    "lps_rates",
    "positional_fixed_point",
    "positional_rhs",
    "SimConfig",
    "SimStats",
    "run_replications",
    "run_simulation",
    "validate_simconfig",
    "ComparisonRow",
    "buddy_curves",
    "buddy_rate_curve_ps",
    "buddy_rate_curves_positional",
    "compare_disciplines",
    "write_buddy_csv",
    "write_compare_csv",
    "write_dist_csv",
    "__version__",
]
