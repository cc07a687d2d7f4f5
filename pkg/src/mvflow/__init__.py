"""mvflow: simulation and verification toolkit for distribution-dependent SDEs.

The package simulates McKean-Vlasov dynamics by iterating the
frozen-flow map until the measure flow is self-consistent, and checks
the contraction and stability estimates that construction rests on in
total-variation and transport metrics.
"""

__version__ = "0.1.0"

from .measures import (  # noqa: F401
    BinningRule,
    EmpiricalMeasure,
    HistogramPair,
    MeasureFlow,
    flow_metric_rho,
    flow_metric_rho_tilde,
    histogram_pair,
    load_flow,
    load_measure,
    moment,
    save_flow,
    save_measure,
    tv_discrete,
    tv_distance,
    wasserstein,
)
from .sde_solver import (  # noqa: F401
    CoefficientConstants,
    CoefficientSet,
    InitialSampler,
    IntegrabilityMeta,
    PathEnsemble,
    SimulationError,
    TimeGrid,
    ensemble_flow,
    euler_maruyama,
    sample_initial,
    save_ensemble,
)
from .fixed_point import (  # noqa: F401
    PicardDiagnostics,
    phi_map,
    picard_iterate,
    solve_mvsde,
    window_horizon,
)
from .particle_system import simulate_particles  # noqa: F401
from .girsanov import (  # noqa: F401
    ContractionReport,
    KlEstimate,
    contraction_check_ert1,
    kl_bound,
    pinsker_tv_bound,
    xi_squared_integral,
)
from .coefficients import (  # noqa: F401
    ValidationReport,
    conv_drift,
    feedback_drift,
    make_preset,
    moment_drift,
    singular_drift_1d,
    validate_coefficients,
)
