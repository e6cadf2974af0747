"""Certified upper bounds on restoration entropy via metric-adapted
singular values on the positive-definite-matrix manifold."""

from .dynamics import (
    CompactSet,
    CocycleJacobian,
    SystemModel,
    builtin_systems,
    cocycle,
    default_region,
    flow,
    invariance_spot_check,
    lanford_region,
    lanford_system,
    linear_map_system,
    linear_ode_system,
    identity_system,
    make_system,
    sample_set,
)
from .entropy import (
    BoundReport,
    LyapunovProfile,
    OracleResult,
    ct_bound,
    dt_bound,
    lanford_closed_form,
    lanford_metric,
    lyapunov_oracle,
    minimizing_metric_ct,
    minimizing_metric_dt,
    proximate_entropy,
)
from .errors import (
    BlowupError,
    ConfigError,
    NumericError,
    ToolkitError,
    UnknownSystemError,
)
from .metrics import (
    MetricField,
    MetricSpectrum,
    ct_metric_spectrum,
    metric_singular_values,
    orbital_derivative_fd,
)
from .spd import (
    as_spd,
    congruence,
    distance,
    geodesic,
    inductive_barycenter,
    log_singular_values,
    lyapunov_solve,
    majorizes_leq,
    power,
    vectorial_distance,
)

__version__ = "0.1.0"
