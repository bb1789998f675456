"""Certified final-state observability for non-autonomous evolution families.

Modules, bottom-up:

* ``time_sets``  interval-union time sets, density points, the geometric sequence
* ``constants``  the explicit observability constants
* ``evolution``  Fourier-multiplier evolution families, projectors, dissipation estimates
* ``observation`` sensor families, thickness, uncertainty principle
* ``pipeline``   audits of the telescoping chain and of the final inequality
* ``cli``        configuration-driven runner
"""
from .constants import (
    ConstantBundle,
    InvariantViolation,
    ObservabilityCertificate,
    VacuousBoundWarning,
    blowup_envelope,
    cobs_bound,
    cobs_explicit,
    derive_c1_c2,
    derive_c3_c4,
    derive_certificate,
    epsilon_choice,
    f_max,
    f_value,
    holder_lift,
    lambda_star,
    q_ratio,
    remark_constants,
)
from .evolution import (
    CertificationError,
    EllipticSymbol,
    EvolutionFamily,
    GridSpace,
    NotEllipticError,
    ProjectorFamily,
    SpectralProjector,
    apply_projector,
    apply_U,
    certify_DE,
    check_ellipticity,
    estimate_exp_bound,
    multiplier_norm,
)
from .observation import (
    SensorFamily,
    apply_C,
    certify_UCP,
    mean_thickness_check,
    uniform_thickness_check,
)
from .pipeline import compute_traces, epsilon_balance_check, run_telescope, verify_OBS
from .time_sets import (
    DomainError,
    Mode,
    TimeSet,
    build_sequence,
    fat_cantor,
    find_density_point,
    find_theta0,
    measure,
    right_density,
)

__version__ = "0.1.0"
