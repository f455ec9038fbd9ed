"""Closed-form CBF safety controllers with a tunable robustness term."""

from .core import (
    EPS_D,
    AffineConstraint,
    BarrierFunction,
    BlowUpError,
    CBFControlError,
    ConfigurationError,
    ControlAffineSystem,
    DegenerateMarginError,
    DomainError,
    ExtendedClassK,
    IncompatibleInputError,
    InfeasibleConstraintError,
    KappaRangeError,
    NumericsError,
    ShapingFunction,
    TunableTermPolicy,
    evaluate_constraint,
    finite_difference_gradient,
    gamma_sontag,
)
from .formulas import (
    ControllerOutput,
    ControllerSpec,
    evaluate_controller,
    kappa_from_eta,
    lambda_min_norm,
    lambda_sontag,
    lambda_tunable,
    lambda_tunable_relu,
    lin_sontag_eta,
)
from .analysis import (
    CompatibilityResult,
    DisturbanceSpec,
    MarginReport,
    check_compatibility,
    disturbed_residual,
    kappa_bi_upper,
    margin_report,
    margins_over,
    probe_derivative_jump,
    safety_margin_at,
)
from .simulate import SimConfig, Trajectory, run, step

__version__ = "0.1.0"

__all__ = [
    "EPS_D",
    "AffineConstraint",
    "BarrierFunction",
    "BlowUpError",
    "CBFControlError",
    "CompatibilityResult",
    "ConfigurationError",
    "ControlAffineSystem",
    "ControllerOutput",
    "ControllerSpec",
    "DegenerateMarginError",
    "DisturbanceSpec",
    "DomainError",
    "ExtendedClassK",
    "IncompatibleInputError",
    "InfeasibleConstraintError",
    "KappaRangeError",
    "MarginReport",
    "NumericsError",
    "ShapingFunction",
    "SimConfig",
    "Trajectory",
    "TunableTermPolicy",
    "check_compatibility",
    "disturbed_residual",
    "evaluate_constraint",
    "evaluate_controller",
    "finite_difference_gradient",
    "gamma_sontag",
    "kappa_bi_upper",
    "kappa_from_eta",
    "lambda_min_norm",
    "lambda_sontag",
    "lambda_tunable",
    "lambda_tunable_relu",
    "lin_sontag_eta",
    "margin_report",
    "margins_over",
    "probe_derivative_jump",
    "run",
    "safety_margin_at",
    "step",
]
