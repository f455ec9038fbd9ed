"""Closed-form controller formulas built on the pointwise pair (c, d).

All scalar lambda functions below live in (c, ||d||^2) space: the second
argument is always the squared norm of the constraint direction.  Each
controller assembles its input as ``u = lambda * d^T`` (plus the nominal
for the safety filter), so the formulas differ only in how lambda is
produced:

* min-norm:       lambda = ReLU(-c / d)                (boundary of the half-space)
* sontag:         lambda = (-c + sqrt(c^2 + s(d) d)) / d   (strictly interior)
* tunable:        lambda = (-c + kappa sqrt(c^2 + s(d) d)) / d
                  with kappa in (0, 1] interpolating between the two.

The tunable term kappa is usually constructed from a gain eta via
``kappa = (1 - eta) c / Gamma + eta``; eta = 1 recovers the sontag formula
and eta = 0.5 gives exactly half of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (
    EPS_D,
    AffineConstraint,
    ConfigurationError,
    DomainError,
    IncompatibleInputError,
    InfeasibleConstraintError,
    KappaRangeError,
    ShapingFunction,
    TunableTermPolicy,
)


def lambda_min_norm(c: float, d: float) -> float:
    """Smallest nonnegative multiplier with c + lam*d >= 0; 0 when d ~ 0."""
    if d <= EPS_D:
        return 0.0
    lam = -c / d
    return lam if lam > 0.0 else 0.0


def lambda_sontag(c: float, d: float, shaping: ShapingFunction) -> float:
    """(-c + sqrt(c^2 + s(d) d)) / d; strictly positive for d > 0."""
    if d <= EPS_D:
        return 0.0
    return (-c + math.sqrt(c * c + shaping(d) * d)) / d


def lambda_tunable_relu(
    c: float,
    d: float,
    kappa: float,
    shaping: ShapingFunction,
    enforce_sa: bool = False,
) -> float:
    """ReLU((-c + kappa*sqrt(c^2 + s(d) d)) / d).

    With ``enforce_sa`` the call is treated as safety-critical and kappa
    must lie in (0, 1].  Left unenforced the bare formula also serves the
    bounded-input variant, whose kappa range is not capped at 1.
    """
    if enforce_sa and not 0.0 < kappa <= 1.0:
        raise KappaRangeError(
            f"kappa={kappa} outside the safety range (0, 1] for the ReLU form"
        )
    if d <= EPS_D:
        return 0.0
    lam = (-c + kappa * math.sqrt(c * c + shaping(d) * d)) / d
    return lam if lam > 0.0 else 0.0


def lambda_tunable(c: float, d: float, kappa: float, shaping: ShapingFunction) -> float:
    """Smooth form: (-c + kappa*sqrt(c^2 + s(d) d)) / d without the ReLU.

    Requires kappa strictly above max(c/Gamma, 0) and at most 1, which
    makes the numerator positive.  An exact tie (numerator exactly zero)
    returns 0, the continuous limit from both sides.
    """
    if d <= EPS_D:
        return 0.0
    gamma = math.sqrt(c * c + shaping(d) * d)
    if kappa > 1.0:
        raise KappaRangeError(f"kappa={kappa} violates the upper bound kappa <= 1")
    num = kappa * gamma - c
    if num == 0.0:
        return 0.0
    lower = max(c / gamma, 0.0)
    if num < 0.0 or kappa <= 0.0:
        raise KappaRangeError(
            f"kappa={kappa} violates the lower bound max(c/Gamma, 0) = {lower}"
        )
    return num / d


def kappa_from_eta(c: float, d: float, eta: float, shaping: ShapingFunction) -> float:
    """Tunable term kappa = (1 - eta) * c / Gamma + eta.

    Defined on the open domain {c > 0 or d > 0} where Gamma > 0.  For
    constant eta in [0.5, 1] the result always satisfies the smooth-range
    condition max(c/Gamma, 0) < kappa <= 1.
    """
    if c <= 0.0 and d <= EPS_D:
        raise DomainError(
            f"(c={c}, d={d}) has c <= 0 and d ~ 0: outside the domain of kappa"
        )
    gamma = math.sqrt(c * c + shaping(d) * d)
    return (1.0 - eta) * (c / gamma) + eta


def lin_sontag_eta(
    gamma_bound: float, shaping: ShapingFunction
) -> Callable[[float, float], float]:
    """Norm-bound-aware eta map: 1 / (sqrt(s(d)/gamma^2 + 1) + 1).

    Suitable for :meth:`TunableTermPolicy.eta_function`; it is the default
    policy of the bounded-input kind and is feasible whenever the bound is
    compatible with the constraint.
    """
    g2 = gamma_bound * gamma_bound

    def eta_fn(c: float, d: float) -> float:
        return 1.0 / (math.sqrt(shaping(d) / g2 + 1.0) + 1.0)

    return eta_fn


@dataclass(frozen=True)
class ControllerOutput:
    """Result of one controller evaluation.

    u is the full input (nominal included for the filter kind); lam is the
    formula multiplier so that the formula part of u equals lam * d^T.
    residual is c + d.u minus the right-hand side the formula was required
    to meet (0 for min-norm, kappa*Gamma for tunable kinds).  c_eff and
    gamma_eff are the constraint offset and tightening actually used
    (shifted by the nominal for the filter kind); gamma_eff is NaN for the
    min-norm kind, which has no tightening.
    """

    u: np.ndarray
    lam: float
    kappa: Optional[float]
    residual: float
    c_eff: float
    gamma_eff: float


_FILTER_INNER_KINDS = ("qp", "sontag", "tunable", "bounded_input")


@dataclass(frozen=True)
class ControllerSpec:
    """Declarative description of which formula to evaluate.

    Kinds: ``qp`` (min-norm), ``sontag``, ``tunable`` (smooth by default,
    ReLU via flag), ``safety_filter`` (wraps one of the others around a
    nominal input), ``bounded_input`` (ReLU form restricted so that
    ||u|| <= gamma).
    """

    kind: str
    shaping: ShapingFunction | None = None
    policy: TunableTermPolicy | None = None
    relu: bool = False
    gamma: float | None = None
    inner: "ControllerSpec | None" = None
    nominal: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def qp(cls) -> "ControllerSpec":
        return cls(kind="qp")

    @classmethod
    def sontag(cls, shaping: ShapingFunction) -> "ControllerSpec":
        return cls(kind="sontag", shaping=shaping)

    @classmethod
    def tunable(
        cls,
        shaping: ShapingFunction,
        policy: TunableTermPolicy,
        relu: bool = False,
    ) -> "ControllerSpec":
        return cls(kind="tunable", shaping=shaping, policy=policy, relu=relu)

    @classmethod
    def safety_filter(
        cls,
        inner: "ControllerSpec",
        nominal: Callable[[np.ndarray], np.ndarray],
    ) -> "ControllerSpec":
        if inner.kind not in _FILTER_INNER_KINDS:
            raise ConfigurationError(
                f"safety_filter cannot wrap kind {inner.kind!r}; "
                f"allowed: {_FILTER_INNER_KINDS}"
            )
        return cls(kind="safety_filter", inner=inner, nominal=nominal)

    @classmethod
    def bounded_input(
        cls,
        shaping: ShapingFunction,
        gamma: float,
        policy: TunableTermPolicy | None = None,
    ) -> "ControllerSpec":
        if not gamma > 0.0:
            raise ConfigurationError(f"input bound gamma must be positive, got {gamma}")
        return cls(kind="bounded_input", shaping=shaping, policy=policy, gamma=float(gamma))


def _resolve_kappa(
    spec: ControllerSpec, c: float, d2: float, x: np.ndarray | None
) -> float:
    """Produce kappa from the spec's policy at the point (c, ||d||^2)."""
    pol = spec.policy
    if pol is None:
        if spec.kind == "bounded_input":
            # Norm-bound-aware default: always feasible under compatibility.
            s_of_d = spec.shaping(d2)
            g2 = spec.gamma * spec.gamma
            eta = 1.0 / (math.sqrt(s_of_d / g2 + 1.0) + 1.0)
            return kappa_from_eta(c, d2, eta, spec.shaping)
        raise ConfigurationError(f"controller kind {spec.kind!r} requires a policy")
    if pol.kind == "eta_constant":
        return kappa_from_eta(c, d2, pol.eta, spec.shaping)
    if pol.kind == "eta_function":
        eta = float(pol.eta_fn(c, d2))
        return kappa_from_eta(c, d2, eta, spec.shaping)
    if pol.kind == "kappa_direct":
        if x is None:
            raise ConfigurationError("kappa_direct policy needs the state x")
        return float(pol.kappa_fn(x))
    raise ConfigurationError(f"unknown policy kind {pol.kind!r}")


def evaluate_controller(
    spec: ControllerSpec, con: AffineConstraint, x: np.ndarray | None = None
) -> ControllerOutput:
    """Evaluate the controller described by spec on the constraint pair.

    Raises InfeasibleConstraintError when d ~ 0 with c <= 0 (the strict
    convention makes that a hard error, never a silent zero input),
    KappaRangeError when the resolved tunable term leaves its validity
    range, and IncompatibleInputError when the bounded-input kind cannot
    meet the constraint within its norm bound.
    """
    c = con.c
    d = con.d
    d2 = con.d_norm_sq
    if d2 <= EPS_D and c <= 0.0:
        raise InfeasibleConstraintError(
            f"infeasible constraint: c={c} <= 0 with ||d||^2={d2} ~ 0"
            + (f" at x={x}" if x is not None else "")
        )

    if spec.kind == "qp":
        lam = lambda_min_norm(c, d2)
        u = lam * d
        return ControllerOutput(
            u=u, lam=lam, kappa=None, residual=c + lam * d2, c_eff=c, gamma_eff=math.nan
        )

    if spec.kind == "sontag":
        lam = lambda_sontag(c, d2, spec.shaping)
        gam = math.sqrt(c * c + spec.shaping(d2) * d2)
        u = lam * d
        return ControllerOutput(
            u=u, lam=lam, kappa=1.0, residual=c + lam * d2 - gam, c_eff=c, gamma_eff=gam
        )

    if spec.kind == "tunable":
        kappa = _resolve_kappa(spec, c, d2, x)
        if spec.relu:
            lam = lambda_tunable_relu(c, d2, kappa, spec.shaping, enforce_sa=True)
        else:
            lam = lambda_tunable(c, d2, kappa, spec.shaping)
        gam = math.sqrt(c * c + spec.shaping(d2) * d2)
        u = lam * d
        return ControllerOutput(
            u=u,
            lam=lam,
            kappa=kappa,
            residual=c + lam * d2 - kappa * gam,
            c_eff=c,
            gamma_eff=gam,
        )

    if spec.kind == "bounded_input":
        dnorm = math.sqrt(d2)
        slack = spec.gamma * dnorm + c
        if slack < 0.0:
            raise IncompatibleInputError(
                f"norm bound gamma={spec.gamma} incompatible with (c={c}, ||d||={dnorm})",
                deficit=-slack,
            )
        kappa = _resolve_kappa(spec, c, d2, x)
        gam = math.sqrt(c * c + spec.shaping(d2) * d2)
        if d2 > EPS_D:
            upper = slack / gam
            if not 0.0 < kappa <= upper:
                raise KappaRangeError(
                    f"kappa={kappa} outside the bounded-input range (0, {upper}]"
                )
        lam = lambda_tunable_relu(c, d2, kappa, spec.shaping)
        u = lam * d
        return ControllerOutput(
            u=u,
            lam=lam,
            kappa=kappa,
            residual=c + lam * d2 - kappa * gam,
            c_eff=c,
            gamma_eff=gam,
        )

    if spec.kind == "safety_filter":
        kd = np.asarray(spec.nominal(x), dtype=float)
        c_bar = c + float(d @ kd)
        inner_out = evaluate_controller(spec.inner, AffineConstraint(c_bar, d), x)
        return ControllerOutput(
            u=inner_out.u + kd,
            lam=inner_out.lam,
            kappa=inner_out.kappa,
            residual=inner_out.residual,
            c_eff=inner_out.c_eff,
            gamma_eff=inner_out.gamma_eff,
        )

    raise ConfigurationError(f"unknown controller kind {spec.kind!r}")
