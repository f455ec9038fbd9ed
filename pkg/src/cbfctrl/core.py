"""Shared domain types for barrier-based safety control.

A control-affine system ``xdot = f(x) + g(x) u`` together with a barrier
function ``h`` induces, at every state, one affine inequality on the input:

    c(x) + d(x) u >= 0,   c = (dh/dx) f + beta(h),   d = (dh/dx) g.

Everything downstream (controller formulas, margins, simulation) consumes
that pointwise pair ``(c, d)``.  All types here are immutable after
construction and every operation is a pure function of its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

# Threshold on ||d||^2 below which the input direction is treated as zero.
# The formulas are exactly piecewise at d = 0; a threshold avoids
# catastrophic cancellation right at the switch.
EPS_D = 1e-12


class CBFControlError(Exception):
    """Base class for errors raised by this library."""


class ConfigurationError(CBFControlError):
    """Bad dimensions, invalid parameters, or malformed scenario config."""


class NumericsError(CBFControlError):
    """A map returned non-finite values for a finite state."""


class InfeasibleConstraintError(CBFControlError):
    """d = 0 with c <= 0: no input can satisfy the strict constraint."""


class KappaRangeError(CBFControlError):
    """Tunable term outside its validity range at the evaluated point."""


class DomainError(CBFControlError):
    """(c, d) outside the open domain {c > 0 or d > 0}."""


class IncompatibleInputError(CBFControlError):
    """Constraint cannot be met within the input norm bound."""

    def __init__(self, message: str, deficit: float):
        super().__init__(message)
        self.deficit = deficit


class DegenerateMarginError(CBFControlError):
    """Safety-margin denominator c - kappa*Gamma is numerically zero."""


class BlowUpError(NumericsError):
    """Integration produced a non-finite state."""

    def __init__(self, message: str, step_index: int):
        super().__init__(message)
        self.step_index = step_index


@dataclass(frozen=True)
class ExtendedClassK:
    """Strictly increasing scalar function with value 0 at 0.

    Use :meth:`linear` for ``beta(s) = alpha * s`` or :meth:`custom` for an
    arbitrary map (validated at 0 on construction; monotonicity is only
    checked by tests on sampled grids).
    """

    fn: Callable[[float], float]
    kind: str = "custom"
    alpha: float | None = None

    @classmethod
    def linear(cls, alpha: float) -> "ExtendedClassK":
        if not alpha > 0.0:
            raise ConfigurationError(f"class-K slope must be positive, got {alpha}")
        return cls(fn=lambda s: alpha * s, kind="linear", alpha=float(alpha))

    @classmethod
    def custom(cls, fn: Callable[[float], float]) -> "ExtendedClassK":
        if fn(0.0) != 0.0:
            raise ConfigurationError("class-K function must map 0 to exactly 0")
        return cls(fn=fn, kind="custom")

    def __call__(self, s: float) -> float:
        return float(self.fn(s))


@dataclass(frozen=True)
class ShapingFunction:
    """Shaping term ``s`` with s(0) = 0 and s(y) > 0 for y > 0.

    The argument is always ||d||^2, never ||d||.
    """

    fn: Callable[[float], float]
    kind: str = "custom"
    sigma: float | None = None

    @classmethod
    def linear(cls, sigma: float) -> "ShapingFunction":
        if not sigma > 0.0:
            raise ConfigurationError(f"shaping slope must be positive, got {sigma}")
        return cls(fn=lambda y: sigma * y, kind="linear", sigma=float(sigma))

    @classmethod
    def custom(cls, fn: Callable[[float], float]) -> "ShapingFunction":
        if fn(0.0) != 0.0:
            raise ConfigurationError("shaping function must map 0 to exactly 0")
        return cls(fn=fn, kind="custom")

    def __call__(self, y: float) -> float:
        return float(self.fn(y))


@dataclass(frozen=True)
class ControlAffineSystem:
    """Control-affine dynamics ``xdot = drift(x) + input_map(x) u``.

    drift maps a state vector (n,) to (n,); input_map maps it to (n, m).
    """

    state_dim: int
    input_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    input_map: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.state_dim < 1 or self.input_dim < 1:
            raise ConfigurationError(
                f"dimensions must be positive, got n={self.state_dim}, m={self.input_dim}"
            )


@dataclass(frozen=True)
class BarrierFunction:
    """Scalar barrier h, its gradient, and the class-K term beta.

    The safe set is {x : h(x) >= 0}; its boundary and interior are carried
    implicitly by the sign of h.  Gradients are supplied analytically; a
    finite-difference construction exists for tests only, see
    :meth:`with_fd_gradient`.
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    classk: ExtendedClassK

    @classmethod
    def with_fd_gradient(
        cls, value: Callable[[np.ndarray], float], classk: ExtendedClassK
    ) -> "BarrierFunction":
        """Barrier with a central finite-difference gradient (testing only)."""
        return cls(value=value, gradient=lambda x: finite_difference_gradient(value, x), classk=classk)


def finite_difference_gradient(
    fn: Callable[[np.ndarray], float], x: np.ndarray, rel_step: float = 1e-6
) -> np.ndarray:
    """Central finite-difference gradient with step rel_step*(1 + |x_i|)."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        step = rel_step * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        grad[i] = (fn(xp) - fn(xm)) / (2.0 * step)
    return grad


@dataclass(frozen=True)
class AffineConstraint:
    """The pointwise constraint pair: c + d u >= 0 must be achievable.

    Valid for controller synthesis only if c > 0 whenever ||d|| = 0
    (strict-inequality convention); that is enforced where controllers are
    evaluated, not here.
    """

    c: float
    d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "d", np.atleast_1d(np.asarray(self.d, dtype=float)))
        if not math.isfinite(self.c) or not np.isfinite(self.d).all():
            raise NumericsError(f"constraint pair is not finite: c={self.c}, d={self.d}")

    @property
    def d_norm_sq(self) -> float:
        return float(self.d @ self.d)

    @property
    def d_norm(self) -> float:
        return math.sqrt(self.d_norm_sq)


@dataclass(frozen=True)
class TunableTermPolicy:
    """How the tunable term kappa is produced at each evaluation.

    Policies are resolved in (c, ||d||^2) space except for ``kappa_direct``
    which reads the raw state.  Constant eta in [0.5, 1] is safe by
    construction; values in (0, 0.5) are accepted but rely on per-state
    range checks at evaluation time.
    """

    kind: str
    eta: float | None = None
    eta_fn: Callable[[float, float], float] | None = None
    kappa_fn: Callable[[np.ndarray], float] | None = None

    @classmethod
    def eta_constant(cls, eta: float) -> "TunableTermPolicy":
        if not 0.0 < eta <= 1.0:
            raise ConfigurationError(f"eta must lie in (0, 1], got {eta}")
        return cls(kind="eta_constant", eta=float(eta))

    @classmethod
    def eta_function(cls, fn: Callable[[float, float], float]) -> "TunableTermPolicy":
        return cls(kind="eta_function", eta_fn=fn)

    @classmethod
    def kappa_direct(cls, fn: Callable[[np.ndarray], float]) -> "TunableTermPolicy":
        return cls(kind="kappa_direct", kappa_fn=fn)

    @property
    def safe_by_construction(self) -> bool:
        """True when the range checks can never trip (constant eta >= 0.5)."""
        return self.kind == "eta_constant" and self.eta is not None and self.eta >= 0.5


def evaluate_constraint(
    system: ControlAffineSystem, barrier: BarrierFunction, x: np.ndarray
) -> AffineConstraint:
    """Form the pointwise pair (c, d) at state x.

    c = grad(h) . f + beta(h),  d = grad(h) . g.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (system.state_dim,):
        raise ConfigurationError(
            f"state has shape {x.shape}, expected ({system.state_dim},)"
        )
    f = np.asarray(system.drift(x), dtype=float)
    g = np.asarray(system.input_map(x), dtype=float)
    if f.shape != (system.state_dim,):
        raise ConfigurationError(f"drift returned shape {f.shape}, expected ({system.state_dim},)")
    if g.shape != (system.state_dim, system.input_dim):
        raise ConfigurationError(
            f"input_map returned shape {g.shape}, expected "
            f"({system.state_dim}, {system.input_dim})"
        )
    grad = np.asarray(barrier.gradient(x), dtype=float)
    if grad.shape != (system.state_dim,):
        raise ConfigurationError(
            f"barrier gradient has shape {grad.shape}, expected ({system.state_dim},)"
        )
    h = float(barrier.value(x))
    c = float(grad @ f) + barrier.classk(h)
    d = grad @ g
    if not math.isfinite(c) or not np.isfinite(d).all():
        raise NumericsError(f"constraint evaluation not finite at x={x}: c={c}, d={d}")
    return AffineConstraint(c=c, d=d)


def gamma_sontag(con: AffineConstraint, shaping: ShapingFunction) -> float:
    """Tightening magnitude sqrt(c^2 + s(||d||^2) ||d||^2); always >= |c|."""
    d2 = con.d_norm_sq
    return math.sqrt(con.c * con.c + shaping(d2) * d2)
