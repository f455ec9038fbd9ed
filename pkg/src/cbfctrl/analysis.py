"""Diagnostics on top of the controller formulas.

Covers the gain-perturbation safety margin, compatibility of the
constraint with a norm bound on the input, residuals under additive input
disturbances, and a small numerical instrument that measures derivative
jumps of a multiplier map across c = 0.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .core import (
    AffineConstraint,
    ConfigurationError,
    DegenerateMarginError,
    IncompatibleInputError,
    ShapingFunction,
    gamma_sontag,
)
from .formulas import ControllerSpec, evaluate_controller


def safety_margin_at(
    con: AffineConstraint, kappa: float, shaping: ShapingFunction
) -> float:
    """Pointwise margin M = -1 + c / (c - kappa*Gamma).

    Scaling the controller by (1 + xi) keeps the system safe for every
    xi >= sup M over the states of interest.  kappa in the smooth range
    guarantees the denominator is negative, so M <= 0; M equals -1/2 in
    the limit c -> -inf with kappa = 1.
    """
    gamma = gamma_sontag(con, shaping)
    den = con.c - kappa * gamma
    if abs(den) <= 1e-12:
        raise DegenerateMarginError(
            f"degenerate margin: c - kappa*Gamma = {den} with c={con.c}, kappa={kappa}"
        )
    return -1.0 + con.c / den


@dataclass(frozen=True)
class MarginReport:
    """Sample-based margin summary.

    xi_bar_estimate is the maximum of the per-sample margins; it is an
    estimate over the supplied states only, never a global supremum.
    m_of_x is the margin at the last sample evaluated.
    """

    m_of_x: float
    xi_bar_estimate: float
    sample_count: int


def margin_report(margins: Sequence[float]) -> MarginReport:
    vals = [float(m) for m in margins]
    if not vals:
        raise ConfigurationError("margin report needs at least one sample")
    return MarginReport(
        m_of_x=vals[-1], xi_bar_estimate=max(vals), sample_count=len(vals)
    )


@dataclass(frozen=True)
class CompatibilityResult:
    """Outcome of the norm-bound compatibility test gamma*||d|| + c >= 0."""

    compatible: bool
    deficit: float

    def __bool__(self) -> bool:
        return self.compatible


def check_compatibility(con: AffineConstraint, gamma: float) -> CompatibilityResult:
    """Can some ||u|| <= gamma satisfy c + d u >= 0?  Yes iff gamma*||d|| >= -c."""
    if not gamma > 0.0:
        raise ConfigurationError(f"gamma must be positive, got {gamma}")
    slack = gamma * con.d_norm + con.c
    if slack >= 0.0:
        return CompatibilityResult(compatible=True, deficit=0.0)
    return CompatibilityResult(compatible=False, deficit=-slack)


def kappa_bi_upper(
    con: AffineConstraint, gamma: float, shaping: ShapingFunction
) -> float:
    """Right endpoint (gamma*||d|| + c) / Gamma of the bounded-input kappa range."""
    compat = check_compatibility(con, gamma)
    if not compat.compatible:
        raise IncompatibleInputError(
            f"bound gamma={gamma} incompatible with (c={con.c}, ||d||={con.d_norm})",
            deficit=compat.deficit,
        )
    return (gamma * con.d_norm + con.c) / gamma_sontag(con, shaping)


def probe_derivative_jump(
    lam: Callable[[float, float], float], d_fixed: float, step: float
) -> float:
    """Jump of d(lam)/dc across c = 0 at fixed d, by central differences.

    Central slopes are taken at c = +step and c = -step; the returned value
    is their absolute difference.  For the plain min-norm multiplier at
    d = 1 this is 1.0 (slopes -1/d and 0); smooth multipliers give a value
    on the order of step.
    """
    if not step > 0.0:
        raise ConfigurationError(f"step must be positive, got {step}")
    if not d_fixed > 0.0:
        raise ConfigurationError(f"d_fixed must be positive, got {d_fixed}")
    two_s = 2.0 * step
    slope_above = (lam(two_s, d_fixed) - lam(0.0, d_fixed)) / two_s
    slope_below = (lam(0.0, d_fixed) - lam(-two_s, d_fixed)) / two_s
    return abs(slope_above - slope_below)


@dataclass(frozen=True)
class DisturbanceSpec:
    """Additive input disturbance w(t), applied as u + w after the controller.

    Kinds: constant vector, sinusoidal amplitude*sin(freq*t), or a
    norm-bounded pseudo-random vector that is a deterministic function of
    (seed, t) so repeated runs reproduce bit-identically.
    """

    kind: str
    value: np.ndarray | None = None
    amplitude: np.ndarray | None = None
    freq: float | None = None
    magnitude: float | None = None
    seed: int | None = None

    @classmethod
    def constant(cls, value) -> "DisturbanceSpec":
        return cls(kind="constant", value=np.atleast_1d(np.asarray(value, dtype=float)))

    @classmethod
    def sinusoidal(cls, amplitude, freq: float) -> "DisturbanceSpec":
        return cls(
            kind="sinusoidal",
            amplitude=np.atleast_1d(np.asarray(amplitude, dtype=float)),
            freq=float(freq),
        )

    @classmethod
    def bounded_random(cls, magnitude: float, seed: int) -> "DisturbanceSpec":
        if not math.isfinite(magnitude):
            raise ConfigurationError("disturbance magnitude must be finite")
        return cls(kind="bounded_random", magnitude=float(magnitude), seed=int(seed))

    def at(self, t: float, input_dim: int) -> np.ndarray:
        if self.kind == "constant":
            return self.value
        if self.kind == "sinusoidal":
            return self.amplitude * math.sin(self.freq * t)
        if self.kind == "bounded_random":
            t_bits = struct.unpack("<Q", struct.pack("<d", float(t)))[0]
            rng = np.random.default_rng((self.seed, t_bits))
            direction = rng.standard_normal(input_dim)
            norm = float(np.linalg.norm(direction))
            if norm == 0.0:
                return np.zeros(input_dim)
            radius = self.magnitude * rng.uniform() ** (1.0 / input_dim)
            return (radius / norm) * direction
        raise ConfigurationError(f"unknown disturbance kind {self.kind!r}")


def disturbed_residual(
    spec: ControllerSpec,
    con: AffineConstraint,
    x: np.ndarray | None,
    disturbance: Optional[DisturbanceSpec],
    t: float = 0.0,
) -> float:
    """CBF residual c + d (u + w) under the additive input disturbance.

    For the smooth tunable kinds this equals kappa*Gamma + d w, so the
    tightening absorbs disturbances with d w >= -kappa*Gamma, whereas the
    min-norm controller's residual is d w whenever its constraint is tight.
    """
    out = evaluate_controller(spec, con, x)
    u = out.u
    if disturbance is not None:
        u = u + disturbance.at(t, con.d.size)
    return con.c + float(con.d @ u)


def margins_over(
    cons: Iterable[AffineConstraint], kappas: Iterable[float], shaping: ShapingFunction
) -> MarginReport:
    """Evaluate the margin over paired (constraint, kappa) samples."""
    vals = [safety_margin_at(con, k, shaping) for con, k in zip(cons, kappas)]
    return margin_report(vals)
