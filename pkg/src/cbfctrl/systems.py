"""Builtin test systems and barrier constructors for the CLI ladder."""

from __future__ import annotations

import numpy as np

from .core import BarrierFunction, ControlAffineSystem, ExtendedClassK


def single_integrator(dim: int = 1) -> ControlAffineSystem:
    """xdot = u in R^dim."""
    zero = np.zeros(dim)
    eye = np.eye(dim)
    return ControlAffineSystem(
        state_dim=dim,
        input_dim=dim,
        drift=lambda x: zero,
        input_map=lambda x: eye,
    )


def double_integrator() -> ControlAffineSystem:
    """x1dot = x2, x2dot = u."""
    g = np.array([[0.0], [1.0]])
    return ControlAffineSystem(
        state_dim=2,
        input_dim=1,
        drift=lambda x: np.array([x[1], 0.0]),
        input_map=lambda x: g,
    )


def linear_barrier(normal, offset: float, beta: float = 1.5) -> BarrierFunction:
    """Half-space barrier h(x) = offset - normal . x with beta(s) = beta*s."""
    a = np.atleast_1d(np.asarray(normal, dtype=float))
    grad = -a
    return BarrierFunction(
        value=lambda x: float(offset - a @ x),
        gradient=lambda x: grad,
        classk=ExtendedClassK.linear(beta),
    )
