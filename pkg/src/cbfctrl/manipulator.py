"""Two-link planar manipulator: dynamics, safe tracking scenarios, studies.

The experiment has two layers.  At the velocity level the joints are
treated as a single integrator qdot = v and a safety filter keeps the
second joint below a position limit while tracking a sinusoidal
reference.  At the torque level the velocity command k0 is backstepped
through the rigid-body dynamics using the composite barrier

    b(q, v) = h(q) - (1/(2 mu)) ||v - k0||^2,

with a min-norm safety filter around the tracking torque.  Backstepping
needs the total derivative of k0, so the velocity-level scenario carries
hand-derived Jacobians of its own formula (finite-difference fallbacks
exist for tests).

Time enters through the reference trajectory; both layers carry it as a
trailing clock state with rate 1, which keeps every map a pure function
of the state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .core import (
    BarrierFunction,
    ConfigurationError,
    ControlAffineSystem,
    ExtendedClassK,
    NumericsError,
    ShapingFunction,
    TunableTermPolicy,
    evaluate_constraint,
    finite_difference_gradient,
)
from .formulas import (
    ControllerSpec,
    evaluate_controller,
    kappa_from_eta,
    lambda_min_norm,
    lambda_sontag,
    lambda_tunable,
)
from .simulate import SimConfig, Trajectory, run

Q2_LIMIT = math.pi / 3.0


@dataclass(frozen=True)
class ManipulatorParams:
    """Planar two-link arm with point masses at the link ends by default.

    lc1/lc2 are the center-of-mass offsets along each link (default: the
    link length, i.e. point masses at the tips) and i1/i2 the rotational
    inertias about the centers (default 0).
    """

    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    gravity: float = 9.8
    lc1: Optional[float] = None
    lc2: Optional[float] = None
    i1: float = 0.0
    i2: float = 0.0

    def __post_init__(self):
        for name in ("m1", "m2", "l1", "l2", "gravity"):
            if not getattr(self, name) > 0.0:
                raise ConfigurationError(f"{name} must be positive")
        if self.lc1 is None:
            object.__setattr__(self, "lc1", self.l1)
        if self.lc2 is None:
            object.__setattr__(self, "lc2", self.l2)


def mass_matrix(p: ManipulatorParams, q: np.ndarray) -> np.ndarray:
    c2 = math.cos(q[1])
    m11 = (
        p.m1 * p.lc1**2
        + p.m2 * (p.l1**2 + p.lc2**2 + 2.0 * p.l1 * p.lc2 * c2)
        + p.i1
        + p.i2
    )
    m12 = p.m2 * (p.lc2**2 + p.l1 * p.lc2 * c2) + p.i2
    m22 = p.m2 * p.lc2**2 + p.i2
    return np.array([[m11, m12], [m12, m22]])


def coriolis_matrix(p: ManipulatorParams, q: np.ndarray, v: np.ndarray) -> np.ndarray:
    hc = p.m2 * p.l1 * p.lc2 * math.sin(q[1])
    return np.array([[-hc * v[1], -hc * (v[0] + v[1])], [hc * v[0], 0.0]])


def gravity_vector(p: ManipulatorParams, q: np.ndarray) -> np.ndarray:
    g = p.gravity
    c1 = math.cos(q[0])
    c12 = math.cos(q[0] + q[1])
    return np.array(
        [
            (p.m1 * p.lc1 + p.m2 * p.l1) * g * c1 + p.m2 * p.lc2 * g * c12,
            p.m2 * p.lc2 * g * c12,
        ]
    )


def potential_energy(p: ManipulatorParams, q: np.ndarray) -> float:
    g = p.gravity
    return float(
        (p.m1 * p.lc1 + p.m2 * p.l1) * g * math.sin(q[0])
        + p.m2 * p.lc2 * g * math.sin(q[0] + q[1])
    )


def kinetic_energy(p: ManipulatorParams, q: np.ndarray, v: np.ndarray) -> float:
    return 0.5 * float(v @ mass_matrix(p, q) @ v)


def total_energy(p: ManipulatorParams, q: np.ndarray, v: np.ndarray) -> float:
    return kinetic_energy(p, q, v) + potential_energy(p, q)


def _inverse_2x2(m: np.ndarray) -> np.ndarray:
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) < 1e-12:
        raise NumericsError(f"mass matrix is numerically singular, det={det}")
    return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det


def dynamics(
    p: ManipulatorParams, q: np.ndarray, qdot: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """State derivative [qdot; qddot] of M qddot + C qdot + N = u."""
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    u = np.asarray(u, dtype=float)
    m_inv = _inverse_2x2(mass_matrix(p, q))
    qddot = m_inv @ (u - coriolis_matrix(p, q, qdot) @ qdot - gravity_vector(p, q))
    return np.concatenate([qdot, qddot])


# --- reference trajectory ---------------------------------------------------

def reference(tau: float) -> np.ndarray:
    return np.array([2.0 * math.sin(tau) + 1.0, 2.0 * math.sin(tau)])


def reference_rate(tau: float) -> np.ndarray:
    c = 2.0 * math.cos(tau)
    return np.array([c, c])


def reference_accel(tau: float) -> np.ndarray:
    s = -2.0 * math.sin(tau)
    return np.array([s, s])


# --- velocity-level scenario ------------------------------------------------

@dataclass(frozen=True)
class VirtualController:
    """Velocity command k0(q, tau) together with its partial derivatives.

    jac_q is the 2x2 Jacobian in q and jac_tau the partial in the clock;
    the total derivative along qdot = v is jac_q @ v + jac_tau.
    """

    value: Callable[[np.ndarray, float], np.ndarray]
    jac_q: Callable[[np.ndarray, float], np.ndarray]
    jac_tau: Callable[[np.ndarray, float], np.ndarray]

    def total_derivative(self, q: np.ndarray, v: np.ndarray, tau: float) -> np.ndarray:
        return self.jac_q(q, tau) @ v + self.jac_tau(q, tau)

    @classmethod
    def from_map(cls, fn: Callable[[np.ndarray, float], np.ndarray]) -> "VirtualController":
        """Finite-difference Jacobians around an opaque map (tests only)."""

        def jac_q(q, tau):
            cols = []
            for i in range(2):
                comp = lambda z, i=i: fn(np.array([z[0], z[1]]), tau)[i]
                cols.append(finite_difference_gradient(comp, np.asarray(q, float)))
            return np.vstack(cols)

        def jac_tau(q, tau):
            step = 1e-6 * (1.0 + abs(tau))
            return (fn(q, tau + step) - fn(q, tau - step)) / (2.0 * step)

        return cls(value=fn, jac_q=jac_q, jac_tau=jac_tau)


@dataclass(frozen=True)
class VelocityScenario:
    """Assembled velocity-level safe-tracking problem.

    The simulated state is [q1, q2, clock]; the input is the joint
    velocity.  spec is a safety filter around the tracking command.
    """

    system: ControlAffineSystem
    barrier: BarrierFunction
    spec: ControllerSpec
    nominal: Callable[[np.ndarray], np.ndarray]
    k0: VirtualController
    x0: np.ndarray
    kind: str
    eta: Optional[float]
    sigma: float
    gamma: Optional[float]


def velocity_level_scenario(
    eta: float = 0.7,
    sigma: float = 0.2,
    kind: str = "tunable",
    gamma: Optional[float] = None,
    relu: bool = False,
    q_bar: float = Q2_LIMIT,
    beta: float = 1.5,
    kp: float = 1.0,
    x0_q: tuple[float, float] = (1.0, 0.0),
) -> VelocityScenario:
    """Safe tracking of the sinusoidal reference under h = q_bar - q2.

    kind selects the filter formula: "tunable" (smooth, constant eta),
    "sontag", "qp", or "bounded_input" (requires gamma).  The constraint
    pair at the filter is c = beta*h, d = [0, -1].
    """
    if kind not in ("tunable", "sontag", "qp", "bounded_input"):
        raise ConfigurationError(f"unknown velocity-level kind {kind!r}")
    if kind == "bounded_input" and gamma is None:
        raise ConfigurationError("bounded_input scenario needs gamma")

    kp_mat = np.diag([kp, kp])
    f_aug = np.array([0.0, 0.0, 1.0])
    g_aug = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    system = ControlAffineSystem(
        state_dim=3,
        input_dim=2,
        drift=lambda x: f_aug,
        input_map=lambda x: g_aug,
    )

    grad_h = np.array([0.0, -1.0, 0.0])
    barrier = BarrierFunction(
        value=lambda x: q_bar - x[1],
        gradient=lambda x: grad_h,
        classk=ExtendedClassK.linear(beta),
    )

    def nominal(x: np.ndarray) -> np.ndarray:
        q = x[:2]
        tau = x[2]
        return -kp_mat @ (q - reference(tau)) + reference_rate(tau)

    shaping = ShapingFunction.linear(sigma)
    if kind == "qp":
        inner = ControllerSpec.qp()
    elif kind == "sontag":
        inner = ControllerSpec.sontag(shaping)
    elif kind == "tunable":
        inner = ControllerSpec.tunable(
            shaping, TunableTermPolicy.eta_constant(eta), relu=relu
        )
    else:
        inner = ControllerSpec.bounded_input(
            shaping, gamma=gamma, policy=TunableTermPolicy.eta_constant(eta)
        )
    spec = ControllerSpec.safety_filter(inner, nominal)

    # Constraint geometry at the filter: constant direction, c = beta * h.
    d_vec = np.array([0.0, -1.0])
    d2 = float(d_vec @ d_vec)
    dh_dq = np.array([0.0, -1.0])

    def cbar_at(q: np.ndarray, tau: float) -> float:
        h = q_bar - q[1]
        k0d = -kp_mat @ (q - reference(tau)) + reference_rate(tau)
        return beta * h + float(d_vec @ k0d)

    def lam_and_slope(cbar: float) -> tuple[float, float]:
        """Multiplier and d(lam)/d(cbar) for the selected formula."""
        if kind == "qp":
            lam = lambda_min_norm(cbar, d2)
            return lam, (-1.0 / d2 if cbar < 0.0 else 0.0)
        root = math.sqrt(cbar * cbar + sigma * d2 * d2)
        if kind == "sontag":
            return lambda_sontag(cbar, d2, shaping), (-1.0 + cbar / root) / d2
        if kind == "tunable":
            kap = kappa_from_eta(cbar, d2, eta, shaping)
            return lambda_tunable(cbar, d2, kap, shaping), eta * (-1.0 + cbar / root) / d2
        raise ConfigurationError(
            f"analytic Jacobians are not provided for kind {kind!r}"
        )

    def k0_value(q: np.ndarray, tau: float) -> np.ndarray:
        k0d = -kp_mat @ (q - reference(tau)) + reference_rate(tau)
        lam, _ = lam_and_slope(beta * (q_bar - q[1]) + float(d_vec @ k0d))
        return k0d + lam * d_vec

    def dcbar_dq(q: np.ndarray, tau: float) -> np.ndarray:
        return beta * dh_dq + d_vec @ (-kp_mat)

    def dcbar_dtau(q: np.ndarray, tau: float) -> float:
        dk0d_dtau = kp_mat @ reference_rate(tau) + reference_accel(tau)
        return float(d_vec @ dk0d_dtau)

    def k0_jac_q(q: np.ndarray, tau: float) -> np.ndarray:
        _, slope = lam_and_slope(cbar_at(q, tau))
        return -kp_mat + np.outer(d_vec, slope * dcbar_dq(q, tau))

    def k0_jac_tau(q: np.ndarray, tau: float) -> np.ndarray:
        dk0d_dtau = kp_mat @ reference_rate(tau) + reference_accel(tau)
        _, slope = lam_and_slope(cbar_at(q, tau))
        return dk0d_dtau + d_vec * (slope * dcbar_dtau(q, tau))

    k0 = VirtualController(value=k0_value, jac_q=k0_jac_q, jac_tau=k0_jac_tau)

    return VelocityScenario(
        system=system,
        barrier=barrier,
        spec=spec,
        nominal=nominal,
        k0=k0,
        x0=np.array([x0_q[0], x0_q[1], 0.0]),
        kind=kind,
        eta=eta if kind in ("tunable", "bounded_input") else None,
        sigma=sigma,
        gamma=gamma,
    )


def run_scenario(
    scenario, cfg: Optional[SimConfig] = None, disturbance=None
) -> Trajectory:
    cfg = cfg or SimConfig()
    return run(
        scenario.system, scenario.spec, scenario.barrier, scenario.x0, cfg, disturbance
    )


# --- torque-level (backstepped) scenario -------------------------------------

@dataclass(frozen=True)
class BacksteppingConfig:
    """Gains for lifting a velocity command to torques.

    mu scales the velocity-error penalty inside the composite barrier,
    kp/kp_bar are the diagonal tracking gains at the two layers, and
    alpha_b is the class-K slope applied to the composite barrier.
    """

    mu: float = 20.0
    kp: float = 1.0
    kp_bar: float = 1.0
    alpha_b: float = 1.5

    def __post_init__(self):
        if not self.mu > 0.0:
            raise ConfigurationError("mu must be positive")
        if not (self.kp > 0.0 and self.kp_bar > 0.0):
            raise ConfigurationError("gains must be positive")
        if not self.alpha_b > 0.0:
            raise ConfigurationError("alpha_b must be positive")


@dataclass(frozen=True)
class TorqueScenario:
    """Full-order problem: state [q1, q2, v1, v2, clock], torque input."""

    system: ControlAffineSystem
    barrier: BarrierFunction
    spec: ControllerSpec
    nominal: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    velocity: VelocityScenario
    params: ManipulatorParams
    cfg: BacksteppingConfig


def full_order_system(p: ManipulatorParams) -> ControlAffineSystem:
    """Manipulator with a trailing clock state: n = 5, m = 2."""

    def drift(x: np.ndarray) -> np.ndarray:
        q = x[:2]
        v = x[2:4]
        m_inv = _inverse_2x2(mass_matrix(p, q))
        phi = -m_inv @ (coriolis_matrix(p, q, v) @ v + gravity_vector(p, q))
        return np.array([v[0], v[1], phi[0], phi[1], 1.0])

    def input_map(x: np.ndarray) -> np.ndarray:
        q = x[:2]
        m_inv = _inverse_2x2(mass_matrix(p, q))
        g = np.zeros((5, 2))
        g[2:4, :] = m_inv
        return g

    return ControlAffineSystem(state_dim=5, input_dim=2, drift=drift, input_map=input_map)


def composite_barrier(
    velocity: VelocityScenario, cfg: BacksteppingConfig
) -> BarrierFunction:
    """b = h(q) - (1/(2 mu)) ||v - k0||^2 over the full-order state."""
    k0 = velocity.k0
    mu = cfg.mu

    def value(x: np.ndarray) -> float:
        q, v, tau = x[:2], x[2:4], x[4]
        e_v = v - k0.value(q, tau)
        h = velocity.barrier.value(np.array([q[0], q[1], tau]))
        return h - float(e_v @ e_v) / (2.0 * mu)

    def gradient(x: np.ndarray) -> np.ndarray:
        q, v, tau = x[:2], x[2:4], x[4]
        e_v = v - k0.value(q, tau)
        grad = np.empty(5)
        grad[:2] = np.array([0.0, -1.0]) + (e_v @ k0.jac_q(q, tau)) / mu
        grad[2:4] = -e_v / mu
        grad[4] = float(e_v @ k0.jac_tau(q, tau)) / mu
        return grad

    return BarrierFunction(
        value=value, gradient=gradient, classk=ExtendedClassK.linear(cfg.alpha_b)
    )


def backstepping_nominal(
    p: ManipulatorParams, velocity: VelocityScenario, cfg: BacksteppingConfig
) -> Callable[[np.ndarray], np.ndarray]:
    """Tracking torque k_d = M (k0dot - kp_bar (v - k0)) + C v + N."""
    k0 = velocity.k0

    def nominal(x: np.ndarray) -> np.ndarray:
        q, v, tau = x[:2], x[2:4], x[4]
        e_v = v - k0.value(q, tau)
        k0_dot = k0.total_derivative(q, v, tau)
        return (
            mass_matrix(p, q) @ (k0_dot - cfg.kp_bar * e_v)
            + coriolis_matrix(p, q, v) @ v
            + gravity_vector(p, q)
        )

    return nominal


def torque_level_scenario(
    params: Optional[ManipulatorParams] = None,
    cfg: Optional[BacksteppingConfig] = None,
    eta: float = 0.7,
    sigma: float = 0.2,
    kind: str = "tunable",
) -> TorqueScenario:
    """Backstepped safe tracking with a min-norm filter on the composite barrier."""
    params = params or ManipulatorParams()
    cfg = cfg or BacksteppingConfig()
    velocity = velocity_level_scenario(eta=eta, sigma=sigma, kind=kind, kp=cfg.kp)
    system = full_order_system(params)
    barrier = composite_barrier(velocity, cfg)
    nominal = backstepping_nominal(params, velocity, cfg)
    spec = ControllerSpec.safety_filter(ControllerSpec.qp(), nominal)
    v0 = reference_rate(0.0)
    x0 = np.array([velocity.x0[0], velocity.x0[1], v0[0], v0[1], 0.0])
    return TorqueScenario(
        system=system,
        barrier=barrier,
        spec=spec,
        nominal=nominal,
        x0=x0,
        velocity=velocity,
        params=params,
        cfg=cfg,
    )


def backstepping_controller(
    params: ManipulatorParams,
    cfg: BacksteppingConfig,
    k0: VirtualController,
    x: np.ndarray,
    t: float,
) -> np.ndarray:
    """Torque at one state [q; v] and time, for a given velocity command.

    Forms the composite-barrier constraint for the full-order system and
    evaluates the min-norm safety filter around the tracking torque.
    Raises InfeasibleConstraintError when the constraint direction
    vanishes with a nonpositive offset.
    """
    velocity = velocity_level_scenario(kp=cfg.kp)
    velocity = replace(velocity, k0=k0)
    system = full_order_system(params)
    barrier = composite_barrier(velocity, cfg)
    nominal = backstepping_nominal(params, velocity, cfg)
    spec = ControllerSpec.safety_filter(ControllerSpec.qp(), nominal)
    x_full = np.array([x[0], x[1], x[2], x[3], t])
    con = evaluate_constraint(system, barrier, x_full)
    return evaluate_controller(spec, con, x_full).u


# --- studies ------------------------------------------------------------------

@dataclass(frozen=True)
class BoundedInputReport:
    """Per-eta outcome of the norm-bound study on the filter correction."""

    eta: float
    max_correction_norm: float
    satisfies_bound: bool
    valid_under_bi: bool
    bi_max_correction_norm: float
    failure: Optional[str]


def bounded_input_study(
    gamma: float,
    etas,
    sigma: float = 0.2,
    cfg: Optional[SimConfig] = None,
) -> list[BoundedInputReport]:
    """Compare unconstrained and norm-bounded filters over a grid of eta.

    eta = 1.0 coincides with the sontag formula.  Each eta is first run
    with the unconstrained smooth filter to measure the peak correction
    norm, then re-run with the bounded-input formula; a range violation
    or incompatibility mid-run is flagged rather than raised.
    """
    cfg = cfg or SimConfig()
    reports = []
    for eta in etas:
        free = run_scenario(velocity_level_scenario(eta=eta, sigma=sigma), cfg)
        max_corr = float(np.max(free.correction_norms)) if free.ok else math.inf
        bi = run_scenario(
            velocity_level_scenario(
                eta=eta, sigma=sigma, kind="bounded_input", gamma=gamma
            ),
            cfg,
        )
        bi_max = float(np.max(bi.correction_norms)) if len(bi) else math.nan
        reports.append(
            BoundedInputReport(
                eta=float(eta),
                max_correction_norm=max_corr,
                satisfies_bound=max_corr <= gamma,
                valid_under_bi=bi.ok,
                bi_max_correction_norm=bi_max,
                failure=bi.failure,
            )
        )
    return reports
