"""Command-line front end: declarative scenario configs, sweeps, checks.

Subcommands:
  simulate   run one closed-loop scenario, write the trajectory CSV
  sweep      run the scenario over a grid of one parameter, write a summary
  check      compatibility and tunable-range membership over a state grid
  margin     sample the safety margin over a state grid

Configs are JSON with a versioned ``schema`` key; unknown keys are
rejected.  CSV output is locale-independent, 17 significant digits, LF
line endings, so identical runs produce byte-identical files.

Exit codes: 0 success, 1 config error, 2 infeasibility or blow-up during
simulation, 3 check violations.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import manipulator, systems
from .analysis import DisturbanceSpec, check_compatibility
from .core import (
    AffineConstraint,
    CBFControlError,
    ConfigurationError,
    ShapingFunction,
    TunableTermPolicy,
    evaluate_constraint,
    gamma_sontag,
)
from .formulas import ControllerSpec, evaluate_controller
from .simulate import SimConfig, Trajectory, run

CONFIG_ERROR = 1
RUN_ERROR = 2
CHECK_ERROR = 3

_SCHEMA_VERSION = 1

# Allowed keys per config section; validation rejects anything else.
_TOP_KEYS = {
    "schema", "seed", "system", "barrier", "controller", "sim",
    "x0", "nominal", "disturbance", "grid", "output",
}
_SYSTEM_KEYS = {
    "name", "dim", "q_bar", "beta", "kp", "x0_q", "mu", "kp_bar", "alpha_b",
    "m1", "m2", "l1", "l2", "gravity",
}
_BARRIER_KEYS = {"kind", "normal", "offset", "beta"}
_CONTROLLER_KEYS = {"kind", "eta", "sigma", "gamma", "relu"}
_SIM_KEYS = {"dt", "horizon", "integrator", "record_every", "zoh", "allow_unsafe_start"}
_NOMINAL_KEYS = {"kind", "value"}
_DISTURBANCE_KEYS = {"kind", "value", "amplitude", "freq", "magnitude", "seed"}
_GRID_KEYS = {"kind", "base", "axes", "subsample"}
_AXIS_KEYS = {"dim", "min", "max", "count"}
_OUTPUT_KEYS = {"trajectory"}


def _reject_unknown(section: dict, allowed: set, path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigurationError(f"unknown config key {path}.{key}")


def _require(section: dict, key: str, path: str):
    if key not in section:
        raise ConfigurationError(f"missing config key {path}.{key}")
    return section[key]


def load_config(path: str | Path, overrides: list[str] | None = None) -> dict:
    """Load, apply --set overrides, and validate a scenario config."""
    try:
        with open(path) as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"--set path {key!r} crosses a non-section key")
        node[parts[-1]] = value
    validate_config(config)
    return config


def validate_config(config: dict) -> None:
    if not isinstance(config, dict):
        raise ConfigurationError("config root must be an object")
    _reject_unknown(config, _TOP_KEYS, "config")
    if _require(config, "schema", "config") != _SCHEMA_VERSION:
        raise ConfigurationError(
            f"unsupported schema version {config['schema']!r}, expected {_SCHEMA_VERSION}"
        )
    system = _require(config, "system", "config")
    _reject_unknown(system, _SYSTEM_KEYS, "config.system")
    name = _require(system, "name", "config.system")
    if name not in (
        "single_integrator",
        "double_integrator",
        "two_link",  # alias for the velocity-level scenario
        "two_link_velocity",
        "two_link_torque",
    ):
        raise ConfigurationError(f"unknown system name {name!r}")
    barrier = _require(config, "barrier", "config")
    _reject_unknown(barrier, _BARRIER_KEYS, "config.barrier")
    kind = _require(barrier, "kind", "config.barrier")
    if kind not in ("linear", "builtin"):
        raise ConfigurationError(f"unknown barrier kind {kind!r}")
    if name.startswith("two_link"):
        if kind != "builtin":
            raise ConfigurationError("two_link scenarios define their own barrier; use kind 'builtin'")
    elif kind != "linear":
        raise ConfigurationError(f"system {name!r} needs a linear barrier section")
    controller = _require(config, "controller", "config")
    _reject_unknown(controller, _CONTROLLER_KEYS, "config.controller")
    ckind = _require(controller, "kind", "config.controller")
    if ckind not in ("qp", "sontag", "tunable", "bounded_input"):
        raise ConfigurationError(f"unknown controller kind {ckind!r}")
    if ckind in ("tunable", "bounded_input") and "eta" not in controller:
        raise ConfigurationError("missing config key config.controller.eta")
    if ckind != "qp" and "sigma" not in controller:
        raise ConfigurationError("missing config key config.controller.sigma")
    if ckind == "bounded_input" and "gamma" not in controller:
        raise ConfigurationError("missing config key config.controller.gamma")
    sim = _require(config, "sim", "config")
    _reject_unknown(sim, _SIM_KEYS, "config.sim")
    if "nominal" in config:
        _reject_unknown(config["nominal"], _NOMINAL_KEYS, "config.nominal")
        if config["nominal"].get("kind") not in ("zero", "constant"):
            raise ConfigurationError("config.nominal.kind must be 'zero' or 'constant'")
    if "disturbance" in config:
        dist = config["disturbance"]
        _reject_unknown(dist, _DISTURBANCE_KEYS, "config.disturbance")
        if dist.get("kind") not in ("constant", "sinusoidal", "bounded_random"):
            raise ConfigurationError("unknown disturbance kind")
    if "grid" in config:
        grid = config["grid"]
        _reject_unknown(grid, _GRID_KEYS, "config.grid")
        if grid.get("kind") not in ("box", "trajectory"):
            raise ConfigurationError("config.grid.kind must be 'box' or 'trajectory'")
        for i, axis in enumerate(grid.get("axes", [])):
            _reject_unknown(axis, _AXIS_KEYS, f"config.grid.axes[{i}]")
    if "output" in config:
        _reject_unknown(config["output"], _OUTPUT_KEYS, "config.output")


class Scenario:
    """Everything needed to run and inspect one configured closed loop."""

    def __init__(self, system, barrier, spec, x0, sim_cfg, disturbance, config):
        self.system = system
        self.barrier = barrier
        self.spec = spec
        self.x0 = x0
        self.sim_cfg = sim_cfg
        self.disturbance = disturbance
        self.config = config


def _controller_pieces(controller: dict):
    kind = controller["kind"]
    sigma = controller.get("sigma")
    shaping = ShapingFunction.linear(sigma) if sigma is not None else None
    if kind == "qp":
        return ControllerSpec.qp()
    if kind == "sontag":
        return ControllerSpec.sontag(shaping)
    if kind == "tunable":
        policy = TunableTermPolicy.eta_constant(controller["eta"])
        return ControllerSpec.tunable(shaping, policy, relu=bool(controller.get("relu", False)))
    policy = TunableTermPolicy.eta_constant(controller["eta"])
    return ControllerSpec.bounded_input(shaping, gamma=controller["gamma"], policy=policy)


def build_scenario(config: dict, zoh: bool = False, seed: int | None = None) -> Scenario:
    """Assemble the runnable pieces from a validated config."""
    sysconf = config["system"]
    name = sysconf["name"]
    controller = config["controller"]
    sim = dict(config["sim"])
    if zoh:
        sim["zoh"] = True
    sim_cfg = SimConfig(**sim)

    if seed is None:
        seed = int(config.get("seed", 0))
    disturbance = None
    if "disturbance" in config:
        dist = config["disturbance"]
        if dist["kind"] == "constant":
            disturbance = DisturbanceSpec.constant(dist["value"])
        elif dist["kind"] == "sinusoidal":
            disturbance = DisturbanceSpec.sinusoidal(dist["amplitude"], dist["freq"])
        else:
            disturbance = DisturbanceSpec.bounded_random(
                dist["magnitude"], dist.get("seed", seed)
            )

    if name in ("two_link", "two_link_velocity"):
        sc = manipulator.velocity_level_scenario(
            eta=controller.get("eta", 0.7),
            sigma=controller.get("sigma", 0.2),
            kind=controller["kind"],
            gamma=controller.get("gamma"),
            relu=bool(controller.get("relu", False)),
            q_bar=sysconf.get("q_bar", manipulator.Q2_LIMIT),
            beta=sysconf.get("beta", 1.5),
            kp=sysconf.get("kp", 1.0),
            x0_q=tuple(sysconf.get("x0_q", (1.0, 0.0))),
        )
        x0 = np.asarray(config.get("x0", sc.x0), dtype=float)
        return Scenario(sc.system, sc.barrier, sc.spec, x0, sim_cfg, disturbance, config)

    if name == "two_link_torque":
        if controller["kind"] == "bounded_input":
            raise ConfigurationError("two_link_torque supports qp, sontag, and tunable kinds")
        params = manipulator.ManipulatorParams(
            m1=sysconf.get("m1", 1.0),
            m2=sysconf.get("m2", 1.0),
            l1=sysconf.get("l1", 1.0),
            l2=sysconf.get("l2", 1.0),
            gravity=sysconf.get("gravity", 9.8),
        )
        bcfg = manipulator.BacksteppingConfig(
            mu=sysconf.get("mu", 20.0),
            kp=sysconf.get("kp", 1.0),
            kp_bar=sysconf.get("kp_bar", 1.0),
            alpha_b=sysconf.get("alpha_b", 1.5),
        )
        sc = manipulator.torque_level_scenario(
            params=params,
            cfg=bcfg,
            eta=controller.get("eta", 0.7),
            sigma=controller.get("sigma", 0.2),
            kind=controller["kind"],
        )
        x0 = np.asarray(config.get("x0", sc.x0), dtype=float)
        return Scenario(sc.system, sc.barrier, sc.spec, x0, sim_cfg, disturbance, config)

    if name == "single_integrator":
        system = systems.single_integrator(int(sysconf.get("dim", 1)))
    else:
        system = systems.double_integrator()
    bar = config["barrier"]
    barrier = systems.linear_barrier(
        bar["normal"], bar["offset"], bar.get("beta", 1.5)
    )
    spec = _controller_pieces(controller)
    if "nominal" in config:
        nom = config["nominal"]
        if nom["kind"] == "zero":
            kd = np.zeros(system.input_dim)
        else:
            kd = np.asarray(nom["value"], dtype=float)
            if kd.shape != (system.input_dim,):
                raise ConfigurationError(
                    f"config.nominal.value must have length {system.input_dim}"
                )
        spec = ControllerSpec.safety_filter(spec, lambda x, kd=kd: kd)
    if "x0" not in config:
        raise ConfigurationError("missing config key config.x0")
    x0 = np.asarray(config["x0"], dtype=float)
    return Scenario(system, barrier, spec, x0, sim_cfg, disturbance, config)


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def write_trajectory_csv(path: Path, traj: Trajectory, n: int, m: int) -> None:
    header = (
        ["t"]
        + [f"x{i}" for i in range(n)]
        + [f"u{j}" for j in range(m)]
        + ["h", "residual", "kappa", "margin"]
    )
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(traj)):
            row = (
                [_fmt(traj.times[i])]
                + [_fmt(v) for v in traj.states[i]]
                + [_fmt(v) for v in traj.inputs[i]]
                + [
                    _fmt(traj.h_values[i]),
                    _fmt(traj.residuals[i]),
                    _fmt(traj.kappas[i]),
                    _fmt(traj.margins[i]),
                ]
            )
            fh.write(",".join(row) + "\n")


def _strict_range_precheck(scenario: Scenario) -> None:
    """Evaluate the controller once at x0 so range violations fail fast."""
    con = evaluate_constraint(scenario.system, scenario.barrier, scenario.x0)
    evaluate_controller(scenario.spec, con, scenario.x0)


def cmd_simulate(args) -> int:
    config = load_config(args.config, args.set)
    scenario = build_scenario(config, zoh=args.zoh, seed=args.seed)
    if args.strict_range:
        try:
            _strict_range_precheck(scenario)
        except CBFControlError as exc:
            print(f"strict-range precheck failed at x0: {exc}", file=sys.stderr)
            return CONFIG_ERROR
    traj = run(
        scenario.system,
        scenario.spec,
        scenario.barrier,
        scenario.x0,
        scenario.sim_cfg,
        scenario.disturbance,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_name = config.get("output", {}).get("trajectory", "trajectory.csv")
    out_path = out_dir / out_name
    write_trajectory_csv(
        out_path, traj, scenario.system.state_dim, scenario.system.input_dim
    )
    if traj.failure is not None:
        print(f"run failed: {traj.failure}", file=sys.stderr)
        print(f"wrote {len(traj)} rows to {out_path}")
        return RUN_ERROR
    print(
        f"wrote {len(traj)} rows to {out_path} "
        f"(min h = {_fmt(traj.min_h())}, min residual = {_fmt(float(np.min(traj.residuals)))})"
    )
    return 0


def _summary_stats(traj: Trajectory, dt_record: float) -> tuple[float, float, float]:
    max_input = float(np.max(traj.correction_norms)) if len(traj) else math.nan
    if len(traj) >= 3:
        d2 = np.abs(np.diff(traj.inputs, n=2, axis=0))
        max_jump = float(np.max(d2)) / dt_record
    else:
        max_jump = math.nan
    finite = traj.margins[np.isfinite(traj.margins)]
    margin_min = float(np.min(finite)) if finite.size else math.nan
    return max_input, max_jump, margin_min


def cmd_sweep(args) -> int:
    config = load_config(args.config, args.set)
    param = {"eta": "controller.eta", "sigma": "controller.sigma", "gamma": "controller.gamma"}.get(
        args.param, args.param
    )
    try:
        values = [json.loads(v) for v in args.values.split(",") if v]
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"cannot parse --values: {exc}") from exc
    if not values:
        raise ConfigurationError("--values is empty")
    node = config
    for part in param.split(".")[:-1]:
        if part not in node:
            raise ConfigurationError(f"swept parameter {args.param!r} does not exist in config")
        node = node[part]
    leaf = param.split(".")[-1]
    if leaf not in node:
        raise ConfigurationError(f"swept parameter {args.param!r} does not exist in config")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    scenarios = []
    for value in values:
        node[leaf] = value
        scenarios.append(build_scenario(config, zoh=args.zoh, seed=args.seed))

    # Runs are pure and value-returning, so they fan out across worker
    # threads; all file writes stay in this thread, serialized per path.
    with ThreadPoolExecutor(max_workers=min(4, len(values))) as pool:
        trajs = list(
            pool.map(
                lambda sc: run(
                    sc.system, sc.spec, sc.barrier, sc.x0, sc.sim_cfg, sc.disturbance
                ),
                scenarios,
            )
        )

    any_failed = False
    rows = []
    for value, scenario, traj in zip(values, scenarios, trajs):
        write_trajectory_csv(
            out_dir / f"{args.param}_{value}.csv",
            traj,
            scenario.system.state_dim,
            scenario.system.input_dim,
        )
        dt_record = scenario.sim_cfg.dt * scenario.sim_cfg.record_every
        max_input, max_jump, margin_min = _summary_stats(traj, dt_record)
        min_h = traj.min_h() if len(traj) else math.nan
        status = "ok" if traj.ok else f"failed step {traj.failure_step}"
        if not traj.ok:
            any_failed = True
            print(f"{args.param}={value}: {traj.failure}", file=sys.stderr)
        rows.append((value, min_h, max_input, max_jump, margin_min, status))

    summary = out_dir / "summary.csv"
    with open(summary, "w", newline="\n") as fh:
        fh.write(f"{args.param},min_h,max_input_norm,max_deriv_jump,margin_min,status\n")
        for value, min_h, max_input, max_jump, margin_min, status in rows:
            fh.write(
                f"{_fmt(value)},{_fmt(min_h)},{_fmt(max_input)},"
                f"{_fmt(max_jump)},{_fmt(margin_min)},{status}\n"
            )
    print(f"wrote {len(rows)} summary rows to {summary}")
    return RUN_ERROR if any_failed else 0


def _grid_states(config: dict, scenario: Scenario, seed: int | None) -> list[np.ndarray]:
    grid = config.get("grid")
    if grid is None:
        raise ConfigurationError("missing config key config.grid")
    if grid["kind"] == "trajectory":
        # Probe along the closed loop of the unconstrained analog so a
        # bounded-input range violation cannot abort the grid itself.
        probe_config = json.loads(json.dumps(config))
        if probe_config["controller"]["kind"] == "bounded_input":
            probe_config["controller"]["kind"] = "tunable"
            del probe_config["controller"]["gamma"]
        probe = build_scenario(probe_config, seed=seed)
        traj = run(
            probe.system, probe.spec, probe.barrier, probe.x0, probe.sim_cfg, probe.disturbance
        )
        sub = int(grid.get("subsample", 1))
        states = [traj.states[i] for i in range(0, len(traj), sub)]
        return states
    base = np.asarray(grid.get("base", scenario.x0), dtype=float)
    if base.shape != (scenario.system.state_dim,):
        raise ConfigurationError(
            f"config.grid.base must have length {scenario.system.state_dim}"
        )
    axes = grid.get("axes", [])
    if not axes:
        return []
    grids = [np.linspace(a["min"], a["max"], int(a["count"])) for a in axes]
    dims = [int(a["dim"]) for a in axes]
    states = []
    for combo in np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, len(axes)):
        x = base.copy()
        for dim, val in zip(dims, combo):
            x[dim] = val
        states.append(x)
    return states


def cmd_check(args) -> int:
    config = load_config(args.config, args.set)
    scenario = build_scenario(config, seed=args.seed)
    states = _grid_states(config, scenario, args.seed)
    if not states:
        print("check grid is empty", file=sys.stderr)
        return CONFIG_ERROR

    controller = config["controller"]
    kind = controller["kind"]
    gamma = controller.get("gamma")
    sigma = controller.get("sigma")
    shaping = ShapingFunction.linear(sigma) if sigma is not None else None
    eta = controller.get("eta")

    spec = scenario.spec
    nominal = spec.nominal if spec.kind == "safety_filter" else None

    violations = []
    rows = []
    for idx, x in enumerate(states):
        con = evaluate_constraint(scenario.system, scenario.barrier, x)
        c_eff = con.c
        if nominal is not None:
            c_eff = con.c + float(con.d @ nominal(x))
        eff = AffineConstraint(c_eff, con.d)
        compat_txt = "-"
        compat_ok = True
        if gamma is not None:
            compat = check_compatibility(eff, gamma)
            compat_ok = compat.compatible
            compat_txt = "yes" if compat_ok else f"no({compat.deficit:.3g})"
        kappa_txt = "-"
        range_ok = True
        if kind in ("tunable", "sontag", "bounded_input") and shaping is not None:
            gam = gamma_sontag(eff, shaping)
            if gam > 0.0:
                if kind == "sontag":
                    kappa = 1.0
                else:
                    kappa = (1.0 - eta) * (c_eff / gam) + eta
                lower = max(c_eff / gam, 0.0)
                if kind == "bounded_input":
                    upper = (gamma * eff.d_norm + c_eff) / gam
                else:
                    upper = 1.0
                range_ok = lower < kappa <= upper if eff.d_norm_sq > 1e-12 else kappa > 0.0
                kappa_txt = f"{kappa:.5f}"
            else:
                range_ok = False
        ok = compat_ok and range_ok
        if not ok:
            violations.append((idx, x))
        rows.append(
            f"{idx:>4d} {c_eff:>12.5f} {eff.d_norm:>10.5f} {compat_txt:>7s} "
            f"{kappa_txt:>10s} {'ok' if range_ok else 'FAIL':>6s}"
        )
    header = f"{'idx':>4s} {'c_eff':>12s} {'|d|':>10s} {'compat':>7s} {'kappa':>10s} {'range':>6s}"
    print(header)
    if len(rows) <= 200:
        for row in rows:
            print(row)
    else:
        bad = {idx for idx, _ in violations}
        for i, row in enumerate(rows):
            if i in bad:
                print(row)
        print(f"({len(rows)} grid points, table truncated to violating rows)")
    if violations:
        print(f"{len(violations)} of {len(states)} grid points violate", file=sys.stderr)
        for idx, x in violations[:20]:
            print(f"  point {idx}: x = {np.array2string(x, precision=5)}", file=sys.stderr)
        return CHECK_ERROR
    print(f"all {len(states)} grid points pass")
    return 0


def cmd_margin(args) -> int:
    config = load_config(args.config, args.set)
    controller = config["controller"]
    if controller["kind"] == "qp":
        print("margin needs a tunable, sontag, or bounded_input controller", file=sys.stderr)
        return CONFIG_ERROR
    scenario = build_scenario(config, seed=args.seed)
    states = _grid_states(config, scenario, args.seed)
    if not states:
        print("margin grid is empty", file=sys.stderr)
        return CONFIG_ERROR
    margins = []
    for x in states:
        con = evaluate_constraint(scenario.system, scenario.barrier, x)
        out = evaluate_controller(scenario.spec, con, x)
        den = out.c_eff - out.kappa * out.gamma_eff
        margins.append(-1.0 + out.c_eff / den if abs(den) > 1e-12 else math.nan)
    finite = [m for m in margins if math.isfinite(m)]
    if not finite:
        print("no finite margins on the grid", file=sys.stderr)
        return CONFIG_ERROR
    print(f"margin over {len(states)} grid states (sample-based estimate, not a global supremum):")
    print(f"  min M = {_fmt(min(finite))}")
    print(f"  max M (xi_bar estimate) = {_fmt(max(finite))}")
    if controller["kind"] == "bounded_input":
        print("  note: the bounded-input range yields margin interval [0, inf) by construction")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "margins.csv"
    with open(out_path, "w", newline="\n") as fh:
        fh.write("idx,margin\n")
        for i, mval in enumerate(margins):
            fh.write(f"{i},{_fmt(mval)}\n")
    print(f"wrote per-state margins to {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cbfctrl", description="CBF safety-controller simulation toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("simulate", cmd_simulate),
        ("sweep", cmd_sweep),
        ("check", cmd_check),
        ("margin", cmd_margin),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", default=".")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--zoh", action="store_true")
        p.add_argument("--strict-range", action="store_true")
        p.set_defaults(fn=fn)
    sub.choices["sweep"].add_argument("--param", required=True)
    sub.choices["sweep"].add_argument("--values", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    except CBFControlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUN_ERROR


if __name__ == "__main__":
    sys.exit(main())
