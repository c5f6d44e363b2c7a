"""Command-line front end.

Subcommands:

    simulate          forward ensemble + backward cost under the configured policy
    solve-merton      closed-form solution summary, validated against the ODE oracle
    check-hjb         reduced-equation residual, x2 independence, compatibility system
    check-pmp         adjoint construction, p3 reduction, maximum condition, convexity
    check-relations   value/adjoint relations and the cost-vs-value comparison
    compare-controls  paired Monte Carlo comparison against perturbed policies

All subcommands read one JSON config (--config), honor --seed/--out/--quiet
and the DELAYLAB_SEED environment variable, and write a deterministic
report.json (plus CSV artifacts where applicable) into the output directory.

Exit codes: 0 success, 1 a check failed, 2 configuration error,
3 numerical divergence or domain failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import bsdde, hjb, merton, pmp, sdde, verify
from ._expr import compile_expression
from .core import (
    ConfigError,
    ConstraintViolationError,
    ControlBox,
    DomainError,
    FeedbackPolicy,
    ModelParams,
    SimConfig,
    SimulationDivergedError,
    StructuredModel,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

SEED_ENV_VAR = "DELAYLAB_SEED"


# ---------------------------------------------------------------------------
# Config loading
# ---------------------------------------------------------------------------


def _require_keys(section: dict, allowed: set, required: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")
    missing = required - set(section)
    if missing:
        raise ConfigError(f"missing key(s) {sorted(missing)} in {where}")


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    _require_keys(
        cfg,
        allowed={"model", "sim", "initial_path", "checks", "output"},
        required={"model", "sim"},
        where="config root",
    )
    return cfg


_MERTON_PARAM_KEYS = {
    "r", "mu0", "sigma", "beta", "gamma", "lambda", "delta",
    "horizon_T", "mu2", "start_s",
}


def build_merton(section: dict):
    _require_keys(
        section,
        allowed={"kind", "params", "overrides", "bounds"},
        required={"kind", "params"},
        where="model",
    )
    raw = section["params"]
    _require_keys(
        raw,
        allowed=_MERTON_PARAM_KEYS,
        required=_MERTON_PARAM_KEYS - {"start_s"},
        where="model.params",
    )
    overrides = section.get("overrides", {})
    _require_keys(overrides, allowed={"mu1", "theta"}, required=set(), where="model.overrides")
    bounds = section.get("bounds", {})
    _require_keys(
        bounds,
        allowed={"lam1", "lam2", "u_bound", "c_bound"},
        required=set(),
        where="model.bounds",
    )
    try:
        params = merton.resolve_constraints(
            r=float(raw["r"]),
            mu0=float(raw["mu0"]),
            sigma=float(raw["sigma"]),
            beta=float(raw["beta"]),
            gamma=float(raw["gamma"]),
            lam=float(raw["lambda"]),
            delta=float(raw["delta"]),
            horizon_T=float(raw["horizon_T"]),
            mu2=float(raw["mu2"]),
            start_s=float(raw.get("start_s", 0.0)),
            mu1=(float(overrides["mu1"]) if "mu1" in overrides else None),
            theta=(float(overrides["theta"]) if "theta" in overrides else None),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad model parameter: {exc}") from exc
    except ConstraintViolationError as exc:
        raise ConfigError(str(exc)) from exc
    model = merton.build_model(
        params,
        u_bound=float(bounds.get("u_bound", 10.0)),
        c_bound=float(bounds.get("c_bound", 10.0)),
    )
    qsol = merton.solve_q(params)
    policy = merton.build_policy(
        params,
        qsol,
        lam1=float(bounds.get("lam1", 10.0)),
        lam2=float(bounds.get("lam2", 10.0)),
    )
    return model, policy, params, qsol


_COEFF_VARS = {
    "b1": ("t", "x", "x1", "u", "c"),
    "b2": ("t", "x", "x1", "u", "c"),
    "sigma": ("t", "x", "x1", "u", "c"),
    "f1": ("t", "x", "x1", "y", "z", "u", "c"),
    "f2": ("t", "x", "x1", "y", "z", "u", "c"),
    "phi": ("x", "x1"),
}


def build_generic(section: dict):
    _require_keys(
        section,
        allowed={"kind", "params", "coefficients", "control_box", "policy"},
        required={"kind", "params", "coefficients", "control_box", "policy"},
        where="model",
    )
    raw = section["params"]
    _require_keys(
        raw,
        allowed={"lambda", "delta", "horizon_T", "start_s"},
        required={"lambda", "delta", "horizon_T"},
        where="model.params",
    )
    params = ModelParams(
        lam=float(raw["lambda"]),
        delta=float(raw["delta"]),
        horizon_T=float(raw["horizon_T"]),
        start_s=float(raw.get("start_s", 0.0)),
    )
    box_raw = section["control_box"]
    _require_keys(box_raw, allowed={"lower", "upper"}, required={"lower", "upper"}, where="model.control_box")
    box = ControlBox(lower=np.asarray(box_raw["lower"], float), upper=np.asarray(box_raw["upper"], float))
    n_u = box.n_controls
    if n_u > 2:
        raise ConfigError("generic models support at most two control coordinates")

    coeffs_raw = section["coefficients"]
    _require_keys(
        coeffs_raw,
        allowed=set(_COEFF_VARS),
        required=set(_COEFF_VARS),
        where="model.coefficients",
    )
    compiled = {
        name: compile_expression(str(coeffs_raw[name]), _COEFF_VARS[name])
        for name in _COEFF_VARS
    }

    def control_env(u):
        env = {"u": u[0]}
        env["c"] = u[1] if n_u > 1 else np.zeros_like(np.asarray(u[0], float))
        return env

    def make_state_coeff(name):
        fun = compiled[name]

        def coeff(t, x, x1, u):
            return np.asarray(fun(t=t, x=x, x1=x1, **control_env(u)), float)

        return coeff

    def make_gen_coeff(name):
        fun = compiled[name]

        def coeff(t, x, x1, y, z, u):
            return np.asarray(fun(t=t, x=x, x1=x1, y=y, z=z, **control_env(u)), float)

        return coeff

    phi_fun = compiled["phi"]
    model = StructuredModel(
        params=params,
        b1=make_state_coeff("b1"),
        b2=make_state_coeff("b2"),
        sigma=make_state_coeff("sigma"),
        f1=make_gen_coeff("f1"),
        f2=make_gen_coeff("f2"),
        phi=lambda x, x1: np.asarray(phi_fun(x=x, x1=x1), float),
        control_set=box,
    )

    pol_raw = section["policy"]
    if not isinstance(pol_raw, list) or len(pol_raw) != n_u:
        raise ConfigError("model.policy must list one expression per control coordinate")
    pol_funs = [compile_expression(str(e), ("t", "x", "x1")) for e in pol_raw]

    def evaluate(t, x, x1):
        x = np.asarray(x, float)
        vals = [np.broadcast_to(np.asarray(f(t=t, x=x, x1=x1), float), x.shape) for f in pol_funs]
        return np.stack(vals)

    policy = FeedbackPolicy(evaluate=evaluate, n_controls=n_u, label="config_policy")
    return model, policy


def build_model_and_policy(cfg: dict):
    section = cfg["model"]
    if not isinstance(section, dict) or "kind" not in section:
        raise ConfigError("model section must carry a 'kind'")
    kind = section["kind"]
    if kind == "merton":
        return build_merton(section)
    if kind == "generic":
        model, policy = build_generic(section)
        return model, policy, None, None
    raise ConfigError(f"unknown model kind {kind!r}")


def build_sim_config(cfg: dict, seed_flag: int | None) -> SimConfig:
    section = cfg["sim"]
    _require_keys(
        section,
        allowed={"n_steps", "n_paths", "master_seed", "x1_method"},
        required={"n_steps", "n_paths"},
        where="sim",
    )
    if seed_flag is not None:
        seed = seed_flag
    elif "master_seed" in section:
        seed = int(section["master_seed"])
    elif SEED_ENV_VAR in os.environ:
        try:
            seed = int(os.environ[SEED_ENV_VAR])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from exc
    else:
        raise ConfigError(
            f"no seed given: set sim.master_seed, pass --seed, or export {SEED_ENV_VAR}"
        )
    try:
        return SimConfig(
            n_steps=int(section["n_steps"]),
            n_paths=int(section["n_paths"]),
            master_seed=seed,
            x1_method=section.get("x1_method", "ode_recursion"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sim parameter: {exc}") from exc


def build_initial_path(cfg: dict):
    section = cfg.get("initial_path", {"kind": "constant", "value": 1.0})
    if section.get("kind") == "constant":
        _require_keys(section, allowed={"kind", "value"}, required={"kind", "value"}, where="initial_path")
        value = float(section["value"])
        return lambda tau: value
    if section.get("kind") == "expr":
        _require_keys(section, allowed={"kind", "expr"}, required={"kind", "expr"}, where="initial_path")
        fun = compile_expression(str(section["expr"]), ("tau",))
        return lambda tau: float(fun(tau=tau))
    raise ConfigError("initial_path.kind must be 'constant' or 'expr'")


def _checks_section(cfg: dict) -> dict:
    section = cfg.get("checks", {})
    _require_keys(
        section,
        allowed={
            "hjb_tolerance", "x2_tolerance", "compat_tolerance",
            "p3_tolerance", "max_condition_tolerance", "relations_tolerance",
            "x_probes", "x1_probes", "s_probes", "x2_probes", "n_grid",
        },
        required=set(),
        where="checks",
    )
    return section


def _probe_arrays(cfg: dict, params):
    checks = _checks_section(cfg)
    xs = np.asarray(checks.get("x_probes", np.linspace(0.5, 5.0, 9).tolist()), float)
    x1s = np.asarray(checks.get("x1_probes", np.linspace(0.25, 5.0, 9).tolist()), float)
    span = params.horizon_T - params.start_s
    default_s = (params.start_s + span * np.array([0.1, 0.3, 0.5, 0.7, 0.9])).tolist()
    ss = [float(v) for v in checks.get("s_probes", default_s)]
    x2s = [float(v) for v in checks.get("x2_probes", [-10.0, -5.0, 0.0, 5.0, 10.0])]
    return ss, xs, x1s, x2s, checks


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def write_report(out_dir: Path, payload: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


def _say(quiet: bool, message: str) -> None:
    if not quiet:
        print(message)


def _require_merton(params, what: str):
    if params is None:
        raise ConfigError(f"{what} requires a model of kind 'merton'")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg, args, out_dir: Path) -> int:
    built = build_model_and_policy(cfg)
    model, policy, params, _ = built
    sim = build_sim_config(cfg, args.seed)
    initial = build_initial_path(cfg)
    ensemble = sdde.simulate_forward(model, policy, initial, sim)
    basis = merton.build_basis(params) if params is not None else bsdde.polynomial_basis(2)
    sol = bsdde.solve_backward(model, ensemble, basis)

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "forward.csv", "w") as fh:
        sdde.write_forward_csv(ensemble, fh)
    with open(out_dir / "backward.csv", "w") as fh:
        bsdde.write_backward_csv(sol, fh)
    cost_samples = -sol.y[:, 0]
    payload = {
        "command": "simulate",
        "n_paths": ensemble.n_paths,
        "n_steps": ensemble.n_steps,
        "master_seed": sim.master_seed,
        "cost": float(cost_samples.mean()),
        "cost_stderr": sol.stderr,
        "degraded_regression_steps": sol.degraded_steps,
        "artifacts": ["forward.csv", "backward.csv"],
    }
    write_report(out_dir, payload)
    _say(args.quiet, f"simulate: J = {cost_samples.mean():.6g} +- {sol.stderr:.2g}")
    return EXIT_OK


def cmd_solve_merton(cfg, args, out_dir: Path) -> int:
    built = build_model_and_policy(cfg)
    model, policy, params, qsol = built
    _require_merton(params, "solve-merton")
    sim = build_sim_config(cfg, args.seed)
    initial = build_initial_path(cfg)

    times = np.linspace(params.start_s, params.horizon_T, 11)
    q_vals = qsol(times)
    _, oracle = merton.q_ode_oracle(params, qsol.delta_coeff, n_steps=10_000)
    oracle_times = np.linspace(params.start_s, params.horizon_T, 10_001)
    q_interp = np.interp(times, oracle_times, oracle)
    rel_err = float(np.max(np.abs(q_vals - q_interp) / np.abs(q_interp)))
    ok = rel_err < 1e-7

    h = sim.step_size(model.params)
    from .core import DelayBuffer, x1_of_buffer

    buf = DelayBuffer.from_initial_path(initial, params.delta, h)
    x0 = float(buf.samples[-1])
    x1_0 = x1_of_buffer(buf, params.lam)
    cand = merton.value_function(params, qsol)
    payload = {
        "command": "solve-merton",
        "theta": params.theta,
        "mu1": params.mu1,
        "delta_coefficient": qsol.delta_coeff,
        "q_at_start": float(qsol(params.start_s)),
        "q_oracle_max_rel_err": rel_err,
        "value_at_start": float(cand.v(params.start_s, x0, x1_0)),
        "u_star_at_start": float(merton.optimal_u(params.start_s, x0, x1_0, params)),
        "c_star_at_start": float(merton.optimal_c(params.start_s, x0, x1_0, params, qsol)),
        "pass": ok,
    }
    write_report(out_dir, payload)
    _say(args.quiet, f"solve-merton: Q(s) = {payload['q_at_start']:.8g}, "
                     f"oracle mismatch {rel_err:.2e} -> {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_check_hjb(cfg, args, out_dir: Path) -> int:
    built = build_model_and_policy(cfg)
    model, policy, params, qsol = built
    _require_merton(params, "check-hjb")
    ss, xs, x1s, x2s, checks = _probe_arrays(cfg, params)
    n_grid = int(checks.get("n_grid", 16))
    cand = merton.value_function(params, qsol)

    reports = [
        hjb.hjb_residual_check(
            model, cand, ss, xs, x1s, x2=0.0, maximizer=policy,
            n_grid=n_grid, tol=float(checks.get("hjb_tolerance", 1e-6)),
        ),
        hjb.x2_independence_check(
            model, cand, ss, xs, x1s, x2s, maximizer=policy,
            n_grid=n_grid, tol=float(checks.get("x2_tolerance", 1e-8)),
        ),
        hjb.compatibility_pde_check(
            model, cand, ss[0], xs, x1s, policy,
            tol=float(checks.get("compat_tolerance", 1e-6)),
        ),
    ]
    payload = {
        "command": "check-hjb",
        "checks": [r.to_dict() for r in reports],
        "pass": all(r.passed for r in reports),
    }
    write_report(out_dir, payload)
    for r in reports:
        _say(args.quiet, f"check-hjb/{r.check}: max residual {r.max_residual:.3e} "
                         f"(tol {r.tolerance:g}) -> {'PASS' if r.passed else 'FAIL'}")
    return EXIT_OK if payload["pass"] else EXIT_CHECK_FAILED


def cmd_check_pmp(cfg, args, out_dir: Path) -> int:
    built = build_model_and_policy(cfg)
    model, policy, params, qsol = built
    _require_merton(params, "check-pmp")
    sim = build_sim_config(cfg, args.seed)
    initial = build_initial_path(cfg)
    checks = _checks_section(cfg)
    cand = merton.value_function(params, qsol)

    ensemble = sdde.simulate_forward(model, policy, initial, sim)
    q = merton.exact_q_factor(params, ensemble.times)
    q_sim = pmp.simulate_q(model, ensemble)
    q_err = float(np.max(np.abs(q_sim - q[np.newaxis, :])))

    adjoints = []
    p3_worst = None
    max_worst = None
    for i in range(ensemble.n_paths):
        path = ensemble.path(i)
        adj = pmp.adjoint_from_value(model, cand, path, q)
        adjoints.append(adj)
        rep3 = pmp.check_p3_zero(
            model, cand, path, adj, tol=float(checks.get("p3_tolerance", 1e-10))
        )
        repm = pmp.maximum_condition_check(
            model, cand, path, adj,
            tol=float(checks.get("max_condition_tolerance", 1e-6)),
        )
        if p3_worst is None or rep3.max_residual > p3_worst.max_residual:
            p3_worst = rep3
        if max_worst is None or repm.max_residual > max_worst.max_residual:
            max_worst = repm

    path0 = ensemble.path(0)
    adj0 = adjoints[0]
    mid = ensemble.n_steps // 2
    probes = []
    for k in (0, mid):
        x, x1 = float(path0.x[k]), float(path0.x1[k])
        y = -float(cand.v(path0.times[k], x, x1))
        sg = np.asarray(model.sigma(path0.times[k], x, x1, path0.controls[k]))
        z = float(sg.ravel()[0]) * -float(cand.v_x(path0.times[k], x, x1))
        probes.append(
            {
                "x": x, "x1": x1, "x2": float(path0.x2[k]), "y": y, "z": z,
                "u": path0.controls[k],
                "p1": float(adj0.p1[k]), "p2": float(adj0.p2[k]),
                "q": float(adj0.q[k]), "k1": float(adj0.k1[k]),
            }
        )
    convexity = pmp.convexity_spot_check(model, float(path0.times[0]), probes)

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "adjoint.csv", "w") as fh:
        pmp.write_adjoint_csv(adjoints, fh)

    q_ok = q_err < 1e-10
    payload = {
        "command": "check-pmp",
        "q_factor_max_abs_err": q_err,
        "q_factor_pass": q_ok,
        "checks": [p3_worst.to_dict(), max_worst.to_dict(), convexity.to_dict()],
        "artifacts": ["adjoint.csv"],
        "pass": bool(q_ok and p3_worst.passed and max_worst.passed and convexity.passed),
    }
    write_report(out_dir, payload)
    _say(args.quiet, f"check-pmp/q_factor: max err {q_err:.3e} -> {'PASS' if q_ok else 'FAIL'}")
    for r in (p3_worst, max_worst, convexity):
        _say(args.quiet, f"check-pmp/{r.check}: residual {r.max_residual:.3e} "
                         f"-> {'PASS' if r.passed else 'FAIL'}")
    return EXIT_OK if payload["pass"] else EXIT_CHECK_FAILED


def cmd_check_relations(cfg, args, out_dir: Path) -> int:
    built = build_model_and_policy(cfg)
    model, policy, params, qsol = built
    _require_merton(params, "check-relations")
    sim = build_sim_config(cfg, args.seed)
    initial = build_initial_path(cfg)
    checks = _checks_section(cfg)
    cand = merton.value_function(params, qsol)

    ensemble = sdde.simulate_forward(model, policy, initial, sim)
    q = merton.exact_q_factor(params, ensemble.times)
    adjoints = [
        merton.closed_form_adjoints(params, qsol, ensemble.path(i), q)
        for i in range(ensemble.n_paths)
    ]
    rel = verify.relations_report(
        model, cand, ensemble, adjoints,
        tol=float(checks.get("relations_tolerance", 1e-4)),
    )
    basis = merton.build_basis(params)
    cost = verify.closed_form_cost_check(model, policy, cand, initial, sim, basis)

    payload = {
        "command": "check-relations",
        "relations": rel.to_dict(),
        "cost_check": cost.to_dict(),
        "pass": bool(rel.passed and cost.passed),
    }
    write_report(out_dir, payload)
    _say(args.quiet, f"check-relations/relations: slope {rel.time_slope:.3e}, "
                     f"adjoints {max(rel.adjoint_mismatch.values()):.3e} "
                     f"-> {'PASS' if rel.passed else 'FAIL'}")
    _say(args.quiet, f"check-relations/cost: J = {cost.cost:.6g} vs V = {cost.reference:.6g} "
                     f"-> {'PASS' if cost.passed else 'FAIL'}")
    return EXIT_OK if payload["pass"] else EXIT_CHECK_FAILED


def cmd_compare_controls(cfg, args, out_dir: Path) -> int:
    built = build_model_and_policy(cfg)
    model, policy, params, _ = built
    sim = build_sim_config(cfg, args.seed)
    initial = build_initial_path(cfg)
    basis = merton.build_basis(params) if params is not None else bsdde.polynomial_basis(2)

    if policy.n_controls == 2:
        perturbations = [
            verify.scaled_policy(policy, [0.75, 1.0], "u_scaled_0.75"),
            verify.scaled_policy(policy, [1.25, 1.0], "u_scaled_1.25"),
            verify.scaled_policy(policy, [1.0, 0.75], "c_scaled_0.75"),
            verify.scaled_policy(policy, [1.0, 1.25], "c_scaled_1.25"),
            verify.scaled_policy(policy, [0.0, 1.0], "u_zero"),
        ]
    else:
        perturbations = [
            verify.scaled_policy(policy, [0.75], "u_scaled_0.75"),
            verify.scaled_policy(policy, [1.25], "u_scaled_1.25"),
            verify.scaled_policy(policy, [0.0], "u_zero"),
        ]
    report = verify.compare_controls(model, policy, perturbations, initial, sim, basis)
    payload = {"command": "compare-controls", **report.to_dict()}
    write_report(out_dir, payload)
    _say(args.quiet, f"compare-controls: base J = {report.base_cost:.6g}")
    for comp in report.comparisons:
        _say(args.quiet, f"  {comp.label}: dJ = {comp.paired_diff_mean:+.4g} "
                         f"+- {comp.paired_diff_stderr:.2g} -> {'PASS' if comp.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


_COMMANDS = {
    "simulate": cmd_simulate,
    "solve-merton": cmd_solve_merton,
    "check-hjb": cmd_check_hjb,
    "check-pmp": cmd_check_pmp,
    "check-relations": cmd_check_relations,
    "compare-controls": cmd_compare_controls,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delaylab",
        description="Simulation and verification for stochastic control with state delay",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="output directory (default from config)")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out_section = cfg.get("output", {})
        _require_keys(out_section, allowed={"directory"}, required=set(), where="output")
        out_dir = Path(args.out or out_section.get("directory", "out"))
        return _COMMANDS[args.command](cfg, args, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationDivergedError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DomainError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
