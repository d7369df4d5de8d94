"""Command-line interface: ``levytax {threshold,value,sweep,simulate,mc,verify}``.

Parameters come from an optional ``key = value`` config file (``#`` starts
a comment) and ``--key value`` flags, which take precedence. Exit codes:
0 success, 2 configuration error, 3 numerical failure, 4 verification
failure.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .exceptions import DomainError, LevyTaxError
from .levy_model import JumpComponent, LevyModel, laplace_exponent
from .monte_carlo import McConfig, compare_analytic, sweep, value_curve
from .path_engine import (discounted_functionals, simulate_path, tax_reflection_transform,
                          write_path_csv)
from .scale_functions import build_scale_evaluator, w_scale
from .tax_optimizer import (QuadratureSpec, TaxParams, c_func, check_char_pde, check_ode_C,
                            check_verif_inequalities, optimal_threshold, q_func, value,
                            value_finite_horizon)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4


class ConfigError(Exception):
    """Invalid configuration; the message names the offending key."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


def _int(text):
    val = float(text)
    if val != int(val):
        raise ValueError("not an integer")
    return int(val)


def _grid(text):
    """``a,b,c`` list or ``start:stop:num`` evenly spaced grid."""
    text = text.strip()
    if ":" in text:
        start, stop, num = text.split(":")
        points = [float(v) for v in np.linspace(float(start), float(stop), _int(num))]
    else:
        points = [float(v) for v in text.split(",") if v.strip()]
    if not points:
        raise ValueError("the grid is empty")
    return points


# key -> (parser, default, help)
KEYS = {
    "lambda": (float, 1.0, "jump intensity"),
    "mu": (float, 2.0, "Erlang jump rate"),
    "shape": (_int, 2, "Erlang shape"),
    "theta_load": (float, 0.1, "premium loading; drift = (1+theta) lambda shape / mu"),
    "drift": (float, None, "drift; overrides theta_load when set"),
    "sigma": (float, 1.0, "volatility"),
    "alpha": (float, 0.3, "lower tax rate"),
    "beta": (float, 0.6, "upper tax rate"),
    "eta": (float, 1.25, "bailout penalty factor"),
    "q": (float, 0.1, "discount rate"),
    "b": (float, None, "threshold (default: optimal threshold)"),
    "x": (float, 0.0, "initial capital"),
    "x_bar": (float, None, "initial maximum level (default: max(x, 0))"),
    "a": (float, None, "upper level for the finite-horizon value"),
    "T": (float, None, "simulation horizon (default: 80/q for mc, 10 for simulate)"),
    "dt": (float, 1e-3, "time step"),
    "n_paths": (_int, 10000, "number of Monte Carlo paths"),
    "seed": (_int, 0, "base random seed"),
    "sweep_var": (str, "eta", "swept parameter: alpha, beta, eta, q, b or x"),
    "grid": (_grid, None, "sweep grid: comma list or start:stop:num"),
    "output": (str, None, "output file (default stdout)"),
    "epsilon_tail": (float, 1e-10, "tail truncation budget"),
    "delta_fraction": (float, 0.5, "delta / Phi(q) in the tail bound"),
    "rel_tol": (float, 1e-9, "quadrature relative tolerance"),
}

SWEEP_DEFAULT_GRIDS = {
    "alpha": [0.0, 0.1, 0.2, 0.3],
    "beta": [0.4, 0.5, 0.6, 0.7, 0.8],
    "eta": [1.0, 1.5, 2.0, 2.5],
    "q": [0.05, 0.1],
    "b": [0.0, 0.5, 1.0, 2.0, 4.0],
    "x": list(np.linspace(0.0, 10.0, 21)),
}


def read_config_file(path: str) -> dict:
    """Parse ``key = value`` lines; errors carry the file name, line number and key."""
    raw = {}
    try:
        lines = open(path, encoding="utf-8").read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, val = (part.strip() for part in text.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        raw[key] = (val, f"{path}:{lineno}")
    return raw


def _convert(raw: dict) -> dict:
    cfg = {key: spec[1] for key, spec in KEYS.items()}
    cfg["_sources"] = {key: where for key, (_, where) in raw.items()}
    for key, (text, where) in raw.items():
        try:
            cfg[key] = KEYS[key][0](text)
        except ValueError as exc:
            raise ConfigError(f"{where}: invalid value {text!r} for key '{key}'") from exc
    return cfg


@dataclass
class RunConfig:
    model: LevyModel
    tax: TaxParams
    quad: QuadratureSpec
    values: dict


def _require(ok: bool, key: str, message: str):
    if not ok:
        raise ConfigError(f"invalid '{key}': {message}", key)


def validate(cfg: dict) -> RunConfig:
    """Check every constraint and build the model objects.

    Errors name the key and, when it was set in a file or flag, where.
    """
    try:
        return _validate(cfg)
    except ConfigError as exc:
        where = cfg.get("_sources", {}).get(exc.key)
        if where:
            raise ConfigError(f"{where}: {exc}", exc.key) from exc
        raise


def _validate(cfg: dict) -> RunConfig:
    for key in ("lambda", "mu", "q"):
        _require(cfg[key] > 0, key, f"must be > 0, got {cfg[key]}")
    _require(cfg["shape"] >= 1, "shape", f"must be a positive integer, got {cfg['shape']}")
    _require(cfg["sigma"] >= 0, "sigma", f"must be >= 0, got {cfg['sigma']}")
    _require(0 <= cfg["alpha"] < 1, "alpha", f"must lie in [0, 1), got {cfg['alpha']}")
    _require(0 < cfg["beta"] < 1, "beta", f"must lie in (0, 1), got {cfg['beta']}")
    given = cfg.get("_sources", {})
    _require(cfg["alpha"] <= cfg["beta"], "alpha" if "alpha" in given else "beta",
             f"need alpha <= beta, got alpha={cfg['alpha']}, beta={cfg['beta']}")
    _require(cfg["eta"] >= 0, "eta", f"must be >= 0, got {cfg['eta']}")
    _require(cfg["dt"] > 0, "dt", f"must be > 0, got {cfg['dt']}")
    _require(cfg["n_paths"] >= 1, "n_paths", f"must be >= 1, got {cfg['n_paths']}")
    _require(cfg["epsilon_tail"] > 0, "epsilon_tail", "must be > 0")
    _require(0 < cfg["delta_fraction"] < 1, "delta_fraction", "must lie in (0, 1)")
    _require(cfg["rel_tol"] > 0, "rel_tol", "must be > 0")
    for key in ("T", "a"):
        if cfg[key] is not None:
            _require(cfg[key] > 0, key, f"must be > 0, got {cfg[key]}")
    if cfg["b"] is not None:
        _require(cfg["b"] >= 0, "b", f"must be >= 0, got {cfg['b']}")
    if cfg["x_bar"] is None:
        cfg["x_bar"] = max(cfg["x"], 0.0)
    _require(cfg["x_bar"] >= max(cfg["x"], 0.0), "x_bar" if "x_bar" in given else "x",
             f"need x_bar >= max(x, 0), got x_bar={cfg['x_bar']}, x={cfg['x']}")
    _require(cfg["sweep_var"] in SWEEP_DEFAULT_GRIDS, "sweep_var",
             f"must be one of {sorted(SWEEP_DEFAULT_GRIDS)}, got {cfg['sweep_var']!r}")
    comp = JumpComponent(cfg["lambda"], cfg["shape"], cfg["mu"])
    drift = cfg["drift"]
    if drift is None:
        drift = (1.0 + cfg["theta_load"]) * comp.rate * comp.mean_size
    _require(cfg["sigma"] > 0 or drift > 0, "drift",
             f"must be > 0 when sigma = 0, got {drift}")
    model = LevyModel(drift, cfg["sigma"], (comp,))
    tax = TaxParams(cfg["alpha"], cfg["beta"], cfg["eta"], cfg["q"])
    quad_spec = QuadratureSpec(cfg["epsilon_tail"], cfg["delta_fraction"], cfg["rel_tol"])
    return RunConfig(model, tax, quad_spec, cfg)


def fmt(val: float) -> str:
    """Shortest round-trip representation."""
    return repr(float(val))


def _open_output(path):
    return open(path, "w", encoding="utf-8", newline="\n") if path else sys.stdout


def _threshold(rc: RunConfig, ev=None):
    ev = ev if ev is not None else build_scale_evaluator(rc.model, rc.tax.q)
    if rc.values["b"] is not None:
        return ev, rc.values["b"]
    if rc.tax.eta < 1:
        raise ConfigError("invalid 'eta': the optimal threshold needs eta >= 1 "
                          "(set 'b' to evaluate a fixed threshold)")
    return ev, optimal_threshold(ev, rc.tax, rc.quad)


def cmd_threshold(rc: RunConfig, out) -> int:
    if rc.tax.eta < 1:
        raise ConfigError(f"invalid 'eta': must be >= 1 for the optimal threshold, got {rc.tax.eta}")
    ev = build_scale_evaluator(rc.model, rc.tax.q)
    print(f"{optimal_threshold(ev, rc.tax, rc.quad):.12g}", file=out)
    return EXIT_OK


def cmd_value(rc: RunConfig, out) -> int:
    ev, b = _threshold(rc)
    x, x_bar, a = rc.values["x"], rc.values["x_bar"], rc.values["a"]
    if a is None:
        result = value(ev, rc.tax, b, x, x_bar, rc.quad)
    else:
        try:
            result = value_finite_horizon(ev, rc.tax, b, a, x, x_bar, rc.quad)
        except DomainError as exc:
            raise ConfigError(f"invalid 'a': {exc}", "a") from exc
    print(fmt(result), file=out)
    return EXIT_OK


def cmd_sweep(rc: RunConfig, out) -> int:
    var = rc.values["sweep_var"]
    grid = rc.values["grid"] or SWEEP_DEFAULT_GRIDS[var]
    if var == "x":
        rows = value_curve(rc.model, rc.tax, grid, rc.values["b"], rc.quad)
        print("x,v_xx", file=out)
        for x, v in rows:
            print(f"{fmt(x)},{fmt(v)}", file=out)
        return EXIT_OK
    try:
        rows = sweep(rc.model, rc.tax, var, grid, rc.quad)
    except DomainError as exc:
        raise ConfigError(f"invalid 'grid' for sweep_var={var}: {exc}") from exc
    print("param,value,b_star,v00", file=out)
    for name, g, b_star, v00 in rows:
        print(f"{name},{fmt(g)},{fmt(b_star)},{fmt(v00)}", file=out)
    return EXIT_OK


def cmd_simulate(rc: RunConfig, out) -> int:
    vals = rc.values
    b = vals["b"]
    if b is None:
        _, b = _threshold(rc)
    horizon = vals["T"] if vals["T"] is not None else 10.0
    path = simulate_path(rc.model, horizon, vals["dt"], vals["seed"], vals["x"])
    cp = tax_reflection_transform(path, rc.tax.alpha, rc.tax.beta, b, vals["x_bar"])
    write_path_csv(cp, out)
    tax_npv, bail_npv = discounted_functionals(cp, rc.tax.q, rc.tax.eta)
    summary = sys.stderr if out is sys.stdout else sys.stdout
    print(f"points={len(cp.times)} b={fmt(b)} tax_npv={fmt(tax_npv)} "
          f"bailout_npv={fmt(bail_npv)} value={fmt(tax_npv - bail_npv)}", file=summary)
    return EXIT_OK


def cmd_mc(rc: RunConfig, out) -> int:
    vals = rc.values
    ev, b = _threshold(rc)
    horizon = vals["T"] if vals["T"] is not None else 80.0 / rc.tax.q
    cfg = McConfig(vals["n_paths"], horizon, vals["dt"], vals["seed"], vals["x"], vals["x_bar"])
    report = compare_analytic(rc.model, rc.tax, b, cfg, ev, rc.quad)
    est = report.estimate
    print("mean,std_error,n,analytic,z_score,dt_bias,truncation_bias_bound,pass", file=out)
    print(",".join([fmt(est.mean), fmt(est.std_error), str(est.n), fmt(report.analytic),
                    fmt(report.z_score), fmt(est.dt_bias), fmt(est.truncation_bias_bound),
                    str(report.passed)]), file=out)
    return EXIT_OK


def _verify_checks(rc: RunConfig):
    """Yield ``(name, passed, detail)`` for the reduced invariant suite."""
    model, tax, quad_spec = rc.model, rc.tax, rc.quad
    ev = build_scale_evaluator(model, tax.q)
    phi = ev.phi_q
    worst = 0.0
    for s in (phi + 0.5, phi + 1.0, phi + 2.0):
        upper = 60.0 / (s - phi)
        num = quad(lambda x: math.exp(-s * x) * float(w_scale(ev, x)), 0.0, upper,
                   epsabs=0.0, epsrel=1e-12, limit=500)[0]
        exact = 1.0 / (laplace_exponent(model, s) - tax.q)
        worst = max(worst, abs(num / exact - 1.0))
    yield "laplace_identity", worst < 1e-8, f"max rel err {worst:.2e}"

    if tax.eta < 1:
        yield "threshold", False, "eta < 1: optimality checks need eta >= 1"
        return
    b_star = optimal_threshold(ev, tax, quad_spec)
    yield "threshold", math.isfinite(b_star) and b_star >= 0, f"b* = {b_star:.12g}"

    b, a = max(b_star, 0.5), max(b_star, 0.5) + 8.0
    pts = list(np.linspace(0.1, b - 0.05, 4)) + list(np.linspace(b + 0.05, a - 0.05, 4))
    res = max(abs(check_char_pde(ev, tax, b, a, xb, quad_spec=quad_spec)) for xb in pts)
    yield "char_pde", res < 1e-5, f"max |residual| {res:.2e}"

    res = max(abs(check_ode_C(ev, tax, bb, quad_spec=quad_spec)) for bb in (0.5, 1.0, 2.0, 4.0))
    yield "ode_C", res < 1e-5, f"max |residual| {res:.2e}"

    if b_star > 0:
        grid = np.linspace(0.0, 4.0 * b_star, 17)[1:]
        signs = [c_func(ev, tax, g, quad_spec) - q_func(ev, tax, g, quad_spec) for g in grid]
        ok = all((d > 0) == (g < b_star) for d, g in zip(signs, grid) if abs(g - b_star) > 1e-6)
        yield "cq_sign_structure", ok, "C > Q below b*, C < Q above"

    rep = check_verif_inequalities(ev, tax, b_star, np.linspace(0.0, 3.0 * max(b_star, 1.0), 7),
                                   n_x=4, quad_spec=quad_spec)
    yield ("verification_inequalities", rep.max_violation <= 1e-6 and rep.bounded,
           f"max violation {rep.max_violation:.2e}")

    cfg = McConfig(2000, 100.0, 0.01, rc.values["seed"], 1.0, 1.0)
    report = compare_analytic(model, tax, b_star, cfg, ev, quad_spec)
    yield "mc_z_test", report.passed, report.line()


def cmd_verify(rc: RunConfig, out) -> int:
    all_ok = True
    for name, ok, detail in _verify_checks(rc):
        all_ok &= bool(ok)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", file=out)
    return EXIT_OK if all_ok else EXIT_VERIFY


COMMANDS = {
    "threshold": (cmd_threshold, "print the optimal threshold b*"),
    "value": (cmd_value, "print v(x, x_bar) at threshold b (default b*)"),
    "sweep": (cmd_sweep, "write a parameter sweep or value curve as CSV"),
    "simulate": (cmd_simulate, "simulate one controlled path and write it as CSV"),
    "mc": (cmd_mc, "Monte Carlo estimate compared with the closed form"),
    "verify": (cmd_verify, "run the reduced verification suite"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levytax", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value configuration file")
        for key, (_, default, key_help) in KEYS.items():
            text = key_help if default is None else f"{key_help} (default: {default})"
            p.add_argument(f"--{key}", dest=f"opt_{key}", metavar="VALUE", help=text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        raw = read_config_file(args.config) if args.config else {}
        for key in KEYS:
            flag = getattr(args, f"opt_{key}")
            if flag is not None:
                raw[key] = (flag, f"--{key}")
        rc = validate(_convert(raw))
        out = _open_output(rc.values["output"])
        try:
            return func(rc, out)
        finally:
            if out is not sys.stdout:
                out.close()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LevyTaxError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
