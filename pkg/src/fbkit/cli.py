"""Command-line front end.

Subcommands: ``solve``, ``rates``, ``region``, ``experiment``, ``bounds``.
Configuration is a single JSON document; every run echoes the effective
config (all defaults materialized) next to its outputs, outputs are flat
CSV/JSON written atomically, and report paths render matplotlib figures
alongside the delimited data. Exit codes: 0 success, 1 config error,
2 divergence.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import math
import os
import sys
import tempfile
from dataclasses import replace

import numpy as np

from . import plots
from .experiments import (
    PRESETS,
    InstanceSpec,
    compare,
    gen_instance,
    reference_solution,
    required_measurements,
)
from .identification import build_identification_report
from .operators import (
    CircularConvOp,
    DenseOp,
    IdentityOp,
    SmoothTerm,
    load_dense_csv,
    load_vector_csv,
)
from .rates import (
    build_restricted,
    optimal_inertia,
    rate_curve,
    rate_report,
    region_map,
)
from .regularizers import regularizer_from_config
from .solver import (
    ConstantSchedule,
    CustomError,
    DivergenceError,
    FistaSchedule,
    OnlineSchedule,
    PowerLawError,
    PRuleSchedule,
    Problem,
    RestartRule,
    StoppingRule,
    check_error_schedule,
    run,
    unconditional_margin,
)

__all__ = ["main", "ConfigError"]

_IFB_A = math.sqrt(5.0) - 2.0 - 1e-3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# atomic output helpers


@contextlib.contextmanager
def _atomic_path(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            with contextlib.suppress(OSError):
                os.remove(tmp)


def _write_text(path, text):
    with _atomic_path(path) as tmp:
        with open(tmp, "w") as fh:
            fh.write(text)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_figure(render, path):
    with _atomic_path(path) as tmp:
        render(tmp)


# ---------------------------------------------------------------------------
# config validation


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


_INSTANCE_KEYS = {"kind", "m", "n", "complexity", "seed", "noise_scale",
                  "c_lambda", "block_size", "n1", "n2"}


def _normalize_instance(d, where):
    _check_keys(d, _INSTANCE_KEYS, where)
    for key in ("kind", "m", "n", "complexity", "seed"):
        if key not in d:
            raise ConfigError(f"{where}: missing required key {key!r}")
    out = {"noise_scale": 1e-3, "c_lambda": 1.0, "block_size": 4,
           "n1": 0, "n2": 0}
    out.update(d)
    return out


def _normalize_problem(d, where="problem"):
    _check_keys(d, {"preset", "instance", "files"}, where)
    chosen = [k for k in ("preset", "instance", "files") if k in d]
    if len(chosen) != 1:
        raise ConfigError(f"{where}: give exactly one of preset/instance/files")
    if "preset" in d:
        if d["preset"] not in PRESETS:
            raise ConfigError(
                f"{where}: unknown preset {d['preset']!r}; "
                f"available: {sorted(PRESETS)}"
            )
        return {"preset": d["preset"]}
    if "instance" in d:
        return {"instance": _normalize_instance(d["instance"], where + ".instance")}
    f = d["files"]
    _check_keys(f, {"op", "y", "regularizer", "beta"}, where + ".files")
    for key in ("op", "y", "regularizer"):
        if key not in f:
            raise ConfigError(f"{where}.files: missing {key!r}")
    return {"files": {**{"beta": None}, **f}}


_SCHEDULE_KEYS = {"variant", "a", "b", "q", "p", "coeff", "gamma",
                  "gamma_scale", "error", "restart", "name"}


def _normalize_schedule(d, where="schedule"):
    _check_keys(d, _SCHEDULE_KEYS, where)
    variant = d.get("variant")
    if variant not in {"constant", "fista", "prule", "online"}:
        raise ConfigError(f"{where}: variant must be one of "
                          "constant/fista/prule/online")
    out = {"variant": variant, "gamma": d.get("gamma"),
           "gamma_scale": d.get("gamma_scale", 1.0),
           "error": None, "restart": None, "name": d.get("name")}
    if variant == "constant":
        out["a"] = float(d.get("a", 0.0))
        out["b"] = float(d.get("b", 0.0))
    elif variant == "fista":
        out["q"] = float(d.get("q", 50.0))
    elif variant == "prule":
        out["p"] = float(d.get("p", 4.0))
    else:
        out["a"] = float(d.get("a", 0.0))
        out["b"] = float(d.get("b", 0.0))
        out["coeff"] = float(d.get("coeff", 1e5))
    if d.get("error") is not None:
        e = d["error"]
        _check_keys(e, {"family", "coeff", "power", "seed"}, where + ".error")
        if e.get("family", "powerlaw") != "powerlaw":
            raise ConfigError(f"{where}.error: only the powerlaw family is "
                              "configurable")
        out["error"] = {"family": "powerlaw", "coeff": float(e.get("coeff", 1.0)),
                        "power": float(e.get("power", 3.0)),
                        "seed": int(e.get("seed", 0))}
    if d.get("restart") is not None:
        r = d["restart"]
        _check_keys(r, {"kind", "period"}, where + ".restart")
        out["restart"] = {"kind": r.get("kind", "objective"),
                          "period": int(r.get("period", 0))}
    return out


def _normalize_stop(d, where="stop"):
    _check_keys(d, {"max_iter", "step_tol", "err_tol"}, where)
    return {"max_iter": int(d.get("max_iter", 50_000)),
            "step_tol": float(d.get("step_tol", 1e-12)),
            "err_tol": d.get("err_tol")}


# ---------------------------------------------------------------------------
# object builders


def _build_problem(norm, cli_seed=None):
    """Returns (problem, instance_spec_or_None)."""
    if "preset" in norm:
        spec = PRESETS[norm["preset"]]
        if cli_seed is not None:
            spec = replace(spec, seed=int(cli_seed))
        problem, _ = gen_instance(spec)
        return problem, spec
    if "instance" in norm:
        d = dict(norm["instance"])
        if cli_seed is not None:
            d["seed"] = int(cli_seed)
        spec = InstanceSpec(**d)
        problem, _ = gen_instance(spec)
        return problem, spec
    f = norm["files"]
    op_cfg = f["op"]
    kind = op_cfg.get("kind")
    if kind == "dense":
        op = load_dense_csv(op_cfg["path"])
    elif kind == "identity":
        op = IdentityOp(int(op_cfg["n"]))
    elif kind == "conv":
        op = CircularConvOp(load_vector_csv(op_cfg["kernel"]), int(op_cfg["n"]))
    else:
        raise ConfigError("files.op.kind must be dense/identity/conv")
    y = load_vector_csv(f["y"])
    smooth = SmoothTerm(op, y, beta=f.get("beta"))
    try:
        reg = regularizer_from_config(f["regularizer"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad regularizer config: {exc}") from exc
    return Problem(smooth, reg), None


def _build_schedule(norm):
    kw = {"gamma": norm["gamma"], "gamma_scale": norm["gamma_scale"]}
    if norm["error"] is not None:
        e = norm["error"]
        kw["error"] = PowerLawError(e["coeff"], e["power"], e["seed"])
    try:
        if norm["variant"] == "constant":
            sched = ConstantSchedule(norm["a"], norm["b"], **kw)
        elif norm["variant"] == "fista":
            sched = FistaSchedule(norm["q"], **kw)
        elif norm["variant"] == "prule":
            sched = PRuleSchedule(norm["p"], **kw)
        else:
            sched = OnlineSchedule(norm["a"], norm["b"], norm["coeff"], **kw)
    except ValueError as exc:
        raise ConfigError(f"bad schedule: {exc}") from exc
    restart = None
    if norm["restart"] is not None:
        restart = RestartRule(norm["restart"]["kind"], norm["restart"]["period"])
    return sched, restart


def _schedule_filename(norm, index):
    name = norm.get("name") or f"{norm['variant']}_{index}"
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def _out_dir(cfg, args):
    out = args.out or cfg.get("out") or "fbkit_out"
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(args):
    raw = _load_config(args.config)
    _check_keys(raw, {"problem", "schedule", "stop", "out", "seed", "figures"},
                "config")
    if args.preset:
        raw.setdefault("problem", {})["preset"] = args.preset
    if "problem" not in raw:
        raise ConfigError("solve needs a problem (config or --preset)")
    eff = {
        "problem": _normalize_problem(raw["problem"]),
        "schedule": _normalize_schedule(raw.get("schedule",
                                                {"variant": "constant"})),
        "stop": _normalize_stop(raw.get("stop", {})),
        "seed": args.seed if args.seed is not None else raw.get("seed"),
        "figures": bool(raw.get("figures", True)),
    }
    out = _out_dir(raw, args)
    eff["out"] = out
    problem, _spec = _build_problem(eff["problem"], eff["seed"])
    schedule, restart = _build_schedule(eff["schedule"])
    stop = StoppingRule(eff["stop"]["max_iter"], eff["stop"]["step_tol"],
                        eff["stop"]["err_tol"])
    _write_json(os.path.join(out, "effective_config.json"), eff)
    try:
        trace = run(problem, schedule, stop=stop, restart=restart)
    except DivergenceError as exc:
        _write_text(os.path.join(out, "trace.csv"), exc.trace.to_csv_text())
        _write_json(os.path.join(out, "summary.json"),
                    {"stop_reason": "diverged", "iterations": len(exc.trace) - 1})
        print(f"diverged; partial trace in {out}", file=sys.stderr)
        return 2
    _write_text(os.path.join(out, "trace.csv"), trace.to_csv_text())
    summary = {
        "schedule": trace.meta["schedule"],
        "gamma": trace.meta["gamma"],
        "beta": trace.meta["beta"],
        "iterations": len(trace) - 1,
        "stop_reason": trace.meta["stop_reason"],
        "final_objective": trace.obj[-1],
        "final_step_norm": trace.step_norm[-1],
        "final_signature": trace.sig_desc(len(trace) - 1),
        "error_schedule_ok": check_error_schedule(schedule),
    }
    if isinstance(schedule, ConstantSchedule):
        summary["unconditional_margin"] = unconditional_margin(
            schedule.a, schedule.b, trace.meta["gamma"], trace.meta["beta"])
    _write_json(os.path.join(out, "summary.json"), summary)
    if eff["figures"]:
        _write_figure(lambda p: plots.solve_profile_figure(
            trace, p, title=trace.meta["schedule"]),
            os.path.join(out, "solve_profile.png"))
    print(f"wrote trace.csv, summary.json to {out}")
    return 0


def cmd_rates(args):
    raw = _load_config(args.config)
    _check_keys(raw, {"problem", "rates", "out", "seed", "figures"}, "config")
    if args.preset:
        raw.setdefault("problem", {})["preset"] = args.preset
    rcfg = raw.get("rates", {})
    _check_keys(rcfg, {"a", "b", "gamma", "gamma_scale", "eta_bar",
                       "curve_points", "region"}, "rates")
    eff = {
        "rates": {
            "a": float(rcfg.get("a", 0.0)),
            "b": float(rcfg.get("b", 0.0)),
            "gamma": rcfg.get("gamma"),
            "gamma_scale": float(rcfg.get("gamma_scale", 1.0)),
            "eta_bar": rcfg.get("eta_bar"),
            "curve_points": int(rcfg.get("curve_points", 101)),
            "region": rcfg.get("region"),
        },
        "seed": args.seed if args.seed is not None else raw.get("seed"),
        "figures": bool(raw.get("figures", True)),
    }
    out = _out_dir(raw, args)
    eff["out"] = out
    a, b = eff["rates"]["a"], eff["rates"]["b"]
    report_dict = None
    eta_bar = eff["rates"]["eta_bar"]
    if "problem" in raw:
        eff["problem"] = _normalize_problem(raw["problem"])
        problem, _spec = _build_problem(eff["problem"], eff["seed"])
        x_star, sig_star = reference_solution(problem)
        gamma = (eff["rates"]["gamma"] if eff["rates"]["gamma"] is not None
                 else eff["rates"]["gamma_scale"] * problem.smooth.beta)
        rm = build_restricted(problem, x_star, sig_star, gamma)
        rep = rate_report(rm, a, b)
        report_dict = rep.to_dict()
        if eta_bar is None:
            eta_bar = max(rep.eta_max, 0.0)
    if eta_bar is None:
        raise ConfigError("rates needs a problem or an explicit eta_bar")
    _write_json(os.path.join(out, "effective_config.json"), eff)
    if report_dict is not None:
        _write_json(os.path.join(out, "rate_report.json"), report_dict)
    grid = np.linspace(0.0, 1.0, eff["rates"]["curve_points"])
    pairs = rate_curve(float(eta_bar), grid)
    lines = ["a,rho"] + [f"{a_:.17g},{r:.17g}" for a_, r in pairs]
    _write_text(os.path.join(out, "rate_curve.csv"), "\n".join(lines) + "\n")
    a_opt, rho_opt = optimal_inertia(float(eta_bar))
    if eff["figures"]:
        _write_figure(lambda p: plots.rate_curve_figure(pairs, a_opt, rho_opt, p),
                      os.path.join(out, "rate_curve.png"))
    if eff["rates"]["region"]:
        reg = eff["rates"]["region"]
        _check_keys(reg, {"gammas", "tau", "grid"}, "rates.region")
        counts = {}
        for g in reg.get("gammas", [1.0, 1.25]):
            cells = region_map(float(g), float(reg.get("tau", 0.01)),
                               np.linspace(0, 1, int(reg.get("grid", 201))),
                               np.linspace(0, 1, int(reg.get("grid", 201))))
            name = f"region_gamma{g:g}.csv"
            _write_region_csv(os.path.join(out, name), cells)
            counts[str(g)] = sum(1 for c in cells if c[3])
        _write_json(os.path.join(out, "region_counts.json"), counts)
    print(f"wrote rate_curve.csv to {out}")
    return 0


def _write_region_csv(path, cells):
    lines = ["a,b,branch,feasible"]
    lines += [f"{a:.17g},{b:.17g},{br},{int(fe)}" for a, b, br, fe in cells]
    _write_text(path, "\n".join(lines) + "\n")


def cmd_region(args):
    raw = _load_config(args.config)
    _check_keys(raw, {"region", "out", "figures"}, "config")
    rcfg = raw.get("region", {})
    _check_keys(rcfg, {"gamma_over_beta", "tau", "grid"}, "region")
    eff = {"region": {"gamma_over_beta": float(rcfg.get("gamma_over_beta", 1.0)),
                      "tau": float(rcfg.get("tau", 0.01)),
                      "grid": int(rcfg.get("grid", 201))},
           "figures": bool(raw.get("figures", True))}
    out = _out_dir(raw, args)
    eff["out"] = out
    grid = np.linspace(0.0, 1.0, eff["region"]["grid"])
    cells = region_map(eff["region"]["gamma_over_beta"], eff["region"]["tau"],
                       grid, grid)
    _write_json(os.path.join(out, "effective_config.json"), eff)
    _write_region_csv(os.path.join(out, "region.csv"), cells)
    _write_json(os.path.join(out, "region_summary.json"),
                {"feasible_cells": sum(1 for c in cells if c[3]),
                 "total_cells": len(cells)})
    if eff["figures"]:
        _write_figure(lambda p: plots.region_figure(cells, grid, grid, p),
                      os.path.join(out, "region.png"))
    print(f"wrote region.csv to {out}")
    return 0


def _default_schedules():
    return [
        {"variant": "constant", "a": 0.0, "b": 0.0, "name": "fb"},
        {"variant": "constant", "a": _IFB_A, "b": _IFB_A, "name": "ifb"},
        {"variant": "fista", "q": 2.0, "name": "fista_q2"},
        {"variant": "fista", "q": 50.0, "name": "fista_q50"},
    ]


def cmd_experiment(args):
    if args.list_presets:
        for name, spec in PRESETS.items():
            print(f"{name}: {spec.to_dict()}")
        return 0
    raw = _load_config(args.config)
    _check_keys(raw, {"problem", "schedules", "stop", "burn_in", "out",
                      "seed", "figures", "workers"}, "config")
    if args.preset:
        raw.setdefault("problem", {})["preset"] = args.preset
    if "problem" not in raw:
        raise ConfigError("experiment needs a problem (config or --preset)")
    eff = {
        "problem": _normalize_problem(raw["problem"]),
        "schedules": [_normalize_schedule(s, f"schedules[{i}]")
                      for i, s in enumerate(raw.get("schedules",
                                                    _default_schedules()))],
        "stop": _normalize_stop(raw.get("stop",
                                        {"max_iter": 30_000, "step_tol": 1e-15})),
        "burn_in": int(raw.get("burn_in", 10)),
        "seed": args.seed if args.seed is not None else raw.get("seed"),
        "figures": bool(raw.get("figures", True)),
        "workers": raw.get("workers"),
    }
    out = _out_dir(raw, args)
    eff["out"] = out
    problem, spec = _build_problem(eff["problem"], eff["seed"])
    built = [_build_schedule(s) for s in eff["schedules"]]
    if len({r is not None for _, r in built}) > 1:
        raise ConfigError("mixing restarted and plain schedules in one "
                          "experiment is not supported")
    restart = built[0][1]
    schedules = [s for s, _ in built]
    stop = StoppingRule(eff["stop"]["max_iter"], eff["stop"]["step_tol"],
                        eff["stop"]["err_tol"])
    _write_json(os.path.join(out, "effective_config.json"), eff)
    x_star, sig_star = reference_solution(problem)
    reports = compare(problem, schedules, x_star, sig_star, instance=spec,
                      stop=stop, burn_in=eff["burn_in"],
                      workers=eff["workers"], restart=restart)
    _write_json(os.path.join(out, "report.json"),
                [r.to_dict() for r in reports])
    series = []
    predictions = []
    for i, (norm, rep) in enumerate(zip(eff["schedules"], reports)):
        name = _schedule_filename(norm, i)
        tr = rep.trace
        ks = np.asarray(tr.k)
        errs = tr.err_array()
        keep = errs > 0
        lines = ["k,err"] + [f"{int(k)},{e:.17g}"
                             for k, e in zip(ks[keep], errs[keep])]
        _write_text(os.path.join(out, f"{name}_observed.csv"),
                    "\n".join(lines) + "\n")
        k_obs = rep.identification["K_observed"]
        if k_obs is not None:
            err_k = float(errs[list(ks).index(k_obs)])
            _write_text(
                os.path.join(out, f"{name}_predicted.csv"),
                "K,err_K,rho,log_slope\n"
                f"{k_obs},{err_k:.17g},{rep.predicted_factor:.17g},"
                f"{rep.predicted_slope:.17g}\n")
            series.append((name, ks[keep], errs[keep]))
            predictions.append((name, k_obs, err_k, rep.predicted_factor))
        else:
            series.append((name, ks[keep], errs[keep]))
    if eff["figures"]:
        _write_figure(lambda p: plots.convergence_figure(series, predictions, p),
                      os.path.join(out, "experiment.png"))
    print(f"wrote report.json and per-schedule series to {out}")
    return 0


def cmd_bounds(args):
    raw = _load_config(args.config)
    _check_keys(raw, {"problem", "c", "out"}, "config")
    if args.preset:
        raw.setdefault("problem", {})["preset"] = args.preset
    if "problem" not in raw:
        raise ConfigError("bounds needs a problem (config or --preset)")
    eff = {"problem": _normalize_problem(raw["problem"]),
           "c": float(raw.get("c", 1.1))}
    out = _out_dir(raw, args)
    eff["out"] = out
    if "files" in eff["problem"]:
        raise ConfigError("bounds needs an instance or preset problem")
    if "preset" in eff["problem"]:
        spec = PRESETS[eff["problem"]["preset"]]
    else:
        spec = InstanceSpec(**eff["problem"]["instance"])
    params = {"s": spec.complexity, "n": spec.n,
              "n_blocks": spec.n // spec.block_size if spec.block_size else 0,
              "r": spec.complexity, "n1": spec.n1, "n2": spec.n2}
    result = {"kind": spec.kind, "m_actual": spec.m, "c": eff["c"]}
    try:
        result["m_required"] = required_measurements(spec.kind, params, eff["c"])
        result["supported"] = True
        result["satisfied"] = spec.m >= result["m_required"]
    except ValueError as exc:
        result["supported"] = False
        result["note"] = str(exc)
    _write_json(os.path.join(out, "effective_config.json"), eff)
    _write_json(os.path.join(out, "bounds.json"), result)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fbkit",
        description="inertial forward-backward solvers with identification "
                    "and local rate prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in [("solve", cmd_solve), ("rates", cmd_rates),
                     ("region", cmd_region), ("experiment", cmd_experiment),
                     ("bounds", cmd_bounds)]:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the instance seed")
        p.add_argument("--preset", default=None,
                       help=f"stock instance: {', '.join(PRESETS)}")
        if name == "experiment":
            p.add_argument("--list-presets", action="store_true")
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
