"""Command-line interface: ``olahgp {scenario,run,compare,plan,render}``.

Settings are resolved as built-in defaults, then the ``--config`` JSON file,
then command-line flags (highest precedence).  On failure a JSON error record
is written to stderr (and to ``OUT/error.json`` when ``--out`` is given) and
the exit status is nonzero: 2 for usage errors, 1 for runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config

logger = logging.getLogger("olahgp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, out_required: bool = True):
    p.add_argument("--config", metavar="PATH", help="JSON config file, or the name of a bundled one (bundled, smoke)")
    p.add_argument("--seed", type=int, metavar="N", help="scenario seed (overrides scenario.seed)")
    p.add_argument("--out", metavar="DIR", required=out_required, help="output directory")


def _planner_flags(p: argparse.ArgumentParser):
    p.add_argument("--planner", choices=("olah", "greedy", "static"), help="planner kind (overrides planner.kind)")
    p.add_argument("--horizon", type=int, metavar="N",
                   help="waypoints per plan: horizon_n for olah, n_static for static")
    p.add_argument("--variance-mode", choices=("exact", "bcm"), help="look-ahead variance used by the planner")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="olahgp", description="Online look-ahead GP path planning for threshold mapping.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", metavar="{scenario,run,compare,plan,render}", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("scenario", help="write ground truth, corrupted prior and resolved config")
    _common(p)

    p = sub.add_parser("run", help="simulate one mission and write its log")
    _common(p)
    _planner_flags(p)
    p.add_argument("--steps", type=int, metavar="N", help="number of measurements (overrides scenario.n_steps)")
    p.add_argument("--timing", action="store_true", help="record wall-clock timings (logs are then not reproducible)")

    p = sub.add_parser("compare", help="multi-seed comparison of planners, writes CSVs")
    _common(p)
    p.add_argument("--steps", type=int, metavar="N", help="number of measurements per mission")
    p.add_argument("--variance-mode", choices=("exact", "bcm"), help="look-ahead variance used by the planners")
    p.add_argument("--n-seeds", type=int, metavar="N", help="seeds per method (overrides experiment.n_seeds)")
    p.add_argument("--methods", metavar="LIST", help="comma list of kind:horizon, e.g. olah:5,greedy:1,static:20")
    p.add_argument("--workers", type=int, metavar="N", help="parallel missions (capped by OLAHGP_THREADS)")
    p.add_argument("--timing", action="store_true", help="record wall-clock timings (CSVs are then not reproducible)")

    p = sub.add_parser("plan", help="solve one planning problem on the prior belief at the start")
    _common(p)
    _planner_flags(p)

    p = sub.add_parser("render", help="render a mission log or FGRID file as a PPM heatmap")
    p.add_argument("input", help="mission log (.jsonl) or FGRID field")
    p.add_argument("--style", required=True, help="one of: " + ", ".join(("mean", "var", "p", "class-error", "path-overlay")))
    p.add_argument("--out", required=True, metavar="IMAGE", help="output .ppm path")
    p.add_argument("--step", type=int, metavar="K", help="render the belief after K+1 measurements (default: all)")
    return ap


def _overrides(args) -> dict:
    sc, pl, ex = {}, {}, {}
    if getattr(args, "seed", None) is not None:
        sc["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        sc["n_steps"] = args.steps
    if getattr(args, "variance_mode", None) is not None:
        pl["variance_mode"] = args.variance_mode
    kind = getattr(args, "planner", None)
    if kind is not None:
        pl["kind"] = kind
    if getattr(args, "n_seeds", None) is not None:
        ex["n_seeds"] = args.n_seeds
    if getattr(args, "seed", None) is not None and args.command == "compare":
        ex["seed0"] = args.seed
    if getattr(args, "methods", None):
        ex["methods"] = _parse_methods(args.methods)
    if getattr(args, "workers", None) is not None:
        ex["workers"] = args.workers
    out = {}
    for key, d in (("scenario", sc), ("planner", pl), ("experiment", ex)):
        if d:
            out[key] = d
    return out


def _parse_methods(text: str) -> list:
    out = []
    for item in text.split(","):
        kind, _, h = item.strip().partition(":")
        if kind not in ("olah", "greedy", "static") or not h.isdigit():
            raise UsageError(f"bad method {item!r}; expected kind:horizon")
        out.append([kind, int(h)])
    return out


def _config(args) -> dict:
    cfg = load_config(args.config, _overrides(args))
    h = getattr(args, "horizon", None)
    if h is not None:
        if h < 1:
            raise UsageError("--horizon must be >= 1")
        kind = cfg["planner"]["kind"]
        if kind == "static":
            cfg["planner"]["n_static"] = h
        elif kind == "olah":
            cfg["planner"]["horizon_n"] = h
        elif h != 1:
            raise UsageError("greedy planning has horizon 1")
    return cfg


def _horizon(cfg) -> int:
    kind = cfg["planner"]["kind"]
    return {"olah": cfg["planner"]["horizon_n"], "greedy": 1, "static": cfg["planner"]["n_static"]}[kind]


# -- commands ------------------------------------------------------------------------

def cmd_scenario(args) -> dict:
    from .fgrid import write_fgrid
    from .mission import make_scenario, scenario_from_config

    cfg = _config(args)
    sc = make_scenario(scenario_from_config(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    side = sc.cfg.grid.side_s
    write_fgrid(out / "truth.fgrid", sc.truth.values, side)
    write_fgrid(out / "prior.fgrid", sc.prior.values, side)
    info = {"config": cfg, "mean_abs_prior_error": float(np.mean(np.abs(sc.prior.values - sc.truth.values)))}
    (out / "scenario.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return {"out": str(out)}


def cmd_run(args) -> dict:
    from .mission import run_from_config

    cfg = _config(args)
    log = run_from_config(cfg, cfg["planner"]["kind"], _horizon(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "mission.jsonl"
    log.write(path, timing=args.timing)
    s = log.summary()
    return {"log": str(path), "final_total_p": s["final_total_p"], "final_binary_rate": s["final_binary_rate"],
            "n_failures": s["n_failures"]}


def cmd_compare(args) -> dict:
    from .experiment import ComparisonSpec, format_timing_table, run_comparison

    cfg = _config(args)
    spec = ComparisonSpec.from_config(cfg, out_dir=args.out, timing=args.timing)
    res = run_comparison(spec)
    sys.stderr.write(format_timing_table(res.stats.timing))
    finals = {lab: {"mean": st[-1].mean, "stderr": st[-1].stderr} for lab, st in res.stats.steps.items() if st}
    return {"out": args.out, "final_total_p": finals, "n_failures": len(res.stats.failures)}


def cmd_plan(args) -> dict:
    from .gp_field import empty_model
    from .mission import make_scenario, planner_from_config, scenario_from_config, weights_from_config
    from .planner import greedy_plan, solve_ocp, static_plan

    cfg = _config(args)
    scfg = scenario_from_config(cfg)
    sc = make_scenario(scfg)
    model = empty_model(sc.prior, scfg.kernel)
    pcfg = planner_from_config(cfg, scfg.grid)
    w = weights_from_config(cfg)
    kind = cfg["planner"]["kind"]
    r0 = np.asarray(scfg.start, dtype=float)
    if kind == "olah":
        plan = solve_ocp(model, pcfg, w, r0, scfg.forcing)
    elif kind == "greedy":
        plan = greedy_plan(model, pcfg, w, r0, scfg.forcing)
    else:
        plan = static_plan(model, w, r0, cfg["planner"]["n_static"], pcfg, scfg.forcing,
                           cfg["planner"]["scale_static_budget"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rec = {
        "planner": kind,
        "start": r0.tolist(),
        "waypoints": plan.waypoints.tolist(),
        "objective": plan.objective,
        "initial_objective": plan.initial_objective,
        "path_len": plan.path_len,
        "iterations": plan.iterations,
        "converged": plan.converged,
        "kkt": plan.kkt,
    }
    (out / "plan.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    return {"plan": str(out / "plan.json"), "objective": plan.objective}


def _belief_from_log(path, step):
    from .gp_field import Measurement, fit, posterior_field
    from .mission import evaluate, make_scenario, read_log, scenario_from_config

    steps, summary = read_log(path)
    cfg = summary["meta"].get("config")
    if cfg is None:
        raise ValueError(f"{path}: summary record carries no config")
    sc = make_scenario(scenario_from_config(cfg, summary["seed"]))
    upto = steps if step is None else steps[: step + 1]
    data = [Measurement(tuple(s["position"]), s["value"], s["noise_sd"]) for s in upto]
    model = fit(sc.prior, sc.cfg.kernel, data)
    fields = posterior_field(model, sc.cfg.grid, "eval")
    met = evaluate(model, sc.truth, sc.cfg.gamma, fields=fields)
    return sc, fields, met, np.array([s["position"] for s in upto])


def cmd_render(args) -> dict:
    from . import render

    style = args.style
    if style not in render.STYLES:
        raise UsageError(f"unknown style {style!r}; choose from {', '.join(render.STYLES)}")
    src = Path(args.input)
    if src.suffix == ".jsonl":
        sc, (mean, var), met, path = _belief_from_log(src, args.step)
        if style == "class-error":
            img = render.class_error_image(met.class_model, met.class_truth)
            lo, hi = 0.0, 1.0
        else:
            vals = {"mean": mean, "var": var, "p": met.p_map, "path-overlay": met.p_map}[style]
            img, lo, hi = render.heatmap(vals, 0.0 if style in ("p", "path-overlay") else None,
                                         0.5 if style in ("p", "path-overlay") else None)
            if style == "path-overlay":
                img = render.overlay_path(img, path, sc.cfg.grid.side_s, sc.cfg.grid.res_eval)
    else:
        from .fgrid import read_fgrid

        if style != "mean":
            raise UsageError(f"style {style!r} needs a mission log; an FGRID renders with style mean")
        values, _ = read_fgrid(src)
        img, lo, hi = render.heatmap(values)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    render.write_ppm(out, img)
    side = render.write_sidecar(out, style, lo, hi)
    return {"image": str(out), "range": str(side)}


COMMANDS = {"scenario": cmd_scenario, "run": cmd_run, "compare": cmd_compare, "plan": cmd_plan, "render": cmd_render}


def _error_record(exc: BaseException, command, status: int) -> dict:
    return {"status": "error", "exit_code": status, "command": command,
            "error": type(exc).__name__, "message": str(exc)}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        result = COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        err, status = exc, 2
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable record
        err, status = exc, 1
    else:
        print(json.dumps({"status": "ok", "command": args.command, **result}, sort_keys=True))
        return 0
    rec = _error_record(err, getattr(args, "command", None), status)
    if status == 2:
        parser.print_usage(sys.stderr)
    sys.stderr.write(json.dumps(rec, sort_keys=True) + "\n")
    out = getattr(args, "out", None)
    if out and getattr(args, "command", None) != "render":
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
        except OSError:
            pass
    return status


if __name__ == "__main__":
    sys.exit(main())
