"""Multi-seed comparison harness with CSV output.

Every method sees the same scenario for a given seed (paired design), so
per-step cost differences between methods can be compared seed by seed.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import dump_config
from .mission import run_from_config

logger = logging.getLogger(__name__)

RUN_COLUMNS = ("method", "seed", "step", "total_p", "binary_rate", "path_len_cum",
               "gpupdate_ms", "setup_s", "solve_s", "iters", "converged")
TIMING_COLUMNS = ("gpupdate_ms", "setup_s", "solve_s", "iterations")
SUMMARY_COLUMNS = ("method", "step", "n", "mean", "std", "stderr")


@dataclass
class ComparisonSpec:
    config: dict
    methods: list[tuple[str, int]]
    n_seeds: int = 10
    out_dir: Path | None = None
    seed0: int = 0
    seeds_per_method: dict[str, int] = field(default_factory=dict)
    workers: int | None = None
    timing: bool = False

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if not self.methods:
            raise ValueError("need at least one method")
        self.methods = [(str(k), int(h)) for k, h in self.methods]

    @classmethod
    def from_config(cls, cfg: dict, out_dir=None, **kw) -> "ComparisonSpec":
        ex = cfg["experiment"]
        args = dict(methods=ex["methods"], n_seeds=int(ex["n_seeds"]), seed0=int(ex["seed0"]),
                    seeds_per_method=dict(ex["seeds_per_method"]), workers=ex["workers"])
        args.update({k: v for k, v in kw.items() if v is not None})
        return cls(cfg, out_dir=None if out_dir is None else Path(out_dir), **args)

    def seeds(self, label: str) -> list[int]:
        n = int(self.seeds_per_method.get(label, self.n_seeds))
        return list(range(self.seed0, self.seed0 + n))


def method_label(kind: str, horizon: int) -> str:
    return f"{kind}-{horizon}"


@dataclass(frozen=True)
class Stat:
    n: int
    mean: float
    std: float
    stderr: float | None

    @classmethod
    def of(cls, values) -> "Stat":
        v = np.asarray(values, dtype=float)
        n = len(v)
        if n == 0:
            return cls(0, math.nan, math.nan, None)
        std = float(np.std(v, ddof=1)) if n > 1 else 0.0
        return cls(n, float(np.mean(v)), std, std / math.sqrt(n) if n > 1 else None)


@dataclass
class SummaryStats:
    """Per-method, per-step statistics of ``total_p`` plus the timing table."""

    steps: dict[str, list[Stat]]
    timing: dict[str, dict[str, Stat]]
    failures: list[dict] = field(default_factory=list)

    def final(self, label: str) -> Stat:
        return self.steps[label][-1]


@dataclass
class ComparisonResult:
    stats: SummaryStats
    rows: list[dict]
    logs: dict[tuple[str, int], str]

    def final_costs(self, label: str) -> dict[int, float]:
        out = {}
        for r in self.rows:
            if r["method"] == label:
                out[r["seed"]] = r["total_p"]  # the last step wins
        return out

    def paired_difference(self, a: str, b: str) -> Stat:
        """Statistics of ``final(a) - final(b)`` over seeds both methods completed."""
        fa, fb = self.final_costs(a), self.final_costs(b)
        common = sorted(set(fa) & set(fb))
        return Stat.of([fa[s] - fb[s] for s in common])


# -- execution ----------------------------------------------------------------------

def _run_one(cfg: dict, kind: str, horizon: int, seed: int, timing: bool):
    label = method_label(kind, horizon)
    try:
        log = run_from_config(cfg, kind, horizon, seed)
    except Exception as exc:  # recorded and excluded from the statistics
        return label, seed, None, None, f"{type(exc).__name__}: {exc}"
    rows = []
    for s in log.steps:
        rows.append({
            "method": label,
            "seed": seed,
            "step": s.step,
            "total_p": s.total_p,
            "binary_rate": s.binary_rate,
            "path_len_cum": s.path_len_cum,
            "gpupdate_ms": s.gpupdate_ms if timing else math.nan,
            "setup_s": s.setup_s if timing else math.nan,
            "solve_s": s.solve_s if timing else math.nan,
            "iters": s.iterations,
            "converged": s.converged,
        })
    return label, seed, rows, log.to_jsonl(timing), None


def worker_count(requested: int | None, n_jobs: int) -> int:
    cap = os.environ.get("OLAHGP_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, min(n, n_jobs))


def run_comparison(spec: ComparisonSpec) -> ComparisonResult:
    """Run every (method, seed) mission, aggregate, and write CSVs if ``out_dir`` is set."""
    jobs = [(kind, h, seed) for kind, h in spec.methods for seed in spec.seeds(method_label(kind, h))]
    n_workers = worker_count(spec.workers, len(jobs))
    if n_workers == 1:
        results = [_run_one(spec.config, k, h, s, spec.timing) for k, h, s in jobs]
    else:
        with ProcessPoolExecutor(n_workers) as pool:
            futs = [pool.submit(_run_one, spec.config, k, h, s, spec.timing) for k, h, s in jobs]
            results = [f.result() for f in futs]
    rows, logs, failures = [], {}, []
    for label, seed, r, text, err in results:  # job order, independent of completion order
        if err is not None:
            logger.error("%s seed %d failed: %s", label, seed, err)
            failures.append({"method": label, "seed": seed, "error": err})
            continue
        rows.extend(r)
        logs[(label, seed)] = text
    labels = [method_label(k, h) for k, h in spec.methods]
    stats = summarize(rows, labels)
    stats.failures = failures
    result = ComparisonResult(stats, rows, logs)
    if spec.out_dir is not None:
        write_outputs(spec, result)
    return result


def summarize(rows: list[dict], labels: list[str]) -> SummaryStats:
    steps, timing = {}, {}
    for label in labels:
        mine = [r for r in rows if r["method"] == label]
        n_steps = max((r["step"] for r in mine), default=-1) + 1
        steps[label] = [Stat.of([r["total_p"] for r in mine if r["step"] == t]) for t in range(n_steps)]
        timing[label] = timing_table_rows(mine)
    return SummaryStats(steps, timing)


def timing_table_rows(rows: list[dict]) -> dict[str, Stat]:
    """Mean and std of each timing column over the steps where it applies."""
    def finite(col):
        return [r[col] for r in rows if r[col] is not None and math.isfinite(r[col])]

    # iterations count only where a solve happened
    solved = [r for r in rows if r["converged"] is not None]
    return {
        "gpupdate_ms": Stat.of(finite("gpupdate_ms")),
        "setup_s": Stat.of(finite("setup_s")),
        "solve_s": Stat.of(finite("solve_s")),
        "iterations": Stat.of([r["iters"] for r in solved]),
    }


def timing_table(logs) -> dict[str, dict[str, Stat]]:
    """Table of solver statistics from mission logs, keyed by method label."""
    out: dict[str, list[dict]] = {}
    for log in logs:
        label = method_label(log.kind, log.horizon)
        out.setdefault(label, []).extend(
            {"gpupdate_ms": s.gpupdate_ms, "setup_s": s.setup_s, "solve_s": s.solve_s,
             "iters": s.iterations, "converged": s.converged}
            for s in log.steps
        )
    return {k: timing_table_rows(v) for k, v in out.items()}


def format_timing_table(table: dict[str, dict[str, Stat]]) -> str:
    head = ["method", *TIMING_COLUMNS]
    body = []
    for label, cols in table.items():
        cells = [label]
        for c in TIMING_COLUMNS:
            s = cols[c]
            cells.append("n/a" if s.n == 0 else f"{s.mean:.4g} ± {s.std:.2g}")
        body.append(cells)
    widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [head, *body]) + "\n"


# -- CSV ------------------------------------------------------------------------------

def _cell(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _float(s: str):
    return None if s == "" else float(s)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(x) for x in r])
    return buf.getvalue()


def runs_csv(rows: list[dict]) -> str:
    return _csv(RUN_COLUMNS, ([r[c] for c in RUN_COLUMNS] for r in rows))


def parse_runs_csv(text: str) -> list[dict]:
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        conv = r["converged"]
        out.append({
            "method": r["method"],
            "seed": int(r["seed"]),
            "step": int(r["step"]),
            **{c: (_float(r[c]) if r[c] != "" else math.nan)
               for c in ("total_p", "binary_rate", "path_len_cum", "gpupdate_ms", "setup_s", "solve_s")},
            "iters": int(r["iters"]),
            "converged": None if conv == "" else conv == "true",
        })
    return out


def summary_csv(stats: SummaryStats) -> str:
    return _csv(SUMMARY_COLUMNS, ((label, t, s.n, s.mean, s.std, s.stderr)
                                  for label, ss in stats.steps.items() for t, s in enumerate(ss)))


def timing_csv(timing: dict[str, dict[str, Stat]]) -> str:
    return _csv(("method", "column", "n", "mean", "std"),
                ((label, c, cols[c].n, cols[c].mean, cols[c].std)
                 for label, cols in timing.items() for c in TIMING_COLUMNS))


def _stat_from(r) -> Stat:
    return Stat(int(r["n"]), _float(r["mean"]) if r["mean"] else math.nan,
                _float(r["std"]) if r["std"] else math.nan, _float(r.get("stderr", "")))


def parse_summary_csv(text: str) -> dict[str, list[Stat]]:
    out: dict[str, list[Stat]] = {}
    for r in csv.DictReader(io.StringIO(text)):
        out.setdefault(r["method"], []).append(_stat_from(r))
    return out


def parse_timing_csv(text: str) -> dict[str, dict[str, Stat]]:
    out: dict[str, dict[str, Stat]] = {}
    for r in csv.DictReader(io.StringIO(text)):
        st = _stat_from(r)
        out.setdefault(r["method"], {})[r["column"]] = Stat(st.n, st.mean, st.std, None)
    return out


def write_outputs(spec: ComparisonSpec, result: ComparisonResult) -> None:
    out = Path(spec.out_dir)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    (out / "runs.csv").write_text(runs_csv(result.rows))
    (out / "summary.csv").write_text(summary_csv(result.stats))
    (out / "timing.csv").write_text(timing_csv(result.stats.timing))
    (out / "timing.txt").write_text(format_timing_table(result.stats.timing))
    for (label, seed), text in sorted(result.logs.items()):
        (out / "logs" / f"{label}_seed{seed}.jsonl").write_text(text)
    labels = [method_label(k, h) for k, h in spec.methods]
    paired = {}
    for a in labels:
        for b in labels:
            if a < b:
                d = result.paired_difference(a, b)
                paired[f"{a} - {b}"] = {"n": d.n, "mean": d.mean, "stderr": d.stderr}
    meta = {
        "design": "paired: every method runs on the identical scenario for each seed",
        "methods": labels,
        "seeds": {lab: spec.seeds(lab) for lab in labels},
        "failures": result.stats.failures,
        "n_failures": len(result.stats.failures),
        "final_paired_differences": paired,
        "timing_recorded": spec.timing,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(dump_config(spec.config) + "\n")
