"""Run method x seed x capacity grids and write result bundles.

Bundle layout under ``output_dir``::

    config.resolved.ini
    metrics/<run>.json, metrics/<run>.csv
    logs/<run>.csv
    checkpoints/<run>.drft
    summary.csv, summary.json
    run_info.json            # timestamps and host; excluded from determinism
    failures.json            # only when a run failed
"""

from __future__ import annotations

import csv
import datetime
import json
import logging
import platform
import traceback
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..datagen import (DomainSequence, SyntheticConfig, generate_synthetic_stream, read_feature_store,
                       read_manifest, sequence_from_manifest)
from ..exceptions import ConfigError, DataWarning, InputError
from ..metrics import average_accuracy, backward_forgetting, metrics_report, write_report_csv, write_report_json
from ..model import save_checkpoint
from ..trainer import MethodConfig, RunLog, run_sequence
from . import svg
from .config import ExperimentConfig, ManifestBenchmark, dump_config

log = logging.getLogger(__name__)

SUMMARY_HEADER = ["method", "capacity", "runs", "AA_mean", "AA_std", "BWF_mean", "BWF_std"]


@dataclass(frozen=True)
class RunJob:
    method: MethodConfig
    seed: int
    capacity: int | None

    @property
    def run_id(self) -> str:
        cap = "" if self.capacity is None else f"__cap{self.capacity}"
        return f"{self.method.label}{cap}__seed{self.seed}"


def build_sequence(cfg: ExperimentConfig, seed: int) -> DomainSequence:
    bench = cfg.benchmark
    if isinstance(bench, SyntheticConfig):
        data_seed = seed if cfg.data_seed is None else cfg.data_seed
        return generate_synthetic_stream(replace(bench, seed=data_seed))
    if isinstance(bench, ManifestBenchmark):
        manifest = read_manifest(bench.manifest)
        features = read_feature_store(bench.features)
        order_seed = seed if bench.order_seed is None else bench.order_seed
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DataWarning)
            return sequence_from_manifest(manifest, features, bench.split_type, order_seed, bench.test_ratio)
    raise ConfigError("unsupported benchmark", field="kind")


def grid(cfg: ExperimentConfig) -> list[RunJob]:
    """Buffer-based methods run once per capacity; the rest once per seed."""
    jobs = []
    for method in cfg.methods:
        capacities = cfg.buffer_capacities if method.uses_buffer else (None,)
        for cap in capacities:
            for seed in cfg.seeds:
                jobs.append(RunJob(method, seed, cap))
    return jobs


def execute_run(cfg: ExperimentConfig, job: RunJob, out: Path) -> dict:
    """Train one grid cell and write its report, run log and checkpoint."""
    method = job.method.with_(seed=job.seed)
    if job.capacity is not None:
        method = method.with_(buffer_capacity=job.capacity)
    sequence = build_sequence(cfg, job.seed)
    run_log = RunLog(out / "logs" / f"{job.run_id}.csv", cfg.log_flush_every)
    matrix, state = run_sequence(sequence, method, log=run_log, return_state=True)
    run_log.flush()
    report = metrics_report(matrix, method.label, cfg.name, job.seed, capacity=job.capacity)
    write_report_json(report, out / "metrics" / f"{job.run_id}.json")
    write_report_csv(report, out / "metrics" / f"{job.run_id}.csv")
    save_checkpoint(state.params, out / "checkpoints" / f"{job.run_id}.drft")
    return report


def _safe_run(args):
    cfg, job, out = args
    try:
        return job, execute_run(cfg, job, out), None
    except Exception as exc:  # recorded in failures.json
        return job, None, "".join(traceback.format_exception_only(type(exc), exc)).strip()


def _std(values) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def summarize(reports: list[tuple[RunJob, dict]]) -> list[dict]:
    groups = defaultdict(list)
    for job, report in reports:
        groups[(job.method.label, job.capacity)].append((job, report))
    order = []
    for job, _ in reports:
        key = (job.method.label, job.capacity)
        if key not in order:
            order.append(key)
    rows = []
    for key in order:
        members = sorted(groups[key], key=lambda sr: sr[0].seed)
        aa = [r["AA"] for _, r in members]
        bwf = [r["BWF"] for _, r in members]
        rows.append({"method": key[0], "capacity": key[1], "runs": len(members),
                     "AA_mean": float(np.mean(aa)), "AA_std": _std(aa),
                     "BWF_mean": float(np.mean(bwf)), "BWF_std": _std(bwf),
                     "metrics_files": [f"metrics/{s.run_id}.json" for s, _ in members]})
    return rows


def _write_summary(rows, out: Path) -> None:
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for r in rows:
            writer.writerow([r["method"], "" if r["capacity"] is None else r["capacity"], r["runs"],
                             f"{r['AA_mean']:.2f}", f"{r['AA_std']:.2f}",
                             f"{r['BWF_mean']:.2f}", f"{r['BWF_std']:.2f}"])
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")


def _prepare(out: Path) -> None:
    for sub in ("metrics", "logs", "checkpoints"):
        (out / sub).mkdir(parents=True, exist_ok=True)


def _run_jobs(cfg, jobs, out: Path, workers: int):
    tasks = [(cfg, job, out) for job in jobs]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_safe_run, tasks))
    else:
        results = [_safe_run(t) for t in tasks]
    done = [(job, rep) for job, rep, err in results if err is None]
    failed = [{"run": job.run_id, "error": err} for job, _, err in results if err is not None]
    return done, failed


def _write_failures(out: Path, failed: list[dict]) -> None:
    path = out / "failures.json"
    if not failed:
        path.unlink(missing_ok=True)
        return
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(failed, fh, indent=2)
        fh.write("\n")
    for f in failed:
        log.error("run %s failed: %s", f["run"], f["error"])


def _write_run_info(out: Path, started, extra=None) -> None:
    info = {"started": started, "finished": datetime.datetime.now().isoformat(timespec="seconds"),
            "host": platform.node(), "python": platform.python_version()}
    info.update(extra or {})
    with open(out / "run_info.json", "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=2)
        fh.write("\n")


def run_experiment(cfg: ExperimentConfig, output_dir=None, workers: int | None = None) -> int:
    """Run the full grid; returns the process exit code (0 ok, 2 partial failure)."""
    started = datetime.datetime.now().isoformat(timespec="seconds")
    out = Path(output_dir or cfg.output_dir)
    _prepare(out)
    (out / "config.resolved.ini").write_text(dump_config(cfg), encoding="utf-8")
    jobs = grid(cfg)
    done, failed = _run_jobs(cfg, jobs, out, workers or cfg.workers)
    _write_summary(summarize(done), out)
    _write_failures(out, failed)
    _write_run_info(out, started, {"runs": len(jobs), "failed": len(failed)})
    return 2 if failed else 0


def buffer_sweep(cfg: ExperimentConfig, capacities, output_dir=None, workers: int | None = None) -> list[dict]:
    """Run the replay method across buffer capacities and write ``sweep.csv``.

    Duplicate capacities are dropped with a warning. Uses the config's first
    replay-based method, or plain ``drift`` with ``[training]`` defaults.
    """
    capacities = [int(c) for c in capacities]
    unique = list(dict.fromkeys(capacities))
    if len(unique) != len(capacities):
        warnings.warn(f"duplicate capacities dropped: {capacities} -> {unique}", DataWarning, stacklevel=2)
    if len(unique) < 2:
        raise ConfigError("a sweep needs at least two distinct capacities", field="buffer_capacities")
    if any(c < 0 for c in unique):
        raise ConfigError("capacities must be >= 0", field="buffer_capacities")
    drift = next((m for m in cfg.methods if m.uses_buffer), None)
    if drift is None:
        base = cfg.methods[0]
        drift = base.with_(method="drift", name="drift")
    sweep_cfg = replace(cfg, methods=(drift,), buffer_capacities=tuple(unique))
    out = Path(output_dir or cfg.output_dir)
    _prepare(out)
    started = datetime.datetime.now().isoformat(timespec="seconds")
    jobs = grid(sweep_cfg)
    done, failed = _run_jobs(sweep_cfg, jobs, out, workers or cfg.workers)
    by_cap = defaultdict(list)
    for job, rep in done:
        by_cap[job.capacity].append((job.seed, rep["AA"], rep["BWF"]))
    rows = []
    for cap in unique:
        for seed, aa, bwf in sorted(by_cap[cap]):
            rows.append({"capacity": cap, "seed": seed, "AA": aa, "BWF": bwf})
    for cap in unique:
        if by_cap[cap]:
            rows.append({"capacity": cap, "seed": "mean", "AA": float(np.mean([r[1] for r in by_cap[cap]])),
                         "BWF": float(np.mean([r[2] for r in by_cap[cap]]))})
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["capacity", "seed", "AA", "BWF"])
        for r in rows:
            writer.writerow([r["capacity"], r["seed"], repr(r["AA"]), repr(r["BWF"])])
    _write_failures(out, failed)
    _write_run_info(out, started, {"runs": len(jobs), "failed": len(failed)})
    return rows


def _series_name(report: dict) -> str:
    cap = report.get("capacity")
    return report["method"] if cap is None else f"{report['method']}@{cap}"


def emit_plot_data(results_dir) -> list[Path]:
    """AA-curve CSV + SVG line chart and final-AA CSV + SVG bar chart per benchmark."""
    results = Path(results_dir)
    paths = sorted((results / "metrics").glob("*.json")) if (results / "metrics").is_dir() else []
    if not paths:
        raise InputError(f"no metrics reports found under {results}")
    reports = [json.loads(p.read_text(encoding="utf-8")) for p in paths]
    plots = results / "plots"
    plots.mkdir(exist_ok=True)
    written = []
    by_bench = defaultdict(list)
    for r in reports:
        by_bench[r["benchmark"]].append(r)
    for bench, reps in sorted(by_bench.items()):
        reps.sort(key=lambda r: (_series_name(r), r["seed"]))
        curve_csv = plots / f"{bench}_aa_curve.csv"
        with open(curve_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["task", "method", "seed", "aa"])
            for r in reps:
                for t, aa in enumerate(r["aa_curve"], start=1):
                    writer.writerow([t, _series_name(r), r["seed"], repr(aa)])
        series, finals = {}, {}
        grouped = defaultdict(list)
        for r in reps:
            grouped[_series_name(r)].append(r)
        for name, group in grouped.items():
            curves = np.array([g["aa_curve"] for g in group])
            series[name] = [(t + 1, float(v)) for t, v in enumerate(curves.mean(axis=0))]
            finals[name] = float(np.mean([g["AA"] for g in group]))
        final_csv = plots / f"{bench}_final_aa.csv"
        with open(final_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "AA"])
            for name, v in finals.items():
                writer.writerow([name, f"{v:.2f}"])
        line_svg = plots / f"{bench}_aa_curve.svg"
        line_svg.write_text(svg.line_chart(series, f"Average accuracy over tasks ({bench})", "task",
                                           "AA (%)"), encoding="utf-8")
        bar_svg = plots / f"{bench}_final_aa.svg"
        bar_svg.write_text(svg.bar_chart(finals, f"Final average accuracy ({bench})", "AA (%)"),
                           encoding="utf-8")
        written += [curve_csv, line_svg, final_csv, bar_svg]
    return written


def recompute_summary_check(results_dir) -> float:
    """Largest gap between summary AA/BWF means and values recomputed from stored matrices."""
    results = Path(results_dir)
    rows = json.loads((results / "summary.json").read_text(encoding="utf-8"))
    worst = 0.0
    for row in rows:
        mats = [json.loads((results / f).read_text(encoding="utf-8"))["matrix"] for f in row["metrics_files"]]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DataWarning)
            aa = np.mean([average_accuracy(np.array(m)) for m in mats])
            bwf = np.mean([backward_forgetting(np.array(m)) for m in mats])
        worst = max(worst, abs(aa - row["AA_mean"]), abs(bwf - row["BWF_mean"]))
    return worst
