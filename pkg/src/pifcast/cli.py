"""Command-line entry point: ``pifcast <subcommand> --config PLAN --out DIR``.

Exit codes: 0 success, 1 configuration error (the message names the key),
2 runtime failure (whatever finished is flushed to the run directory first).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import platform
import signal
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import experiments as E
from .config import (BenchmarkCommand, ConfigKeyError, Strict, SynthCommand, TrainCommand, TransferCommand,
                     load_config)
from .data import DataError, save_csv, synthesize
from .losses import LossConfig
from .metrics import TABLE_COLUMNS
from .neural import build, save_checkpoint
from .neural.base import ModelError
from .prior import RecipeError, save_recipe
from .training import TrainConfig, search_lambda, train

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
JOBS_ENV = "PIF_BENCH_JOBS"
MANIFEST = "manifest.json"
SUBCOMMANDS = ("synth", "train", "benchmark", "robustness", "transfer", "report")

log = logging.getLogger("pifcast")


class RunDir:
    """Output directory plus the manifest that describes it."""

    def __init__(self, root: Path, subcommand: str) -> None:
        self.root = root
        self.subcommand = subcommand
        self.files: dict[str, bool] = {}
        self.seeds: list[int] = []
        self.config_hash: str | None = None

    def write(self, name: str, text: str, volatile: bool = False) -> Path:
        path = self.root / name
        path.write_text(text, encoding="utf-8")
        self.files[name] = volatile
        return path

    def add(self, name: str, volatile: bool = False) -> None:
        self.files[name] = volatile

    def manifest(self, complete: bool, warnings: Sequence[str] = ()) -> None:
        entries = []
        for name in sorted(self.files):
            volatile = self.files[name]
            digest = None if volatile else sha256_file(self.root / name)
            entries.append({"path": name, "sha256": digest, "volatile": volatile})
        doc = {
            "tool": "pifcast",
            "version": __version__,
            "subcommand": self.subcommand,
            "complete": complete,
            "config": "config.json",
            "config_sha256": self.config_hash,
            "seeds": self.seeds,
            "files": entries,
            "warnings": list(warnings),
            "versions": {"python": platform.python_version(), "numpy": np.__version__},
        }
        (self.root / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _config_copy(run: RunDir, cfg: Strict) -> None:
    text = json.dumps(cfg.model_dump(mode="json", by_alias=True), indent=2, sort_keys=True) + "\n"
    run.write("config.json", text)
    run.config_hash = hashlib.sha256(text.encode("utf-8")).hexdigest()


def _base(args) -> Path:
    return Path(args.config).resolve().parent


# -- subcommands --------------------------------------------------------------

def cmd_synth(args, run: RunDir) -> int:
    cfg = load_config(SynthCommand, args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"synthetic": cfg.synthetic.model_copy(update={"seed": args.seed})})
    sc = _build(lambda: cfg.synthetic.synthetic_config(_base(args)), "synthetic")
    run.seeds = [sc.seed]
    _config_copy(run, cfg)
    save_csv(synthesize(sc), run.root / "series.csv")
    run.add("series.csv")
    save_recipe(sc.recipe, run.root / "recipe.json")
    run.add("recipe.json")
    run.manifest(True)
    log.info("wrote %d samples to %s", int(sc.recipe.duration // sc.step) + 1, run.root / "series.csv")
    return EXIT_OK


def _build(fn, key: str):
    """Turn data/recipe problems while materializing inputs into config errors."""
    try:
        return fn()
    except (DataError, RecipeError, OSError) as exc:
        raise ConfigKeyError(key, str(exc)) from None


def cmd_train(args, run: RunDir) -> int:
    cfg = load_config(TrainCommand, args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    run.seeds = [cfg.seed]
    _config_copy(run, cfg)
    ds = _build(lambda: cfg.dataset.build(_base(args)), "dataset")
    tc = cfg.train.config(cfg.seed, cfg.loss)
    try:
        factory = lambda: build(cfg.family, cfg.tier, ds.lookback, cfg.seed)  # noqa: E731
        factory()
    except ModelError as exc:
        raise ConfigKeyError("tier", str(exc)) from None
    if tc.loss.strategy == "fixed" and tc.loss.lam is None:
        search = search_lambda(factory, ds, cfg.lambda_grid, tc, keep_models=True)
        model, report = search.runs[search.best]
        run.write("lambda_search.csv", E.to_csv([{"lambda": l, "val_rmse": v} for l, v in search.table],
                                                 ("lambda", "val_rmse")))
    else:
        model, report = train(factory(), ds, tc)
    save_checkpoint(model, run.root / "model.ckpt")
    run.add("model.ckpt")
    run.write("curves.csv", report.curves_csv())
    run.write("train_report.json", report.to_json() + "\n", volatile=True)
    label = model.family + tc.loss.suffix
    reports = E.eval_both(label, model.predict(ds.X("test")), ds, report.seconds)
    for units, rep in reports.items():
        run.write(f"eval_{units}.csv", E.to_csv([rep.row()], TABLE_COLUMNS), volatile=True)
    run.manifest(True)
    log.info("%s: best epoch %d of %d, test RMSE %.6g (normalized)", label, report.best_epoch,
             report.epochs_run, reports["normalized"].rmse)
    return EXIT_OK


def _load_plan(args) -> BenchmarkCommand:
    plan = load_config(BenchmarkCommand, args.config)
    if args.seed is not None:
        plan = plan.model_copy(update={"seeds": (args.seed,)})
    return plan


def _write_benchmark(run: RunDir, result: E.BenchmarkResult) -> None:
    rows = result.rows
    run.write("benchmark_per_seed.csv", E.to_csv(E.per_seed_records(rows), E.PER_SEED_COLUMNS))
    run.write("benchmark_summary.csv", E.to_csv(E.aggregate(rows), E.SUMMARY_COLUMNS))
    bundle = {
        "protocol": result.protocol,
        "per_seed": E.per_seed_records(rows),
        "summary": E.aggregate(rows),
        "failures": [{"Model": r.label, "tier": r.tier, "seed": r.seed, "error": r.error} for r in result.failures],
    }
    run.write("benchmark.json", E.json_dump(bundle) + "\n")
    run.write("timings.json", E.json_dump(E.timings(rows)) + "\n", volatile=True)


def _run_plan(args, run: RunDir, plan: BenchmarkCommand) -> E.BenchmarkResult | None:
    run.seeds = list(plan.seeds)
    _config_copy(run, plan)
    ds, protocol = _build(lambda: E.plan_dataset(plan, _base(args)), "dataset")
    done: list[E.CellOutcome] = []

    def progress(o: E.CellOutcome) -> None:
        done.append(o)
        status = "failed" if any(r.status != "ok" for r in o.rows) else "ok"
        log.info("[%d/%d] %s tier=%s seed=%s %s", len(done), total, o.cell.label, o.cell.tier, o.cell.seed, status)

    total = len(E.plan_cells(plan))
    try:
        E.run_cells(plan, _base(args), args.jobs, progress)
    except KeyboardInterrupt:
        _write_benchmark(run, E.collect_outcomes(done, ds, protocol))
        run.manifest(False, [f"interrupted after {len(done)} of {total} cells"])
        log.error("interrupted; partial results written to %s", run.root)
        return None
    return E.collect_outcomes(done, ds, protocol)


def cmd_benchmark(args, run: RunDir) -> int:
    plan = _load_plan(args)
    result = _run_plan(args, run, plan)
    if result is None:
        return EXIT_RUNTIME
    _write_benchmark(run, result)
    warnings = [f"{r.label} tier={r.tier} seed={r.seed}: {r.error}" for r in result.failures]
    run.manifest(not warnings, warnings)
    for w in warnings:
        log.error("cell failed: %s", w)
    return EXIT_RUNTIME if warnings else EXIT_OK


def cmd_robustness(args, run: RunDir) -> int:
    plan = _load_plan(args)
    result = _run_plan(args, run, plan)
    if result is None:
        return EXIT_RUNTIME
    _write_benchmark(run, result)
    warnings = [f"{r.label} tier={r.tier} seed={r.seed}: {r.error}" for r in result.failures]
    if result.trained:
        long = E.run_noise_sweep(plan, result.trained, result.dataset)
        run.write("robustness_long.csv", E.to_csv(long, E.LONG_COLUMNS))
        run.write("robustness.json", E.json_dump({"sigmas": list(plan.sigmas), "modes": list(plan.modes),
                                                  "noise_seed": plan.noise_seed, "curves": long}) + "\n")
    else:
        warnings.append("no trained models; noise sweep skipped")
    run.manifest(not warnings, warnings)
    return EXIT_RUNTIME if warnings else EXIT_OK


def cmd_transfer(args, run: RunDir) -> int:
    plan = load_config(TransferCommand, args.config)
    if args.seed is not None:
        plan = plan.model_copy(update={"seeds": (args.seed,)})
    run.seeds = list(plan.seeds)
    _config_copy(run, plan)
    target = _build(lambda: plan.target.build(_base(args)), "target")
    src = plan.source
    if src.checkpoint is None:
        source_ds = _build(lambda: src.dataset.build(_base(args)), "source.dataset")
        if source_ds.lookback != target.lookback:
            raise ConfigKeyError("target.lookback", f"{target.lookback} != source lookback {source_ds.lookback}")
    elif not (_base(args) / src.checkpoint).exists():
        raise ConfigKeyError("source.checkpoint", f"file not found: {src.checkpoint}")
    rows: list[E.TransferRow] = []
    try:
        result = E.run_transfer(plan, _base(args), args.jobs, rows.extend)
    except KeyboardInterrupt:
        _write_transfer(run, E.TransferResult(rows))
        run.manifest(False, ["interrupted"])
        return EXIT_RUNTIME
    except E.ExperimentError as exc:
        raise ConfigKeyError("source", str(exc)) from None
    _write_transfer(run, result)
    run.manifest(True)
    return EXIT_OK


def _write_transfer(run: RunDir, result: E.TransferResult) -> None:
    recs = result.records()
    run.write("transfer.csv", E.to_csv(recs, E.TRANSFER_COLUMNS))
    run.write("transfer.json", E.json_dump({"rows": recs}) + "\n")
    times = [{"Model": f"{r.family}_{r.strategy}", "seed": r.seed, "TrainingTime_s": round(r.seconds, 2)}
             for r in result.rows]
    pre = {str(k): round(v.seconds, 2) for k, v in result.pretrain.items()}
    run.write("timings.json", E.json_dump({"rows": times, "pretrain_s": pre}) + "\n", volatile=True)


# -- report -------------------------------------------------------------------

def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _family_of(label: str) -> str:
    for suffix in ("_fixed", "_uncertainty", "_RBA"):
        if label.endswith(suffix):
            return label[: -len(suffix)]
    return label


def render_table(title: str, rows: list[dict]) -> str:
    """Fixed-width table; ``*`` marks the lowest RMSE within each model family."""
    best: dict[str, float] = {}
    for r in rows:
        fam = _family_of(r["Model"])
        best[fam] = min(best.get(fam, float("inf")), float(r["RMSE"]))
    lines = [title, "  ".join(f"{c:>16}" if i else f"{c:<24}" for i, c in enumerate(TABLE_COLUMNS))]
    for r in rows:
        mark = " *" if float(r["RMSE"]) == best[_family_of(r["Model"])] else ""
        cells = [f"{(r['Model'] + mark):<24}"]
        for c in TABLE_COLUMNS[1:]:
            v = r.get(c)
            cells.append(f"{'n/a':>16}" if v in (None, "") else f"{float(v):>16.4f}")
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"


def cmd_report(args, run: RunDir) -> int:
    root = run.root
    warnings: list[str] = []
    manifest = None
    try:
        manifest = json.loads((root / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError:
        warnings.append("manifest.json missing; rendering whatever tables are present")
    except json.JSONDecodeError:
        warnings.append("manifest.json unreadable; rendering whatever tables are present")
    if manifest is not None:
        if not manifest.get("complete", False):
            warnings.append("run is marked incomplete")
        warnings.extend(manifest.get("warnings", []))
        for entry in manifest.get("files", []):
            p = root / entry["path"]
            if not p.exists():
                warnings.append(f"listed file missing: {entry['path']}")
            elif entry["sha256"] and sha256_file(p) != entry["sha256"]:
                warnings.append(f"hash mismatch: {entry['path']}")
    timing: dict[tuple, list[float]] = {}
    if (root / "timings.json").exists():
        t = json.loads((root / "timings.json").read_text(encoding="utf-8"))
        for rec in (t["rows"] if isinstance(t, dict) else t):
            timing.setdefault((rec["Model"], str(rec.get("tier") or "")), []).append(rec["TrainingTime_s"])
    else:
        warnings.append("timings.json missing; TrainingTime_s shown as n/a")

    def seconds(model, tier):
        v = timing.get((model, tier))
        return round(sum(v) / len(v), 2) if v else None

    out, long, tables = [], [], 0
    if (root / "benchmark_summary.csv").exists():
        summary = [r for r in _read_csv(root / "benchmark_summary.csv") if r["units"] == "normalized"]
        for tier in sorted({r["tier"] for r in summary}, key=lambda x: (x != "", int(x) if x else 0)):
            rows = []
            for r in summary:
                if r["tier"] in ("", tier):
                    rows.append({"Model": r["Model"], "RMSE": r["RMSE_mean"], "Linf_RMSE": r["Linf_RMSE_mean"],
                                 "GradientError": r["GradientError_mean"], "Linf_GradError": r["Linf_GradError_mean"],
                                 "TrainingTime_s": seconds(r["Model"], r["tier"])})
            if tier == "" and any(r["tier"] for r in summary):
                continue  # classical rows are repeated inside every tier table
            name = f"benchmark_tier{tier}" if tier else "benchmark"
            out.append(render_table(f"== {name} (normalized, mean over seeds) ==", rows))
            run.write(f"table_{name}.csv", E.to_csv(rows, TABLE_COLUMNS), volatile=True)
            tables += 1
        for r in _read_csv(root / "benchmark_per_seed.csv") if (root / "benchmark_per_seed.csv").exists() else []:
            for m in E.METRICS:
                if r[m]:
                    long.append({"table": "benchmark", "model": r["Model"], "tier": r["tier"], "seed": r["seed"],
                                 "sigma": "", "mode": "clean", "units": r["units"], "metric": m, "value": r[m]})
    if (root / "robustness_long.csv").exists():
        for r in _read_csv(root / "robustness_long.csv"):
            long.append({"table": "robustness", **r})
        tables += 1
    if (root / "transfer.csv").exists():
        recs = [r for r in _read_csv(root / "transfer.csv") if r["units"] == "normalized"]
        groups: dict[str, list[dict]] = {}
        for r in recs:
            groups.setdefault(r["Model"], []).append(r)
        rows = []
        for model, rs in groups.items():
            row = {"Model": model, "TrainingTime_s": seconds(model, "")}
            for m in E.METRICS:
                row[m] = sum(float(x[m]) for x in rs) / len(rs)
            rows.append(row)
        out.append(render_table("== transfer (normalized, mean over seeds) ==", rows))
        run.write("table_transfer.csv", E.to_csv(rows, TABLE_COLUMNS), volatile=True)
        for r in recs:
            for m in E.METRICS:
                long.append({"table": "transfer", "model": r["Model"], "tier": "", "seed": r["seed"], "sigma": "",
                             "mode": r["strategy"], "units": r["units"], "metric": m, "value": r[m]})
        tables += 1
    if tables == 0:
        warnings.append("no result tables found")
    run.write("report_long.csv", E.to_csv(long, ("table",) + E.LONG_COLUMNS), volatile=True)
    text = "".join(t + "\n" for t in out)
    text += f"warnings: {len(warnings)}\n" + "".join(f"  - {w}\n" for w in warnings)
    run.write("report.txt", text, volatile=True)
    if not args.quiet:
        sys.stdout.write(text)
    return EXIT_OK


HANDLERS = {"synth": cmd_synth, "train": cmd_train, "benchmark": cmd_benchmark, "robustness": cmd_robustness,
            "transfer": cmd_transfer, "report": cmd_report}


# -- entry --------------------------------------------------------------------

def _jobs_default() -> int:
    raw = os.environ.get(JOBS_ENV)
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigKeyError(JOBS_ENV, f"expected a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigKeyError(JOBS_ENV, f"expected a positive integer, got {n}")
    return n


def build_parser(jobs_default: int) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON configuration file")
    common.add_argument("--out", metavar="DIR", required=True, help="run directory")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed(s)")
    common.add_argument("--jobs", type=int, default=jobs_default, help=f"worker processes (default from {JOBS_ENV})")
    common.add_argument("--quiet", action="store_true", help="only print errors")
    parser = argparse.ArgumentParser(prog="pifcast", description="Process-informed forecasting benchmarks.")
    parser.add_argument("--version", action="version", version=f"pifcast {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _sigterm(signum, frame):
    raise KeyboardInterrupt


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        jobs = _jobs_default()
    except ConfigKeyError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    parser = build_parser(jobs)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s %(message)s",
                        stream=sys.stderr, force=True)
    if args.jobs < 1:
        print("config error: --jobs: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.subcommand != "report" and not args.config:
        print("config error: --config: required for this subcommand", file=sys.stderr)
        return EXIT_CONFIG
    root = Path(args.out)
    if args.subcommand == "report" and not root.is_dir():
        print(f"config error: --out: run directory not found: {root}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"config error: --out: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = RunDir(root, args.subcommand)
    previous = signal.signal(signal.SIGTERM, _sigterm) if hasattr(signal, "SIGTERM") else None
    try:
        return HANDLERS[args.subcommand](args, run)
    except ConfigKeyError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        run.manifest(False, ["interrupted"])
        print("interrupted; partial results flushed", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        try:
            run.manifest(False, [f"{type(exc).__name__}: {exc}"])
        except OSError:
            pass
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if previous is not None:
            signal.signal(signal.SIGTERM, previous)


if __name__ == "__main__":
    sys.exit(main())
