"""Command-line interface: simulate, fit, bench, report.

Exit codes follow a fixed convention so the commands compose in shell
pipelines: 0 success, 2 usage or validation error, 3 numerical or sampler
failure. Every command writes into an output directory, refuses to clobber
existing result files unless --force is given, and appends a run record to
the directory's manifest.json.
"""

from __future__ import annotations

import argparse
import csv
import importlib.metadata
import json
import sys
from dataclasses import fields, replace
from datetime import datetime, timezone
from pathlib import Path

import pandas as pd

from .core import (
    DataError,
    NumericalError,
    SimulationError,
    TraderConfig,
    load_dataset,
    load_sources,
    save_dataset,
    save_draws_bundle,
)
from .evalbench import aggregate_metrics, metrics_frame, run_benchmark
from .sampler import diagnostics, fit_horseshoe, fit_trader
from .simgen import SimSpec, generate

__all__ = ["main", "entrypoint", "cmd_simulate", "cmd_fit", "cmd_bench", "cmd_report"]

try:
    _VERSION = importlib.metadata.version("trader")
except importlib.metadata.PackageNotFoundError:  # running from a source tree
    _VERSION = "unknown"

_CONFIG_INT_FIELDS = {"n_warmup", "n_samples", "n_chains", "seed"}
_CONFIG_OPTIONAL_FIELDS = {"psi_hat", "tau_override"}
_CONFIG_FIELD_NAMES = {f.name for f in fields(TraderConfig)}


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _append_manifest(out_dir: Path, record: dict) -> None:
    """Append one run record; the manifest is a JSON list and append-only."""
    path = out_dir / "manifest.json"
    records = []
    if path.exists():
        records = json.loads(path.read_text())
        if not isinstance(records, list):
            records = [records]
    records.append(record)
    path.write_text(json.dumps(records, indent=2) + "\n")


def _check_overwrite(out_dir: Path, names: list[str], force: bool) -> str | None:
    existing = [n for n in names if (out_dir / n).exists()]
    if existing and not force:
        return f"refusing to overwrite {existing[0]} in {out_dir} (use --force)"
    return None


def _parse_config_file(path: Path) -> dict:
    """Flat key=value file mirroring the run-configuration fields."""
    values: dict = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}: line {lineno} is not key=value: {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_FIELD_NAMES:
            raise DataError(f"{path}: unknown config key {key!r}")
        if key in _CONFIG_OPTIONAL_FIELDS and value.lower() in ("none", ""):
            values[key] = None
        elif key in _CONFIG_INT_FIELDS:
            values[key] = int(value)
        else:
            values[key] = float(value)
    return values


def _build_config(ns) -> TraderConfig:
    values: dict = {}
    if getattr(ns, "config", None):
        values.update(_parse_config_file(Path(ns.config)))
    # CLI flags override file values.
    overrides = {
        "seed": getattr(ns, "seed", None),
        "n_warmup": getattr(ns, "warmup", None),
        "n_samples": getattr(ns, "samples", None),
        "n_chains": getattr(ns, "chains", None),
        "tau_override": getattr(ns, "tau", None),
        "psi_hat": getattr(ns, "psi_hat", None),
        "ci_level": getattr(ns, "ci_level", None),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return replace(TraderConfig(), **values)


def _spec_from_args(ns) -> SimSpec:
    return SimSpec(
        setting=ns.setting,
        n0=ns.n0,
        nk=ns.nk,
        p=ns.p,
        s=ns.s,
        K=ns.K,
        h=ns.h,
        K_a=ns.Ka,
        scale_ratios=tuple(ns.scale_ratios) if ns.scale_ratios else None,
        correlations=tuple(ns.rho) if ns.rho else None,
        noise_sd=ns.noise_sd,
        seed=ns.seed,
    )


def _add_spec_arguments(sub) -> None:
    sub.add_argument("--setting", type=int, required=True, choices=(1, 2, 3))
    sub.add_argument("--n0", type=int, required=True, help="target sample size")
    sub.add_argument("--nk", type=int, required=True, help="per-source sample size")
    sub.add_argument("--p", type=int, required=True, help="number of covariates")
    sub.add_argument("--s", type=int, required=True, help="number of nonzero coefficients")
    sub.add_argument("--K", type=int, required=True, help="number of sources")
    sub.add_argument("--h", type=float, default=15.0, help="source perturbation size")
    sub.add_argument("--Ka", type=int, default=None, help="informative sources (setting 2)")
    sub.add_argument(
        "--scale-ratios", type=float, nargs="+", default=None, dest="scale_ratios",
        help="alpha_t/alpha_sk per source (setting 3)",
    )
    sub.add_argument(
        "--rho", type=float, nargs="+", default=None,
        help="target-source correlations (setting 3)",
    )
    sub.add_argument("--noise-sd", type=float, default=1.0, dest="noise_sd")


def cmd_simulate(ns) -> int:
    try:
        spec = _spec_from_args(ns)
    except SimulationError as exc:
        return _fail(str(exc), 2)
    if spec.setting == 2 and spec.K_a is None:
        return _fail("setting 2 requires --Ka", 2)
    if spec.setting == 3 and (spec.scale_ratios is None or spec.correlations is None):
        return _fail("setting 3 requires --scale-ratios and --rho", 2)
    out_dir = Path(ns.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    width = max(2, len(str(spec.K)))
    names = ["target.csv", "truth.json"]
    names += [f"source_{k + 1:0{width}d}.csv" for k in range(spec.K)]
    clash = _check_overwrite(out_dir, names, ns.force)
    if clash:
        return _fail(clash, 2)
    try:
        instance = generate(spec, ns.seed)
    except SimulationError as exc:
        return _fail(str(exc), 2)
    save_dataset(instance.target, out_dir / "target.csv")
    for k, source in enumerate(instance.sources):
        save_dataset(source, out_dir / f"source_{k + 1:0{width}d}.csv")
    truth = {
        "setting": spec.setting,
        "seed": int(ns.seed),
        "beta_true": instance.beta_true.tolist(),
        "omega_true": [w.tolist() for w in instance.omega_true],
        "intercepts_true": instance.intercepts_true.tolist(),
    }
    (out_dir / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    _append_manifest(
        out_dir,
        {
            "command": "simulate",
            "timestamp": _utc_now(),
            "version": _VERSION,
            "seed": int(ns.seed),
            "spec": {
                "setting": spec.setting, "n0": spec.n0, "nk": spec.nk, "p": spec.p,
                "s": spec.s, "K": spec.K, "h": spec.h, "K_a": spec.K_a,
                "scale_ratios": spec.scale_ratios, "correlations": spec.correlations,
                "noise_sd": spec.noise_sd,
            },
            "outputs": names,
            "failures": [],
        },
    )
    print(f"wrote {len(names)} files to {out_dir}")
    return 0


def _write_summary_csv(summary, path: Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["coef", "mean", "median", "lower", "upper", "selected"])
        for j in range(summary.p):
            writer.writerow(
                [
                    f"x{j + 1}",
                    repr(float(summary.mean[j])),
                    repr(float(summary.median[j])),
                    repr(float(summary.lower[j])),
                    repr(float(summary.upper[j])),
                    int(summary.selected[j]),
                ]
            )


def _write_diagnostics_csv(rows, path: Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["parameter", "rhat", "ess", "flagged"])
        for row in rows:
            writer.writerow(
                [
                    row.parameter,
                    "" if row.rhat is None else repr(float(row.rhat)),
                    repr(float(row.ess)),
                    int(row.flagged),
                ]
            )


def cmd_fit(ns) -> int:
    if ns.method == "trader" and ns.sources is None:
        return _fail("--method trader requires --sources", 2)
    try:
        config = _build_config(ns)
    except (DataError, ValueError, OSError) as exc:
        return _fail(str(exc), 2)
    out_dir = Path(ns.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = ["summary.csv", "diagnostics.csv", "draws"]
    if ns.method == "trader":
        names.append("guide.json")
    clash = _check_overwrite(out_dir, names, ns.force)
    if clash:
        return _fail(clash, 2)
    try:
        data = load_dataset(ns.target, has_intercept=ns.intercept)
    except (DataError, OSError) as exc:
        return _fail(str(exc), 2)
    guide = None
    try:
        if ns.method == "trader":
            sources = load_sources(ns.sources)
            draws, summary, guide = fit_trader(data, sources, config)
        else:
            draws, summary = fit_horseshoe(data, config)
    except NumericalError as exc:
        chain = getattr(exc, "chain_id", None)
        where = f" (chain {chain})" if chain is not None else ""
        return _fail(f"sampler failed{where}: {exc}", 3)
    except (DataError, ValueError, OSError) as exc:
        return _fail(str(exc), 2)
    save_draws_bundle(draws, out_dir / "draws", seed=config.seed)
    _write_summary_csv(summary, out_dir / "summary.csv")
    _write_diagnostics_csv(diagnostics(draws), out_dir / "diagnostics.csv")
    if guide is not None:
        (out_dir / "guide.json").write_text(json.dumps(guide.to_dict(), indent=2) + "\n")
    _append_manifest(
        out_dir,
        {
            "command": "fit",
            "timestamp": _utc_now(),
            "version": _VERSION,
            "method": ns.method,
            "target": str(ns.target),
            "sources": None if ns.sources is None else str(ns.sources),
            "seed": int(config.seed),
            "config_digest": config.digest(),
            "outputs": names,
            "failures": [],
        },
    )
    print(f"fit complete: {summary.p} coefficients, results in {out_dir}")
    return 0


def cmd_bench(ns) -> int:
    try:
        spec = _spec_from_args(ns)
        config = _build_config(ns)
    except (SimulationError, DataError, ValueError, OSError) as exc:
        return _fail(str(exc), 2)
    if spec.setting == 2 and spec.K_a is None:
        return _fail("setting 2 requires --Ka", 2)
    if spec.setting == 3 and (spec.scale_ratios is None or spec.correlations is None):
        return _fail("setting 3 requires --scale-ratios and --rho", 2)
    methods = tuple(m.strip() for m in ns.methods.split(",") if m.strip())
    out_dir = Path(ns.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    clash = _check_overwrite(out_dir, ["metrics.csv"], ns.force)
    if clash:
        return _fail(clash, 2)
    try:
        result = run_benchmark(spec, methods, ns.reps, config, jobs=ns.jobs)
    except ValueError as exc:
        return _fail(str(exc), 2)
    metrics_frame(result.rows).to_csv(out_dir / "metrics.csv", index=False)
    for rep, message in result.failures:
        print(f"warning: replication {rep} failed: {message}", file=sys.stderr)
    _append_manifest(
        out_dir,
        {
            "command": "bench",
            "timestamp": _utc_now(),
            "version": _VERSION,
            "seed": int(config.seed),
            "reps": int(ns.reps),
            "methods": list(methods),
            "jobs": int(ns.jobs),
            "config_digest": config.digest(),
            "outputs": ["metrics.csv"],
            "failures": [{"replication": rep, "message": msg} for rep, msg in result.failures],
        },
    )
    if result.failures and ns.strict:
        return _fail(f"{len(result.failures)} replication(s) failed under --strict", 3)
    print(f"wrote metrics for {ns.reps - len(result.failures)} replications to {out_dir}")
    return 0


def cmd_report(ns) -> int:
    metrics_path = Path(ns.metrics)
    try:
        frame = pd.read_csv(metrics_path)
    except (OSError, pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        return _fail(f"{metrics_path}: {exc}", 2)
    out_dir = Path(ns.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    clash = _check_overwrite(out_dir, ["report.csv"], ns.force)
    if clash:
        return _fail(clash, 2)
    try:
        report = aggregate_metrics(frame)
    except ValueError as exc:
        return _fail(str(exc), 2)
    report.to_csv(out_dir / "report.csv", index=False)
    _append_manifest(
        out_dir,
        {
            "command": "report",
            "timestamp": _utc_now(),
            "version": _VERSION,
            "metrics": str(metrics_path),
            "outputs": ["report.csv"],
            "failures": [],
        },
    )
    print(f"wrote report.csv with {len(report)} rows to {out_dir}")
    return 0


def _add_config_arguments(sub) -> None:
    sub.add_argument("--config", default=None, help="key=value run-configuration file")
    sub.add_argument("--warmup", type=int, default=None, help="burn-in iterations per chain")
    sub.add_argument("--samples", type=int, default=None, help="retained iterations per chain")
    sub.add_argument("--chains", type=int, default=None, help="number of chains")
    sub.add_argument("--tau", type=float, default=None, help="fixed global scale override")
    sub.add_argument("--psi-hat", type=float, default=None, dest="psi_hat",
                     help="prior informative-count guess for global-scale selection")
    sub.add_argument("--ci-level", type=float, default=None, dest="ci_level")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trader",
        description="Horseshoe regression with source-guided shrinkage centers.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {_VERSION}")
    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("simulate", help="generate one synthetic multi-source instance")
    _add_spec_arguments(sim)
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--force", action="store_true", help="overwrite existing outputs")
    sim.set_defaults(handler=cmd_simulate)

    fit = commands.add_parser("fit", help="fit a model to one dataset")
    fit.add_argument("--target", required=True, help="CSV with x1..xp,y columns")
    fit.add_argument("--sources", default=None, help="JSON bundle of source estimates")
    fit.add_argument("--method", required=True, choices=("trader", "horseshoe"))
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument("--intercept", action="store_true",
                     help="treat the data as having an unknown intercept")
    fit.add_argument("--force", action="store_true", help="overwrite existing outputs")
    _add_config_arguments(fit)
    fit.set_defaults(handler=cmd_fit)

    bench = commands.add_parser("bench", help="run a seeded replication benchmark")
    _add_spec_arguments(bench)
    bench.add_argument("--reps", type=int, required=True)
    bench.add_argument("--methods", default="trader,horseshoe",
                       help="comma-separated subset of trader,horseshoe")
    bench.add_argument("--out", required=True, help="output directory")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--jobs", type=int, default=1, help="parallel replications")
    bench.add_argument("--strict", action="store_true",
                       help="exit nonzero if any replication fails")
    bench.add_argument("--force", action="store_true", help="overwrite existing outputs")
    _add_config_arguments(bench)
    bench.set_defaults(handler=cmd_bench)

    report = commands.add_parser("report", help="aggregate a metrics table")
    report.add_argument("--metrics", required=True, help="metrics.csv from bench")
    report.add_argument("--out", required=True, help="output directory")
    report.add_argument("--force", action="store_true", help="overwrite existing outputs")
    report.set_defaults(handler=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        if code is None:
            return 0
        return code if isinstance(code, int) else 2
    try:
        return ns.handler(ns)
    except NumericalError as exc:
        chain = getattr(exc, "chain_id", None)
        where = f" (chain {chain})" if chain is not None else ""
        return _fail(f"sampler failed{where}: {exc}", 3)
    except (DataError, SimulationError, ValueError) as exc:
        return _fail(str(exc), 2)
    except OSError as exc:
        return _fail(str(exc), 2)


def entrypoint() -> None:
    sys.exit(main())
