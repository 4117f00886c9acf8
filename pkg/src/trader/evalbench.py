"""Evaluation metrics and the multi-replication benchmark harness.

Per replication the harness generates one simulation instance, fits a
plain horseshoe to every source dataset to extract coefficient estimates,
feeds those through the JSON source-bundle round trip, fits the guided and
target-only models, and emits stratified metric rows. Replications use
independent derived seeds, so results are identical whether they run
serially or in a process pool.
"""

from __future__ import annotations

import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .core import (
    PosteriorSummary,
    SourceEstimate,
    TraderConfig,
    derive_seed,
    load_sources,
    save_sources,
)
from .sampler import fit_horseshoe, fit_trader
from .simgen import SimInstance, SimSpec, generate

__all__ = [
    "MetricsReport",
    "SelectionRates",
    "BenchmarkResult",
    "estimation_mse",
    "interval_metrics",
    "selection_metrics",
    "evaluate_fit",
    "run_benchmark",
    "metrics_frame",
    "aggregate_metrics",
]

# Substream tags under the per-replication seed.
_TAG_REP = 1
_TAG_SOURCE_FIT = 2
_TAG_TRADER_FIT = 3
_TAG_HS_FIT = 4

METRIC_COLUMNS = [
    "method",
    "setting",
    "stratum",
    "replication",
    "mse",
    "avg_width",
    "coverage",
    "tpr",
    "tnr",
    "fpr",
    "fpr_conventional",
    "fpr_flagged",
]


@dataclass(frozen=True)
class MetricsReport:
    """Metric values for one (method, stratum, replication) cell.

    Selection rates are populated on the "all" stratum only, and never for
    dense truths (no zero/nonzero partition to select against).
    """

    method: str
    stratum: str
    replication: int
    mse: float
    avg_width: float
    coverage: float
    setting: int | None = None
    tpr: float | None = None
    tnr: float | None = None
    fpr: float | None = None
    fpr_conventional: float | None = None
    fpr_flagged: bool = False


@dataclass(frozen=True)
class SelectionRates:
    tpr: float
    tnr: float
    fpr: float
    fpr_conventional: float
    fpr_flagged: bool


def estimation_mse(post_mean: np.ndarray, beta_true: np.ndarray, indices=None) -> float:
    """Mean squared coefficient error, optionally over an index subset."""
    post_mean = np.asarray(post_mean, dtype=float).ravel()
    beta_true = np.asarray(beta_true, dtype=float).ravel()
    if post_mean.shape != beta_true.shape:
        raise ValueError(
            f"length mismatch: estimate has {post_mean.size}, truth has {beta_true.size}"
        )
    if indices is not None:
        post_mean = post_mean[indices]
        beta_true = beta_true[indices]
    return float(np.mean((post_mean - beta_true) ** 2))


def interval_metrics(
    summary: PosteriorSummary, beta_true: np.ndarray, indices=None
) -> tuple[float, float]:
    """(coverage, average width) of the equal-tailed intervals."""
    beta_true = np.asarray(beta_true, dtype=float).ravel()
    if summary.p != beta_true.shape[0]:
        raise ValueError(
            f"length mismatch: summary has {summary.p}, truth has {beta_true.size}"
        )
    lower, upper = summary.lower, summary.upper
    if indices is not None:
        lower, upper, beta_true = lower[indices], upper[indices], beta_true[indices]
    covered = (lower <= beta_true) & (beta_true <= upper)
    return float(covered.mean()), float((upper - lower).mean())


def selection_metrics(summary: PosteriorSummary, beta_true: np.ndarray) -> SelectionRates:
    """Selection rates with interval-excludes-zero as the selection rule.

    fpr uses the FP/(FP+FN) denominator; the conventional FP/(FP+TN) is
    reported alongside. When FP+FN = 0 the fpr is reported as 0 with
    fpr_flagged set.
    """
    beta_true = np.asarray(beta_true, dtype=float).ravel()
    if summary.p != beta_true.shape[0]:
        raise ValueError(
            f"length mismatch: summary has {summary.p}, truth has {beta_true.size}"
        )
    signal = beta_true != 0.0
    noise = ~signal
    if not signal.any():
        raise ValueError("tpr undefined: truth vector has no nonzero entries")
    if not noise.any():
        raise ValueError("tnr undefined: truth vector has no zero entries")
    selected = summary.selected
    tp = int(np.sum(selected & signal))
    fn = int(np.sum(~selected & signal))
    tn = int(np.sum(~selected & noise))
    fp = int(np.sum(selected & noise))
    tpr = tp / (tp + fn)
    tnr = tn / (tn + fp)
    flagged = (fp + fn) == 0
    fpr = 0.0 if flagged else fp / (fp + fn)
    fpr_conventional = fp / (fp + tn)
    return SelectionRates(tpr, tnr, fpr, fpr_conventional, flagged)


def evaluate_fit(
    summary: PosteriorSummary,
    beta_true: np.ndarray,
    method: str,
    replication: int,
    setting: int | None = None,
) -> list[MetricsReport]:
    """Metric rows for one fit: the all stratum plus signal/noise when sparse."""
    beta_true = np.asarray(beta_true, dtype=float).ravel()
    signal = beta_true != 0.0
    mse = estimation_mse(summary.mean, beta_true)
    coverage, width = interval_metrics(summary, beta_true)
    rows = []
    if signal.any() and (~signal).any():
        rates = selection_metrics(summary, beta_true)
        rows.append(
            MetricsReport(
                method=method, stratum="all", replication=replication, setting=setting,
                mse=mse, avg_width=width, coverage=coverage,
                tpr=rates.tpr, tnr=rates.tnr, fpr=rates.fpr,
                fpr_conventional=rates.fpr_conventional, fpr_flagged=rates.fpr_flagged,
            )
        )
        for stratum, idx in (("signal", np.nonzero(signal)[0]), ("noise", np.nonzero(~signal)[0])):
            cov_s, width_s = interval_metrics(summary, beta_true, idx)
            rows.append(
                MetricsReport(
                    method=method, stratum=stratum, replication=replication, setting=setting,
                    mse=estimation_mse(summary.mean, beta_true, idx),
                    avg_width=width_s, coverage=cov_s,
                )
            )
    else:
        rows.append(
            MetricsReport(
                method=method, stratum="all", replication=replication, setting=setting,
                mse=mse, avg_width=width, coverage=coverage,
            )
        )
    return rows


def _fit_source_estimates(instance: SimInstance, config: TraderConfig, rep_seed: int):
    """Horseshoe posterior means for each source, via the bundle round trip."""
    estimates = []
    for k, source_data in enumerate(instance.sources):
        src_config = config.with_seed(derive_seed(rep_seed, _TAG_SOURCE_FIT, k))
        draws, summary = fit_horseshoe(source_data, src_config)
        intercept_hat = None
        if source_data.has_intercept:
            intercept_hat = float(np.mean(np.concatenate([d.intercept for d in draws])))
        estimates.append(SourceEstimate(f"source_{k + 1}", summary.mean, intercept_hat))
    # Round-trip through the serialized bundle so the benchmark exercises
    # the same ingestion path as file-based fits.
    with tempfile.TemporaryDirectory() as tmp:
        bundle = Path(tmp) / "sources.json"
        save_sources(estimates, bundle)
        return load_sources(bundle)


def _run_replication(spec: SimSpec, methods: tuple[str, ...], config: TraderConfig,
                     master_seed: int, rep: int, keep_estimates: bool):
    rep_seed = derive_seed(master_seed, _TAG_REP, rep)
    instance = generate(spec, rep_seed)
    rows: list[MetricsReport] = []
    estimates: dict[tuple[str, int], np.ndarray] = {}
    if "trader" in methods:
        sources = _fit_source_estimates(instance, config, rep_seed)
        trader_config = config.with_seed(derive_seed(rep_seed, _TAG_TRADER_FIT))
        _, summary, _ = fit_trader(instance.target, sources, trader_config)
        rows.extend(evaluate_fit(summary, instance.beta_true, "trader", rep, spec.setting))
        if keep_estimates:
            estimates[("trader", rep)] = np.array(summary.mean)
    if "horseshoe" in methods:
        hs_config = config.with_seed(derive_seed(rep_seed, _TAG_HS_FIT))
        _, summary = fit_horseshoe(instance.target, hs_config)
        rows.extend(evaluate_fit(summary, instance.beta_true, "horseshoe", rep, spec.setting))
        if keep_estimates:
            estimates[("horseshoe", rep)] = np.array(summary.mean)
    truth = np.array(instance.beta_true) if keep_estimates else None
    return rep, rows, estimates, truth


@dataclass
class BenchmarkResult:
    rows: list[MetricsReport]
    failures: list[tuple[int, str]]
    estimates: dict[tuple[str, int], np.ndarray]
    truths: dict[int, np.ndarray]

    def frame(self) -> pd.DataFrame:
        return metrics_frame(self.rows)


def run_benchmark(
    spec: SimSpec,
    methods,
    reps: int,
    config: TraderConfig,
    jobs: int = 1,
    keep_estimates: bool = False,
) -> BenchmarkResult:
    """Run ``reps`` seeded replications of the method comparison.

    Each replication derives its seed from config.seed and its index, so
    the output is a pure function of (spec, methods, reps, config) and the
    level of parallelism cannot change any number. Failed replications are
    recorded and excluded rather than aborting the run.
    """
    methods = tuple(methods)
    for m in methods:
        if m not in ("trader", "horseshoe"):
            raise ValueError(f"unknown method {m!r}; expected 'trader' or 'horseshoe'")
    if reps < 1:
        raise ValueError("reps must be at least 1")
    args = [(spec, methods, config, config.seed, rep, keep_estimates) for rep in range(reps)]
    outcomes: list = []
    failures: list[tuple[int, str]] = []
    if jobs <= 1:
        for arg in args:
            try:
                outcomes.append(_run_replication(*arg))
            except Exception as exc:  # noqa: BLE001 - per-rep isolation is the contract
                failures.append((arg[4], f"{type(exc).__name__}: {exc}"))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_run_replication, *arg): arg[4] for arg in args}
            for future, rep in futures.items():
                try:
                    outcomes.append(future.result())
                except Exception as exc:  # noqa: BLE001
                    failures.append((rep, f"{type(exc).__name__}: {exc}"))
    outcomes.sort(key=lambda item: item[0])
    failures.sort()
    rows: list[MetricsReport] = []
    estimates: dict[tuple[str, int], np.ndarray] = {}
    truths: dict[int, np.ndarray] = {}
    for rep, rep_rows, rep_estimates, truth in outcomes:
        rows.extend(rep_rows)
        estimates.update(rep_estimates)
        if truth is not None:
            truths[rep] = truth
    return BenchmarkResult(rows=rows, failures=failures, estimates=estimates, truths=truths)


def metrics_frame(rows: list[MetricsReport]) -> pd.DataFrame:
    records = []
    for r in rows:
        records.append({col: getattr(r, col) for col in METRIC_COLUMNS})
    frame = pd.DataFrame.from_records(records, columns=METRIC_COLUMNS)
    return frame


def aggregate_metrics(frame: pd.DataFrame) -> pd.DataFrame:
    """Per-(method, stratum, metric) mean and sd across replications."""
    required = {"method", "stratum", "replication"}
    missing = required - set(frame.columns)
    if missing:
        raise ValueError(f"metrics table is missing columns: {sorted(missing)}")
    if frame.empty:
        raise ValueError("metrics table has no rows")
    metric_cols = [
        c for c in ("mse", "avg_width", "coverage", "tpr", "tnr", "fpr", "fpr_conventional")
        if c in frame.columns
    ]
    out = []
    for (method, stratum), group in frame.groupby(["method", "stratum"], sort=True):
        for metric in metric_cols:
            vals = pd.to_numeric(group[metric], errors="coerce").dropna()
            if vals.empty:
                continue
            out.append(
                {
                    "method": method,
                    "stratum": stratum,
                    "metric": metric,
                    "mean": float(vals.mean()),
                    "sd": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
                }
            )
    return pd.DataFrame(out, columns=["method", "stratum", "metric", "mean", "sd"])
