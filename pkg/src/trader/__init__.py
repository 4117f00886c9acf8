"""Transfer-guided horseshoe regression for sparse linear models.

The package fits a horseshoe-regularized Gaussian linear model whose
shrinkage center is a convex combination of rescaled coefficient estimates
from related source datasets, with the combination weights learned from the
data. A plain horseshoe fit, synthetic multi-source data generators, a
replication benchmark harness, and a command-line interface are included.
"""

from .core import (
    CorruptionError,
    DataError,
    Dataset,
    DigestMismatchWarning,
    NumericalError,
    PosteriorDraws,
    PosteriorSummary,
    SimulationError,
    SourceEstimate,
    TraderConfig,
    derive_seed,
    load_dataset,
    load_draws,
    load_draws_bundle,
    load_sources,
    save_dataset,
    save_draws,
    save_draws_bundle,
    save_sources,
    substream,
)
from .guide import (
    GuideSet,
    build_guide,
    cosine_similarity,
    empty_guide,
    estimate_beta_val,
    expected_informative_count,
    rescale_source,
    select_tau,
    split_validation,
)
from .sampler import (
    DiagnosticRow,
    GibbsKernel,
    diagnostics,
    fit_horseshoe,
    fit_trader,
    kappa,
    run_chain,
    sample_beta_conditional,
    sample_eta_mh,
    sample_lambda_conditional,
    sample_sigma2_conditional,
    summarize,
)
from .simgen import (
    SimInstance,
    SimSpec,
    ar1_covariance,
    gen_setting1,
    gen_setting2,
    gen_setting3,
    generate,
    rademacher,
    setting3_covariance,
)
from .evalbench import (
    BenchmarkResult,
    MetricsReport,
    SelectionRates,
    aggregate_metrics,
    estimation_mse,
    evaluate_fit,
    interval_metrics,
    metrics_frame,
    run_benchmark,
    selection_metrics,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkResult",
    "CorruptionError",
    "DataError",
    "Dataset",
    "DiagnosticRow",
    "DigestMismatchWarning",
    "GibbsKernel",
    "GuideSet",
    "MetricsReport",
    "NumericalError",
    "PosteriorDraws",
    "PosteriorSummary",
    "SelectionRates",
    "SimInstance",
    "SimSpec",
    "SimulationError",
    "SourceEstimate",
    "TraderConfig",
    "aggregate_metrics",
    "ar1_covariance",
    "build_guide",
    "cosine_similarity",
    "derive_seed",
    "diagnostics",
    "empty_guide",
    "estimate_beta_val",
    "estimation_mse",
    "evaluate_fit",
    "expected_informative_count",
    "fit_horseshoe",
    "fit_trader",
    "gen_setting1",
    "gen_setting2",
    "gen_setting3",
    "generate",
    "interval_metrics",
    "kappa",
    "load_dataset",
    "load_draws",
    "load_draws_bundle",
    "load_sources",
    "metrics_frame",
    "rademacher",
    "rescale_source",
    "run_benchmark",
    "run_chain",
    "sample_beta_conditional",
    "sample_eta_mh",
    "sample_lambda_conditional",
    "sample_sigma2_conditional",
    "save_dataset",
    "save_draws",
    "save_draws_bundle",
    "save_sources",
    "select_tau",
    "selection_metrics",
    "setting3_covariance",
    "split_validation",
    "substream",
    "summarize",
    "__version__",
]
