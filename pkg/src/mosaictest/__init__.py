"""Exact permutation tests for factor models with known exposures.

The package tests whether the idiosyncratic returns of a fundamental
factor model are jointly independent across assets.  Residuals are
estimated separately on disjoint (timepoints x assets) tiles; permuting
rows within tiles then leaves the joint law of the residual panel
unchanged under the null, so any test statistic yields a finite-sample
exact p-value — no Gaussian assumptions, no asymptotics in T or p.

Typical flow::

    panel = load_returns("returns.csv")
    exposures = load_exposures("exposures.csv", panel)
    tiling = default_tiling(panel.n_times, panel.n_assets,
                            exposures.n_factors, seed=1)
    mosaic = mosaic_residuals(panel, exposures, tiling)
    report = mosaic_test(mosaic, make_mmc(), R=999, seed=1)
    print(report.p_value, report.z_exact)

The ``mosaictest`` command line exposes the same flow plus rolling
windows, a model-improvement analysis, and simulation studies.
"""

from .errors import (
    ArgumentError,
    CoverageError,
    DegeneracyError,
    DegenerateBatchError,
    DuplicateCellError,
    InputError,
    InternalInvariantError,
    MosaicError,
    ParseError,
    PowerlessConfigError,
    RankError,
    TilingValidationError,
    ZeroVarianceError,
)
from .panel import (
    AvailabilitySummary,
    ExposureSeries,
    ReturnsPanel,
    load_exposures,
    load_returns,
    summarize_availability,
    write_exposures,
    write_returns,
)
from .tiling import (
    DEFAULT_BATCH_SIZE,
    Tile,
    Tiling,
    TilingReport,
    adaptive_tiling,
    augment_exposures,
    build_batches,
    default_tiling,
    greedy_anticluster,
    group_count,
    validate_tiling,
)
from .residuals import (
    MosaicResiduals,
    PairStats,
    ResidualPanel,
    mosaic_residuals,
    ols_residuals,
    tile_projection,
    tile_residual_block,
    within_tile_covariance,
    write_residuals,
)
from .permute import (
    PermutationSet,
    StatReport,
    adaptive_mosaic_test,
    adaptive_pvalue,
    all_joint_orders,
    approx_z,
    bonferroni,
    evaluate_statistic,
    exact_z,
    materialize_view,
    mosaic_test,
    permutation_threshold,
    permuted_view,
    pvalue,
    report_from_draws,
    sample_permutations,
    z_scores,
)
from .stats import (
    DEFAULT_GAMMAS,
    CorrelationEstimate,
    SparseLoading,
    Statistic,
    bcv_r2,
    build_statistic,
    empirical_correlation,
    greedy_sparse_pca,
    lower_quantile,
    make_bcv_r2,
    make_mmc,
    make_qmc,
    make_qmc_family,
    max_abs_correlations,
    mmc,
    qmc,
    qmc_family,
    rolling_analysis,
    score_loadings,
    sparsity_grid,
    train_loadings,
    write_rolling_csv,
)
from .baselines import (
    BootstrapReport,
    naive_bootstrap_z,
    naive_perm_test,
    write_comparison_csv,
)
from .simulate import (
    SimConfig,
    SimTruth,
    StudyRow,
    fpr_study,
    gen_semisynthetic,
    power_study,
    write_study_csv,
)
from .cli import main

__version__ = "0.1.0"

__all__ = [
    "ArgumentError",
    "AvailabilitySummary",
    "BootstrapReport",
    "CorrelationEstimate",
    "CoverageError",
    "DEFAULT_BATCH_SIZE",
    "DEFAULT_GAMMAS",
    "DegeneracyError",
    "DegenerateBatchError",
    "DuplicateCellError",
    "ExposureSeries",
    "InputError",
    "InternalInvariantError",
    "MosaicError",
    "MosaicResiduals",
    "PairStats",
    "ParseError",
    "PermutationSet",
    "PowerlessConfigError",
    "RankError",
    "ResidualPanel",
    "ReturnsPanel",
    "SimConfig",
    "SimTruth",
    "SparseLoading",
    "StatReport",
    "Statistic",
    "StudyRow",
    "Tile",
    "Tiling",
    "TilingReport",
    "TilingValidationError",
    "ZeroVarianceError",
    "adaptive_mosaic_test",
    "adaptive_pvalue",
    "adaptive_tiling",
    "all_joint_orders",
    "approx_z",
    "augment_exposures",
    "bcv_r2",
    "bonferroni",
    "build_batches",
    "build_statistic",
    "default_tiling",
    "empirical_correlation",
    "evaluate_statistic",
    "exact_z",
    "fpr_study",
    "gen_semisynthetic",
    "greedy_anticluster",
    "greedy_sparse_pca",
    "group_count",
    "load_exposures",
    "load_returns",
    "lower_quantile",
    "main",
    "make_bcv_r2",
    "make_mmc",
    "make_qmc",
    "make_qmc_family",
    "max_abs_correlations",
    "mmc",
    "mosaic_residuals",
    "materialize_view",
    "mosaic_test",
    "naive_bootstrap_z",
    "naive_perm_test",
    "ols_residuals",
    "permutation_threshold",
    "permuted_view",
    "power_study",
    "pvalue",
    "qmc",
    "qmc_family",
    "report_from_draws",
    "rolling_analysis",
    "sample_permutations",
    "score_loadings",
    "sparsity_grid",
    "summarize_availability",
    "tile_projection",
    "tile_residual_block",
    "train_loadings",
    "validate_tiling",
    "within_tile_covariance",
    "write_comparison_csv",
    "write_exposures",
    "write_residuals",
    "write_returns",
    "write_rolling_csv",
    "write_study_csv",
    "z_scores",
]
