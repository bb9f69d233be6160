"""Test statistics, correlation-structure estimates, and rolling analysis.

Every statistic obeys one orientation contract: larger values mean
stronger evidence against joint independence of the residual columns.
Statistics consume a materialized residual panel through the narrow
``(values, defined)`` interface; they restrict themselves to rows the
tiling covered and to columns defined on all of those rows, so the same
code path serves complete panels and missing-data panels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ArgumentError, DegeneracyError
from .panel import (
    ExposureSeries,
    ReturnsPanel,
    _freeze,
    _open_for_write,
    summarize_availability,
)
from .permute import StatReport, mosaic_test, adaptive_mosaic_test
from .residuals import MosaicResiduals, ResidualPanel, mosaic_residuals
from .rng import DOMAIN_ROLLING, child_seed
from .tiling import Tiling, adaptive_tiling, default_tiling

DEFAULT_GAMMAS = (0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99)


# ---------------------------------------------------------------------------
# correlation estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CorrelationEstimate:
    """Empirical correlation matrix over a window and an asset subset."""

    matrix: np.ndarray
    assets: np.ndarray
    window: tuple

    def __post_init__(self):
        object.__setattr__(self, "matrix", _freeze(np.asarray(self.matrix, dtype=np.float64)))
        object.__setattr__(self, "assets", _freeze(np.asarray(self.assets, dtype=np.intp)))


def _pearson(X: np.ndarray) -> np.ndarray:
    """Pearson correlations of the columns of X (rows are observations).

    A constant column has no direction: its correlations with everything
    are reported as zero (diagonal stays one), which keeps downstream
    max/quantile statistics finite instead of propagating NaN.
    """
    n, p = X.shape
    if n < 2:
        raise ArgumentError(f"correlation needs at least 2 rows, got {n}")
    Xc = X - X.mean(axis=0)
    norms = np.sqrt((Xc * Xc).sum(axis=0))
    live = norms > 0
    denom = np.where(live, norms, 1.0)
    C = (Xc / denom).T @ (Xc / denom)
    C[~live, :] = 0.0
    C[:, ~live] = 0.0
    np.fill_diagonal(C, 1.0)
    return np.clip(C, -1.0, 1.0)


def _covered_slice(values: np.ndarray, defined: np.ndarray):
    """Rows the tiling touched x columns defined on all touched rows."""
    rows = defined.any(axis=1)
    if not rows.any():
        raise DegeneracyError("residual panel has no defined rows")
    cols = defined[rows].all(axis=0)
    return values[np.ix_(rows, cols)], np.flatnonzero(cols)


def empirical_correlation(
    residuals: ResidualPanel, window: tuple | None = None, assets=None
) -> CorrelationEstimate:
    """Correlations of residual columns over ``window`` rows.

    ``window`` is a half-open (start, stop) row range (default: all rows);
    ``assets`` restricts columns (default: every column defined on all
    covered rows of the window).
    """
    T = residuals.values.shape[0]
    start, stop = window if window is not None else (0, T)
    if not (0 <= start < stop <= T):
        raise ArgumentError(f"bad window ({start}, {stop}) for T={T}")
    vals = residuals.values[start:stop]
    defd = residuals.defined[start:stop]
    if assets is not None:
        assets = np.asarray(assets, dtype=np.intp)
        rows = defd[:, assets].all(axis=1)
        if not rows.any():
            raise ArgumentError("requested assets share no fully defined rows")
        X, chosen = vals[np.ix_(rows, assets)], assets
    else:
        X, chosen = _covered_slice(vals, defd)
    return CorrelationEstimate(matrix=_pearson(X), assets=chosen, window=(start, stop))


def max_abs_correlations(corr: np.ndarray) -> np.ndarray:
    """Per column, the largest absolute off-diagonal correlation."""
    corr = np.asarray(corr, dtype=np.float64)
    p = corr.shape[0]
    if p < 2:
        raise ArgumentError(f"need at least 2 assets, got {p}")
    off = np.abs(corr).copy()
    np.fill_diagonal(off, -np.inf)
    return off.max(axis=1)


def mmc(corr: np.ndarray) -> float:
    """Mean of the per-asset maximal absolute correlations."""
    return float(max_abs_correlations(corr).mean())


def lower_quantile(values, gamma: float) -> float:
    """Order-statistic quantile: the ceil(gamma * n)-th smallest value."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    n = values.size
    if n == 0:
        raise ArgumentError("quantile of an empty set")
    if not 0.0 < gamma <= 1.0:
        raise ArgumentError(f"gamma must lie in (0, 1], got {gamma}")
    return float(values[min(max(math.ceil(gamma * n), 1), n) - 1])


def qmc(corr: np.ndarray, gamma: float) -> float:
    """The gamma quantile of the per-asset maximal absolute correlations.

    Low gamma is sensitive to correlation affecting most assets; gamma
    near one targets a handful of strongly coupled assets; gamma -> 1 is
    the maximum.
    """
    return lower_quantile(max_abs_correlations(corr), gamma)


def qmc_family(residuals: ResidualPanel, window=None, gammas=DEFAULT_GAMMAS) -> np.ndarray:
    """All requested quantile statistics from one correlation pass."""
    corr = empirical_correlation(residuals, window).matrix
    mc = max_abs_correlations(corr)
    return np.array([lower_quantile(mc, g) for g in gammas])


# ---------------------------------------------------------------------------
# statistic objects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Statistic:
    """A named statistic with the (values, defined) calling convention.

    ``plug_in`` records whether the statistic is a functional of the
    empirical row distribution alone; resampling-based bias corrections
    are meaningful only for such statistics.
    """

    name: str
    fn: object
    plug_in: bool = True
    labels: tuple = field(default=())

    def __call__(self, values: np.ndarray, defined: np.ndarray):
        return self.fn(values, defined)


def _mmc_stat(values, defined):
    X, _ = _covered_slice(values, defined)
    return mmc(_pearson(X))


def make_mmc() -> Statistic:
    return Statistic(name="mmc", fn=_mmc_stat)


def make_qmc(gamma: float) -> Statistic:
    def fn(values, defined):
        X, _ = _covered_slice(values, defined)
        return qmc(_pearson(X), gamma)

    return Statistic(name=f"qmc[{gamma:g}]", fn=fn)


def make_qmc_family(gammas=DEFAULT_GAMMAS) -> Statistic:
    gammas = tuple(float(g) for g in gammas)

    def fn(values, defined):
        X, _ = _covered_slice(values, defined)
        mc = max_abs_correlations(_pearson(X))
        return np.array([lower_quantile(mc, g) for g in gammas])

    return Statistic(
        name="qmc_family",
        fn=fn,
        labels=tuple(f"qmc[{g:g}]" for g in gammas),
    )


def make_bcv_r2(tiling: Tiling, loadings) -> Statistic:
    """Cross-validated explained-variance statistic over frozen loadings."""
    V = _loading_matrix(loadings)

    def fn(values, defined):
        return float(_bcv_scores(values, defined, tiling, V).max())

    return Statistic(name="bcv_r2", fn=fn, plug_in=False)


def build_statistic(config, *, tiling: Tiling | None = None, loadings=None) -> Statistic:
    """Construct a statistic from a {"type": ..., "params": {...}} config."""
    if isinstance(config, str):
        config = {"type": config}
    kind = config.get("type")
    params = config.get("params", {}) or {}
    if kind == "mmc":
        return make_mmc()
    if kind == "qmc":
        return make_qmc(float(params.get("gamma", 0.5)))
    if kind in ("qmc_family", "adaptive_qmc"):
        return make_qmc_family(tuple(params.get("gammas", DEFAULT_GAMMAS)))
    if kind == "bcv_r2":
        if tiling is None or loadings is None:
            raise ArgumentError("bcv_r2 needs a test tiling and trained loadings")
        return make_bcv_r2(tiling, loadings)
    raise ArgumentError(f"unknown statistic type {kind!r}")


# ---------------------------------------------------------------------------
# sparse principal directions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SparseLoading:
    """A unit-norm loading vector supported on ``support``."""

    vector: np.ndarray
    support: np.ndarray
    sparsity: int

    def __post_init__(self):
        object.__setattr__(self, "vector", _freeze(np.asarray(self.vector, dtype=np.float64)))
        object.__setattr__(self, "support", _freeze(np.asarray(self.support, dtype=np.intp)))


def greedy_sparse_pca(corr: np.ndarray, sparsity: int) -> SparseLoading:
    """Top eigenvector of the correlation submatrix on a greedy support.

    The support is the ``sparsity`` assets with the largest maximal
    absolute correlations (ties resolved toward the lower index); the
    loading is the leading eigenvector of the corresponding principal
    submatrix, embedded into the full dimension and signed so its
    largest-magnitude entry is positive.
    """
    corr = np.asarray(corr, dtype=np.float64)
    p = corr.shape[0]
    if not 1 <= sparsity <= p:
        raise ArgumentError(f"sparsity must lie in [1, {p}], got {sparsity}")
    mc = max_abs_correlations(corr) if p >= 2 else np.zeros(1)
    order = np.argsort(-mc, kind="stable")
    support = np.sort(order[:sparsity])
    sub = corr[np.ix_(support, support)]
    eigvals, eigvecs = scipy.linalg.eigh(sub)
    lead = eigvecs[:, -1]
    vector = np.zeros(p)
    vector[support] = lead
    peak = int(np.argmax(np.abs(vector)))
    if vector[peak] < 0:
        vector = -vector
    return SparseLoading(vector=vector, support=support, sparsity=int(sparsity))


def sparsity_grid(p: int, n_values: int = 10, lo: int = 20) -> tuple:
    """Evenly spaced sparsity levels between ``lo`` and ``p``, clipped."""
    raw = np.linspace(lo, p, n_values)
    levels = sorted({int(min(max(round(x), 1), p)) for x in raw})
    return tuple(levels)


def train_loadings(corr: np.ndarray, grid=None) -> list:
    """Dense leading eigenvector plus one sparse loading per grid level."""
    corr = np.asarray(corr, dtype=np.float64)
    p = corr.shape[0]
    grid = sparsity_grid(p) if grid is None else tuple(int(g) for g in grid)
    out = [greedy_sparse_pca(corr, p)]
    out.extend(greedy_sparse_pca(corr, ell) for ell in grid if ell != p)
    return out


# ---------------------------------------------------------------------------
# cross-validated loading score
# ---------------------------------------------------------------------------

def _loading_matrix(loadings) -> np.ndarray:
    loadings = list(loadings)
    if not loadings:
        raise ArgumentError("need at least one loading to score")
    return np.column_stack([np.asarray(l.vector, dtype=np.float64) for l in loadings])


def _bcv_scores(values: np.ndarray, defined: np.ndarray, tiling: Tiling, V: np.ndarray) -> np.ndarray:
    """Out-of-tile explained variance for each loading column of V.

    For a cell (t, j) in tile m, the loading's factor value at t is
    estimated from the residuals of all assets outside tile m's group at
    the same time, then used to predict cell (t, j).  Undefined residual
    cells contribute zero to the estimation inner products and are
    excluded from the error sums.  A loading with no mass outside the
    group predicts zero for that tile.
    """
    T, p = values.shape
    if V.shape[0] != p:
        raise ArgumentError(f"loadings have {V.shape[0]} rows for {p} assets")
    E = np.where(defined, values, 0.0)
    full_dot = E @ V                      # (T, I): sum_j e_tj v_ij
    full_sq = (V * V).sum(axis=0)         # (I,)
    sse = np.zeros(V.shape[1])
    total = float((E * E).sum())
    for tile in tiling.tiles:
        B, G = tile.batch, tile.group
        vG = V[G]                                     # (|G|, I)
        dot_in = E[np.ix_(B, G)] @ vG                 # (|B|, I)
        denom = full_sq - (vG * vG).sum(axis=0)       # (I,)
        with np.errstate(invalid="ignore", divide="ignore"):
            z = np.where(denom > 0, (full_dot[B] - dot_in) / np.where(denom > 0, denom, 1.0), 0.0)
        pred = z[:, None, :] * vG[None, :, :]         # (|B|, |G|, I)
        err = pred - E[np.ix_(B, G)][:, :, None]
        err *= defined[np.ix_(B, G)][:, :, None]
        sse += (err * err).sum(axis=(0, 1))
    if total == 0.0:
        return np.zeros(V.shape[1])
    return 1.0 - sse / total


def score_loadings(residuals: ResidualPanel, tiling: Tiling, loadings) -> np.ndarray:
    """Per-loading cross-validated explained variance on one panel.

    Positive entries mean the loading predicts residual variation better
    than the zero forecast; each prediction uses only off-tile residuals,
    so nothing is scored against data it could see.
    """
    V = _loading_matrix(loadings)
    return _bcv_scores(residuals.values, residuals.defined, tiling, V)


def bcv_r2(train: MosaicResiduals, test: MosaicResiduals, loadings):
    """Score frozen loadings on held-out residuals, out-of-tile.

    ``train`` and ``test`` must come from disjoint time ranges (loadings
    were fit on the former; only the latter is scored).  Returns
    ``(max_r2, per_loading_r2)``.
    """
    train_rows = {int(t) for tile in train.tiling.tiles for t in tile.batch}
    test_rows = {int(t) for tile in test.tiling.tiles for t in tile.batch}
    if train_rows & test_rows:
        raise ArgumentError("train and test tilings share time rows")
    scores = score_loadings(test.materialize(), test.tiling, loadings)
    return float(scores.max()), scores


# ---------------------------------------------------------------------------
# rolling analysis
# ---------------------------------------------------------------------------

def rolling_analysis(
    panel: ReturnsPanel,
    exposures: ExposureSeries,
    *,
    window: int,
    stride: int,
    R: int,
    seed: int,
    alpha: float = 0.05,
    statistic_config="mmc",
    tiling_mode: str = "default",
    batch_size: int = 10,
    n_groups: int | None = None,
    K: int = 999,
    threads: int = 1,
) -> list:
    """Run the test in a window sliding by ``stride`` rows.

    Each window gets its own tiling and permutation seed derived from the
    window's start row, so any single window is reproducible in
    isolation.  Returns a list of (window_end_time, StatReport) pairs in
    time order.
    """
    T = panel.n_times
    if window < 2 or window > T:
        raise ArgumentError(f"window must lie in [2, {T}], got {window}")
    if stride < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")
    rows = []
    for start in range(0, T - window + 1, stride):
        stop = start + window
        sub_panel = panel.window(start, stop)
        sub_exp = exposures.window(start, stop)
        avail = None
        if not sub_panel.available.all():
            avail = summarize_availability(sub_panel, sub_exp)
        tile_seed = child_seed(seed, DOMAIN_ROLLING, start)
        perm_seed = child_seed(seed, DOMAIN_ROLLING, start, 1)
        if tiling_mode == "adaptive":
            tiling = adaptive_tiling(
                sub_panel, sub_exp, batch_size=batch_size, seed=tile_seed,
                n_groups=n_groups, availability=avail,
            )
        elif tiling_mode == "default":
            tiling = default_tiling(
                window, panel.n_assets, max(sub_exp.n_factors, 1),
                batch_size=batch_size, change_points=sub_exp.change_points,
                availability=avail, seed=tile_seed, n_groups=n_groups,
            )
        else:
            raise ArgumentError(f"unknown tiling mode {tiling_mode!r}")
        mosaic = mosaic_residuals(sub_panel, sub_exp, tiling)
        statistic = build_statistic(statistic_config)
        if statistic.labels:
            report, _ = adaptive_mosaic_test(
                mosaic, statistic, R=R, K=K, seed=perm_seed, alpha=alpha, threads=threads
            )
        else:
            report = mosaic_test(
                mosaic, statistic, R=R, seed=perm_seed, alpha=alpha, threads=threads
            )
        rows.append((sub_panel.times[-1], report))
    return rows


ROLLING_HEADER = ("window_end", "observed", "threshold", "p_value", "z_exact", "z_approx")


def write_rolling_csv(rows, dest) -> None:
    """Serialize rolling results: one row per window, stable field order."""
    fh, should_close = _open_for_write(dest)
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROLLING_HEADER)
        for when, report in rows:
            writer.writerow(
                (
                    str(np.datetime64(when, "D")),
                    repr(float(report.observed)),
                    repr(float(report.threshold)),
                    repr(float(report.p_value)),
                    repr(float(report.z_exact)),
                    repr(float(report.z_approx)),
                )
            )
    finally:
        if should_close:
            fh.close()
