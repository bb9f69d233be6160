"""Residualization: project factor structure out of each tile.

Every tile gets one annihilator matrix H built from the exposure columns
of its asset group.  H is assembled from an orthonormal basis of the
exposure column space (rank-revealing SVD), never from an explicit
normal-equation inverse, so it is symmetric, idempotent, and annihilates
the exposures to machine precision even for ill-conditioned inputs.

Row t of a tile's residual block is H applied to that row's returns.
Because H is constant over the batch, the rows of the block are
exchangeable whenever the raw rows are, which is the property the
permutation engine relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ArgumentError, RankError
from .panel import ExposureSeries, ReturnsPanel, _freeze, summarize_availability, write_long_csv
from .tiling import Tiling, validate_tiling


@dataclass(frozen=True, eq=False)
class ResidualPanel:
    """A T x p residual matrix; ``defined`` marks cells that exist."""

    values: np.ndarray
    defined: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        defined = np.array(self.defined, dtype=bool, copy=True)
        if values.ndim != 2 or defined.shape != values.shape:
            raise ArgumentError("values and defined must be matching 2-D arrays")
        if not np.all(np.isfinite(values[defined])):
            raise ArgumentError("defined residual cells must be finite")
        values[~defined] = np.nan
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "defined", _freeze(defined))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class MosaicResiduals:
    """Per-tile residual blocks plus the tiling that produced them."""

    tiling: Tiling
    blocks: tuple
    projectors: tuple

    def __post_init__(self):
        if len(self.blocks) != self.tiling.n_tiles or len(self.projectors) != self.tiling.n_tiles:
            raise ArgumentError("need exactly one block and one projector per tile")
        object.__setattr__(self, "blocks", tuple(_freeze(np.asarray(b)) for b in self.blocks))
        object.__setattr__(self, "projectors", tuple(_freeze(np.asarray(h)) for h in self.projectors))

    def materialize(self) -> ResidualPanel:
        """Assemble the blocks into a T x p panel; uncovered cells undefined."""
        T, p = self.tiling.n_times, self.tiling.n_assets
        values = np.full((T, p), np.nan)
        defined = np.zeros((T, p), dtype=bool)
        for tile, block in zip(self.tiling.tiles, self.blocks):
            values[np.ix_(tile.batch, tile.group)] = block
            defined[np.ix_(tile.batch, tile.group)] = True
        return ResidualPanel(values=values, defined=defined)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def _dedup_columns(L: np.ndarray):
    """Indices of the first occurrence of each distinct column, in order."""
    seen = {}
    keep = []
    for q in range(L.shape[1]):
        key = L[:, q].tobytes()
        if key not in seen:
            seen[key] = q
            keep.append(q)
    return np.array(keep, dtype=np.intp)


def tile_projection(L: np.ndarray, factor_ids=None) -> np.ndarray:
    """Annihilator of the column space of ``L``.

    Exact duplicate columns are collapsed first (the augmentation path
    produces them by design); after that the matrix must have full
    numerical column rank — the threshold is the largest singular value
    scaled by machine epsilon — or a rank error names the offending
    factors.  A square full-rank ``L`` yields the zero matrix: the
    regression is saturated and nothing of the returns survives.
    """
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2:
        raise ArgumentError("exposure block must be 2-D")
    n = L.shape[0]
    if L.shape[1] == 0:
        return np.eye(n)
    keep = _dedup_columns(L)
    Ld = L[:, keep]
    U, s, _ = np.linalg.svd(Ld, full_matrices=False)
    tol = max(Ld.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    rank = int(np.count_nonzero(s > tol))
    if rank < Ld.shape[1]:
        ids = factor_ids if factor_ids is not None else [str(q) for q in range(L.shape[1])]
        kept_ids = [ids[q] for q in keep]
        _, _, piv = scipy.linalg.qr(Ld, mode="economic", pivoting=True)
        offending = sorted(kept_ids[q] for q in piv[rank:])
        raise RankError(
            f"exposure block is rank {rank} < {Ld.shape[1]} columns after "
            f"deduplication; dependent factors: {', '.join(offending)}"
        )
    basis = U[:, :rank]
    H = np.eye(n) - basis @ basis.T
    return 0.5 * (H + H.T)  # exact symmetry at no cost to accuracy


def tile_residual_block(Y_block: np.ndarray, L_sub: np.ndarray, factor_ids=None) -> np.ndarray:
    """Residualize one tile: each row of ``Y_block`` is multiplied by H."""
    return np.asarray(Y_block, dtype=np.float64) @ tile_projection(L_sub, factor_ids)


# ---------------------------------------------------------------------------
# residual computation
# ---------------------------------------------------------------------------

def mosaic_residuals(
    panel: ReturnsPanel, exposures: ExposureSeries, tiling: Tiling
) -> MosaicResiduals:
    """Compute per-tile residual blocks for a validated tiling."""
    if tiling.n_times != panel.n_times or tiling.n_assets != panel.n_assets:
        raise ArgumentError("tiling and panel disagree on dimensions")
    validate_tiling(tiling, exposures, panel.available).require()
    blocks, projectors = [], []
    for tile in tiling.tiles:
        L = exposures.matrix_at(int(tile.batch[0]))[tile.group]
        H = tile_projection(L, exposures.factor_ids)
        blocks.append(panel.values[np.ix_(tile.batch, tile.group)] @ H)
        projectors.append(H)
    return MosaicResiduals(tiling=tiling, blocks=tuple(blocks), projectors=tuple(projectors))


def ols_residuals(panel: ReturnsPanel, exposures: ExposureSeries) -> ResidualPanel:
    """Whole-cross-section residuals: one regression per segment.

    Within each exposure segment the regression runs over the assets
    fully observed in that segment; their residual rows are defined,
    everything else is not.  With no factor columns H is the identity and
    residuals equal returns.
    """
    if exposures.n_times != panel.n_times:
        raise ArgumentError("exposures and panel disagree on T")
    avail = summarize_availability(panel, exposures)
    T, p = panel.n_times, panel.n_assets
    values = np.full((T, p), np.nan)
    defined = np.zeros((T, p), dtype=bool)
    for s, (start, stop) in enumerate(exposures.segments()):
        assets = avail.per_segment_available[s]
        if assets.size == 0:
            continue
        H = tile_projection(exposures.matrices[s][assets], exposures.factor_ids)
        values[np.ix_(np.arange(start, stop), assets)] = panel.values[start:stop, assets] @ H
        defined[np.ix_(np.arange(start, stop), assets)] = True
    return ResidualPanel(values=values, defined=defined)


def write_residuals(residuals: ResidualPanel, times, assets, dest) -> None:
    """Export defined residual cells in the returns CSV schema."""
    write_long_csv(times, assets, residuals.values, residuals.defined, dest)


# ---------------------------------------------------------------------------
# within-tile covariance
# ---------------------------------------------------------------------------

class PairStats:
    """Accumulates, per asset pair, moments over co-grouped timepoints.

    For a pair (j, j') the estimate averages products over exactly the
    times at which the two assets shared a tile, then subtracts the
    product of the pair's means over those same times.  Pairs that never
    shared a tile have no estimate and report zero, a neutral value for
    the anticlustering objective.  All accumulators are sums, so the
    result cannot depend on the order of rows within any tile.
    """

    def __init__(self, p: int):
        self.n = np.zeros((p, p))
        self.sum_xy = np.zeros((p, p))
        self.sum_x = np.zeros((p, p))

    def add_tile(self, group: np.ndarray, block: np.ndarray) -> None:
        idx = np.ix_(group, group)
        self.n[idx] += block.shape[0]
        self.sum_xy[idx] += block.T @ block
        self.sum_x[idx] += block.sum(axis=0)[:, None]

    def covariance(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            mean_xy = np.where(self.n > 0, self.sum_xy / np.maximum(self.n, 1), 0.0)
            mean_x = np.where(self.n > 0, self.sum_x / np.maximum(self.n, 1), 0.0)
        return mean_xy - mean_x * mean_x.T


def within_tile_covariance(mosaic: MosaicResiduals, batches_used=None) -> np.ndarray:
    """Covariance of residual pairs estimated inside shared tiles only.

    ``batches_used`` selects batches by index in time order (default:
    all).  The adaptive builder passes the prefix of batches formed so
    far; the estimate is invariant to row order within every tile.
    """
    groups = mosaic.tiling.batch_groups()
    if batches_used is None:
        batches_used = range(len(groups))
    stats = PairStats(mosaic.tiling.n_assets)
    for b in batches_used:
        if not 0 <= b < len(groups):
            raise ArgumentError(f"batch index {b} out of range (have {len(groups)})")
        for m in groups[b][1]:
            stats.add_tile(mosaic.tiling.tiles[m].group, mosaic.blocks[m])
    return stats.covariance()
