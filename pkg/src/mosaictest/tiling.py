"""Tilings: disjoint time-by-asset rectangles that license row permutation.

A tile is a (batch of consecutive time indices) x (group of asset indices)
rectangle.  Permuting a tile's rows leaves the data's law unchanged when
exposures are constant over the batch and residual rows are locally
exchangeable, so the test engine treats the collection of tiles as the
unit of resampling.  This module builds tilings (uniform and adaptive),
validates user-supplied ones, and handles the exposure-augmentation
trick that restores within-batch constancy when exposures drift every
period.

Construction is deterministic given (dimensions, change points,
availability, seed); nothing here looks at returns except the adaptive
builder, which may only consume row-order-invariant summaries of
previously formed tiles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    ArgumentError,
    DegenerateBatchError,
    InputError,
    PowerlessConfigError,
    TilingValidationError,
)
from .panel import AvailabilitySummary, ExposureSeries, _freeze
from .rng import DOMAIN_GREEDY, DOMAIN_TILE_GROUPS, child_seed, stream

DEFAULT_BATCH_SIZE = 10
ASSETS_PER_FACTOR = 5  # target assets per factor column in each group


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Tile:
    """One rectangle: sorted time indices x sorted asset indices."""

    batch: np.ndarray
    group: np.ndarray

    def __post_init__(self):
        batch = np.unique(np.asarray(self.batch, dtype=np.intp))
        group = np.unique(np.asarray(self.group, dtype=np.intp))
        if batch.size != np.asarray(self.batch).size:
            raise ArgumentError("tile batch has repeated time indices")
        if group.size != np.asarray(self.group).size:
            raise ArgumentError("tile group has repeated asset indices")
        if batch.size == 0 or group.size == 0:
            raise ArgumentError("tile must be non-empty in both axes")
        if batch.min() < 0 or group.min() < 0:
            raise ArgumentError("tile indices must be non-negative")
        object.__setattr__(self, "batch", _freeze(batch))
        object.__setattr__(self, "group", _freeze(group))


@dataclass(frozen=True, eq=False)
class Tiling:
    """A collection of disjoint tiles over a T x p panel."""

    tiles: tuple
    n_times: int
    n_assets: int

    def __post_init__(self):
        tiles = tuple(self.tiles)
        if not tiles:
            raise ArgumentError("tiling must contain at least one tile")
        for m, tile in enumerate(tiles):
            if tile.batch[-1] >= self.n_times or tile.group[-1] >= self.n_assets:
                raise ArgumentError(f"tile {m} exceeds the {self.n_times}x{self.n_assets} panel")
        object.__setattr__(self, "tiles", tiles)

    @property
    def n_tiles(self) -> int:
        return len(self.tiles)

    def covered(self) -> np.ndarray:
        """Boolean T x p mask of cells inside some tile."""
        mask = np.zeros((self.n_times, self.n_assets), dtype=bool)
        for tile in self.tiles:
            mask[np.ix_(tile.batch, tile.group)] = True
        return mask

    def batch_groups(self) -> list:
        """Tiles grouped by identical batch, in time order.

        Returns a list of (batch_array, tile_index_list) pairs sorted
        by the batch's first time index.
        """
        seen = {}
        for m, tile in enumerate(self.tiles):
            seen.setdefault(tuple(tile.batch), []).append(m)
        keys = sorted(seen, key=lambda b: (b[0], b))
        return [(np.array(b, dtype=np.intp), seen[b]) for b in keys]

    def to_json(self) -> str:
        payload = {
            "tiles": [
                {"batch": [int(t) for t in tile.batch], "group": [int(j) for j in tile.group]}
                for tile in self.tiles
            ],
            "T": int(self.n_times),
            "p": int(self.n_assets),
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Tiling":
        try:
            payload = json.loads(text)
            tiles = tuple(
                Tile(batch=np.array(t["batch"]), group=np.array(t["group"]))
                for t in payload["tiles"]
            )
            return cls(tiles=tiles, n_times=int(payload["T"]), n_assets=int(payload["p"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ArgumentError):
                raise
            raise InputError(f"bad tiling JSON: {exc}") from exc


@dataclass(frozen=True)
class TilingReport:
    """Outcome of the four structural checks on a tiling."""

    disjoint: bool
    coverage: bool
    exposure_constant: bool
    no_missing_cells: bool
    messages: tuple

    @property
    def passed(self) -> bool:
        return self.disjoint and self.coverage and self.exposure_constant and self.no_missing_cells

    def require(self) -> None:
        if not self.passed:
            raise TilingValidationError("; ".join(self.messages) or "tiling validation failed")


# ---------------------------------------------------------------------------
# group sizing
# ---------------------------------------------------------------------------

def group_count(p: int, k: int, *, use_floor: bool = False) -> int:
    """Number of asset groups per batch: ``max(2, ceil(p / (5 k)))``.

    Five assets per factor column keeps each within-tile regression
    comfortably overdetermined while still yielding at least two groups,
    without which no cross-tile comparison exists.  ``use_floor`` swaps
    the ceiling for a floor (slightly larger groups).
    """
    if p < 1 or k < 1:
        raise ArgumentError(f"group_count needs p >= 1 and k >= 1, got p={p}, k={k}")
    ratio = p // (ASSETS_PER_FACTOR * k) if use_floor else -(-p // (ASSETS_PER_FACTOR * k))
    return max(2, int(ratio))


def _near_equal_sizes(n: int, d: int) -> list:
    """Split n items into d parts, sizes differing by at most one,
    remainder going to the lowest-index parts."""
    base, rem = divmod(n, d)
    return [base + 1 if i < rem else base for i in range(d)]


def _random_groups(universe: np.ndarray, n_groups: int, rng) -> list:
    order = rng.permutation(universe)
    sizes = _near_equal_sizes(len(universe), n_groups)
    groups, at = [], 0
    for size in sizes:
        groups.append(np.sort(order[at:at + size]))
        at += size
    return [g for g in groups if g.size]


# ---------------------------------------------------------------------------
# batch construction
# ---------------------------------------------------------------------------

def _segment_starts(T: int, change_points) -> np.ndarray:
    if change_points is None:
        cps = np.array([0], dtype=np.intp)
    else:
        cps = np.unique(np.asarray(change_points, dtype=np.intp))
        if cps.size == 0:
            cps = np.array([0], dtype=np.intp)
        if cps[0] != 0 or cps[-1] >= T or cps.min() < 0:
            raise ArgumentError("change points must start at 0 and lie inside [0, T)")
    return cps


def build_batches(
    T: int,
    batch_size: int,
    change_points=None,
    *,
    degenerate_batches: str = "error",
) -> list:
    """Cut [0, T) into batches of consecutive rows.

    Rows are chunked into runs of ``batch_size`` and additionally split
    wherever exposures change, so no batch straddles a segment boundary.
    A one-row fragment is merged into an adjacent batch of the same
    segment when one exists; otherwise the ``degenerate_batches`` policy
    decides between raising and dropping the fragment from coverage.
    """
    if T < 2:
        raise DegenerateBatchError(f"need at least 2 time rows, got {T}")
    if batch_size < 2:
        raise ArgumentError(f"batch_size must be >= 2, got {batch_size}")
    if degenerate_batches not in ("error", "drop"):
        raise ArgumentError(f"degenerate_batches must be 'error' or 'drop', got {degenerate_batches!r}")
    cps = _segment_starts(T, change_points)

    def seg_of(t: int) -> int:
        return int(np.searchsorted(cps, t, side="right") - 1)

    cuts = sorted(set(range(0, T, batch_size)) | set(int(c) for c in cps) | {T})
    pieces = [(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]

    batches = []
    i = 0
    while i < len(pieces):
        start, stop = pieces[i]
        if stop - start == 1:
            prev_ok = batches and batches[-1][1] == start and seg_of(batches[-1][0]) == seg_of(start)
            next_ok = (
                i + 1 < len(pieces)
                and pieces[i + 1][0] == stop
                and seg_of(pieces[i + 1][0]) == seg_of(start)
            )
            if prev_ok:
                batches[-1] = (batches[-1][0], stop)
            elif next_ok:
                pieces[i + 1] = (start, pieces[i + 1][1])
            elif degenerate_batches == "drop":
                pass
            else:
                raise DegenerateBatchError(
                    f"rows [{start}, {stop}) form a one-row batch with no "
                    f"same-segment neighbour to merge into"
                )
            i += 1
            continue
        batches.append((start, stop))
        i += 1

    if not batches:
        raise DegenerateBatchError("no usable batches remain")
    return [np.arange(start, stop, dtype=np.intp) for start, stop in batches]


# ---------------------------------------------------------------------------
# tiling builders
# ---------------------------------------------------------------------------

def _check_powerless(p: int, k: int) -> None:
    if k >= 1 and p < 2 * k:
        raise PowerlessConfigError(
            f"p={p} assets with k={k} factors: every group of a two-way split "
            f"would be saturated by the regression, leaving nothing to test"
        )


def _batch_universe(
    batch: np.ndarray,
    p: int,
    change_points: np.ndarray,
    availability: AvailabilitySummary | None,
) -> np.ndarray:
    if availability is None:
        return np.arange(p, dtype=np.intp)
    seg = int(np.searchsorted(change_points, int(batch[0]), side="right") - 1)
    if seg >= availability.n_segments:
        raise ArgumentError(
            f"availability summary has {availability.n_segments} segments, "
            f"but batch starting at row {int(batch[0])} lies in segment {seg}"
        )
    return availability.per_segment_available[seg]


def default_tiling(
    T: int,
    p: int,
    k: int,
    *,
    batch_size: int = DEFAULT_BATCH_SIZE,
    change_points=None,
    availability: AvailabilitySummary | None = None,
    seed: int = 0,
    n_groups: int | None = None,
    degenerate_batches: str = "error",
) -> Tiling:
    """Uniformly random tiling: consecutive batches x random asset groups.

    Rows are batched by :func:`build_batches` (so no batch crosses an
    exposure change point), and within each batch the asset universe is
    partitioned uniformly at random into near-equal groups.  When an
    availability summary is given, each batch's universe is the set of
    assets fully observed over that batch's segment, so no tile contains
    a missing cell and cells of partially observed assets stay uncovered.

    The construction is a deterministic function of its arguments; the
    group assignment of batch ``i`` is drawn from a stream keyed by
    ``(seed, i)`` and is independent of the data.
    """
    _check_powerless(p, k)
    n_groups = group_count(p, k) if n_groups is None else int(n_groups)
    if n_groups < 2:
        raise ArgumentError(f"need at least 2 groups per batch, got {n_groups}")
    if n_groups > p:
        raise ArgumentError(f"cannot split {p} assets into {n_groups} groups")
    cps = _segment_starts(T, change_points)
    batches = build_batches(T, batch_size, cps, degenerate_batches=degenerate_batches)
    tiles = []
    for i, batch in enumerate(batches):
        universe = _batch_universe(batch, p, cps, availability)
        if universe.size == 0:
            continue
        rng = stream(seed, DOMAIN_TILE_GROUPS, i)
        for group in _random_groups(universe, min(n_groups, universe.size), rng):
            tiles.append(Tile(batch=batch, group=group))
    if not tiles:
        raise DegenerateBatchError("no tiles: every batch had an empty asset universe")
    return Tiling(tiles=tuple(tiles), n_times=T, n_assets=p)


def validate_tiling(
    tiling: Tiling,
    exposures: ExposureSeries | None = None,
    available: np.ndarray | None = None,
) -> TilingReport:
    """Run the four structural checks a tiling must pass before testing.

    a. tiles are pairwise disjoint;
    b. coverage: on every time row the tiling touches, it covers every
       coverable cell (all assets in full-data mode; in missing-data mode
       the assets fully observed over the row's segment).  Rows absent
       from every tile are permitted — leaving data out never biases the
       test, overlapping or partially covered rows can;
    c. within each tile's batch the exposure matrix is constant;
    d. no tile contains a missing cell.

    Checks c and d are vacuous when ``exposures`` / ``available`` are not
    supplied.  ``available`` is the panel's boolean mask.
    """
    msgs = []
    T, p = tiling.n_times, tiling.n_assets
    owner = np.full((T, p), -1, dtype=np.intp)
    disjoint = True
    for m, tile in enumerate(tiling.tiles):
        block = owner[np.ix_(tile.batch, tile.group)]
        if disjoint and (block != -1).any():
            other = int(block[block != -1][0])
            msgs.append(f"tiles {other} and {m} overlap")
            disjoint = False
        owner[np.ix_(tile.batch, tile.group)] = m
    covered = owner >= 0

    if exposures is not None and exposures.n_times != T:
        raise ArgumentError("exposures and tiling disagree on T")
    if available is not None:
        available = np.asarray(available, dtype=bool)
        if available.shape != (T, p):
            raise ArgumentError("availability mask must be T x p")

    cps = exposures.change_points if exposures is not None else np.array([0], dtype=np.intp)
    if available is None:
        coverable = np.ones((T, p), dtype=bool)
    else:
        coverable = np.zeros((T, p), dtype=bool)
        bounds = list(cps) + [T]
        for s in range(len(bounds) - 1):
            start, stop = bounds[s], bounds[s + 1]
            full = available[start:stop].all(axis=0)
            coverable[start:stop, full] = True

    coverage = True
    touched = covered.any(axis=1)
    gaps = coverable & ~covered
    bad_rows = np.flatnonzero(touched & gaps.any(axis=1))
    if bad_rows.size:
        t = int(bad_rows[0])
        j = int(np.flatnonzero(gaps[t])[0])
        msgs.append(
            f"row {t} is partially covered: cell ({t}, {j}) is coverable but in no tile"
        )
        coverage = False

    exposure_constant = True
    if exposures is not None:
        seg_idx = np.searchsorted(cps, np.arange(T), side="right") - 1
        for m, tile in enumerate(tiling.tiles):
            segs = np.unique(seg_idx[tile.batch])
            if segs.size > 1:
                msgs.append(
                    f"tile {m} spans an exposure change point "
                    f"(rows {int(tile.batch[0])}..{int(tile.batch[-1])})"
                )
                exposure_constant = False
                break

    no_missing = True
    if available is not None:
        holes = covered & ~available
        if holes.any():
            t, j = np.argwhere(holes)[0]
            msgs.append(f"tile covers missing cell ({int(t)}, {int(j)})")
            no_missing = False

    return TilingReport(
        disjoint=disjoint,
        coverage=coverage,
        exposure_constant=exposure_constant,
        no_missing_cells=no_missing,
        messages=tuple(msgs),
    )


# ---------------------------------------------------------------------------
# exposure augmentation
# ---------------------------------------------------------------------------

def augment_exposures(exposures: ExposureSeries) -> ExposureSeries:
    """Stack each consecutive pair of exposure matrices side by side.

    Row pairs (0,1), (2,3), ... both receive ``[L_first  L_second]``, so
    the augmented series is constant on every pair even when the input
    changes each period, at the price of doubling the column count.  The
    column span always contains the original exposures, so residualizing
    against the augmented matrix removes at least as much structure.

    With an odd number of rows the final row has no partner: it keeps its
    own exposures duplicated into both column blocks (rank-revealing
    projection collapses the copies) as a one-row segment.  Tiling
    builders cannot merge that fragment into the preceding pair — the
    exposures differ — so pass ``degenerate_batches="drop"`` to exclude
    the lone row from coverage, which leaves the test exact.

    Duplicate columns (e.g. when the input was already constant) are kept;
    consumers deduplicate before regression.
    """
    T = exposures.n_times
    if T < 2:
        raise ArgumentError("augmentation needs at least 2 rows")
    mats, cpts = [], []
    prev = None
    for start in range(0, T - 1, 2):
        stacked = np.hstack([exposures.matrix_at(start), exposures.matrix_at(start + 1)])
        if prev is None or not np.array_equal(prev, stacked):
            mats.append(stacked)
            cpts.append(start)
            prev = stacked
    if T % 2 == 1:
        last = exposures.matrix_at(T - 1)
        stacked = np.hstack([last, last])
        if not np.array_equal(prev, stacked):
            mats.append(stacked)
            cpts.append(T - 1)
    ids = [f"{f}:a" for f in exposures.factor_ids] + [f"{f}:b" for f in exposures.factor_ids]
    return ExposureSeries(
        change_points=np.array(cpts, dtype=np.intp),
        matrices=tuple(mats),
        factor_ids=tuple(ids),
        n_times=T,
    )


# ---------------------------------------------------------------------------
# adaptive grouping
# ---------------------------------------------------------------------------

def greedy_anticluster(
    sigma_hat: np.ndarray,
    n_groups: int,
    seed: int = 0,
    *,
    assets: np.ndarray | None = None,
) -> list:
    """Partition assets so strongly covarying pairs land in different groups.

    Groups are seeded with distinct random assets; the remaining assets
    are visited in random order and each is assigned to the group whose
    members it covaries with least, measured by the max absolute entry of
    ``sigma_hat`` between the candidate and the group (ties go to the
    lowest group index).  Pairs with no covariance estimate should carry
    a zero entry, which makes them neutral in the objective.
    """
    sigma_hat = np.asarray(sigma_hat, dtype=np.float64)
    if sigma_hat.ndim != 2 or sigma_hat.shape[0] != sigma_hat.shape[1]:
        raise ArgumentError("sigma_hat must be square")
    if not np.allclose(sigma_hat, sigma_hat.T, atol=1e-10, rtol=1e-8):
        raise ArgumentError("sigma_hat must be symmetric")
    if assets is None:
        assets = np.arange(sigma_hat.shape[0], dtype=np.intp)
    else:
        assets = np.asarray(assets, dtype=np.intp)
    n = assets.size
    if not 1 <= n_groups <= n:
        raise ArgumentError(f"cannot form {n_groups} groups from {n} assets")

    rng = stream(seed, DOMAIN_GREEDY)
    order = rng.permutation(assets)
    groups = [[int(order[d])] for d in range(n_groups)]
    abs_sigma = np.abs(sigma_hat)
    for j_star in order[n_groups:]:
        scores = [abs_sigma[j_star, g].max() for g in groups]
        groups[int(np.argmin(scores))].append(int(j_star))
    return [np.sort(np.array(g, dtype=np.intp)) for g in groups]


def adaptive_tiling(
    panel,
    exposures: ExposureSeries,
    *,
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int = 0,
    n_groups: int | None = None,
    availability: AvailabilitySummary | None = None,
    degenerate_batches: str = "error",
) -> Tiling:
    """Tiling whose later batches anticluster residual covariance.

    The first batch is grouped uniformly at random (identically to
    :func:`default_tiling` under the same seed).  Each later batch runs
    :func:`greedy_anticluster` on the within-tile covariance estimated
    from all previously formed tiles, so assets that have shown
    correlated residuals get separated, which concentrates evidence in
    cross-tile comparisons.  Only row-order-invariant summaries of prior
    tiles are consumed, so the permutation distribution of the resulting
    test is untouched.
    """
    from .residuals import PairStats, tile_residual_block  # local: avoids cycle

    T, p = panel.n_times, panel.n_assets
    k = exposures.n_factors
    if exposures.n_times != T:
        raise ArgumentError("exposures and panel disagree on T")
    _check_powerless(p, k)
    n_groups = group_count(p, max(k, 1)) if n_groups is None else int(n_groups)
    if n_groups < 2:
        raise ArgumentError(f"need at least 2 groups per batch, got {n_groups}")
    if n_groups > p:
        raise ArgumentError(f"cannot split {p} assets into {n_groups} groups")

    cps = exposures.change_points
    batches = build_batches(T, batch_size, cps, degenerate_batches=degenerate_batches)
    stats = PairStats(p)
    tiles = []
    for i, batch in enumerate(batches):
        universe = _batch_universe(batch, p, cps, availability)
        if universe.size == 0:
            continue
        d = min(n_groups, universe.size)
        if i == 0:
            groups = _random_groups(universe, d, stream(seed, DOMAIN_TILE_GROUPS, i))
        else:
            groups = greedy_anticluster(
                stats.covariance(), d, child_seed(seed, DOMAIN_GREEDY, i), assets=universe
            )
        L = exposures.matrix_at(int(batch[0]))
        for group in groups:
            tiles.append(Tile(batch=batch, group=group))
            block = tile_residual_block(
                panel.values[np.ix_(batch, group)], L[group], exposures.factor_ids
            )
            stats.add_tile(group, block)
    if not tiles:
        raise DegenerateBatchError("no tiles: every batch had an empty asset universe")
    return Tiling(tiles=tuple(tiles), n_times=T, n_assets=p)
