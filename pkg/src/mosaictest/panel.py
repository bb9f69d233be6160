"""Panel data model and long-CSV interchange.

A returns panel is a T x p matrix of asset returns on an increasing date
axis, together with an availability mask (absent rows in the source file
encode missingness).  Exposures arrive in the same tidy layout, one row
per (date, asset, factor), and are piecewise constant in time: the series
stores one p x k matrix per segment plus the time indices where a segment
starts.

File contracts
--------------
returns CSV    header ``date,asset_id,return``
exposures CSV  header ``date,asset_id,factor_id,value``

Dates are ISO-8601, files are UTF-8.  A duplicate key is an error, not a
last-write-wins.  Parsing is strict: a non-finite value field is rejected
with its line number rather than propagated into the math.

Note: the loader does not curate near-duplicate listings (e.g. two share
classes of one issuer).  Dropping such columns is caller preprocessing.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ArgumentError,
    CoverageError,
    DuplicateCellError,
    ParseError,
)

RETURNS_HEADER = ("date", "asset_id", "return")
EXPOSURES_HEADER = ("date", "asset_id", "factor_id", "value")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReturnsPanel:
    """Immutable T x p returns matrix with availability mask.

    Attributes
    ----------
    times : ndarray of datetime64[D], shape (T,), strictly increasing
    assets : tuple of str, unique, lexicographically sorted by the loader
    values : ndarray, shape (T, p); NaN exactly where ``available`` is False
    available : bool ndarray, shape (T, p)
    """

    times: np.ndarray
    assets: tuple
    values: np.ndarray
    available: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype="datetime64[D]")
        assets = tuple(str(a) for a in self.assets)
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise ArgumentError("values must be a 2-D array")
        T, p = values.shape
        if times.shape != (T,):
            raise ArgumentError(f"times has shape {times.shape}, expected ({T},)")
        if len(assets) != p:
            raise ArgumentError(f"{len(assets)} asset ids for {p} columns")
        if len(set(assets)) != p:
            raise ArgumentError("asset ids must be unique")
        if T > 1 and not np.all(times[1:] > times[:-1]):
            raise ArgumentError("times must be strictly increasing")
        available = np.array(self.available, dtype=bool, copy=True)
        if available.shape != (T, p):
            raise ArgumentError("available mask must match values' shape")
        if not np.all(np.isfinite(values[available])):
            raise ArgumentError("available cells must hold finite values")
        values[~available] = np.nan
        object.__setattr__(self, "times", _freeze(times))
        object.__setattr__(self, "assets", assets)
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "available", _freeze(available))

    @property
    def n_times(self) -> int:
        return self.values.shape[0]

    @property
    def n_assets(self) -> int:
        return self.values.shape[1]

    def window(self, start: int, stop: int) -> "ReturnsPanel":
        """Return the sub-panel over time rows [start, stop)."""
        if not (0 <= start < stop <= self.n_times):
            raise ArgumentError(f"bad window [{start}, {stop}) for T={self.n_times}")
        return ReturnsPanel(
            times=self.times[start:stop],
            assets=self.assets,
            values=self.values[start:stop],
            available=self.available[start:stop],
        )


@dataclass(frozen=True, eq=False)
class ExposureSeries:
    """Piecewise-constant exposures: one p x k matrix per time segment.

    ``change_points`` holds the time index at which each segment begins;
    the first entry is always 0 and entries are strictly increasing and
    below ``n_times``.  ``matrices[s]`` applies to every time index in
    ``[change_points[s], change_points[s+1])``.
    """

    change_points: np.ndarray
    matrices: tuple
    factor_ids: tuple
    n_times: int

    def __post_init__(self):
        cps = np.asarray(self.change_points, dtype=np.intp)
        mats = tuple(np.array(m, dtype=np.float64, copy=True) for m in self.matrices)
        fids = tuple(str(f) for f in self.factor_ids)
        if self.n_times < 0:
            raise ArgumentError("n_times must be non-negative")
        if len(mats) != len(cps):
            raise ArgumentError("one matrix per change point required")
        if len(cps) == 0 and self.n_times > 0:
            raise ArgumentError("a nonempty series needs at least one segment")
        if len(cps):
            if cps[0] != 0:
                raise ArgumentError("first change point must be 0")
            if np.any(cps[1:] <= cps[:-1]):
                raise ArgumentError("change points must be strictly increasing")
            if self.n_times and cps[-1] >= self.n_times:
                raise ArgumentError("change points must lie below n_times")
        k = len(fids)
        p = mats[0].shape[0] if mats else 0
        for m in mats:
            if m.ndim != 2 or m.shape != (p, k):
                raise ArgumentError(f"every exposure matrix must be {p}x{k}")
            if not np.all(np.isfinite(m)):
                raise ArgumentError("exposure values must be finite")
        if len(set(fids)) != k:
            raise ArgumentError("factor ids must be unique")
        object.__setattr__(self, "change_points", _freeze(cps))
        object.__setattr__(self, "matrices", tuple(_freeze(m) for m in mats))
        object.__setattr__(self, "factor_ids", fids)

    @classmethod
    def constant(cls, matrix, factor_ids=None, n_times: int = 1) -> "ExposureSeries":
        """A single-segment series (the common constant-exposure case)."""
        matrix = np.asarray(matrix, dtype=np.float64)
        if factor_ids is None:
            factor_ids = tuple(f"F{i}" for i in range(matrix.shape[1]))
        return cls(
            change_points=np.array([0], dtype=np.intp),
            matrices=(matrix,),
            factor_ids=tuple(factor_ids),
            n_times=n_times,
        )

    @property
    def n_factors(self) -> int:
        return len(self.factor_ids)

    @property
    def n_segments(self) -> int:
        return len(self.matrices)

    def segments(self) -> list:
        """List of (start, stop) half-open time ranges, one per segment."""
        cps = self.change_points
        bounds = list(cps) + [self.n_times]
        return [(bounds[i], bounds[i + 1]) for i in range(len(cps))]

    def segment_of(self, t: int) -> int:
        """Index of the segment containing time ``t``."""
        if not (0 <= t < self.n_times):
            raise ArgumentError(f"time {t} outside [0, {self.n_times})")
        return int(np.searchsorted(self.change_points, t, side="right") - 1)

    def matrix_at(self, t: int) -> np.ndarray:
        return self.matrices[self.segment_of(t)]

    def window(self, start: int, stop: int) -> "ExposureSeries":
        """Restrict to time rows [start, stop), rebasing change points."""
        if not (0 <= start < stop <= self.n_times):
            raise ArgumentError(f"bad window [{start}, {stop}) for T={self.n_times}")
        first = self.segment_of(start)
        keep_cps = [0]
        keep_mats = [self.matrices[first]]
        for s in range(first + 1, self.n_segments):
            cp = int(self.change_points[s])
            if cp >= stop:
                break
            keep_cps.append(cp - start)
            keep_mats.append(self.matrices[s])
        return ExposureSeries(
            change_points=np.array(keep_cps, dtype=np.intp),
            matrices=tuple(keep_mats),
            factor_ids=self.factor_ids,
            n_times=stop - start,
        )


@dataclass(frozen=True, eq=False)
class AvailabilitySummary:
    """Which assets are observed throughout each exposure segment.

    ``per_segment_available[s]`` is the sorted index array of assets with
    no missing cell inside segment ``s``; ``always_available`` is their
    intersection over all segments.
    """

    always_available: np.ndarray
    per_segment_available: tuple
    n_segments: int = field(default=0)

    def __post_init__(self):
        per_seg = tuple(
            _freeze(np.asarray(a, dtype=np.intp)) for a in self.per_segment_available
        )
        object.__setattr__(self, "per_segment_available", per_seg)
        object.__setattr__(
            self, "always_available", _freeze(np.asarray(self.always_available, dtype=np.intp))
        )
        object.__setattr__(self, "n_segments", len(per_seg))
        for a in per_seg + (self.always_available,):
            if len(a) > 1 and np.any(np.diff(a) <= 0):
                raise ArgumentError("availability index sets must be sorted and unique")
        for a in per_seg:
            if not np.all(np.isin(self.always_available, a)):
                raise ArgumentError("always_available must be a subset of every segment set")


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------

def _open_for_read(source):
    """Accept a path or a readable (text or byte) stream; return (file, close?)."""
    if isinstance(source, (str, os.PathLike)):
        try:
            return open(source, "r", encoding="utf-8", newline=""), True
        except OSError as exc:
            raise ParseError(f"cannot open {source}: {exc}") from exc
    if isinstance(source, (io.RawIOBase, io.BufferedIOBase)) or (
        hasattr(source, "read") and isinstance(source.read(0), bytes)
    ):
        return io.TextIOWrapper(source, encoding="utf-8", newline=""), False
    return source, False


def _open_for_write(dest):
    if isinstance(dest, (str, os.PathLike)):
        return open(dest, "w", encoding="utf-8", newline=""), True
    if hasattr(dest, "write"):
        try:
            dest.write("")
        except TypeError:
            return io.TextIOWrapper(dest, encoding="utf-8", newline=""), False
        return dest, False
    raise ArgumentError(f"cannot write to {dest!r}")


def _parse_date(text: str, line: int):
    try:
        return _dt.date.fromisoformat(text)
    except ValueError as exc:
        raise ParseError(f"line {line}: bad ISO date {text!r}") from exc


def _parse_value(text: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise ParseError(f"line {line}: bad numeric value {text!r}") from exc
    if not math.isfinite(value):
        raise ParseError(f"line {line}: non-finite value {text!r}")
    return value


def _read_rows(source, header: tuple, what: str):
    """Yield (line_number, fields) for each data row, validating the header."""
    fh, should_close = _open_for_read(source)
    try:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError(f"{what}: empty file, expected header {','.join(header)}")
        if tuple(s.strip() for s in first) != header:
            raise ParseError(
                f"{what}: line 1: expected header {','.join(header)}, got {','.join(first)}"
            )
        for fields in reader:
            if not fields:
                continue
            if len(fields) != len(header):
                raise ParseError(
                    f"{what}: line {reader.line_num}: expected {len(header)} fields, "
                    f"got {len(fields)}"
                )
            yield reader.line_num, fields
    finally:
        if should_close:
            fh.close()


# ---------------------------------------------------------------------------
# returns I/O
# ---------------------------------------------------------------------------

def load_returns(source) -> ReturnsPanel:
    """Parse a ``date,asset_id,return`` CSV into a ReturnsPanel.

    Dates are sorted ascending, asset columns lexicographically; a
    (date, asset) pair absent from the file is recorded as unavailable.
    Duplicate pairs and non-finite return fields are errors.
    """
    cells = {}
    for line, (d, a, v) in _read_rows(source, RETURNS_HEADER, "returns"):
        date = _parse_date(d, line)
        if not a:
            raise ParseError(f"returns: line {line}: empty asset_id")
        key = (date, a)
        if key in cells:
            raise DuplicateCellError(
                f"returns: line {line}: duplicate entry for ({date.isoformat()}, {a})"
            )
        cells[key] = _parse_value(v, line)

    dates = sorted({k[0] for k in cells})
    assets = sorted({k[1] for k in cells})
    T, p = len(dates), len(assets)
    values = np.full((T, p), np.nan)
    mask = np.zeros((T, p), dtype=bool)
    t_of = {d: i for i, d in enumerate(dates)}
    j_of = {a: j for j, a in enumerate(assets)}
    for (date, a), v in cells.items():
        values[t_of[date], j_of[a]] = v
        mask[t_of[date], j_of[a]] = True
    times = np.array([np.datetime64(d.isoformat(), "D") for d in dates], dtype="datetime64[D]")
    return ReturnsPanel(times=times, assets=tuple(assets), values=values, available=mask)


def write_long_csv(times, assets, values, mask, dest, header=RETURNS_HEADER) -> None:
    """Write defined cells in (date, asset) order using round-trip floats."""
    times = np.asarray(times, dtype="datetime64[D]")
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    fh, should_close = _open_for_write(dest)
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t in range(values.shape[0]):
            date = str(times[t])
            for j in range(values.shape[1]):
                if mask[t, j]:
                    writer.writerow((date, assets[j], repr(float(values[t, j]))))
    finally:
        if should_close:
            fh.close()


def write_returns(panel: ReturnsPanel, dest) -> None:
    """Inverse of :func:`load_returns`; reloading reproduces the panel."""
    write_long_csv(panel.times, panel.assets, panel.values, panel.available, dest)


# ---------------------------------------------------------------------------
# exposures I/O
# ---------------------------------------------------------------------------

def load_exposures(source, panel: ReturnsPanel) -> ExposureSeries:
    """Parse a ``date,asset_id,factor_id,value`` CSV against a panel.

    Exposure declarations are piecewise constant: the value declared on a
    date persists until the next declaration.  Every declared date must be
    a panel date, the first panel date must be declared, and each declared
    date must cover every panel asset on every factor (a missing pair is a
    coverage error).  Rows for assets outside the panel are ignored.
    Segment boundaries are inferred where the exposure matrix actually
    changes, so re-declaring identical values does not split a segment.
    """
    per_date = {}
    for line, (d, a, f, v) in _read_rows(source, EXPOSURES_HEADER, "exposures"):
        date = _parse_date(d, line)
        if not f:
            raise ParseError(f"exposures: line {line}: empty factor_id")
        entry = per_date.setdefault(date, {})
        key = (a, f)
        if key in entry:
            raise DuplicateCellError(
                f"exposures: line {line}: duplicate entry for "
                f"({date.isoformat()}, {a}, {f})"
            )
        entry[key] = _parse_value(v, line)

    if not per_date:
        raise ParseError("exposures: no data rows")

    panel_dates = [d.astype(_dt.date) for d in panel.times]
    t_of = {d: i for i, d in enumerate(panel_dates)}
    declared = sorted(per_date)
    for date in declared:
        if date not in t_of:
            raise CoverageError(
                f"exposures: declared date {date.isoformat()} is not a panel date"
            )
    if panel_dates and panel_dates[0] not in per_date:
        raise CoverageError(
            f"exposures: first panel date {panel_dates[0].isoformat()} has no declaration"
        )

    factor_ids = sorted({f for entry in per_date.values() for (_, f) in entry})
    k = len(factor_ids)
    p = panel.n_assets

    def matrix_for(date) -> np.ndarray:
        entry = per_date[date]
        mat = np.empty((p, k))
        for j, asset in enumerate(panel.assets):
            for q, fid in enumerate(factor_ids):
                try:
                    mat[j, q] = entry[(asset, fid)]
                except KeyError:
                    raise CoverageError(
                        f"exposures: {date.isoformat()}: missing value for "
                        f"asset {asset!r}, factor {fid!r}"
                    ) from None
        return mat

    change_points = []
    matrices = []
    for date in declared:
        mat = matrix_for(date)
        if matrices and np.array_equal(matrices[-1], mat):
            continue  # identical re-declaration: same segment
        change_points.append(t_of[date])
        matrices.append(mat)
    return ExposureSeries(
        change_points=np.array(change_points, dtype=np.intp),
        matrices=tuple(matrices),
        factor_ids=tuple(factor_ids),
        n_times=panel.n_times,
    )


def write_exposures(exposures: ExposureSeries, panel: ReturnsPanel, dest) -> None:
    """Write one declaration per segment start date (loader round-trip)."""
    fh, should_close = _open_for_write(dest)
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EXPOSURES_HEADER)
        for s, (start, _) in enumerate(exposures.segments()):
            date = str(panel.times[start])
            mat = exposures.matrices[s]
            for j, asset in enumerate(panel.assets):
                for q, fid in enumerate(exposures.factor_ids):
                    writer.writerow((date, asset, fid, repr(float(mat[j, q]))))
    finally:
        if should_close:
            fh.close()


# ---------------------------------------------------------------------------
# availability
# ---------------------------------------------------------------------------

def summarize_availability(
    panel: ReturnsPanel, exposures: ExposureSeries | None = None
) -> AvailabilitySummary:
    """Summarize availability at segment granularity.

    An asset counts as available in a segment only when every one of its
    cells in that segment is observed; partially observed assets are
    treated as absent for the whole segment, which is what keeps tile
    regressions free of missing cells.
    """
    if exposures is None:
        seg_ranges = [(0, panel.n_times)] if panel.n_times else []
    else:
        if exposures.n_times != panel.n_times:
            raise ArgumentError("exposures and panel disagree on T")
        seg_ranges = exposures.segments()
    p = panel.n_assets
    per_segment = []
    for start, stop in seg_ranges:
        ok = panel.available[start:stop].all(axis=0)
        per_segment.append(np.flatnonzero(ok))
    if per_segment:
        always = per_segment[0]
        for seg in per_segment[1:]:
            always = np.intersect1d(always, seg, assume_unique=True)
    else:
        always = np.array([], dtype=np.intp)
    return AvailabilitySummary(
        always_available=always,
        per_segment_available=tuple(per_segment),
    )
