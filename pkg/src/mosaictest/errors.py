"""Exception hierarchy shared by every module.

Exceptions fall into three families that the command line maps onto exit
codes: statistical degeneracy (exit 1), bad inputs or arguments (exit 2),
and internal invariant violations (exit 3).
"""

from __future__ import annotations


class MosaicError(Exception):
    """Base class for all package errors."""


# ---------------------------------------------------------------------------
# input problems (exit code 2)
# ---------------------------------------------------------------------------

class InputError(MosaicError):
    """Malformed files, bad arguments, inconsistent dimensions."""


class ParseError(InputError):
    """A file failed to parse; the message carries the line number."""


class DuplicateCellError(InputError):
    """The same (date, asset) or (date, asset, factor) key appeared twice."""


class CoverageError(InputError):
    """An exposure file does not cover every panel asset in some segment."""


class ArgumentError(InputError, ValueError):
    """A function argument is out of its documented domain."""


class TilingValidationError(InputError):
    """A user-supplied tiling failed one of the validation checks."""


# ---------------------------------------------------------------------------
# statistical degeneracy (exit code 1)
# ---------------------------------------------------------------------------

class DegeneracyError(MosaicError):
    """The requested analysis is statistically empty or unstable."""


class PowerlessConfigError(DegeneracyError):
    """Too few assets per factor: every tile regression would saturate."""


class DegenerateBatchError(DegeneracyError):
    """A time batch shorter than two rows admits no nontrivial permutation."""


class RankError(DegeneracyError):
    """An exposure block is rank deficient after column deduplication."""


class ZeroVarianceError(DegeneracyError):
    """A resampling distribution collapsed to a point."""


# ---------------------------------------------------------------------------
# internal invariant violations (exit code 3)
# ---------------------------------------------------------------------------

class InternalInvariantError(MosaicError):
    """Something this package built violated its own contract."""
