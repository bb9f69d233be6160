"""Permutation engine: resample within tiles, rank the observed statistic.

Replicate r replaces each tile's rows by a uniformly random reordering;
replicate 0 is the identity and is always included in the reference set,
which is what makes the p-value

    p = (1 + #{r >= 1 : S_obs <= S_r}) / (R + 1)

valid at every R — ties count in the null's favour.  Each (replicate,
tile) order comes from its own counter-based stream keyed by
``(seed, r, m)``, so replicate 17 can be rebuilt without generating
replicates 0..16 and parallel evaluation is bit-identical to sequential.
"""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .errors import ArgumentError
from .residuals import MosaicResiduals, ResidualPanel
from .rng import DOMAIN_META_PERMS, DOMAIN_TILE_PERMS, check_seed, stream
from .tiling import Tiling


@dataclass(frozen=True, eq=False)
class PermutationSet:
    """Per-replicate, per-tile row orders; replicate 0 is the identity."""

    orders: tuple          # orders[r][m] is an index array over tile m's rows
    seed: int

    @property
    def n_replicates(self) -> int:
        return len(self.orders) - 1

    @property
    def n_tiles(self) -> int:
        return len(self.orders[0])


def sample_permutations(tiling: Tiling, R: int, seed: int) -> PermutationSet:
    """Draw R joint within-tile orders, uniformly and independently."""
    check_seed(seed)
    if R < 1:
        raise ArgumentError(f"need at least one replicate, got R={R}")
    sizes = [tile.batch.size for tile in tiling.tiles]
    identity = tuple(np.arange(n, dtype=np.intp) for n in sizes)
    orders = [identity]
    for r in range(1, R + 1):
        orders.append(
            tuple(
                stream(seed, DOMAIN_TILE_PERMS, r, m).permutation(n).astype(np.intp)
                for m, n in enumerate(sizes)
            )
        )
    return PermutationSet(orders=tuple(orders), seed=int(seed))


def materialize_view(mosaic: MosaicResiduals, tile_orders) -> ResidualPanel:
    """Assemble one permuted residual panel from explicit per-tile orders."""
    T, p = mosaic.tiling.n_times, mosaic.tiling.n_assets
    values = np.full((T, p), np.nan)
    defined = np.zeros((T, p), dtype=bool)
    for tile, block, order in zip(mosaic.tiling.tiles, mosaic.blocks, tile_orders):
        values[np.ix_(tile.batch, tile.group)] = block[order]
        defined[np.ix_(tile.batch, tile.group)] = True
    return ResidualPanel(values=values, defined=defined)


def permuted_view(mosaic: MosaicResiduals, perms: PermutationSet, r: int) -> ResidualPanel:
    """Replicate r's panel; r = 0 reproduces the observed residuals."""
    if not 0 <= r <= perms.n_replicates:
        raise ArgumentError(f"replicate {r} outside [0, {perms.n_replicates}]")
    return materialize_view(mosaic, perms.orders[r])


def evaluate_statistic(
    mosaic: MosaicResiduals,
    statistic,
    perms: PermutationSet,
    threads: int = 1,
) -> np.ndarray:
    """Evaluate a statistic on every replicate view.

    Returns shape (R+1,) for scalar statistics and (d, R+1) for vector
    ones; column/entry 0 is the observed value.  Thread count never
    changes the result — replicates are independent pure evaluations
    collected by index.
    """
    def one(r: int):
        view = permuted_view(mosaic, perms, r)
        return np.asarray(statistic(view.values, view.defined), dtype=np.float64)

    n = perms.n_replicates + 1
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n)))
    else:
        results = [one(r) for r in range(n)]
    first = results[0]
    if first.ndim == 0:
        return np.array([float(v) for v in results])
    return np.stack(results, axis=1)


# ---------------------------------------------------------------------------
# p-values and standardizations
# ---------------------------------------------------------------------------

def pvalue(observed: float, draws) -> float:
    """Inclusive Monte-Carlo p-value: (1 + #{draws >= observed}) / (R + 1)."""
    draws = np.asarray(draws, dtype=np.float64)
    if draws.size < 1:
        raise ArgumentError("need at least one permutation draw")
    return float((1 + np.count_nonzero(draws >= observed)) / (draws.size + 1))


def exact_z(p: float) -> float:
    """Positive part of the normal quantile at 1 - p.

    Superuniform p-values make this a valid one-sided Z-statistic: under
    the null P(exact_z >= z) <= 1 - Phi(z) for every z >= 0.
    """
    if not 0.0 < p <= 1.0:
        raise ArgumentError(f"p-value must lie in (0, 1], got {p}")
    return float(max(0.0, norm.ppf(1.0 - p)))


def z_scores(all_values) -> np.ndarray:
    """Center and scale the R+1 statistic values by their own moments.

    Uses the population standard deviation over all values including the
    observed one, so the scores sum to zero and their squares sum to the
    number of values.  A degenerate (constant) set scores all zeros.
    """
    vals = np.asarray(all_values, dtype=np.float64)
    sd = vals.std()
    if sd == 0.0 or not math.isfinite(sd):
        return np.zeros_like(vals)
    return (vals - vals.mean()) / sd


def approx_z(observed: float, draws) -> float:
    """Gaussian-comparable standardization of the observed statistic."""
    draws = np.asarray(draws, dtype=np.float64)
    return float(z_scores(np.concatenate(([observed], draws)))[0])


def permutation_threshold(draws, alpha: float) -> float:
    """Smallest value the observed statistic must exceed to reject.

    This is the ceil((1-alpha)(R+1))-th order statistic of the R draws;
    ``observed > threshold`` holds exactly when the inclusive p-value is
    at most alpha.  When alpha is below 1/(R+1) no rejection is possible
    and the threshold is +inf.
    """
    if not 0.0 < alpha < 1.0:
        raise ArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    draws = np.sort(np.asarray(draws, dtype=np.float64))
    R = draws.size
    k = math.ceil((1.0 - alpha) * (R + 1))
    if k > R:
        return float("inf")
    return float(draws[max(k, 1) - 1])


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StatReport:
    """Everything a single permutation test produced."""

    observed: float
    null_draws: np.ndarray
    p_value: float
    z_exact: float
    z_approx: float
    threshold: float
    seed: int

    @property
    def n_replicates(self) -> int:
        return int(np.asarray(self.null_draws).size)

    def to_json(self) -> str:
        return json.dumps(
            {
                "observed": self.observed,
                "p_value": self.p_value,
                "z_exact": self.z_exact,
                "z_approx": self.z_approx,
                "threshold": self.threshold,
                "R": self.n_replicates,
                "seed": self.seed,
            },
            sort_keys=True,
        )


def report_from_draws(observed: float, draws, seed: int, alpha: float = 0.05) -> StatReport:
    """Assemble the standard report from an observed value and null draws."""
    draws = np.asarray(draws, dtype=np.float64)
    p = pvalue(observed, draws)
    return StatReport(
        observed=float(observed),
        null_draws=draws,
        p_value=p,
        z_exact=exact_z(p),
        z_approx=approx_z(observed, draws),
        threshold=permutation_threshold(draws, alpha),
        seed=int(seed),
    )


def bonferroni(report: StatReport, divisor: int) -> StatReport:
    """Multiply the p-value by ``divisor`` (capped at 1); adjust z_exact."""
    if divisor < 1:
        raise ArgumentError(f"Bonferroni divisor must be >= 1, got {divisor}")
    p = min(1.0, report.p_value * divisor)
    return replace(report, p_value=p, z_exact=exact_z(p))


# ---------------------------------------------------------------------------
# top-level tests
# ---------------------------------------------------------------------------

def mosaic_test(
    mosaic: MosaicResiduals,
    statistic,
    R: int,
    seed: int,
    alpha: float = 0.05,
    threads: int = 1,
) -> StatReport:
    """Run the permutation test for a scalar statistic."""
    perms = sample_permutations(mosaic.tiling, R, seed)
    values = evaluate_statistic(mosaic, statistic, perms, threads=threads)
    if values.ndim != 1:
        raise ArgumentError(
            "mosaic_test needs a scalar statistic; use adaptive_mosaic_test "
            "for vector-valued families"
        )
    return report_from_draws(values[0], values[1:], seed, alpha)


def adaptive_pvalue(stat_matrix, K: int, seed: int, meta="max_z") -> float:
    """Aggregate a d x (R+1) family of statistic values into one p-value.

    The meta-statistic (default: the largest per-candidate standardized
    score of column 0 against the other columns) is recomputed under K
    uniformly random relabelings of which column plays "observed"; its
    observed value is ranked among the relabeled ones inclusively.  Any
    measurable meta-statistic keeps the test exact, because relabeling
    columns of an exchangeable family is again exchangeable.
    """
    f_orig, f_draws = _meta_draws(stat_matrix, K, seed, meta)
    return pvalue(f_orig, f_draws)


def _max_z_meta(matrix: np.ndarray) -> float:
    obs = matrix[:, 0]
    rest = matrix[:, 1:]
    mu = rest.mean(axis=1)
    sd = rest.std(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(sd > 0, (obs - mu) / np.where(sd > 0, sd, 1.0), 0.0)
    return float(z.max())


def _meta_draws(stat_matrix, K: int, seed: int, meta="max_z"):
    matrix = np.asarray(stat_matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] < 2:
        raise ArgumentError("stat_matrix must be d x (R+1) with R >= 1")
    if K < 1:
        raise ArgumentError(f"need at least one relabeling, got K={K}")
    fn = meta if callable(meta) else {"max_z": _max_z_meta}.get(meta)
    if fn is None:
        raise ArgumentError(f"unknown meta-statistic {meta!r}")
    f_orig = float(fn(matrix))
    rng = stream(seed, DOMAIN_META_PERMS)
    n = matrix.shape[1]
    f_draws = np.empty(K)
    for ell in range(K):
        f_draws[ell] = fn(matrix[:, rng.permutation(n)])
    return f_orig, f_draws


def adaptive_mosaic_test(
    mosaic: MosaicResiduals,
    family_statistic,
    R: int,
    K: int,
    seed: int,
    alpha: float = 0.05,
    threads: int = 1,
    meta="max_z",
):
    """Permutation test over a family of candidate statistics.

    Returns ``(report, stat_matrix)``: the report ranks the family-level
    meta-statistic, and the d x (R+1) matrix exposes each candidate's
    observed (column 0) and replicate values for inspection.
    """
    perms = sample_permutations(mosaic.tiling, R, seed)
    matrix = evaluate_statistic(mosaic, family_statistic, perms, threads=threads)
    if matrix.ndim != 2:
        raise ArgumentError("adaptive_mosaic_test needs a vector-valued statistic")
    f_orig, f_draws = _meta_draws(matrix, K, seed, meta)
    return report_from_draws(f_orig, f_draws, seed, alpha), matrix


# ---------------------------------------------------------------------------
# exhaustive enumeration (small problems, exactness checks)
# ---------------------------------------------------------------------------

def all_joint_orders(tiling: Tiling, limit: int = 1_000_000):
    """Every joint assignment of within-tile row orders, identity first.

    The count is the product of the factorials of the batch sizes; an
    enumeration larger than ``limit`` is refused.
    """
    sizes = [tile.batch.size for tile in tiling.tiles]
    total = 1
    for n in sizes:
        total *= math.factorial(n)
        if total > limit:
            raise ArgumentError(f"enumeration would exceed {limit} joint orders")
    pools = [
        [np.array(p, dtype=np.intp) for p in itertools.permutations(range(n))] for n in sizes
    ]
    return [tuple(combo) for combo in itertools.product(*pools)]
