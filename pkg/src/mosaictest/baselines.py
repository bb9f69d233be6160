"""Reference procedures the tile-based test is compared against.

Both procedures operate on whole-cross-section OLS residuals and both are
known to be anti-conservative for this problem: independent column
permutation destroys the cross-sectional dependence that estimation
itself induces in OLS residuals, and the row bootstrap's bias correction
undershoots because the resampled statistic inherits the same estimation
bias it is asked to measure.  They exist to be shown failing on data
where the tile-based test holds its level, and to hold their own level
in the one situation where they are valid (no factors regressed out,
independent columns).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ZeroVarianceError
from .panel import _open_for_write
from .permute import StatReport, report_from_draws
from .residuals import ResidualPanel
from .rng import DOMAIN_BOOTSTRAP, DOMAIN_NAIVE_PERM, check_seed, stream

COMPARISON_HEADER = ("method", "replicate", "p_or_z")


def _complete_values(ols: ResidualPanel) -> np.ndarray:
    if not ols.defined.all():
        raise ArgumentError("baseline procedures need a complete residual panel")
    return ols.values


def naive_perm_test(
    ols: ResidualPanel, statistic, R: int, seed: int, alpha: float = 0.05
) -> StatReport:
    """Permute each residual column independently and rank the statistic.

    Valid only if the columns were independent to begin with — which OLS
    residualization destroys — so on factor-model nulls this test
    over-rejects, often severely.
    """
    values = _complete_values(ols)
    check_seed(seed)
    if R < 1:
        raise ArgumentError(f"need at least one replicate, got R={R}")
    defined = np.ones_like(values, dtype=bool)
    observed = float(statistic(values, defined))
    draws = np.empty(R)
    for r in range(1, R + 1):
        shuffled = stream(seed, DOMAIN_NAIVE_PERM, r).permuted(values, axis=0)
        draws[r - 1] = float(statistic(shuffled, defined))
    return report_from_draws(observed, draws, seed, alpha)


@dataclass(frozen=True, eq=False)
class BootstrapReport:
    """Row-bootstrap Z statistic with its ingredients."""

    observed: float          # statistic at the original residual panel
    theta_bs: float          # plug-in parameter of the bootstrap law
    bias_estimate: float     # mean resampled statistic minus theta_bs
    sd: float                # sample sd of the resampled statistic
    z_bs: float              # (observed - bias) / sd
    n_resamples: int
    seed: int


def naive_bootstrap_z(
    ols: ResidualPanel, statistic, B: int, seed: int
) -> BootstrapReport:
    """Bias-corrected bootstrap Z for a plug-in statistic of the row law.

    Rows are resampled with replacement B times; the bias estimate is the
    mean resampled statistic minus the plug-in parameter of the bootstrap
    distribution, which for a plug-in statistic is the observed value
    itself.  Statistics that are not plug-in functionals of the empirical
    row distribution (anything consuming tile structure, e.g. the
    cross-validated loading score) have no such parameter and are
    rejected.
    """
    values = _complete_values(ols)
    check_seed(seed)
    if B < 2:
        raise ArgumentError(f"need at least 2 resamples, got B={B}")
    if not getattr(statistic, "plug_in", True):
        name = getattr(statistic, "name", repr(statistic))
        raise ArgumentError(
            f"statistic {name} is not a plug-in functional of the row "
            f"distribution; the bootstrap bias correction is undefined for it"
        )
    T = values.shape[0]
    defined = np.ones_like(values, dtype=bool)
    observed = float(statistic(values, defined))
    draws = np.empty(B)
    for b in range(B):
        rows = stream(seed, DOMAIN_BOOTSTRAP, b).integers(0, T, size=T)
        draws[b] = float(statistic(values[rows], defined))
    sd = float(draws.std(ddof=1))
    if sd == 0.0:
        raise ZeroVarianceError("bootstrap distribution is a point mass")
    theta_bs = observed
    bias = float(draws.mean() - theta_bs)
    return BootstrapReport(
        observed=observed,
        theta_bs=theta_bs,
        bias_estimate=bias,
        sd=sd,
        z_bs=(observed - bias) / sd,
        n_resamples=int(B),
        seed=int(seed),
    )


def write_comparison_csv(rows, dest) -> None:
    """Persist per-replicate outcomes: ``method,replicate,p_or_z``."""
    fh, should_close = _open_for_write(dest)
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPARISON_HEADER)
        for method, replicate, value in rows:
            writer.writerow((method, int(replicate), repr(float(value))))
    finally:
        if should_close:
            fh.close()
