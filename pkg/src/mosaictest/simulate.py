"""Semisynthetic data generation and level/power studies.

The generator plants a single sparse spike on top of an exact factor
model: returns are exposures times heavy-tailed factor returns plus
idiosyncratic noise plus ``Z_t v`` where ``v`` spreads total strength
``rho`` over a fraction ``s0`` of assets.  ``rho = 0`` makes the spike
vanish, so those configurations satisfy the null exactly and are what
false-positive-rate studies must use.

Studies derive every replicate's seed from (study seed, cell, replicate)
counter streams, so any single table row can be replayed without
rerunning the rest of the grid.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .baselines import naive_bootstrap_z, naive_perm_test
from .errors import ArgumentError
from .panel import ExposureSeries, ReturnsPanel, _freeze, _open_for_write
from .permute import adaptive_pvalue, evaluate_statistic, pvalue, sample_permutations
from .residuals import mosaic_residuals, ols_residuals
from .rng import DOMAIN_SIM_DATA, DOMAIN_STUDY, check_seed, child_seed, stream
from .stats import DEFAULT_GAMMAS, build_statistic, make_mmc, make_qmc_family
from .tiling import default_tiling

STUDY_HEADER = ("config_hash", "method", "rho", "s0", "reps", "rejection_rate", "stderr")
_DISTRIBUTIONS = ("gaussian", "student-t")


# ---------------------------------------------------------------------------
# configuration and truth
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SimConfig:
    """One semisynthetic scenario.

    ``factor_dist`` drives the factor returns and the spike's time
    series; ``noise_dist`` drives idiosyncratic noise; both default to a
    heavy-tailed t with ``t_df`` degrees of freedom (must exceed 2 so
    variances exist).  Exposures are standard Gaussian draws unless
    ``exposure_source="file"`` supplies a fixed matrix.
    """

    T: int
    p: int
    k: int
    rho: float = 0.0
    s0: float = 0.1
    factor_dist: str = "student-t"
    noise_dist: str = "student-t"
    t_df: float = 4.0
    exposure_source: str = "random-gaussian"
    exposures: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.T < 2 or self.p < 1 or self.k < 0:
            raise ArgumentError(f"bad dimensions T={self.T}, p={self.p}, k={self.k}")
        if self.rho < 0:
            raise ArgumentError(f"rho must be non-negative, got {self.rho}")
        if not 0.0 < self.s0 <= 1.0:
            raise ArgumentError(f"s0 must lie in (0, 1], got {self.s0}")
        for dist in (self.factor_dist, self.noise_dist):
            if dist not in _DISTRIBUTIONS:
                raise ArgumentError(f"unknown distribution {dist!r}")
        if self.t_df <= 2.0:
            raise ArgumentError(f"t_df must exceed 2 so variances exist, got {self.t_df}")
        check_seed(self.seed)
        if self.exposure_source == "file":
            if self.exposures is None:
                raise ArgumentError("exposure_source='file' needs an exposures matrix")
            mat = np.asarray(self.exposures, dtype=np.float64)
            if mat.shape != (self.p, self.k):
                raise ArgumentError(
                    f"exposure matrix has shape {mat.shape}, expected ({self.p}, {self.k})"
                )
            object.__setattr__(self, "exposures", _freeze(mat.copy()))
        elif self.exposure_source != "random-gaussian":
            raise ArgumentError(f"unknown exposure source {self.exposure_source!r}")

    def config_hash(self) -> str:
        payload = {
            "T": self.T, "p": self.p, "k": self.k,
            "rho": self.rho, "s0": self.s0,
            "factor_dist": self.factor_dist, "noise_dist": self.noise_dist,
            "t_df": self.t_df, "exposure_source": self.exposure_source,
            "seed": self.seed,
        }
        if self.exposures is not None:
            payload["exposures_sha"] = hashlib.sha256(
                np.ascontiguousarray(self.exposures).tobytes()
            ).hexdigest()
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True, eq=False)
class SimTruth:
    """The planted alternative: spike vector and its support."""

    vector: np.ndarray
    support: np.ndarray
    rho: float
    s0: float

    def __post_init__(self):
        object.__setattr__(self, "vector", _freeze(np.asarray(self.vector, dtype=np.float64)))
        object.__setattr__(self, "support", _freeze(np.asarray(self.support, dtype=np.intp)))

    @property
    def null_holds(self) -> bool:
        return self.rho == 0.0


def _draw(rng, shape, dist: str, df: float) -> np.ndarray:
    if dist == "gaussian":
        return rng.standard_normal(shape)
    return rng.standard_t(df, size=shape)


def gen_semisynthetic(config: SimConfig):
    """Generate one panel: returns, constant exposures, and the truth.

    Deterministic in ``config`` (bit-for-bit): every array comes from a
    counter stream keyed by the config seed and a fixed purpose tag.
    """
    T, p, k = config.T, config.p, config.k
    if config.exposure_source == "file":
        L = np.asarray(config.exposures, dtype=np.float64)
    else:
        L = stream(config.seed, DOMAIN_SIM_DATA, 0).standard_normal((p, k))
    X = _draw(stream(config.seed, DOMAIN_SIM_DATA, 1), (T, k), config.factor_dist, config.t_df)
    noise = _draw(stream(config.seed, DOMAIN_SIM_DATA, 2), (T, p), config.noise_dist, config.t_df)
    z = _draw(stream(config.seed, DOMAIN_SIM_DATA, 3), T, config.factor_dist, config.t_df)

    m = math.ceil(config.s0 * p)
    support = np.sort(stream(config.seed, DOMAIN_SIM_DATA, 4).choice(p, size=m, replace=False))
    vector = np.zeros(p)
    if config.rho > 0:
        vector[support] = config.rho / math.sqrt(m)

    values = X @ L.T + noise + np.outer(z, vector)
    times = np.datetime64("2000-01-03", "D") + np.arange(T)
    assets = tuple(f"A{j:04d}" for j in range(p))
    panel = ReturnsPanel(
        times=times, assets=assets, values=values, available=np.ones((T, p), dtype=bool)
    )
    exposures = ExposureSeries.constant(
        L, factor_ids=tuple(f"F{q:02d}" for q in range(k)), n_times=T
    )
    return panel, exposures, SimTruth(vector=vector, support=support, rho=config.rho, s0=config.s0)


# ---------------------------------------------------------------------------
# study rows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyRow:
    config_hash: str
    method: str
    rho: float
    s0: float
    reps: int
    rejection_rate: float
    stderr: float


def _binomial_stderr(rate: float, reps: int) -> float:
    return math.sqrt(max(rate * (1.0 - rate), 0.0) / reps)


def write_study_csv(rows, dest) -> None:
    fh, should_close = _open_for_write(dest)
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STUDY_HEADER)
        for row in rows:
            writer.writerow(
                (
                    row.config_hash, row.method,
                    repr(float(row.rho)), repr(float(row.s0)), int(row.reps),
                    repr(float(row.rejection_rate)), repr(float(row.stderr)),
                )
            )
    finally:
        if should_close:
            fh.close()


# ---------------------------------------------------------------------------
# false-positive-rate study
# ---------------------------------------------------------------------------

FPR_METHODS = ("mosaic", "naive_perm", "naive_bootstrap")


def fpr_study(
    configs,
    methods=FPR_METHODS,
    *,
    reps: int,
    alpha: float = 0.05,
    R: int = 99,
    B: int = 100,
    seed: int = 0,
    statistic_config="mmc",
    batch_size: int = 10,
    threads: int = 1,
):
    """Rejection rates of each method on exact-null configurations.

    Every config must have ``rho = 0`` — a false-positive rate measured
    off the null would be meaningless.  Returns ``(rows, detail)`` where
    detail holds one ``(method, replicate, p_or_z)`` triple per run for
    the comparison CSV.
    """
    configs = list(configs)
    for config in configs:
        if config.rho != 0.0:
            raise ArgumentError("false-positive-rate studies need rho = 0 in every config")
    for method in methods:
        if method not in FPR_METHODS:
            raise ArgumentError(f"unknown method {method!r}")
    if reps < 1:
        raise ArgumentError("need at least one replicate")
    z_two_sided = float(norm.ppf(1.0 - alpha / 2.0))
    rows, detail = [], []
    for ci, config in enumerate(configs):
        hits = {method: 0 for method in methods}
        for r in range(reps):
            run = replace(config, seed=child_seed(seed, DOMAIN_STUDY, ci, r))
            panel, exposures, _ = gen_semisynthetic(run)
            statistic = build_statistic(statistic_config)
            if "mosaic" in methods:
                tiling = default_tiling(
                    run.T, run.p, run.k, batch_size=batch_size,
                    seed=child_seed(seed, DOMAIN_STUDY, ci, r, 1),
                )
                mosaic = mosaic_residuals(panel, exposures, tiling)
                perms = sample_permutations(
                    tiling, R, child_seed(seed, DOMAIN_STUDY, ci, r, 2)
                )
                vals = evaluate_statistic(mosaic, statistic, perms, threads=threads)
                p = pvalue(vals[0], vals[1:])
                hits["mosaic"] += p <= alpha
                detail.append(("mosaic", r, p))
            if "naive_perm" in methods or "naive_bootstrap" in methods:
                ols = ols_residuals(panel, exposures)
            if "naive_perm" in methods:
                report = naive_perm_test(
                    ols, statistic, R, child_seed(seed, DOMAIN_STUDY, ci, r, 3), alpha
                )
                hits["naive_perm"] += report.p_value <= alpha
                detail.append(("naive_perm", r, report.p_value))
            if "naive_bootstrap" in methods:
                boot = naive_bootstrap_z(
                    ols, statistic, B, child_seed(seed, DOMAIN_STUDY, ci, r, 4)
                )
                hits["naive_bootstrap"] += abs(boot.z_bs) >= z_two_sided
                detail.append(("naive_bootstrap", r, boot.z_bs))
        for method in methods:
            rate = hits[method] / reps
            rows.append(
                StudyRow(
                    config_hash=_study_hash(config, seed, R, alpha, statistic_config),
                    method=method,
                    rho=config.rho,
                    s0=config.s0,
                    reps=reps,
                    rejection_rate=rate,
                    stderr=_binomial_stderr(rate, reps),
                )
            )
    return rows, detail


def _study_hash(config: SimConfig, seed: int, R: int, alpha: float, statistic_config) -> str:
    blob = json.dumps(
        {
            "config": config.config_hash(),
            "study_seed": seed,
            "R": R,
            "alpha": alpha,
            "statistic": statistic_config if isinstance(statistic_config, str)
            else json.dumps(statistic_config, sort_keys=True),
        },
        sort_keys=True,
    ).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


# ---------------------------------------------------------------------------
# power study
# ---------------------------------------------------------------------------

POWER_METHODS = ("mosaic_adaptive_qmc", "mosaic_oracle_qmc", "ols_double_oracle_qmc")


def power_study(
    rho_grid,
    s0_grid,
    *,
    T: int = 50,
    p: int = 100,
    k: int = 10,
    reps: int = 200,
    R: int = 99,
    K: int = 199,
    alpha: float = 0.05,
    seed: int = 0,
    gammas=DEFAULT_GAMMAS,
    null_reps: int = 200,
    batch_size: int = 10,
    factor_dist: str = "student-t",
    noise_dist: str = "student-t",
    t_df: float = 4.0,
    threads: int = 1,
):
    """Rejection rates over a (rho, s0) grid for three procedures.

    * ``mosaic_adaptive_qmc`` — the tile-based test aggregating the whole
      quantile family through the relabeling layer: one honest p-value,
      no tuning knowledge.
    * ``mosaic_oracle_qmc`` — the tile-based test run separately at each
      quantile level; each cell reports the best level's power.  An
      infeasible benchmark: it peeks at the truth to pick the level.
    * ``ols_double_oracle_qmc`` — whole-panel OLS residuals, best
      quantile level, calibrated against that statistic's own simulated
      exact-null distribution.  Infeasible twice over (oracle level,
      oracle null), so it upper-bounds what the OLS route could do.

    Returns study rows, one per (cell, method).
    """
    rho_grid = [float(r) for r in rho_grid]
    s0_grid = [float(s) for s in s0_grid]
    gammas = tuple(float(g) for g in gammas)
    family = make_qmc_family(gammas)
    d = len(gammas)

    # Null bank for the OLS calibration: rho = 0 makes s0 irrelevant, so a
    # single bank serves every cell.
    null_stats = np.empty((d, null_reps))
    for nr in range(null_reps):
        config = SimConfig(
            T=T, p=p, k=k, rho=0.0, s0=s0_grid[0],
            factor_dist=factor_dist, noise_dist=noise_dist, t_df=t_df,
            seed=child_seed(seed, DOMAIN_STUDY, 10_000, nr),
        )
        panel, exposures, _ = gen_semisynthetic(config)
        ols = ols_residuals(panel, exposures)
        null_stats[:, nr] = family(ols.values, ols.defined)

    rows = []
    cell = 0
    for s0 in s0_grid:
        for rho in rho_grid:
            adaptive_hits = 0
            per_gamma_hits = np.zeros(d)
            ols_hits = np.zeros(d)
            base = SimConfig(
                T=T, p=p, k=k, rho=rho, s0=s0,
                factor_dist=factor_dist, noise_dist=noise_dist, t_df=t_df, seed=seed,
            )
            for r in range(reps):
                run = replace(base, seed=child_seed(seed, DOMAIN_STUDY, cell, r))
                panel, exposures, _ = gen_semisynthetic(run)
                tiling = default_tiling(
                    T, p, k, batch_size=batch_size,
                    seed=child_seed(seed, DOMAIN_STUDY, cell, r, 1),
                )
                mosaic = mosaic_residuals(panel, exposures, tiling)
                perms = sample_permutations(
                    tiling, R, child_seed(seed, DOMAIN_STUDY, cell, r, 2)
                )
                matrix = evaluate_statistic(mosaic, family, perms, threads=threads)
                p_adaptive = adaptive_pvalue(
                    matrix, K=K, seed=child_seed(seed, DOMAIN_STUDY, cell, r, 3)
                )
                adaptive_hits += p_adaptive <= alpha
                for i in range(d):
                    per_gamma_hits[i] += pvalue(matrix[i, 0], matrix[i, 1:]) <= alpha
                ols = ols_residuals(panel, exposures)
                obs = family(ols.values, ols.defined)
                for i in range(d):
                    p_ols = (1 + np.count_nonzero(null_stats[i] >= obs[i])) / (null_reps + 1)
                    ols_hits[i] += p_ols <= alpha
            rates = {
                "mosaic_adaptive_qmc": adaptive_hits / reps,
                "mosaic_oracle_qmc": float(per_gamma_hits.max() / reps),
                "ols_double_oracle_qmc": float(ols_hits.max() / reps),
            }
            for method in POWER_METHODS:
                rate = rates[method]
                rows.append(
                    StudyRow(
                        config_hash=_study_hash(base, seed, R, alpha, "qmc_family"),
                        method=method,
                        rho=rho,
                        s0=s0,
                        reps=reps,
                        rejection_rate=rate,
                        stderr=_binomial_stderr(rate, reps),
                    )
                )
            cell += 1
    return rows
