"""End-to-end statistical acceptance checks.

Each test below guards one externally stated guarantee of the package:
exact finite-sample level, agreement with brute-force enumeration,
invalidity of the naive baselines the mosaic test replaces, calibration
of the approximate z-score, power tracking of the adaptive statistic,
the improvement (bi-cross-validated r-squared) workflow, deterministic
numerics, and level control under missing data.

Every test prints exactly one summary line of the form

    ACCEPTANCE <n> (<label>): PASS|FAIL — <measurements>

so a full run doubles as a scoreboard.  The Monte-Carlo loops are sized
for tight rate bands and take several minutes altogether; all seeds are
fixed, so every number below is reproducible bit for bit.
"""

import time

import numpy as np
import pytest

from conftest import constant_exposures, gaussian_null, panel_from_values
from mosaictest import (
    ExposureSeries,
    ReturnsPanel,
    SimConfig,
    Statistic,
    Tile,
    Tiling,
    adaptive_mosaic_test,
    all_joint_orders,
    default_tiling,
    empirical_correlation,
    gen_semisynthetic,
    make_bcv_r2,
    make_mmc,
    make_qmc_family,
    mosaic_residuals,
    mosaic_test,
    naive_bootstrap_z,
    naive_perm_test,
    ols_residuals,
    power_study,
    pvalue,
    summarize_availability,
    train_loadings,
    validate_tiling,
    z_scores,
)


pytestmark = pytest.mark.acceptance


def _announce(capsys, num, label, ok, details):
    verdict = "PASS" if ok else "FAIL"
    with capsys.disabled():
        print(f"\nACCEPTANCE {num} ({label}): {verdict} — {details}")


# ---------------------------------------------------------------------------
# shared null calibration run (criteria 1 and 4)
# ---------------------------------------------------------------------------

CAL_REPS = 2000
CAL_T, CAL_P, CAL_K, CAL_R = 60, 60, 8, 99


@pytest.fixture(scope="module")
def null_calibration():
    """2000 independent Gaussian-null runs of the MMC mosaic test.

    Returns the per-run p-values and approximate z-scores, the worst
    violation of the z-score algebraic identities (sum zero, sum of
    squares R+1) across all runs, and the wall time of the first 1000
    runs (the level-control criterion's runtime budget).
    """
    pvals = np.empty(CAL_REPS)
    zs = np.empty(CAL_REPS)
    worst_sum = 0.0
    worst_sumsq = 0.0
    t0 = time.time()
    first_half_elapsed = None
    for rep in range(CAL_REPS):
        panel, exposures = gaussian_null(CAL_T, CAL_P, CAL_K, seed=rep)
        tiling = default_tiling(CAL_T, CAL_P, CAL_K, seed=rep)
        mosaic = mosaic_residuals(panel, exposures, tiling)
        report = mosaic_test(mosaic, make_mmc(), R=CAL_R, seed=rep)
        pvals[rep] = report.p_value
        zs[rep] = report.z_approx
        scores = z_scores(np.concatenate(([report.observed], report.null_draws)))
        worst_sum = max(worst_sum, abs(scores.sum()))
        worst_sumsq = max(worst_sumsq, abs((scores**2).sum() - (CAL_R + 1)))
        if rep == 999:
            first_half_elapsed = time.time() - t0
    return {
        "pvals": pvals,
        "z_approx": zs,
        "worst_sum": worst_sum,
        "worst_sumsq": worst_sumsq,
        "first_half_elapsed": first_half_elapsed,
    }


def test_criterion_1_exact_level_control(null_calibration, capsys):
    pvals = null_calibration["pvals"][:1000]
    rate_05 = float(np.mean(pvals <= 0.05))
    rate_01 = float(np.mean(pvals <= 0.01))
    elapsed = null_calibration["first_half_elapsed"]
    ok = 0.03 <= rate_05 <= 0.07 and 0.004 <= rate_01 <= 0.018 and elapsed < 300.0
    _announce(
        capsys, 1, "exact level control", ok,
        f"P(p<=0.05)={rate_05:.3f} in [0.03,0.07], P(p<=0.01)={rate_01:.3f} "
        f"in [0.004,0.018], 1000 runs in {elapsed:.0f}s (budget 300s)",
    )
    assert 0.03 <= rate_05 <= 0.07
    assert 0.004 <= rate_01 <= 0.018
    assert elapsed < 300.0


def test_criterion_2_exhaustive_enumeration_match(capsys):
    rng = np.random.default_rng(123)
    T, p = 4, 6
    values = rng.standard_normal((T, p))
    panel = panel_from_values(values)
    exposures = constant_exposures(rng.standard_normal((p, 1)), T)
    tiles = (
        Tile(batch=np.arange(T), group=np.arange(0, 3)),
        Tile(batch=np.arange(T), group=np.arange(3, 6)),
    )
    tiling = Tiling(tiles=tiles, n_times=T, n_assets=p)
    mosaic = mosaic_residuals(panel, exposures, tiling)

    orders = all_joint_orders(tiling)
    identity_first = all(o.tolist() == [0, 1, 2, 3] for o in orders[0])

    def independent_mmc(full):
        corr = np.corrcoef(full, rowvar=False)
        off = np.abs(corr - np.diag(np.diag(corr)))
        return float(off.max(axis=1).mean())

    stats = np.empty(len(orders))
    full = np.empty((T, p))
    for i, combo in enumerate(orders):
        for tile, block, order in zip(tiles, mosaic.blocks, combo):
            full[np.ix_(tile.batch, tile.group)] = np.asarray(block)[order]
        stats[i] = independent_mmc(full)

    engine_p = pvalue(stats[0], stats[1:])
    brute_p = np.count_nonzero(stats >= stats[0]) / len(orders)
    ok = len(orders) == 576 and identity_first and engine_p == brute_p
    _announce(
        capsys, 2, "exhaustive enumeration match", ok,
        f"{len(orders) - 1} non-identity joint orders, engine p={engine_p:.6f} "
        f"== brute-force rank p={brute_p:.6f} exactly",
    )
    assert len(orders) == 576 and identity_first
    assert engine_p == brute_p


def test_criterion_3_baseline_invalidity_contrast(capsys):
    T, p, k = 350, 150, 40
    mosaic_reps, naive_reps = 500, 100
    mosaic_p = np.empty(mosaic_reps)
    naive_p = np.empty(naive_reps)
    boot_z = np.empty(naive_reps)
    statistic = make_mmc()
    t0 = time.time()
    for rep in range(mosaic_reps):
        panel, exposures = gaussian_null(T, p, k, seed=30_000 + rep)
        tiling = default_tiling(T, p, k, seed=rep)
        mosaic = mosaic_residuals(panel, exposures, tiling)
        mosaic_p[rep] = mosaic_test(mosaic, statistic, R=99, seed=rep).p_value
        if rep < naive_reps:
            ols = ols_residuals(panel, exposures)
            naive_p[rep] = naive_perm_test(ols, statistic, R=99, seed=rep).p_value
            boot_z[rep] = naive_bootstrap_z(ols, statistic, B=100, seed=rep).z_bs
    elapsed = time.time() - t0
    mosaic_rate = float(np.mean(mosaic_p <= 0.05))
    naive_rate = float(np.mean(naive_p <= 0.05))
    mean_z = float(boot_z.mean())
    ok = (
        naive_rate >= 0.90
        and mean_z >= 5.0
        and 0.03 <= mosaic_rate <= 0.07
        and elapsed < 900.0
    )
    _announce(
        capsys, 3, "baseline invalidity contrast", ok,
        f"naive-perm rejects {naive_rate:.0%} (need >=90%), bootstrap mean "
        f"z={mean_z:.1f} (need >=5), mosaic level {mosaic_rate:.3f} in "
        f"[0.03,0.07] over {mosaic_reps} runs, {elapsed:.0f}s (budget 900s)",
    )
    assert naive_rate >= 0.90
    assert mean_z >= 5.0
    assert 0.03 <= mosaic_rate <= 0.07
    assert elapsed < 900.0


def test_criterion_4_approximate_z_calibration(null_calibration, capsys):
    zs = null_calibration["z_approx"]
    mean = float(zs.mean())
    var = float(zs.var(ddof=1))
    worst_sum = null_calibration["worst_sum"]
    worst_sumsq = null_calibration["worst_sumsq"]
    ok = (
        abs(mean) <= 0.07
        and 0.85 <= var <= 1.15
        and worst_sum <= 1e-10
        and worst_sumsq <= 1e-10
    )
    _announce(
        capsys, 4, "approximate z calibration", ok,
        f"mean={mean:+.4f} within ±0.07, variance={var:.4f} in [0.85,1.15] "
        f"over {zs.size} runs; identity residuals sum<={worst_sum:.1e}, "
        f"sumsq<={worst_sumsq:.1e} (tol 1e-10)",
    )
    assert abs(mean) <= 0.07
    assert 0.85 <= var <= 1.15
    assert worst_sum <= 1e-10
    assert worst_sumsq <= 1e-10


def test_criterion_5_adaptive_power_tracking(capsys):
    t0 = time.time()
    rows = power_study(
        [0.0, 2.0, 4.0, 6.0],
        [0.05, 0.5],
        T=50, p=100, k=10,
        reps=200, R=399, K=199, null_reps=399, seed=2026,
    )
    elapsed = time.time() - t0
    by_cell = {}
    for row in rows:
        by_cell.setdefault((row.rho, row.s0), {})[row.method] = row.rejection_rate
    gap_ao = {}
    gap_od = {}
    for cell, rates in by_cell.items():
        gap_ao[cell] = rates["mosaic_oracle_qmc"] - rates["mosaic_adaptive_qmc"]
        gap_od[cell] = rates["ols_double_oracle_qmc"] - rates["mosaic_oracle_qmc"]
    worst_ao = max(gap_ao, key=gap_ao.get)
    worst_od = max(gap_od, key=gap_od.get)
    ok = gap_ao[worst_ao] <= 0.15 and gap_od[worst_od] <= 0.15 and elapsed < 1800.0
    _announce(
        capsys, 5, "adaptive power tracking", ok,
        f"max oracle-adaptive gap {gap_ao[worst_ao]:.3f} at (rho,s0)={worst_ao}, "
        f"max double-oracle gap {gap_od[worst_od]:.3f} at (rho,s0)={worst_od} "
        f"(both need <=0.15), {elapsed:.0f}s (budget 1800s)",
    )
    assert elapsed < 1800.0
    assert gap_ao[worst_ao] <= 0.15
    assert gap_od[worst_od] <= 0.15


def _improvement_run(rho, seed):
    """Train candidate loadings on an early fold, test them on a late one."""
    cfg = SimConfig(T=1350, p=60, k=3, rho=rho, s0=0.2, seed=seed)
    panel, exposures, _ = gen_semisynthetic(cfg)
    train_panel, train_exp = panel.window(0, 1000), exposures.window(0, 1000)
    test_panel, test_exp = panel.window(1000, 1350), exposures.window(1000, 1350)
    train_tiling = default_tiling(1000, 60, 3, seed=seed % 1000)
    test_tiling = default_tiling(350, 60, 3, seed=seed % 1000)
    corr = empirical_correlation(
        mosaic_residuals(train_panel, train_exp, train_tiling).materialize()
    )
    loadings = train_loadings(corr.matrix)
    return mosaic_test(
        mosaic_residuals(test_panel, test_exp, test_tiling),
        make_bcv_r2(test_tiling, loadings),
        R=99,
        seed=seed % 1000,
    )


def test_criterion_6_improvement_statistic(capsys):
    reps = 100
    planted_hits = 0
    for rep in range(reps):
        report = _improvement_run(rho=2.0, seed=6000 + rep)
        planted_hits += report.observed > 0 and report.p_value <= 0.01

    null_nonpos = 0
    null_p = np.empty(reps)
    for rep in range(reps):
        report = _improvement_run(rho=0.0, seed=3000 + rep)
        null_nonpos += report.observed <= 0
        null_p[rep] = report.p_value
    rate_05 = float(np.mean(null_p <= 0.05))
    rate_01 = float(np.mean(null_p <= 0.01))

    # superuniformity at 100 runs: one-sided 3-sigma binomial bounds
    ok = (
        planted_hits >= 90
        and null_nonpos >= 85
        and rate_05 <= 0.115
        and rate_01 <= 0.04
    )
    _announce(
        capsys, 6, "improvement statistic", ok,
        f"planted factor: r2>0 and p<=0.01 in {planted_hits}/{reps} (need >=90); "
        f"null: r2<=0 in {null_nonpos}/{reps} (need >=85), P(p<=0.05)={rate_05:.2f} "
        f"(<=0.115), P(p<=0.01)={rate_01:.2f} (<=0.04)",
    )
    assert planted_hits >= 90
    assert null_nonpos >= 85
    assert rate_05 <= 0.115
    assert rate_01 <= 0.04


def test_criterion_7_deterministic_numerics(capsys):
    worst_orth = 0.0
    worst_idem = 0.0
    for trial in range(20):
        T = 30 + 10 * (trial % 3)
        p = 12 + 5 * (trial % 4)
        k = 1 + trial % 4
        panel, exposures = gaussian_null(T, p, k, seed=7000 + trial)
        tiling = default_tiling(T, p, k, seed=trial)
        mosaic = mosaic_residuals(panel, exposures, tiling)
        for tile, block, projector in zip(tiling.tiles, mosaic.blocks, mosaic.projectors):
            sub = exposures.matrix_at(int(tile.batch[0]))[tile.group, :]
            block = np.asarray(block)
            scale = np.linalg.norm(block) * np.linalg.norm(sub) + 1e-300
            worst_orth = max(worst_orth, np.abs(block @ sub).max() / scale)
            projector = np.asarray(projector)
            worst_idem = max(
                worst_idem, np.abs(projector @ projector - projector).max()
            )

    panel, exposures = gaussian_null(40, 15, 2, seed=7777)
    mosaic = mosaic_residuals(panel, exposures, default_tiling(40, 15, 2, seed=7))
    base_stat = make_mmc()
    shifted = Statistic(name="mmc_shift", fn=lambda v, d: base_stat.fn(v, d) + 7.0)
    curved = Statistic(name="mmc_exp", fn=lambda v, d: np.exp(base_stat.fn(v, d)))
    base = mosaic_test(mosaic, base_stat, R=49, seed=11)
    p_shift = mosaic_test(mosaic, shifted, R=49, seed=11).p_value
    p_curve = mosaic_test(mosaic, curved, R=49, seed=11).p_value
    transforms_exact = p_shift == base.p_value and p_curve == base.p_value

    serial = mosaic_test(mosaic, base_stat, R=60, seed=3, threads=1)
    pooled = mosaic_test(mosaic, base_stat, R=60, seed=3, threads=8)
    adaptive_serial, _ = adaptive_mosaic_test(
        mosaic, make_qmc_family(), R=40, K=30, seed=5, threads=1
    )
    adaptive_pooled, _ = adaptive_mosaic_test(
        mosaic, make_qmc_family(), R=40, K=30, seed=5, threads=8
    )
    threads_identical = (
        serial.to_json() == pooled.to_json()
        and np.array_equal(serial.null_draws, pooled.null_draws)
        and adaptive_serial.to_json() == adaptive_pooled.to_json()
    )

    ok = (
        worst_orth <= 1e-8
        and worst_idem <= 1e-10
        and transforms_exact
        and threads_identical
    )
    _announce(
        capsys, 7, "deterministic numerics", ok,
        f"residual-exposure orthogonality <= {worst_orth:.1e} relative (tol 1e-8), "
        f"projector idempotency <= {worst_idem:.1e} (tol 1e-10); shift/monotone "
        f"transforms leave p unchanged exactly: {transforms_exact}; threads 1 vs 8 "
        f"identical: {threads_identical}",
    )
    assert worst_orth <= 1e-8
    assert worst_idem <= 1e-10
    assert transforms_exact
    assert threads_identical


def _knockout_panel(T, p, k, n_segments, missing_frac, seed):
    """A factor-model null panel where random assets go dark per segment."""
    rng = np.random.default_rng(seed)
    bounds = np.linspace(0, T, n_segments + 1).astype(int)
    matrices = []
    values = np.empty((T, p))
    available = np.ones((T, p), dtype=bool)
    n_out = int(round(missing_frac * p))
    for seg in range(n_segments):
        lo, hi = bounds[seg], bounds[seg + 1]
        loadings = rng.standard_normal((p, k))
        matrices.append(loadings)
        factors = rng.standard_normal((hi - lo, k))
        values[lo:hi] = factors @ loadings.T + rng.standard_normal((hi - lo, p))
        dark = rng.choice(p, size=n_out, replace=False)
        available[lo:hi, dark] = False
    values = np.where(available, values, np.nan)
    panel = ReturnsPanel(
        times=np.datetime64("2015-01-01", "D") + np.arange(T),
        assets=tuple(f"A{j:03d}" for j in range(p)),
        values=values,
        available=available,
    )
    exposures = ExposureSeries(
        change_points=bounds[:-1],
        matrices=tuple(matrices),
        factor_ids=tuple(f"F{q}" for q in range(k)),
        n_times=T,
    )
    return panel, exposures


def test_criterion_8_missing_data_level_control(capsys):
    T, p, k = 60, 60, 8
    reps = 1000
    pvals = np.empty(reps)
    all_valid = True
    t0 = time.time()
    for rep in range(reps):
        panel, exposures = _knockout_panel(T, p, k, 3, 0.10, seed=rep)
        avail = summarize_availability(panel, exposures)
        tiling = default_tiling(
            T, p, k,
            change_points=exposures.change_points,
            availability=avail,
            seed=rep,
        )
        all_valid &= validate_tiling(tiling, exposures, panel.available).passed
        mosaic = mosaic_residuals(panel, exposures, tiling)
        pvals[rep] = mosaic_test(mosaic, make_mmc(), R=99, seed=rep).p_value
    elapsed = time.time() - t0
    rate_05 = float(np.mean(pvals <= 0.05))
    rate_01 = float(np.mean(pvals <= 0.01))
    ok = all_valid and 0.03 <= rate_05 <= 0.07 and 0.004 <= rate_01 <= 0.018
    _announce(
        capsys, 8, "missing-data level control", ok,
        f"10% of assets dark per segment; tiling validation passed in all {reps} "
        f"runs: {all_valid}; P(p<=0.05)={rate_05:.3f} in [0.03,0.07], "
        f"P(p<=0.01)={rate_01:.3f} in [0.004,0.018], {elapsed:.0f}s",
    )
    assert all_valid
    assert 0.03 <= rate_05 <= 0.07
    assert 0.004 <= rate_01 <= 0.018
