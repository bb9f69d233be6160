"""End-to-end checks of every subcommand through main()."""

import json

import numpy as np
import pytest

from mosaictest import (
    SimConfig,
    Tile,
    Tiling,
    gen_semisynthetic,
    main,
    write_exposures,
    write_returns,
)
from mosaictest.simulate import STUDY_HEADER


def _write_pair(tmp_path, config, stem="panel"):
    panel, exposures, truth = gen_semisynthetic(config)
    rpath = tmp_path / f"{stem}_returns.csv"
    epath = tmp_path / f"{stem}_exposures.csv"
    write_returns(panel, str(rpath))
    write_exposures(exposures, panel, str(epath))
    return str(rpath), str(epath), panel, truth


@pytest.fixture
def null_files(tmp_path):
    config = SimConfig(
        T=30, p=10, k=1, factor_dist="gaussian", noise_dist="gaussian", seed=77
    )
    rpath, epath, _, _ = _write_pair(tmp_path, config)
    return rpath, epath


# ---------------------------------------------------------------------------
# test subcommand
# ---------------------------------------------------------------------------

def test_single_test_report_fields(null_files, tmp_path):
    rpath, epath = null_files
    out = tmp_path / "report.json"
    rc = main(
        ["test", "--returns", rpath, "--exposures", epath,
         "-R", "49", "--seed", "3", "-o", str(out)]
    )
    assert rc == 0
    payload = json.loads(out.read_text())
    assert set(payload) == {
        "observed", "p_value", "z_exact", "z_approx", "threshold", "R", "seed"
    }
    assert payload["R"] == 49
    assert payload["seed"] == 3
    assert 0 < payload["p_value"] <= 1


def test_null_smoke_no_tiny_pvalues(null_files, tmp_path):
    rpath, epath = null_files
    for seed in range(20):
        out = tmp_path / f"smoke{seed}.json"
        rc = main(
            ["test", "--returns", rpath, "--exposures", epath,
             "--seed", str(seed), "-o", str(out)]
        )
        assert rc == 0
        assert json.loads(out.read_text())["p_value"] >= 0.001


def test_planted_signal_rejects(tmp_path):
    config = SimConfig(T=60, p=20, k=2, rho=6.0, s0=0.5, seed=5)
    rpath, epath, _, _ = _write_pair(tmp_path, config)
    out = tmp_path / "signal.json"
    rc = main(
        ["test", "--returns", rpath, "--exposures", epath,
         "--seed", "1", "-o", str(out)]
    )
    assert rc == 0
    assert json.loads(out.read_text())["p_value"] <= 0.01


def test_bonferroni_flag_scales_the_pvalue(null_files, tmp_path):
    rpath, epath = null_files
    plain, adjusted = tmp_path / "plain.json", tmp_path / "adj.json"
    base = ["test", "--returns", rpath, "--exposures", epath, "-R", "49", "--seed", "2"]
    assert main(base + ["-o", str(plain)]) == 0
    assert main(base + ["--bonferroni", "4", "-o", str(adjusted)]) == 0
    p0 = json.loads(plain.read_text())["p_value"]
    p4 = json.loads(adjusted.read_text())["p_value"]
    assert p4 == min(1.0, 4 * p0)


def test_adaptive_statistic_family_through_the_cli(null_files, tmp_path):
    rpath, epath = null_files
    out = tmp_path / "family.json"
    rc = main(
        ["test", "--returns", rpath, "--exposures", epath,
         "--statistic", "qmc-family", "-R", "49", "-K", "49",
         "--seed", "4", "-o", str(out)]
    )
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["R"] == 49
    assert 0 < payload["p_value"] <= 1


def test_missing_input_file_exits_2_without_output(tmp_path, capsys):
    out = tmp_path / "never.json"
    rc = main(
        ["test", "--returns", str(tmp_path / "absent.csv"),
         "--exposures", str(tmp_path / "also-absent.csv"), "-o", str(out)]
    )
    assert rc == 2
    assert not out.exists()
    assert "error" in capsys.readouterr().err


def test_omitted_required_option_exits_2(null_files, capsys):
    rpath, _ = null_files
    assert main(["test", "--returns", rpath]) == 2
    assert "exposures" in capsys.readouterr().err


def test_no_subcommand_exits_2(capsys):
    assert main([]) == 2
    capsys.readouterr()


def test_unknown_statistic_exits_2(null_files, capsys):
    rpath, epath = null_files
    rc = main(["test", "--returns", rpath, "--exposures", epath, "--statistic", "psychic"])
    assert rc == 2
    assert "statistic" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# configuration resolution
# ---------------------------------------------------------------------------

def test_config_file_and_flags_produce_identical_output(null_files, tmp_path):
    rpath, epath = null_files
    config = tmp_path / "run.json"
    config.write_text(json.dumps(
        {"returns": rpath, "exposures": epath, "replicates": 49, "seed": 6}
    ))
    via_config, via_flags = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["test", "--config", str(config), "-o", str(via_config)]) == 0
    assert main(
        ["test", "--returns", rpath, "--exposures", epath,
         "-R", "49", "--seed", "6", "-o", str(via_flags)]
    ) == 0
    assert via_config.read_bytes() == via_flags.read_bytes()


def test_flags_override_config_values(null_files, tmp_path):
    rpath, epath = null_files
    config = tmp_path / "run.json"
    config.write_text(json.dumps(
        {"returns": rpath, "exposures": epath, "replicates": 19, "seed": 6}
    ))
    out = tmp_path / "r.json"
    assert main(["test", "--config", str(config), "-R", "49", "-o", str(out)]) == 0
    assert json.loads(out.read_text())["R"] == 49


def test_seed_precedence_flag_config_env_zero(null_files, tmp_path, monkeypatch):
    rpath, epath = null_files
    config = tmp_path / "seeded.json"
    config.write_text(json.dumps({"returns": rpath, "exposures": epath,
                                  "replicates": 19, "seed": 7}))
    monkeypatch.setenv("MOSAIC_SEED", "9")

    def run_seed(argv):
        out = tmp_path / "seed-probe.json"
        assert main(argv + ["-o", str(out)]) == 0
        return json.loads(out.read_text())["seed"]

    assert run_seed(["test", "--config", str(config), "--seed", "5"]) == 5
    assert run_seed(["test", "--config", str(config)]) == 7
    assert run_seed(["test", "--returns", rpath, "--exposures", epath, "-R", "19"]) == 9
    monkeypatch.delenv("MOSAIC_SEED")
    assert run_seed(["test", "--returns", rpath, "--exposures", epath, "-R", "19"]) == 0


def test_bad_env_seed_exits_2(null_files, monkeypatch, capsys):
    rpath, epath = null_files
    monkeypatch.setenv("MOSAIC_SEED", "not-a-number")
    assert main(["test", "--returns", rpath, "--exposures", epath, "-R", "9"]) == 2
    assert "MOSAIC_SEED" in capsys.readouterr().err


def test_malformed_and_unknown_key_configs_exit_2(null_files, tmp_path, capsys):
    rpath, epath = null_files
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["test", "--config", str(broken)]) == 2
    stray = tmp_path / "stray.json"
    stray.write_text(json.dumps({"returns": rpath, "exposures": epath, "volume": 11}))
    assert main(["test", "--config", str(stray)]) == 2
    assert "volume" in capsys.readouterr().err


def test_threads_do_not_change_output(null_files, tmp_path):
    rpath, epath = null_files
    one, eight = tmp_path / "t1.json", tmp_path / "t8.json"
    base = ["test", "--returns", rpath, "--exposures", epath, "-R", "99", "--seed", "11"]
    assert main(base + ["--threads", "1", "-o", str(one)]) == 0
    assert main(base + ["--threads", "8", "-o", str(eight)]) == 0
    assert one.read_bytes() == eight.read_bytes()


# ---------------------------------------------------------------------------
# validate-tiling subcommand
# ---------------------------------------------------------------------------

def test_validate_tiling_passes_and_round_trips(null_files, tmp_path, capsys):
    rpath, epath = null_files
    saved = tmp_path / "tiling.json"
    rc = main(
        ["validate-tiling", "--returns", rpath, "--exposures", epath,
         "--seed", "2", "-o", str(saved)]
    )
    assert rc == 0
    stdout = capsys.readouterr().out
    for check in ("disjoint", "coverage", "exposure-constant", "no-missing-cells"):
        assert f"{check}: ok" in stdout
    rc = main(
        ["validate-tiling", "--returns", rpath, "--exposures", epath,
         "--tiling", str(saved)]
    )
    assert rc == 0


def test_validate_tiling_rejects_an_overlapping_tiling(null_files, tmp_path, capsys):
    rpath, epath = null_files
    tile = Tile(batch=np.arange(10), group=np.arange(5))
    clash = Tile(batch=np.arange(10), group=np.arange(3, 10))
    bad = Tiling(tiles=(tile, clash), n_times=30, n_assets=10)
    path = tmp_path / "bad.json"
    path.write_text(bad.to_json())
    rc = main(
        ["validate-tiling", "--returns", rpath, "--exposures", epath,
         "--tiling", str(path)]
    )
    assert rc == 2
    captured = capsys.readouterr()
    assert "FAIL" in captured.out


# ---------------------------------------------------------------------------
# rolling subcommand
# ---------------------------------------------------------------------------

def test_rolling_csv_structure(tmp_path):
    config = SimConfig(
        T=40, p=8, k=1, factor_dist="gaussian", noise_dist="gaussian", seed=13
    )
    rpath, epath, _, _ = _write_pair(tmp_path, config)
    out = tmp_path / "rolling.csv"
    rc = main(
        ["rolling", "--returns", rpath, "--exposures", epath,
         "--window", "20", "--stride", "20", "-R", "19", "--seed", "1",
         "-o", str(out)]
    )
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "window_end,observed,threshold,p_value,z_exact,z_approx"
    assert len(lines) == 3  # two strides of 20 over 40 rows
    ends = [line.split(",")[0] for line in lines[1:]]
    assert ends == sorted(ends)
    # stride == window == T gives exactly one row
    solo = tmp_path / "solo.csv"
    rc = main(
        ["rolling", "--returns", rpath, "--exposures", epath,
         "--window", "40", "--stride", "40", "-R", "19", "--seed", "1",
         "-o", str(solo)]
    )
    assert rc == 0
    assert len(solo.read_text().strip().splitlines()) == 2


def test_rolling_requires_a_window(null_files, capsys):
    rpath, epath = null_files
    rc = main(["rolling", "--returns", rpath, "--exposures", epath, "-R", "9"])
    assert rc == 2
    assert "window" in capsys.readouterr().err


def test_rolling_rejects_a_tiling_file(null_files, tmp_path, capsys):
    rpath, epath = null_files
    rc = main(
        ["rolling", "--returns", rpath, "--exposures", epath,
         "--window", "20", "--tiling", str(tmp_path / "t.json"), "-R", "9"]
    )
    assert rc == 2
    assert "re-tiles" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# improve subcommand
# ---------------------------------------------------------------------------

def test_improve_reports_fold_sizes_and_scores(tmp_path):
    config = SimConfig(
        T=40, p=12, k=1, factor_dist="gaussian", noise_dist="gaussian", seed=21
    )
    rpath, epath, panel, _ = _write_pair(tmp_path, config)
    split = str(np.datetime64(panel.times[20], "D"))
    out = tmp_path / "improve.json"
    rc = main(
        ["improve", "--returns", rpath, "--exposures", epath,
         "--split", split, "-R", "49", "--seed", "3", "--sparsity", "8,12",
         "-o", str(out)]
    )
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["split"] == split
    assert payload["train_rows"] == 20
    assert payload["test_rows"] == 20
    assert payload["max_r2"] == max(l["r2"] for l in payload["loadings"])
    # dense head plus the requested level below p (12 == p folds into the head)
    assert sorted(l["sparsity"] for l in payload["loadings"]) == [8, 12]
    assert 0 < payload["p_value"] <= 1


def test_improve_split_outside_the_panel_exits_2(tmp_path, capsys):
    config = SimConfig(
        T=20, p=8, k=1, factor_dist="gaussian", noise_dist="gaussian", seed=22
    )
    rpath, epath, _, _ = _write_pair(tmp_path, config)
    rc = main(
        ["improve", "--returns", rpath, "--exposures", epath,
         "--split", "2050-01-01", "-R", "9"]
    )
    assert rc == 2
    assert "empty fold" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# study subcommands
# ---------------------------------------------------------------------------

def test_simulate_csv_schema_detail_and_determinism(tmp_path):
    out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
    detail = tmp_path / "detail.csv"
    base = [
        "simulate", "--T", "20", "--p", "8", "--k", "1", "--s0", "0.5",
        "--reps", "3", "-R", "19", "-B", "10",
        "--methods", "mosaic,naive_perm", "--seed", "4",
    ]
    assert main(base + ["-o", str(out_a), "--detail", str(detail)]) == 0
    assert main(base + ["-o", str(out_b)]) == 0
    lines = out_a.read_text().strip().splitlines()
    assert lines[0] == ",".join(STUDY_HEADER)
    assert len(lines) == 3  # one config x two methods
    assert {line.split(",")[1] for line in lines[1:]} == {"mosaic", "naive_perm"}
    assert out_a.read_bytes() == out_b.read_bytes()
    detail_lines = detail.read_text().strip().splitlines()
    assert detail_lines[0] == "method,replicate,p_or_z"
    assert len(detail_lines) == 1 + 2 * 3


def test_power_csv_schema_and_determinism(tmp_path):
    out_a, out_b = tmp_path / "pa.csv", tmp_path / "pb.csv"
    base = [
        "power", "--T", "20", "--p", "10", "--k", "1",
        "--rho", "0,2", "--s0", "0.5", "--reps", "3",
        "--null-reps", "9", "-R", "19", "-K", "19", "--seed", "8",
    ]
    assert main(base + ["-o", str(out_a)]) == 0
    assert main(base + ["-o", str(out_b)]) == 0
    lines = out_a.read_text().strip().splitlines()
    assert lines[0] == ",".join(STUDY_HEADER)
    assert len(lines) == 7  # 2 cells x 3 methods
    methods = {line.split(",")[1] for line in lines[1:]}
    assert methods == {"mosaic_adaptive_qmc", "mosaic_oracle_qmc", "ols_double_oracle_qmc"}
    assert out_a.read_bytes() == out_b.read_bytes()
