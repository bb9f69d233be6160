"""Command-line interface.

Each subcommand wires panels, tilings, statistics, and permutation
inference end to end and emits machine-readable output (JSON or CSV)
that a plotting script can consume directly.  Nothing here computes
anything new — the CLI is plumbing around the library.

Option values resolve in a fixed order: built-in default, then the
``--config`` JSON file, then explicit flags (flags win).  Seeds add one
more fallback: ``--seed`` beats a config ``seed`` beats the
``MOSAIC_SEED`` environment variable beats 0.  Every subcommand is
deterministic given its inputs and seed, byte for byte, at any
``--threads`` setting.

Exit codes: 0 success, 1 statistical degeneracy (a test that cannot
reject or a resampling scheme with no variation), 2 input error
(missing or malformed files, bad options, invalid tilings), 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from dataclasses import dataclass, field

import numpy as np

from .baselines import write_comparison_csv
from .errors import (
    ArgumentError,
    DegeneracyError,
    InputError,
    InternalInvariantError,
    ParseError,
)
from .panel import load_exposures, load_returns, summarize_availability
from .permute import adaptive_mosaic_test, bonferroni, mosaic_test
from .residuals import mosaic_residuals
from .rng import DOMAIN_IMPROVE, check_seed, child_seed
from .simulate import FPR_METHODS, SimConfig, fpr_study, power_study, write_study_csv
from .stats import (
    build_statistic,
    empirical_correlation,
    make_bcv_r2,
    rolling_analysis,
    score_loadings,
    sparsity_grid,
    train_loadings,
    write_rolling_csv,
)
from .tiling import (
    DEFAULT_BATCH_SIZE,
    Tiling,
    adaptive_tiling,
    default_tiling,
    validate_tiling,
)


@dataclass(frozen=True)
class RunConfig:
    """One fully resolved invocation: subcommand plus every option."""

    subcommand: str
    returns_path: str | None = None
    exposures_path: str | None = None
    tiling_mode: str = "default"
    batch_size: int = DEFAULT_BATCH_SIZE
    n_groups: int | None = None
    seed: int = 0
    statistic: object = "mmc"
    replicates: int = 999
    relabelings: int = 999
    alpha: float = 0.05
    bonferroni: int = 1
    window: int | None = None
    stride: int = 1
    split: str | None = None
    output: str | None = None
    threads: int = 1
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# option tables
# ---------------------------------------------------------------------------

_DATA = {"returns": None, "exposures": None}
_TILING = {"tiling": "default", "batch_size": DEFAULT_BATCH_SIZE, "groups": None}
_INFER = {
    "statistic": "mmc",
    "gamma": 0.5,
    "replicates": 999,
    "relabelings": 999,
    "alpha": 0.05,
}
_COMMON = {"threads": 1, "output": None}

_DEFAULTS = {
    "test": {**_DATA, **_TILING, **_INFER, "bonferroni": 1, **_COMMON},
    "rolling": {**_DATA, **_TILING, **_INFER, "window": None, "stride": 1, **_COMMON},
    "improve": {
        **_DATA,
        **_TILING,
        "split": None,
        "sparsity": None,
        "replicates": 999,
        "alpha": 0.05,
        **_COMMON,
    },
    "simulate": {
        "T": 60,
        "p": 60,
        "k": 8,
        "s0": "0.1",
        "reps": 100,
        "resamples": 100,
        "methods": ",".join(FPR_METHODS),
        "detail": None,
        "factor_dist": "gaussian",
        "noise_dist": "gaussian",
        "t_df": 4.0,
        "batch_size": DEFAULT_BATCH_SIZE,
        "statistic": "mmc",
        "gamma": 0.5,
        "replicates": 99,
        "alpha": 0.05,
        **_COMMON,
    },
    "power": {
        "T": 50,
        "p": 100,
        "k": 10,
        "rho": "0,2,4,6",
        "s0": "0.05,0.5",
        "reps": 200,
        "null_reps": 200,
        "replicates": 99,
        "relabelings": 199,
        "alpha": 0.05,
        "factor_dist": "student-t",
        "noise_dist": "student-t",
        "t_df": 4.0,
        "batch_size": DEFAULT_BATCH_SIZE,
        **_COMMON,
    },
    "validate-tiling": {**_DATA, **_TILING, **_COMMON},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mosaictest",
        description="Exact permutation tests of factor-model residual independence.",
    )
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")

    def common(sp):
        sp.add_argument("--config", help="JSON file of option values (explicit flags win)")
        sp.add_argument("--seed", type=int, help="seed (flag > config > MOSAIC_SEED > 0)")
        sp.add_argument("--threads", type=int, help="worker threads; wall time only")
        sp.add_argument("--output", "-o", help="output path (default: stdout)")

    def data_opts(sp):
        sp.add_argument("--returns", help="long-format returns CSV")
        sp.add_argument("--exposures", help="long-format exposures CSV")

    def tiling_opts(sp, modes_only=False):
        choices = "'default' or 'adaptive'" + ("" if modes_only else " or a tiling JSON path")
        sp.add_argument("--tiling", help=f"tiling source: {choices}")
        sp.add_argument("--batch-size", type=int, dest="batch_size", help="rows per batch")
        sp.add_argument("--groups", type=int, help="asset groups per batch (override)")

    def infer_opts(sp):
        sp.add_argument("--statistic", help="mmc | qmc | qmc-family")
        sp.add_argument("--gamma", type=float, help="quantile level when --statistic qmc")
        sp.add_argument(
            "--replicates", "-R", type=int, dest="replicates", help="permutation replicates"
        )
        sp.add_argument(
            "--relabelings", "-K", type=int, dest="relabelings",
            help="relabelings aggregating a statistic family",
        )
        sp.add_argument("--alpha", type=float, help="test level")

    sp = sub.add_parser("test", help="one permutation test on a full panel")
    data_opts(sp), tiling_opts(sp), infer_opts(sp)
    sp.add_argument("--bonferroni", type=int, help="multiply the p-value by this divisor count")
    common(sp)

    sp = sub.add_parser("rolling", help="the test in sliding windows, CSV per window")
    data_opts(sp), tiling_opts(sp, modes_only=True), infer_opts(sp)
    sp.add_argument("--window", type=int, help="rows per window")
    sp.add_argument("--stride", type=int, help="rows the window advances between tests")
    common(sp)

    sp = sub.add_parser("improve", help="fit extra loadings on fold 1, score them on fold 2")
    data_opts(sp), tiling_opts(sp, modes_only=True)
    sp.add_argument("--split", help="ISO date; fold 1 ends strictly before it")
    sp.add_argument("--sparsity", help="comma-separated support sizes (default: a grid)")
    sp.add_argument("--replicates", "-R", type=int, dest="replicates")
    sp.add_argument("--alpha", type=float)
    common(sp)

    sp = sub.add_parser("simulate", help="false-positive-rate study on exact-null panels")
    sp.add_argument("--T", type=int, help="time points")
    sp.add_argument("--p", type=int, help="assets")
    sp.add_argument("--k", type=int, help="factors")
    sp.add_argument("--s0", help="comma-separated support fractions (one config each)")
    sp.add_argument("--reps", type=int, help="panels per configuration")
    sp.add_argument("--resamples", "-B", type=int, help="bootstrap resamples")
    sp.add_argument("--methods", help=f"comma-separated subset of: {', '.join(FPR_METHODS)}")
    sp.add_argument("--detail", help="also write per-replicate p/Z values to this CSV")
    sp.add_argument("--factor-dist", dest="factor_dist", help="gaussian | student-t")
    sp.add_argument("--noise-dist", dest="noise_dist", help="gaussian | student-t")
    sp.add_argument("--t-df", type=float, dest="t_df", help="student-t degrees of freedom")
    sp.add_argument("--batch-size", type=int, dest="batch_size")
    sp.add_argument("--statistic"), sp.add_argument("--gamma", type=float)
    sp.add_argument("--replicates", "-R", type=int, dest="replicates")
    sp.add_argument("--alpha", type=float)
    common(sp)

    sp = sub.add_parser("power", help="power study: adaptive vs oracle vs OLS double oracle")
    sp.add_argument("--T", type=int), sp.add_argument("--p", type=int)
    sp.add_argument("--k", type=int)
    sp.add_argument("--rho", help="comma-separated signal strengths")
    sp.add_argument("--s0", help="comma-separated support fractions")
    sp.add_argument("--reps", type=int, help="panels per grid cell")
    sp.add_argument("--null-reps", type=int, dest="null_reps", help="null panels calibrating OLS")
    sp.add_argument("--replicates", "-R", type=int, dest="replicates")
    sp.add_argument("--relabelings", "-K", type=int, dest="relabelings")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--factor-dist", dest="factor_dist")
    sp.add_argument("--noise-dist", dest="noise_dist")
    sp.add_argument("--t-df", type=float, dest="t_df")
    sp.add_argument("--batch-size", type=int, dest="batch_size")
    common(sp)

    sp = sub.add_parser("validate-tiling", help="run the structural checks on a tiling")
    data_opts(sp), tiling_opts(sp)
    common(sp)

    return parser


# ---------------------------------------------------------------------------
# option resolution
# ---------------------------------------------------------------------------

def _load_config_file(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"config file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ParseError(f"config file {path} must hold a JSON object")
    return data


def _resolve_seed(args, config_data: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return check_seed(args.seed)
    if "seed" in config_data:
        value = config_data["seed"]
        if isinstance(value, bool) or not isinstance(value, int):
            raise ArgumentError(f"config seed must be an integer, got {value!r}")
        return check_seed(value)
    env = os.environ.get("MOSAIC_SEED")
    if env is not None:
        try:
            return check_seed(int(env))
        except ValueError:
            raise ArgumentError(f"MOSAIC_SEED must be an integer, got {env!r}") from None
    return 0


def _parse_numbers(value, what: str, cast):
    if isinstance(value, str):
        parts = [s.strip() for s in value.split(",") if s.strip()]
    elif isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        parts = [value]
    try:
        out = [cast(x) for x in parts]
    except (TypeError, ValueError):
        raise ArgumentError(f"{what} must be a comma-separated list of numbers") from None
    if not out:
        raise ArgumentError(f"{what} must not be empty")
    return out


def _statistic_config(name, gamma: float):
    if not isinstance(name, str):
        return name  # config files may pass a {"type": ..., "params": ...} object
    norm = name.replace("-", "_")
    if norm == "mmc":
        return "mmc"
    if norm == "qmc":
        return {"type": "qmc", "params": {"gamma": gamma}}
    if norm in ("qmc_family", "adaptive_qmc"):
        return {"type": "qmc_family"}
    raise ArgumentError(f"unknown statistic {name!r}")


def resolve_options(args) -> RunConfig:
    """Merge defaults, config file, and flags into a RunConfig."""
    sub = args.command
    defaults = _DEFAULTS[sub]
    config_data = {}
    if getattr(args, "config", None):
        config_data = _load_config_file(args.config)
    merged = dict(defaults)
    for key, value in config_data.items():
        norm = key.replace("-", "_")
        if norm == "seed":
            continue
        if norm not in defaults:
            raise ArgumentError(f"config key {key!r} is not an option of {sub!r}")
        merged[norm] = value
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    seed = _resolve_seed(args, config_data)

    threads = int(merged.get("threads") or 1)
    if threads < 1:
        raise ArgumentError(f"--threads must be >= 1, got {threads}")

    extras = {}
    if sub == "simulate":
        extras = {
            "T": int(merged["T"]), "p": int(merged["p"]), "k": int(merged["k"]),
            "s0": _parse_numbers(merged["s0"], "--s0", float),
            "reps": int(merged["reps"]),
            "resamples": int(merged["resamples"]),
            "methods": tuple(
                m.strip() for m in str(merged["methods"]).split(",") if m.strip()
            ),
            "detail": merged["detail"],
            "factor_dist": str(merged["factor_dist"]),
            "noise_dist": str(merged["noise_dist"]),
            "t_df": float(merged["t_df"]),
        }
    elif sub == "power":
        extras = {
            "T": int(merged["T"]), "p": int(merged["p"]), "k": int(merged["k"]),
            "rho": _parse_numbers(merged["rho"], "--rho", float),
            "s0": _parse_numbers(merged["s0"], "--s0", float),
            "reps": int(merged["reps"]),
            "null_reps": int(merged["null_reps"]),
            "factor_dist": str(merged["factor_dist"]),
            "noise_dist": str(merged["noise_dist"]),
            "t_df": float(merged["t_df"]),
        }
    elif sub == "improve" and merged.get("sparsity") is not None:
        extras = {"sparsity": _parse_numbers(merged["sparsity"], "--sparsity", int)}

    statistic = merged.get("statistic", "mmc")
    statistic = _statistic_config(statistic, float(merged.get("gamma", 0.5)))

    return RunConfig(
        subcommand=sub,
        returns_path=merged.get("returns"),
        exposures_path=merged.get("exposures"),
        tiling_mode=str(merged.get("tiling") or "default"),
        batch_size=int(merged.get("batch_size") or DEFAULT_BATCH_SIZE),
        n_groups=None if merged.get("groups") is None else int(merged["groups"]),
        seed=seed,
        statistic=statistic,
        replicates=int(merged.get("replicates", 999)),
        relabelings=int(merged.get("relabelings", 999)),
        alpha=float(merged.get("alpha", 0.05)),
        bonferroni=int(merged.get("bonferroni", 1)),
        window=None if merged.get("window") is None else int(merged["window"]),
        stride=int(merged.get("stride", 1)),
        split=merged.get("split"),
        output=merged.get("output"),
        threads=threads,
        extras=extras,
    )


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _load_panel_pair(rc: RunConfig):
    """Fail-fast load of every input file before any computation."""
    if rc.returns_path is None:
        raise ArgumentError("a returns CSV is required (--returns)")
    if rc.exposures_path is None:
        raise ArgumentError("an exposures CSV is required (--exposures)")
    panel = load_returns(rc.returns_path)
    exposures = load_exposures(rc.exposures_path, panel)
    avail = None if panel.available.all() else summarize_availability(panel, exposures)
    return panel, exposures, avail


def _build_tiling(rc: RunConfig, panel, exposures, avail, seed: int) -> Tiling:
    mode = rc.tiling_mode
    if mode == "default":
        return default_tiling(
            panel.n_times, panel.n_assets, max(exposures.n_factors, 1),
            batch_size=rc.batch_size, change_points=exposures.change_points,
            availability=avail, seed=seed, n_groups=rc.n_groups,
        )
    if mode == "adaptive":
        return adaptive_tiling(
            panel, exposures, batch_size=rc.batch_size, seed=seed,
            n_groups=rc.n_groups, availability=avail,
        )
    with open(mode, encoding="utf-8") as fh:
        return Tiling.from_json(fh.read())


def _require_mode(rc: RunConfig) -> None:
    if rc.tiling_mode not in ("default", "adaptive"):
        raise ArgumentError(
            f"'{rc.subcommand}' re-tiles internally; --tiling must be "
            f"'default' or 'adaptive', got {rc.tiling_mode!r}"
        )


def _emit_text(text: str, output) -> None:
    if output in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _csv_dest(output):
    return sys.stdout if output in (None, "-") else output


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_test(rc: RunConfig) -> int:
    panel, exposures, avail = _load_panel_pair(rc)
    tiling = _build_tiling(rc, panel, exposures, avail, rc.seed)
    mosaic = mosaic_residuals(panel, exposures, tiling)
    statistic = build_statistic(rc.statistic)
    if statistic.labels:
        report, _ = adaptive_mosaic_test(
            mosaic, statistic, R=rc.replicates, K=rc.relabelings,
            seed=rc.seed, alpha=rc.alpha, threads=rc.threads,
        )
    else:
        report = mosaic_test(
            mosaic, statistic, R=rc.replicates, seed=rc.seed,
            alpha=rc.alpha, threads=rc.threads,
        )
    if rc.bonferroni > 1:
        report = bonferroni(report, rc.bonferroni)
    _emit_text(report.to_json(), rc.output)
    return 0


def cmd_rolling(rc: RunConfig) -> int:
    _require_mode(rc)
    panel, exposures, _ = _load_panel_pair(rc)
    if rc.window is None:
        raise ArgumentError("--window is required")
    rows = rolling_analysis(
        panel, exposures, window=rc.window, stride=rc.stride,
        R=rc.replicates, seed=rc.seed, alpha=rc.alpha,
        statistic_config=rc.statistic, tiling_mode=rc.tiling_mode,
        batch_size=rc.batch_size, n_groups=rc.n_groups,
        K=rc.relabelings, threads=rc.threads,
    )
    write_rolling_csv(rows, _csv_dest(rc.output))
    return 0


def cmd_improve(rc: RunConfig) -> int:
    _require_mode(rc)
    panel, exposures, _ = _load_panel_pair(rc)
    if rc.split is None:
        raise ArgumentError("--split DATE is required")
    try:
        split = np.datetime64(str(rc.split), "D")
    except ValueError:
        raise ArgumentError(f"bad split date {rc.split!r}") from None
    n_train = int(np.count_nonzero(panel.times < split))
    if n_train == 0 or n_train == panel.n_times:
        raise ArgumentError(f"split {rc.split} leaves an empty fold")

    folds = []
    for fi, (lo, hi) in enumerate(((0, n_train), (n_train, panel.n_times))):
        sub_panel = panel.window(lo, hi)
        sub_exp = exposures.window(lo, hi)
        sub_avail = (
            None if sub_panel.available.all()
            else summarize_availability(sub_panel, sub_exp)
        )
        tiling = _build_tiling(
            rc, sub_panel, sub_exp, sub_avail, child_seed(rc.seed, DOMAIN_IMPROVE, fi)
        )
        folds.append((sub_panel, sub_exp, tiling))
    (panel1, exp1, tiling1), (panel2, exp2, tiling2) = folds

    corr = empirical_correlation(mosaic_residuals(panel1, exp1, tiling1).materialize())
    grid = rc.extras.get("sparsity") or sparsity_grid(panel.n_assets)
    loadings = train_loadings(corr.matrix, grid)

    mosaic2 = mosaic_residuals(panel2, exp2, tiling2)
    statistic = make_bcv_r2(tiling2, loadings)
    report = mosaic_test(
        mosaic2, statistic, R=rc.replicates,
        seed=child_seed(rc.seed, DOMAIN_IMPROVE, 2),
        alpha=rc.alpha, threads=rc.threads,
    )
    scores = score_loadings(mosaic2.materialize(), tiling2, loadings)

    payload = json.loads(report.to_json())
    payload.update(
        {
            "split": str(split),
            "train_rows": n_train,
            "test_rows": panel.n_times - n_train,
            "max_r2": float(scores.max()),
            "loadings": [
                {"sparsity": int(l.sparsity), "r2": float(s)}
                for l, s in zip(loadings, scores)
            ],
        }
    )
    _emit_text(json.dumps(payload, sort_keys=True), rc.output)
    return 0


def cmd_simulate(rc: RunConfig) -> int:
    ex = rc.extras
    configs = [
        SimConfig(
            T=ex["T"], p=ex["p"], k=ex["k"], rho=0.0, s0=s0,
            factor_dist=ex["factor_dist"], noise_dist=ex["noise_dist"],
            t_df=ex["t_df"], seed=0,
        )
        for s0 in ex["s0"]
    ]
    rows, detail = fpr_study(
        configs, ex["methods"], reps=ex["reps"], alpha=rc.alpha,
        R=rc.replicates, B=ex["resamples"], seed=rc.seed,
        statistic_config=rc.statistic, batch_size=rc.batch_size,
        threads=rc.threads,
    )
    write_study_csv(rows, _csv_dest(rc.output))
    if ex["detail"]:
        write_comparison_csv(detail, ex["detail"])
    return 0


def cmd_power(rc: RunConfig) -> int:
    ex = rc.extras
    rows = power_study(
        ex["rho"], ex["s0"], T=ex["T"], p=ex["p"], k=ex["k"],
        reps=ex["reps"], R=rc.replicates, K=rc.relabelings,
        alpha=rc.alpha, seed=rc.seed, null_reps=ex["null_reps"],
        batch_size=rc.batch_size, factor_dist=ex["factor_dist"],
        noise_dist=ex["noise_dist"], t_df=ex["t_df"], threads=rc.threads,
    )
    write_study_csv(rows, _csv_dest(rc.output))
    return 0


def cmd_validate_tiling(rc: RunConfig) -> int:
    panel, exposures, avail = _load_panel_pair(rc)
    tiling = _build_tiling(rc, panel, exposures, avail, rc.seed)
    report = validate_tiling(tiling, exposures, panel.available)
    checks = (
        ("disjoint", report.disjoint),
        ("coverage", report.coverage),
        ("exposure-constant", report.exposure_constant),
        ("no-missing-cells", report.no_missing_cells),
    )
    for name, ok in checks:
        print(f"{name}: {'ok' if ok else 'FAIL'}")
    for msg in report.messages:
        print(f"  {msg}")
    report.require()
    if rc.output:
        _emit_text(tiling.to_json(), rc.output)
    return 0


_HANDLERS = {
    "test": cmd_test,
    "rolling": cmd_rolling,
    "improve": cmd_improve,
    "simulate": cmd_simulate,
    "power": cmd_power,
    "validate-tiling": cmd_validate_tiling,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse --help / usage errors
        return int(exc.code) if exc.code else 0
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    try:
        rc = resolve_options(args)
        return _HANDLERS[rc.subcommand](rc)
    except DegeneracyError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2
    except InternalInvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    except Exception:  # pragma: no cover - safety net
        traceback.print_exc()
        return 3


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
