"""Experiment orchestration: configs, dataset files, run directories.

Plumbing around the library core.  A flat JSON config (no nesting) is
resolved against explicit defaults, benchmark objects are built from it,
and every artifact is written deterministically: sorted JSON keys, fixed
float formatting, no timestamps.  Running the same command on the same
inputs twice produces byte-identical files.

Seed layout: ``seed`` drives data collection (trajectory n uses
``seed + n``), ``seed + INIT_SEED_OFFSET`` the parameter initialization,
and evaluation trajectory i uses ``eval_seed + i``, so the three never
collide for the default values.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .datasets import Dataset, dataset_hash, load_dataset, save_dataset
from .interconnect import ClosedLoopSystem, collect_dataset
from .metrics import Z_95, evaluate_detailed
from .plants import Benchmark, get_benchmark, noise_from_config
from .stable_family import (ACTIVATIONS, init_params, load_params,
                            save_params)
from .training import (Strategy, TrainConfig, model_operator, normalize_kind,
                       resolve_scales, train)

INIT_SEED_OFFSET = 17
EVAL_SEED_DEFAULT = 1_000_000

RESULT_COLUMNS = ("benchmark", "strategy", "sigma", "seed",
                  "ol_mse", "cl_mse", "ol_r2", "cl_r2", "diverged_flag")


class ConfigError(ValueError):
    """A config file that cannot be acted on; maps to CLI exit code 2."""


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

_TRAIN_DEFAULTS = TrainConfig()

#: every key a config may contain; None means "resolved from the benchmark
#: or from another key", not "defaults to null"
_KNOWN_KEYS = {
    "benchmark": None,
    "strategy": "s3",
    "n_traj": 100,
    "horizon": 100,
    "sigma_r": None,
    "seed": 0,
    "noise_kind": None,
    "noise_std": None,
    "noise_ar": None,
    "noise_ma": None,
    "n_h": None,
    "alpha": None,
    "activation": None,
    "scale_mode": None,
    "in_scale": 1.0,
    "out_scale": 1.0,
    "init_seed": None,
    "epochs": _TRAIN_DEFAULTS.epochs,
    "learning_rate": _TRAIN_DEFAULTS.learning_rate,
    "lr_decay": _TRAIN_DEFAULTS.lr_decay,
    "optimizer": _TRAIN_DEFAULTS.optimizer,
    "batch": _TRAIN_DEFAULTS.batch,
    "patience": _TRAIN_DEFAULTS.patience,
    "min_delta": _TRAIN_DEFAULTS.min_delta,
    "shuffle_seed": _TRAIN_DEFAULTS.shuffle_seed,
    "clip_loss": _TRAIN_DEFAULTS.clip_loss,
    "clip_grad": _TRAIN_DEFAULTS.clip_grad,
    "keep_best": _TRAIN_DEFAULTS.keep_best,
    "snapshot_every": _TRAIN_DEFAULTS.snapshot_every,
    "n_test": 100,
    "eval_horizon": 100,
    "eval_seed": EVAL_SEED_DEFAULT,
    "seeds": None,
    "strategies": None,
    "sigmas": None,
    "dataset_hash": None,
}

_INT_KEYS = ("n_traj", "horizon", "seed", "n_h", "init_seed", "epochs",
             "batch", "patience", "shuffle_seed", "snapshot_every", "n_test",
             "eval_horizon", "eval_seed")
_POSITIVE_KEYS = ("n_traj", "horizon", "n_h", "epochs", "n_test",
                  "eval_horizon", "in_scale", "out_scale", "learning_rate")
_FLOAT_KEYS = ("sigma_r", "noise_std", "alpha", "in_scale", "out_scale",
               "learning_rate", "lr_decay", "min_delta", "clip_loss",
               "clip_grad")


def load_config(path) -> dict:
    """Read and resolve a JSON config file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return resolve_config(raw)


def resolve_config(raw: dict) -> dict:
    """Validate a raw config dict and fill in every default.

    The result is fully explicit (benchmark-dependent defaults included),
    so writing it back out documents exactly what a run used.  Unknown
    keys are rejected rather than ignored: a typo in a config should fail,
    not silently fall back to a default.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(_KNOWN_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "benchmark" not in raw:
        raise ConfigError("config needs a 'benchmark' key")
    try:
        bench = get_benchmark(raw["benchmark"])
    except (ValueError, TypeError) as err:
        raise ConfigError(str(err)) from err

    cfg = dict(_KNOWN_KEYS)
    cfg.update(raw)
    defaults = bench.model_defaults
    if cfg["sigma_r"] is None:
        cfg["sigma_r"] = bench.default_sigma_r
    if cfg["n_h"] is None:
        cfg["n_h"] = defaults["n_h"]
    if "alpha" not in raw:
        cfg["alpha"] = defaults["alpha"]
    if cfg["activation"] is None:
        cfg["activation"] = defaults["activation"]
    if cfg["scale_mode"] is None:
        cfg["scale_mode"] = defaults["scale_mode"]
    if cfg["init_seed"] is None:
        cfg["init_seed"] = cfg["seed"] + INIT_SEED_OFFSET
    if cfg["seeds"] is None:
        cfg["seeds"] = [cfg["seed"]]
    if cfg["strategies"] is None:
        cfg["strategies"] = ["s1", "s2", "s3"]
    if cfg["sigmas"] is None:
        cfg["sigmas"] = [cfg["sigma_r"]]

    _check_types(cfg)
    try:
        cfg["strategy"] = normalize_kind(cfg["strategy"])
        cfg["strategies"] = [normalize_kind(s) for s in cfg["strategies"]]
    except (ValueError, AttributeError) as err:
        raise ConfigError(str(err)) from err
    return cfg


def _check_types(cfg: dict) -> None:
    for key in _INT_KEYS:
        v = cfg[key]
        if v is not None and (isinstance(v, bool) or not isinstance(v, int)):
            raise ConfigError(f"'{key}' must be an integer, got {v!r}")
    for key in _FLOAT_KEYS:
        v = cfg[key]
        if v is not None and not isinstance(v, (int, float)):
            raise ConfigError(f"'{key}' must be a number, got {v!r}")
    for key in _POSITIVE_KEYS:
        v = cfg[key]
        if v is not None and v <= 0:
            raise ConfigError(f"'{key}' must be positive, got {v!r}")
    if cfg["sigma_r"] < 0:
        raise ConfigError("'sigma_r' must be non-negative")
    if cfg["activation"] not in ACTIVATIONS:
        raise ConfigError(f"'activation' must be one of {ACTIVATIONS}")
    if cfg["scale_mode"] not in ("auto", "fixed"):
        raise ConfigError("'scale_mode' must be 'auto' or 'fixed'")
    if cfg["optimizer"] not in ("adam", "sgd"):
        raise ConfigError("'optimizer' must be 'adam' or 'sgd'")
    for key in ("seeds", "strategies", "sigmas"):
        if not isinstance(cfg[key], list) or not cfg[key]:
            raise ConfigError(f"'{key}' must be a non-empty list")
    if any(isinstance(s, bool) or not isinstance(s, int) for s in cfg["seeds"]):
        raise ConfigError("'seeds' must contain integers")
    if any(not isinstance(s, (int, float)) or s < 0 for s in cfg["sigmas"]):
        raise ConfigError("'sigmas' must contain non-negative numbers")
    for key in ("noise_ar", "noise_ma"):
        v = cfg[key]
        if v is not None and (not isinstance(v, list)
                              or any(not isinstance(x, (int, float)) for x in v)):
            raise ConfigError(f"'{key}' must be a list of numbers")


# ---------------------------------------------------------------------------
# object construction from a resolved config
# ---------------------------------------------------------------------------

def build_noise(cfg: dict, bench: Benchmark):
    if cfg["noise_kind"] is None:
        return bench.make_noise()
    spec = {"kind": cfg["noise_kind"]}
    if cfg["noise_std"] is not None:
        spec["std"] = cfg["noise_std"]
    if cfg["noise_ar"] is not None:
        spec["ar"] = cfg["noise_ar"]
    if cfg["noise_ma"] is not None:
        spec["ma"] = cfg["noise_ma"]
    try:
        return noise_from_config(spec)
    except (ValueError, KeyError) as err:
        raise ConfigError(f"bad noise settings: {err}") from err


def build_params(cfg: dict, bench: Benchmark, data: Dataset | None = None):
    """Initial parameters, with scales resolved per ``scale_mode``."""
    if cfg["scale_mode"] == "auto":
        if data is None:
            raise ConfigError("scale_mode 'auto' needs a dataset")
        in_scale, out_scale = resolve_scales(cfg["strategy"], data)
    else:
        in_scale, out_scale = cfg["in_scale"], cfg["out_scale"]
    rng = np.random.default_rng(cfg["init_seed"])
    return init_params(cfg["n_h"], bench.in_dim, bench.out_dim,
                       alpha=cfg["alpha"], activation=cfg["activation"],
                       rng=rng, in_scale=in_scale, out_scale=out_scale)


def build_train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"], learning_rate=cfg["learning_rate"],
        lr_decay=cfg["lr_decay"],
        optimizer=cfg["optimizer"], batch=cfg["batch"],
        patience=cfg["patience"], min_delta=cfg["min_delta"],
        shuffle_seed=cfg["shuffle_seed"], clip_loss=cfg["clip_loss"],
        clip_grad=cfg["clip_grad"], keep_best=bool(cfg["keep_best"]),
        snapshot_every=cfg["snapshot_every"])


# ---------------------------------------------------------------------------
# deterministic artifact writers
# ---------------------------------------------------------------------------

def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_loss_csv(path, loss_curve) -> None:
    write_csv(path, ("epoch", "loss"),
              [(i, float(v)) for i, v in enumerate(loss_curve)])


def _band(signals, valid):
    """Mean and 95% halfwidth over valid trajectories, per time step."""
    signals = np.asarray(signals, dtype=float)
    kept = signals[np.asarray(valid, dtype=bool)]
    if kept.shape[0] == 0:
        nan = np.full(signals.shape[1:], np.nan)
        return nan, nan.copy()
    mean = kept.mean(axis=0)
    if kept.shape[0] > 1:
        half = Z_95 * kept.std(axis=0, ddof=1) / np.sqrt(kept.shape[0])
    else:
        half = np.zeros_like(mean)
    return mean, half


def write_band_csv(path, y_true, y_model, true_valid, model_valid) -> None:
    """Plot-ready band data: true and learned output, mean and 95% band."""
    t_mean, t_half = _band(y_true, true_valid)
    m_mean, m_half = _band(y_model, model_valid)
    d = t_mean.shape[-1]
    header = (["t"]
              + [f"true_mean{j}" for j in range(d)]
              + [f"true_half{j}" for j in range(d)]
              + [f"model_mean{j}" for j in range(d)]
              + [f"model_half{j}" for j in range(d)])
    rows = []
    for t in range(t_mean.shape[0]):
        rows.append([t] + [float(x) for x in t_mean[t]]
                    + [float(x) for x in t_half[t]]
                    + [float(x) for x in m_mean[t]]
                    + [float(x) for x in m_half[t]])
    write_csv(path, header, rows)


def write_results_csv(path, rows: list[dict]) -> None:
    """The cross-run result table, sorted for reproducible output."""
    ordered = sorted(rows, key=lambda r: (r["benchmark"], r["strategy"],
                                          r["sigma"], r["seed"]))
    write_csv(path, RESULT_COLUMNS,
              [[row[col] for col in RESULT_COLUMNS] for row in ordered])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: dict, out_dir) -> dict:
    """Collect a dataset from the true closed loop and write it to disk."""
    bench = get_benchmark(cfg["benchmark"])
    noise = build_noise(cfg, bench)
    loop = ClosedLoopSystem(bench.make_plant(), bench.make_controller(), noise)
    data = collect_dataset(loop, cfg["n_traj"], cfg["horizon"],
                           cfg["sigma_r"], cfg["seed"],
                           labels={"benchmark": bench.name})
    digest = save_dataset(data, out_dir)
    return {"dataset": os.fspath(out_dir), "dataset_hash": digest,
            "n_traj": data.n_traj, "horizon": data.horizon}


def _load_and_check_dataset(cfg, dataset_dir, bench):
    try:
        data = load_dataset(dataset_dir)
    except OSError as err:
        raise ConfigError(f"cannot read dataset {dataset_dir}: {err}") from err
    if data.in_dim != bench.in_dim or data.out_dim != bench.out_dim:
        raise ConfigError(
            f"dataset dims ({data.in_dim} -> {data.out_dim}) do not match "
            f"benchmark '{bench.name}' ({bench.in_dim} -> {bench.out_dim})")
    digest = dataset_hash(dataset_dir)
    if cfg["dataset_hash"] is not None and cfg["dataset_hash"] != digest:
        raise ConfigError(f"dataset hash mismatch: config pins "
                          f"{cfg['dataset_hash']}, directory has {digest}")
    return data, digest


def cmd_train(cfg: dict, dataset_dir, out_dir) -> dict:
    """Fit one strategy on a stored dataset; write a run directory.

    The run directory holds config.json (the fully resolved config, with
    the dataset hash pinned), checkpoint.json, loss.csv and
    train_report.json.
    """
    bench = get_benchmark(cfg["benchmark"])
    data, digest = _load_and_check_dataset(cfg, dataset_dir, bench)
    params = build_params(cfg, bench, data)
    strategy = Strategy(cfg["strategy"], params, bench.make_controller())
    result = train(strategy, data, build_train_config(cfg))

    os.makedirs(out_dir, exist_ok=True)
    recorded = dict(cfg, dataset_hash=digest)
    write_json(os.path.join(out_dir, "config.json"), recorded)
    save_params(result.params, os.path.join(out_dir, "checkpoint.json"))
    write_loss_csv(os.path.join(out_dir, "loss.csv"), result.loss_curve)
    report = {
        "final_loss": float(result.loss_curve[-1]),
        "epochs_run": result.epochs_run,
        "stopped_early": result.stopped_early,
        "divergence_count": result.divergence_count,
        "dataset_hash": digest,
        "in_scale": result.params.in_scale,
        "out_scale": result.params.out_scale,
    }
    write_json(os.path.join(out_dir, "train_report.json"), report)
    return report


def cmd_evaluate(cfg: dict, run_dir, out_dir=None) -> dict:
    """Evaluate the checkpoint of a run directory on a fresh test set.

    Writes metrics.json, per-time-step output bands (ol_band.csv,
    cl_band.csv) and a one-row results.csv next to the checkpoint, or
    under ``out_dir`` when given.
    """
    checkpoint = os.path.join(run_dir, "checkpoint.json")
    if not os.path.exists(checkpoint):
        raise ConfigError(f"no checkpoint.json in {run_dir}")
    bench = get_benchmark(cfg["benchmark"])
    params = load_params(checkpoint)
    strategy = Strategy(cfg["strategy"], params, bench.make_controller())
    model = model_operator(strategy)
    noise = build_noise(cfg, bench)
    report, signals = evaluate_detailed(
        model, bench, cfg["sigma_r"], noise, n_test=cfg["n_test"],
        horizon=cfg["eval_horizon"], seed=cfg["eval_seed"])

    out_dir = run_dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    metrics = report.to_dict()
    metrics["benchmark"] = bench.name
    metrics["strategy"] = cfg["strategy"]
    metrics["sigma_r"] = cfg["sigma_r"]
    write_json(os.path.join(out_dir, "metrics.json"), metrics)
    write_band_csv(os.path.join(out_dir, "ol_band.csv"),
                   signals.y_ol_true, signals.y_ol_model,
                   signals.ol_valid, signals.ol_valid)
    write_band_csv(os.path.join(out_dir, "cl_band.csv"),
                   signals.y_true, signals.y_cl_model,
                   np.ones(len(signals.cl_valid), dtype=bool),
                   signals.cl_valid)
    write_results_csv(os.path.join(out_dir, "results.csv"),
                      [_result_row(bench.name, cfg["strategy"],
                                   cfg["sigma_r"], cfg["seed"], report)])
    return metrics


def _result_row(benchmark, strategy, sigma, seed, report) -> dict:
    diverged = int(report.diverged_ol > 0 or report.diverged_cl > 0)
    return {"benchmark": benchmark, "strategy": strategy,
            "sigma": float(sigma), "seed": int(seed),
            "ol_mse": report.ol_mse, "cl_mse": report.cl_mse,
            "ol_r2": report.ol_r2, "cl_r2": report.cl_r2,
            "diverged_flag": diverged}


def sweep_cell(cfg: dict, sigma: float, seed: int) -> list[dict]:
    """All strategies for one (excitation level, seed) cell, in memory.

    The dataset is collected once and shared across strategies, so their
    comparison is paired.  Evaluation seeds are offset per cell so
    different seeds see different test realizations.
    """
    bench = get_benchmark(cfg["benchmark"])
    noise = build_noise(cfg, bench)
    loop = ClosedLoopSystem(bench.make_plant(), bench.make_controller(), noise)
    data = collect_dataset(loop, cfg["n_traj"], cfg["horizon"], sigma, seed)
    eval_seed = cfg["eval_seed"] + 10_000 * seed
    rows = []
    for kind in cfg["strategies"]:
        cell = dict(cfg, strategy=kind, sigma_r=sigma, seed=seed,
                    init_seed=seed + INIT_SEED_OFFSET)
        params = build_params(cell, bench, data)
        strategy = Strategy(kind, params, bench.make_controller())
        result = train(strategy, data, build_train_config(cell))
        model = model_operator(Strategy(kind, result.params,
                                        bench.make_controller()))
        report, _ = evaluate_detailed(
            model, bench, sigma, build_noise(cfg, bench),
            n_test=cfg["n_test"], horizon=cfg["eval_horizon"], seed=eval_seed)
        rows.append(_result_row(bench.name, kind, sigma, seed, report))
    return rows


def _sweep_cell_star(args):
    return sweep_cell(*args)


def n_workers() -> int:
    """Worker count from the ICI_THREADS environment variable (default 1)."""
    raw = os.environ.get("ICI_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"ICI_THREADS must be an integer, got {raw!r}") \
            from None
    return max(1, n)


def cmd_sweep(cfg: dict, out_dir, seeds=None) -> list[dict]:
    """Strategy comparison over seeds x excitation levels; writes results.csv.

    Cells are independent, so with ICI_THREADS > 1 they run in a process
    pool; the row order in results.csv is sorted either way.
    """
    seeds = cfg["seeds"] if seeds is None else list(seeds)
    tasks = [(cfg, float(sigma), int(seed))
             for sigma in cfg["sigmas"] for seed in seeds]
    workers = n_workers()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            cell_rows = list(pool.map(_sweep_cell_star, tasks))
    else:
        cell_rows = [sweep_cell(*task) for task in tasks]
    rows = [row for cell in cell_rows for row in cell]
    os.makedirs(out_dir, exist_ok=True)
    write_results_csv(os.path.join(out_dir, "results.csv"), rows)
    write_json(os.path.join(out_dir, "sweep_config.json"),
               dict(cfg, seeds=seeds))
    return rows


def read_results_csv(path) -> list[dict]:
    """Load a results.csv back into typed row dicts ('nan' becomes None)."""
    rows = []
    with open(path, newline="") as fh:
        for record in csv.DictReader(fh):
            row = {"benchmark": record["benchmark"],
                   "strategy": record["strategy"],
                   "sigma": float(record["sigma"]),
                   "seed": int(record["seed"]),
                   "diverged_flag": int(record["diverged_flag"])}
            for key in ("ol_mse", "cl_mse", "ol_r2", "cl_r2"):
                value = float(record[key])
                row[key] = None if np.isnan(value) else value
            rows.append(row)
    return rows
