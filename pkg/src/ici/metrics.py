"""Evaluation metrics and protocols.

For a trained model, two comparisons against the true system matter:

* open loop (OL): the same excitation drives the true plant and the model
  directly; an unstable true plant makes these metrics non-computable,
  which is reported rather than papered over;
* closed loop (CL): both systems run under the controller with identical
  excitation *and identical noise realizations*, so a perfect model scores
  an MSE of exactly zero.

``consistency_sweep`` measures how the identified interconnection core
approaches the exact one on the linear reference benchmark as the dataset
grows, in terms of the distance between truncated impulse responses.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .interconnect import ClosedLoopSystem, collect_dataset, construct_true_q
from .plants import ArmaNoise, Benchmark, GaussianNoise, get_benchmark
from .seqops import CausalOperator, DivergedRunError, lp_norm, run_guarded
from .stable_family import QOperator, init_params
from .training import (K_S1, K_S3, Strategy, TrainConfig, normalize_kind,
                       train)

Z_95 = 1.96


def r_squared(measurements, predictions):
    """Coefficient of determination against the overall measurement mean.

    Accepts (T, d) or (N, T, d) arrays.  Returns None when the
    measurements are (numerically) constant, where the ratio is undefined.
    """
    y = np.asarray(measurements, dtype=float)
    y_hat = np.asarray(predictions, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError("measurement and prediction shapes differ")
    mean = y.reshape(-1, y.shape[-1]).mean(axis=0)
    total = float(np.sum((y - mean) ** 2))
    if total <= 1e-30:
        return None
    residual = float(np.sum((y - y_hat) ** 2))
    return 1.0 - residual / total


def confidence_interval(values, student: bool = False):
    """95% interval for the mean: (mean, halfwidth).

    Normal approximation with z = 1.96 and the n-1 standard deviation; set
    ``student`` for the t quantile instead (matters for small n).
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("need at least one value")
    mean = float(values.mean())
    if values.size == 1:
        return mean, 0.0
    sd = float(values.std(ddof=1))
    if student:
        from scipy import stats
        q = float(stats.t.ppf(0.975, values.size - 1))
    else:
        q = Z_95
    return mean, q * sd / np.sqrt(values.size)


@dataclass
class MetricReport:
    """Evaluation summary; None marks a metric that was not computable."""

    ol_mse: float | None
    cl_mse: float | None
    ol_r2: float | None
    cl_r2: float | None
    n_test: int
    horizon: int
    diverged_ol: int = 0
    diverged_cl: int = 0
    ci95: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ol_mse": self.ol_mse, "cl_mse": self.cl_mse,
            "ol_r2": self.ol_r2, "cl_r2": self.cl_r2,
            "n_test": self.n_test, "horizon": self.horizon,
            "diverged_ol": self.diverged_ol, "diverged_cl": self.diverged_cl,
            "ci95": self.ci95,
        }


@dataclass
class EvalSignals:
    """Raw per-trajectory outputs backing a MetricReport."""

    y_true: np.ndarray          # (N, T, d_y) closed-loop measurements
    y_ol_true: np.ndarray       # noisy true open-loop response (NaN after divergence)
    y_ol_model: np.ndarray
    y_cl_model: np.ndarray
    ol_valid: np.ndarray        # (N,) bool
    cl_valid: np.ndarray


def _mse_per_traj(y_ref, y_hat):
    err = y_ref - y_hat
    return np.mean(np.sum(err * err, axis=-1), axis=-1)


def evaluate(model: CausalOperator, benchmark: Benchmark, sigma_r: float,
             noise=None, n_test: int = 100, horizon: int = 100,
             seed: int = 1_000_000) -> MetricReport:
    report, _ = evaluate_detailed(model, benchmark, sigma_r, noise,
                                  n_test, horizon, seed)
    return report


def evaluate_detailed(model: CausalOperator, benchmark: Benchmark,
                      sigma_r: float, noise=None, n_test: int = 100,
                      horizon: int = 100, seed: int = 1_000_000):
    """Run the OL and CL protocols on a fresh test set.

    Test trajectory i draws its excitation and noise from a generator
    seeded with ``seed + i``; the same realizations drive the true system
    and the model, so two evaluations of the same model are bit-identical.
    A diverging *true* closed loop is a configuration error and raises.
    """
    if n_test < 1 or horizon < 1:
        raise ValueError("need at least one test trajectory and one step")
    noise = noise if noise is not None else benchmark.make_noise()
    d_u, d_y = benchmark.in_dim, benchmark.out_dim
    if model.in_dim != d_u or model.out_dim != d_y:
        raise ValueError("model dimensions do not match the benchmark")

    shape = (n_test, horizon, d_y)
    y_true = np.empty(shape)
    y_ol_true = np.full(shape, np.nan)
    y_ol_model = np.full(shape, np.nan)
    y_cl_model = np.full(shape, np.nan)
    ol_valid = np.ones(n_test, dtype=bool)
    cl_valid = np.ones(n_test, dtype=bool)

    for i in range(n_test):
        rng = np.random.default_rng(seed + i)
        r = sigma_r * rng.standard_normal((horizon, d_u))
        v = noise.sample(horizon, d_y, rng)

        true_loop = ClosedLoopSystem(benchmark.make_plant(),
                                     benchmark.make_controller())
        _, y_true[i] = true_loop.run(r, v)

        raw, div_true = run_guarded(benchmark.make_plant(), r)
        y_ol_true[i] = raw + v
        sim, div_model = run_guarded(model.clone(), r)
        y_ol_model[i] = sim
        if div_true is not None or div_model is not None:
            ol_valid[i] = False

        model_loop = ClosedLoopSystem(model.clone(), benchmark.make_controller())
        try:
            _, y_cl_model[i] = model_loop.run(r, v)
        except DivergedRunError:
            cl_valid[i] = False

    def block(y_ref, y_hat, valid):
        if not np.all(valid):
            return None, None, None
        mse_traj = _mse_per_traj(y_ref, y_hat)
        _, half = confidence_interval(mse_traj)
        return float(mse_traj.mean()), r_squared(y_ref, y_hat), half

    ol_mse, ol_r2, ol_half = block(y_ol_true, y_ol_model, ol_valid)
    cl_mse, cl_r2, cl_half = block(y_true, y_cl_model, cl_valid)
    report = MetricReport(
        ol_mse=ol_mse, cl_mse=cl_mse, ol_r2=ol_r2, cl_r2=cl_r2,
        n_test=n_test, horizon=horizon,
        diverged_ol=int((~ol_valid).sum()), diverged_cl=int((~cl_valid).sum()),
        ci95={"ol_mse": ol_half, "cl_mse": cl_half},
    )
    signals = EvalSignals(y_true, y_ol_true, y_ol_model, y_cl_model,
                          ol_valid, cl_valid)
    return report, signals


# ---------------------------------------------------------------------------
# impulse responses and identification consistency
# ---------------------------------------------------------------------------

def impulse_response(op: CausalOperator, n_lags: int) -> np.ndarray | None:
    """Markov parameters M_0..M_{n_lags-1} as an (n_lags, d_y, d_u) array.

    Column j is the response to a unit impulse in input channel j.  None
    when the response diverges (possible for an identified model whose
    loop with the controller is unstable).
    """
    out = np.empty((n_lags, op.out_dim, op.in_dim))
    for j in range(op.in_dim):
        u = np.zeros((n_lags, op.in_dim))
        u[0, j] = 1.0
        y, diverged = run_guarded(op.clone(), u)
        if diverged is not None:
            return None
        out[:, :, j] = y
    return out


def ir_distance(ma: np.ndarray, mb: np.ndarray) -> float:
    return float(np.sqrt(np.sum((ma - mb) ** 2)))


def ir_norm(m: np.ndarray) -> float:
    return float(np.sqrt(np.sum(m ** 2)))


DEFAULT_SIZES = ((10, 100), (40, 100), (160, 100))


def consistency_sweep(noise: str = "white",
                      sizes=DEFAULT_SIZES,
                      strategies=("s3",),
                      n_seeds: int = 10,
                      base_seed: int = 0,
                      sigma_r: float = 1.0,
                      n_h: int = 4,
                      n_lags: int = 20,
                      train_cfg: TrainConfig | None = None) -> list[dict]:
    """Identification error of the interconnection core vs dataset size.

    Runs the linear reference benchmark.  For each seed one dataset of the
    largest size is collected and its prefixes give the smaller sizes, so
    error differences across sizes are not swamped by dataset variance.
    The identified core of S3 is the trained member itself; for S1 the
    core is constructed from the identified plant model and the
    controller.  Each row reports the impulse-response distance to the
    exact core over the first ``n_lags`` lags, absolute and relative.
    """
    if noise not in ("white", "colored"):
        raise ValueError("noise must be 'white' or 'colored'")
    bench = get_benchmark("linear_bench")
    gen = (GaussianNoise(0.1) if noise == "white"
           else ArmaNoise(ar=(0.9,), ma=(0.5,), target_std=0.1))
    cfg = train_cfg or TrainConfig(epochs=1000, learning_rate=0.02,
                                   patience=100, min_delta=1e-8)
    true_ir = impulse_response(bench.true_q_factory(), n_lags)
    reference = ir_norm(true_ir)
    n_max = max(n for n, _ in sizes)
    horizon = sizes[0][1]
    if any(t != horizon for _, t in sizes):
        raise ValueError("sizes with mixed horizons are not supported")

    rows = []
    for seed_idx in range(n_seeds):
        data_seed = base_seed + 100_000 * (seed_idx + 1)
        loop = ClosedLoopSystem(bench.make_plant(), bench.make_controller(), gen)
        full = collect_dataset(loop, n_max, horizon, sigma_r, data_seed)
        for kind in strategies:
            kind = normalize_kind(kind)
            for n_traj, _ in sizes:
                ds = full.subset(n_traj)
                rng = np.random.default_rng(data_seed + 17)
                params = init_params(n_h, bench.in_dim, bench.out_dim,
                                     alpha=0.95, activation="identity", rng=rng)
                strategy = Strategy(kind, params, bench.make_controller())
                result = train(strategy, ds, cfg)
                if kind == K_S1:
                    core = construct_true_q(QOperator(result.params),
                                            bench.make_controller())
                else:
                    core = QOperator(result.params)
                learned_ir = impulse_response(core, n_lags)
                err = (np.inf if learned_ir is None
                       else ir_distance(learned_ir, true_ir))
                rows.append({
                    "strategy": kind, "noise": noise, "n_traj": n_traj,
                    "horizon": horizon, "seed": seed_idx,
                    "ir_error": err, "ir_error_rel": err / reference,
                    # the returned parameters are the best-loss ones
                    "final_loss": float(np.min(result.loss_curve)),
                    "divergences": result.divergence_count,
                })
    return rows


def summarize_sweep(rows) -> dict:
    """Mean relative error per (strategy, n_traj), seeds averaged."""
    keys = sorted({(row["strategy"], row["n_traj"]) for row in rows})
    out = {}
    for strategy, n_traj in keys:
        vals = [row["ir_error_rel"] for row in rows
                if row["strategy"] == strategy and row["n_traj"] == n_traj]
        out[(strategy, n_traj)] = float(np.mean(vals))
    return out
