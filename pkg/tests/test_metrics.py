"""Evaluation protocols, impulse responses, consistency machinery."""
import numpy as np
import pytest

from ici.interconnect import (ClosedLoopSystem, ICIModel, collect_dataset,
                              construct_true_q)
from ici.metrics import (DEFAULT_SIZES, confidence_interval, consistency_sweep,
                         evaluate, evaluate_detailed, impulse_response,
                         ir_distance, ir_norm, r_squared, summarize_sweep)
from ici.plants import get_benchmark, linear_benchmark
from ici.seqops import ZeroOperator
from ici.stable_family import init_params
from ici.training import Strategy, TrainConfig, model_operator, train


def test_r_squared_reference_points():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((5, 20, 2))
    assert r_squared(y, y) == pytest.approx(1.0)
    mean_pred = np.broadcast_to(y.mean(axis=(0, 1)), y.shape)
    assert r_squared(y, mean_pred) == pytest.approx(0.0, abs=1e-12)
    worse = np.broadcast_to(y.mean(axis=(0, 1)) + 1.0, y.shape)
    assert r_squared(y, worse) < 0.0
    constant = np.ones((3, 4, 1))
    assert r_squared(constant, constant) is None


def test_confidence_interval_hand_values():
    mean, half = confidence_interval([0.0, 2.0])
    assert mean == pytest.approx(1.0)
    # std with ddof=1 is sqrt(2); half-width 1.96 * sqrt(2) / sqrt(2)
    assert half == pytest.approx(1.96)
    _, half_t = confidence_interval([0.0, 2.0], student=True)
    assert half_t == pytest.approx(12.706, rel=1e-3)
    mean_one, half_one = confidence_interval([3.0])
    assert mean_one == 3.0 and half_one == 0.0


# ---------------------------------------------------------------------------
# evaluation protocols
# ---------------------------------------------------------------------------

def test_exact_core_scores_zero_closed_loop_on_scalar():
    bench = get_benchmark("scalar_unstable")
    surrogate = ICIModel(construct_true_q(bench.make_plant(),
                                          bench.make_controller()),
                         bench.make_controller())
    report = evaluate(surrogate, bench, sigma_r=0.5, n_test=20, horizon=50,
                      seed=1000)
    # the wrapper subtracts K(y*) and the exact core re-adds it; that pair
    # of operations leaves last-ulp residue, so "zero" means ulp^2 here
    assert report.cl_mse < 1e-30
    assert report.cl_r2 == pytest.approx(1.0)
    # the unstable open-loop plant makes OL metrics non-computable
    assert report.ol_mse is None and report.ol_r2 is None
    assert report.diverged_ol == 20
    assert report.diverged_cl == 0


def test_exact_core_open_loop_error_is_the_noise_floor():
    bench = get_benchmark("robot")
    surrogate = ICIModel(construct_true_q(bench.make_plant(),
                                          bench.make_controller()),
                         bench.make_controller())
    report = evaluate(surrogate, bench, sigma_r=10.0, n_test=30, horizon=80,
                      seed=2000)
    assert report.diverged_ol == 0
    # residual = measurement noise with std 0.1 in both output channels
    assert report.ol_mse == pytest.approx(0.02, rel=0.2)
    assert report.ol_r2 > 0.99
    assert report.cl_mse < 1e-28


def test_evaluate_is_reproducible():
    bench = get_benchmark("robot")
    surrogate = ICIModel(construct_true_q(bench.make_plant(),
                                          bench.make_controller()),
                         bench.make_controller())
    r1 = evaluate(surrogate, bench, 10.0, n_test=5, horizon=30, seed=99)
    r2 = evaluate(surrogate, bench, 10.0, n_test=5, horizon=30, seed=99)
    assert r1.ol_mse == r2.ol_mse and r1.cl_mse == r2.cl_mse


def test_evaluate_validation():
    bench = get_benchmark("robot")
    with pytest.raises(ValueError):
        evaluate(ZeroOperator(2, 2), bench, 10.0, n_test=0)
    with pytest.raises(ValueError):
        evaluate(ZeroOperator(1, 1), bench, 10.0)


def test_report_dict_keys():
    bench = get_benchmark("robot")
    report = evaluate(ZeroOperator(2, 2), bench, 10.0, n_test=3, horizon=20)
    d = report.to_dict()
    for key in ("ol_mse", "cl_mse", "ol_r2", "cl_r2", "n_test", "horizon",
                "diverged_ol", "diverged_cl", "ci95"):
        assert key in d


def test_trained_model_beats_the_zero_model():
    bench = get_benchmark("robot")
    loop = ClosedLoopSystem(bench.make_plant(), bench.make_controller(),
                            bench.make_noise())
    data = collect_dataset(loop, 10, 60, sigma_r=10.0, seed=42)
    from ici.training import resolve_scales
    i_s, o_s = resolve_scales("s3", data)
    params = init_params(8, 2, 2, alpha=0.99, activation="identity",
                         rng=np.random.default_rng(1), in_scale=i_s,
                         out_scale=o_s)
    cfg = TrainConfig(epochs=300, learning_rate=0.02, patience=300,
                      clip_grad=1.0)
    result = train(Strategy("s3", params, bench.make_controller()), data, cfg)
    model = model_operator(Strategy("s3", result.params,
                                    bench.make_controller()))
    trained = evaluate(model, bench, 10.0, n_test=20, horizon=60, seed=777)
    zero = evaluate(ZeroOperator(2, 2), bench, 10.0, n_test=20, horizon=60,
                    seed=777)
    assert zero.cl_r2 < trained.cl_r2
    assert zero.cl_mse > trained.cl_mse


# ---------------------------------------------------------------------------
# impulse responses
# ---------------------------------------------------------------------------

def test_impulse_response_matches_markov_parameters():
    bench = linear_benchmark()
    q = bench.true_q
    ir = impulse_response(q.clone(), 12)
    assert ir.shape == (12, 1, 1)
    assert ir[0, 0, 0] == 0.0                     # strictly causal
    for k in range(1, 12):
        expected = q.c @ np.linalg.matrix_power(q.a, k - 1) @ q.b
        assert ir[k, 0, 0] == pytest.approx(expected[0, 0], abs=1e-12)


def test_impulse_response_divergence_returns_none():
    from ici.seqops import LinearStateSpace
    unstable = LinearStateSpace([[20.0]], [[1.0]], [[1.0]])
    assert impulse_response(unstable, 40) is None


def test_ir_distance_and_norm():
    a = np.ones((5, 2, 1))
    b = np.zeros((5, 2, 1))
    assert ir_distance(a, a) == 0.0
    assert ir_distance(a, b) == pytest.approx(np.sqrt(10.0))
    assert ir_norm(a) == pytest.approx(np.sqrt(10.0))


# ---------------------------------------------------------------------------
# consistency sweep
# ---------------------------------------------------------------------------

def test_default_sizes():
    assert DEFAULT_SIZES == ((10, 100), (40, 100), (160, 100))


def test_consistency_sweep_smoke():
    rows = consistency_sweep(
        noise="white", sizes=((4, 40), (8, 40)), strategies=("s3",),
        n_seeds=2, train_cfg=TrainConfig(epochs=250, learning_rate=0.02,
                                         patience=250))
    assert len(rows) == 4
    for row in rows:
        assert row["strategy"] == "S3_indir_ici"
        assert row["noise"] == "white"
        assert np.isfinite(row["ir_error_rel"])
        assert row["ir_error_rel"] >= 0.0
        assert row["divergences"] == 0
    summary = summarize_sweep(rows)
    assert set(summary) == {("S3_indir_ici", 4), ("S3_indir_ici", 8)}
    # more data with the same training budget should not hurt on average
    assert summary[("S3_indir_ici", 8)] < 2.0 * summary[("S3_indir_ici", 4)]


def test_consistency_sweep_validation():
    with pytest.raises(ValueError):
        consistency_sweep(noise="pink")
    with pytest.raises(ValueError):
        consistency_sweep(sizes=((4, 40), (8, 50)))
