"""Acceptance gate: the nine headline properties, one verdict line each.

Each test prints ``[PASS]``/``[FAIL] criterion N: ...`` and then asserts,
so a bare ``pytest tests/test_acceptance.py -s`` doubles as the report.
Criteria 5-7 train models at desk scale; together they need most of an
hour on one core.  Everything else finishes in seconds.
"""
import os
import time

import numpy as np

from ici.experiments import (cmd_evaluate, cmd_generate, cmd_train,
                             resolve_config, sweep_cell)
from ici.interconnect import ClosedLoopSystem, collect_dataset
from ici.metrics import evaluate_detailed, r_squared
from ici.plants import get_benchmark
from ici.stable_family import init_params
from ici.training import (K_S1, K_S2, K_S3, Strategy, TrainConfig, cost,
                          model_operator, train)
from ici.verify import (boundedness_report, consistency_suite,
                        corollary1_suite, gradients_suite,
                        reconstruction_report)


def _verdict(num: int, name: str, ok: bool, detail: str) -> bool:
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] criterion {num}: {name} ({detail})")
    return ok


def test_criterion_1_closed_loop_boundedness():
    start = time.perf_counter()
    rep = boundedness_report()
    elapsed = time.perf_counter() - start
    ok = rep["passed"] and elapsed < 30.0
    assert _verdict(1, "closed-loop signal bound for every parameter", ok,
                    f"worst margin {rep['worst_margin']:.2e}, "
                    f"finite={rep['all_finite']}, {elapsed:.1f}s")


def test_criterion_2_exact_reconstruction():
    start = time.perf_counter()
    rep = reconstruction_report()
    elapsed = time.perf_counter() - start
    ok = rep["passed"] and elapsed < 60.0
    assert _verdict(2, "exact core reconstructs the plant", ok,
                    f"linear {rep['linear_worst']:.2e}, "
                    f"scalar {rep['scalar_worst']:.2e}, {elapsed:.1f}s")


def test_criterion_3_feedback_inverse():
    rep = corollary1_suite()
    worst = rep["properties"][0]["worst"]
    assert _verdict(3, "recursive feedback inverse round trip",
                    rep["passed"], f"worst relative error {worst:.2e}")


def test_criterion_4_gradient_correctness():
    rep = gradients_suite()
    worst = max(p["worst"] for p in rep["properties"])
    assert _verdict(4, "analytic gradients match finite differences",
                    rep["passed"], f"max relative error {worst:.2e}")


def test_criterion_5_linear_consistency():
    start = time.perf_counter()
    rep = consistency_suite()
    elapsed = time.perf_counter() - start
    props = {p["name"]: p for p in rep["properties"]}
    decreasing = props["S3 error strictly decreases with dataset size"]
    floor = props["S1 bias floor under colored noise"]
    ok = rep["passed"] and elapsed < 600.0
    assert _verdict(5, "consistency with data, bias floor under color", ok,
                    f"S3 {decreasing['detail']}; {floor['detail']}; "
                    f"{elapsed:.0f}s")


def test_criterion_6_scalar_unstable_experiment():
    start = time.perf_counter()
    bench = get_benchmark("scalar_unstable")
    cl_mses, blowups = [], []
    for seed in range(10):
        loop = ClosedLoopSystem(bench.make_plant(), bench.make_controller(),
                                bench.make_noise())
        data = collect_dataset(loop, 40, 100, sigma_r=0.5, seed=seed)
        params = init_params(4, 1, 1, alpha=0.95, activation="identity",
                             rng=np.random.default_rng(seed + 17))
        cfg = TrainConfig(epochs=2000, learning_rate=0.02, patience=400,
                          clip_grad=1.0)
        result = train(Strategy("s3", params, bench.make_controller()),
                       data, cfg)
        model = model_operator(Strategy("s3", result.params,
                                        bench.make_controller()))
        report, _ = evaluate_detailed(model, bench, 0.5, bench.make_noise(),
                                      n_test=100, horizon=100,
                                      seed=1_000_000 + 10_000 * seed)
        cl_mses.append(report.cl_mse)
        probe = model.clone()
        with np.errstate(over="ignore", invalid="ignore"):
            outs = [float(np.abs(probe.step(np.zeros(1)))[0])
                    for _ in range(10)]
        blowups.append(max(outs))
    elapsed = time.perf_counter() - start
    ok = (all(m is not None and m < 0.05 for m in cl_mses)
          and all(b > 1e3 for b in blowups) and elapsed < 900.0)
    assert _verdict(6, "unstable scalar plant identified in closed loop", ok,
                    f"max CL MSE {max(cl_mses):.4f} over 10 seeds, "
                    f"min zero-input peak {min(blowups):.1e}, {elapsed:.0f}s")


def test_criterion_7_robot_strategy_orderings():
    start = time.perf_counter()
    cfg = resolve_config({
        "benchmark": "robot", "strategies": ["s1", "s2", "s3"],
        "n_traj": 40, "horizon": 100,
        "epochs": 9000, "learning_rate": 0.02, "lr_decay": 0.99967,
        "patience": 2000, "min_delta": 1e-7, "clip_grad": 1.0,
        "n_test": 100, "eval_horizon": 100,
    })
    rows = []
    for sigma in (10.0, 50.0):
        for seed in range(10):
            rows.extend(sweep_cell(cfg, sigma, seed))
    elapsed = time.perf_counter() - start

    def mean(sigma, kind, key):
        vals = [row[key] for row in rows
                if row["sigma"] == sigma and row["strategy"] == kind]
        if any(v is None for v in vals):
            return np.inf
        return float(np.mean(vals))

    ok = elapsed < 2700.0
    details = []
    for sigma in (10.0, 50.0):
        ol = {k: mean(sigma, k, "ol_mse") for k in (K_S1, K_S2, K_S3)}
        cl = {k: mean(sigma, k, "cl_mse") for k in (K_S1, K_S2, K_S3)}
        r2 = {k: mean(sigma, k, "cl_r2") for k in (K_S1, K_S3)}
        ok = (ok and ol[K_S3] < ol[K_S2] < ol[K_S1]
              and cl[K_S3] < cl[K_S2] < cl[K_S1]
              and r2[K_S3] > r2[K_S1])
        details.append(
            f"sigma={sigma:g} OL {ol[K_S3]:.1f}<{ol[K_S2]:.1f}<{ol[K_S1]:.1f}"
            f" CL {cl[K_S3]:.2f}<{cl[K_S2]:.2f}<{cl[K_S1]:.2f}"
            f" R2 {r2[K_S3]:.3f}>{r2[K_S1]:.3f}")
    assert _verdict(7, "indirect < direct-interconnected < direct", ok,
                    "; ".join(details) + f"; {elapsed:.0f}s")


def test_criterion_8_metric_arithmetic():
    start = time.perf_counter()
    y = np.array([[1.0, 2.0], [3.0, 5.0], [4.0, 0.0]])
    perfect = r_squared(y, y) == 1.0
    mean_pred = r_squared(y, np.tile(y.mean(axis=0), (3, 1))) == 0.0
    zero = cost(y[None], y[None]) == 0.0
    hand = cost(np.zeros((1, 2, 1)), np.array([[[1.0], [2.0]]])) == 2.5
    two_traj = cost(np.zeros((2, 1, 3)),
                    np.array([[[1.0, 0.0, 0.0]],
                              [[1.0, 1.0, 1.0]]])) == 2.0
    elapsed = time.perf_counter() - start
    ok = (perfect and mean_pred and zero and hand and two_traj
          and elapsed < 1.0)
    assert _verdict(8, "metric reference values exact", ok,
                    f"perfect={perfect} mean={mean_pred} cost={zero},"
                    f"{hand},{two_traj}, {elapsed * 1e3:.0f}ms")


def test_criterion_9_byte_identical_reruns(tmp_path):
    cfg = resolve_config({
        "benchmark": "linear_bench", "strategy": "s3",
        "n_traj": 4, "horizon": 25, "epochs": 40, "patience": 40,
        "n_test": 5, "eval_horizon": 25,
    })
    artifacts = {}
    for tag in ("first", "second"):
        root = tmp_path / tag
        cmd_generate(dict(cfg), root / "data")
        cmd_train(dict(cfg), root / "data", root / "run")
        cmd_evaluate(dict(cfg), root / "run")
        blobs = {}
        for base in (root / "data", root / "run"):
            for name in sorted(os.listdir(base)):
                blobs[f"{base.name}/{name}"] = (base / name).read_bytes()
        artifacts[tag] = blobs
    same_names = sorted(artifacts["first"]) == sorted(artifacts["second"])
    diffs = [name for name in artifacts["first"]
             if artifacts["first"][name] != artifacts["second"].get(name)]
    ok = same_names and not diffs
    assert _verdict(9, "reruns reproduce every artifact byte for byte", ok,
                    f"{len(artifacts['first'])} files compared"
                    + (f", differing: {diffs}" if diffs else ""))
