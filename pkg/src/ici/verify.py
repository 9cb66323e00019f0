"""Self-verification suites for the structural guarantees.

Four suites, each answering one question with randomized instances:

* ``theorem1``: does the interconnected model stay bounded in closed loop
  for *every* parameter value (with the certified signal bound), and does
  the exact core reconstruct the plant it was built from?
* ``corollary1``: does the recursive feedback inverse actually invert?
* ``gradients``: do analytic gradients match finite differences for all
  three strategies?
* ``consistency``: does the identified core converge to the exact one as
  data grows, and does the direct strategy hit a bias floor under colored
  noise?

Each suite returns a plain dict report with one entry per property.
"""
from __future__ import annotations

import time

import numpy as np

from .datasets import Dataset
from .interconnect import (ClosedLoopSystem, ICIModel, collect_dataset,
                           construct_true_q)
from .metrics import consistency_sweep, summarize_sweep
from .plants import (ProportionalController, ScalarPolyController,
                     ScalarUnstablePlant, StaticGainController,
                     TruncatedGaussianNoise)
from .seqops import (LinearStateSpace, StaticOperator, UnitDelay, as_sequence,
                     feedback_inverse, lp_norm, series)
from .stable_family import QOperator, init_params
from .training import (K_S1, K_S2, K_S3, Strategy, grad_check)


def _report(suite: str, properties: list[dict]) -> dict:
    return {"suite": suite, "passed": all(p["passed"] for p in properties),
            "properties": properties}


def format_report(report: dict) -> str:
    lines = []
    for prop in report["properties"]:
        status = "PASS" if prop["passed"] else "FAIL"
        detail = prop.get("detail", "")
        lines.append(f"[{status}] {report['suite']}: {prop['name']}"
                     + (f" ({detail})" if detail else ""))
    overall = "PASS" if report["passed"] else "FAIL"
    lines.append(f"[{overall}] suite {report['suite']}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# theorem1: closed-loop boundedness + exact reconstruction
# ---------------------------------------------------------------------------

def boundedness_report(n_theta: int = 50, n_pairs: int = 100,
                       horizon: int = 100, n_h: int = 8, alpha: float = 0.95,
                       seed: int = 2024, slack: float = 1e-9) -> dict:
    """Certified signal bound for the interconnected model in closed loop.

    For random parameter draws and unit-norm excitation/noise pairs, the
    core's input w must satisfy |w|_2 <= |r|_2 + gain_K |v|_2.  The bound
    is re-derived from recorded loop signals with a fresh controller, not
    read off the model's internals.
    """
    controller = ProportionalController((1.0, 2.0))
    gamma_k = controller.certified_ifg
    worst = -np.inf
    finite = True
    rng = np.random.default_rng(seed)
    for i in range(n_theta):
        params = init_params(n_h, 2, 2, alpha=alpha, activation="tanh",
                             rng=rng)
        # random biases exercise the affine terms too
        params.b = 0.1 * rng.standard_normal(n_h)
        params.c = 0.1 * rng.standard_normal(2)
        model = ICIModel(QOperator(params), controller.clone())
        loop = ClosedLoopSystem(model, controller.clone())
        for _ in range(n_pairs):
            r = rng.standard_normal((horizon, 2))
            r /= lp_norm(r)
            v = rng.standard_normal((horizon, 2))
            v /= lp_norm(v)
            u_hat, y_hat = loop.run(r, v)
            y_star = y_hat - v
            w_hat = u_hat - controller.apply(y_star)
            if not (np.all(np.isfinite(u_hat)) and np.all(np.isfinite(y_hat))):
                finite = False
            margin = lp_norm(w_hat) - (lp_norm(r) + gamma_k * lp_norm(v))
            worst = max(worst, margin)
    passed = finite and worst <= slack
    return {"name": "closed-loop signal bound for all parameters",
            "passed": passed, "samples": n_theta * n_pairs,
            "detail": f"worst margin {worst:.3e} over {n_theta}x{n_pairs} runs",
            "worst_margin": worst, "all_finite": finite}


def _random_stable_ss(rng, n_x, d_u, d_y, radius):
    a = rng.standard_normal((n_x, n_x))
    top = np.abs(np.linalg.eigvals(a)).max()
    if top > 0:
        a *= radius / top
    b = rng.standard_normal((n_x, d_u))
    c = rng.standard_normal((d_y, n_x)) / np.sqrt(n_x)
    return a, b, c


def _stabilizing_linear_controller(rng, a, b, c, max_tries=50):
    """Random causal linear controller certified to stabilize (a, b, c).

    Tries static gains and one-state dynamic controllers, accepting the
    first with closed-loop spectral radius < 0.95.  K = 0 is a valid
    fallback because the plant itself is stable.
    """
    d_y, d_u = c.shape[0], b.shape[1]
    for attempt in range(max_tries):
        if attempt % 2 == 0:
            gain = 0.3 * rng.standard_normal((d_u, d_y))
            a_cl = a + b @ gain @ c
            if np.abs(np.linalg.eigvals(a_cl)).max() < 0.95:
                return StaticGainController(gain)
        else:
            ak = 0.5 * (2 * rng.random((1, 1)) - 1)
            bk = 0.3 * rng.standard_normal((1, d_y))
            ck = 0.3 * rng.standard_normal((d_u, 1))
            dk = 0.3 * rng.standard_normal((d_u, d_y))
            top = np.block([[a + b @ dk @ c, b @ ck], [bk @ c, ak]])
            if np.abs(np.linalg.eigvals(top)).max() < 0.95:
                return LinearStateSpace(ak, bk, ck, dk)
    return StaticGainController(np.zeros((d_u, d_y)))


def reconstruction_report(n_systems: int = 50, horizon: int = 100,
                          seed: int = 77, tol: float = 1e-6) -> dict:
    """Interconnecting the exact core with the controller reproduces the plant."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    zero_init_ok = True
    for i in range(n_systems):
        n_x = int(rng.integers(2, 5))
        d = int(rng.integers(1, 3))
        a, b, c = _random_stable_ss(rng, n_x, d, d, radius=float(rng.uniform(0.4, 0.9)))
        plant = LinearStateSpace(a, b, c)
        controller = _stabilizing_linear_controller(rng, a, b, c)
        core = construct_true_q(plant, controller)
        if not np.allclose(core.readout(), plant.readout()):
            zero_init_ok = False
        model = ICIModel(core, controller.clone())
        u = rng.standard_normal((horizon, d))
        y_direct = plant.clone().run(u)
        y_model = model.run(u)
        rel = lp_norm(y_model - y_direct) / max(1.0, lp_norm(y_direct))
        worst = max(worst, rel)
    scalar_worst = 0.0
    bench_loop = ClosedLoopSystem(ScalarUnstablePlant(), ScalarPolyController(),
                                  TruncatedGaussianNoise(0.1))
    data = collect_dataset(bench_loop, 3, horizon, sigma_r=0.5, seed=seed + 1)
    for n in range(data.n_traj):
        u = data.u[n]
        y_direct = ScalarUnstablePlant().run(u)
        model = ICIModel(construct_true_q(ScalarUnstablePlant(),
                                          ScalarPolyController()),
                         ScalarPolyController())
        y_model = model.run(u)
        rel = lp_norm(y_model - y_direct) / max(1.0, lp_norm(y_direct))
        scalar_worst = max(scalar_worst, rel)
    passed = worst <= tol and scalar_worst <= tol and zero_init_ok
    return {"name": "exact core reconstructs the plant",
            "passed": passed, "samples": n_systems + data.n_traj,
            "detail": (f"worst relative error {max(worst, scalar_worst):.3e} "
                       f"over {n_systems} linear systems + unstable scalar loop"),
            "linear_worst": worst, "scalar_worst": scalar_worst,
            "zero_init_match": zero_init_ok}


def theorem1_suite(seed: int = 0) -> dict:
    return _report("theorem1", [
        boundedness_report(seed=seed + 2024),
        reconstruction_report(seed=seed + 77),
    ])


# ---------------------------------------------------------------------------
# corollary1: recursive feedback inverse
# ---------------------------------------------------------------------------

def _random_strictly_causal(rng, kind: int):
    if kind == 0:
        d = int(rng.integers(1, 4))
        a, b, c = _random_stable_ss(rng, int(rng.integers(1, 5)), d, d,
                                    radius=float(rng.uniform(0.3, 0.9)))
        # condition the instance so the inverse (state matrix A - BC) is
        # stable too; otherwise b grows like rho^T and float cancellation
        # swamps any fixed tolerance long before T = 100
        while np.abs(np.linalg.eigvals(a - b @ c)).max() >= 0.95:
            c = 0.5 * c
        return LinearStateSpace(a, b, c)
    if kind == 1:
        d = int(rng.integers(1, 3))
        params = init_params(6, d, d, alpha=0.9, activation="tanh", rng=rng)
        return QOperator(params)
    d = int(rng.integers(1, 3))
    w = rng.standard_normal((d, d))
    return series(UnitDelay(d), StaticOperator(lambda x, w=w: np.tanh(w @ x), d, d))


def corollary1_suite(n_instances: int = 100, horizon: int = 100,
                     seed: int = 5, tol: float = 1e-9) -> dict:
    """b = (I + H)^{-1} a via recursion, checked by applying I + H to b."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_instances):
        op = _random_strictly_causal(rng, i % 3)
        a = as_sequence(rng.standard_normal((horizon, op.in_dim)))
        inv = feedback_inverse(op.clone())
        b = inv.run(a)
        recon = b + op.clone().run(b)
        worst = max(worst, lp_norm(recon - a) / max(1.0, lp_norm(a)))
    prop = {"name": "feedback inverse round trip",
            "passed": worst <= tol, "samples": n_instances,
            "detail": f"worst relative error {worst:.3e} over {n_instances} instances",
            "worst": worst}
    return _report("corollary1", [prop])


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def gradients_suite(seed: int = 11, tol: float = 1e-4) -> dict:
    """Analytic vs central-difference gradients, five parameter draws per strategy."""
    properties = []
    for k_idx, kind in enumerate((K_S1, K_S2, K_S3)):
        worst = 0.0
        for j in range(5):
            rng = np.random.default_rng([seed, k_idx, j])
            activation = "tanh" if j % 2 == 0 else "identity"
            alpha = None if j == 4 else 0.95
            params = init_params(5, 2, 2, alpha=alpha, activation=activation,
                                 rng=rng)
            params.b = 0.1 * rng.standard_normal(5)
            params.c = 0.1 * rng.standard_normal(2)
            data = Dataset(rng.standard_normal((2, 20, 2)),
                           rng.standard_normal((2, 20, 2)),
                           rng.standard_normal((2, 20, 2)))
            controller = ProportionalController((0.7, 1.3)) if kind == K_S2 else None
            err = grad_check(Strategy(kind, params, controller), data)
            worst = max(worst, err)
        properties.append({
            "name": f"{kind} gradient matches finite differences",
            "passed": worst < tol, "samples": 5,
            "detail": f"max relative error {worst:.3e}",
            "worst": worst,
        })
    # the hand-coded polynomial-controller derivative, differentiated through;
    # the quadratic loop is only contractive for a small enough core
    rng = np.random.default_rng([seed, 999])
    params = init_params(4, 1, 1, alpha=0.95, activation="identity", rng=rng)
    params.C = 0.3 * params.C
    data = Dataset(rng.standard_normal((2, 15, 1)),
                   rng.standard_normal((2, 15, 1)),
                   rng.standard_normal((2, 15, 1)))
    err = grad_check(Strategy(K_S2, params, ScalarPolyController()), data)
    properties.append({
        "name": "S2_dir_ici gradient through the polynomial controller",
        "passed": err < tol, "samples": 1,
        "detail": f"max relative error {err:.3e}",
        "worst": err,
    })
    return _report("gradients", properties)


# ---------------------------------------------------------------------------
# consistency
# ---------------------------------------------------------------------------

def consistency_suite(n_seeds: int = 10, base_seed: int = 0,
                      rel_tol: float = 0.05, bias_factor: float = 3.0) -> dict:
    """Shrinking error with data for S3; bias floor for S1 under colored noise."""
    white = consistency_sweep(noise="white", strategies=("s3",),
                              n_seeds=n_seeds, base_seed=base_seed)
    colored = consistency_sweep(noise="colored", strategies=("s1", "s3"),
                                n_seeds=n_seeds, base_seed=base_seed + 1)
    w = summarize_sweep(white)
    c = summarize_sweep(colored)
    sizes = sorted(n for kind, n in w if kind == K_S3)
    means = [w[(K_S3, n)] for n in sizes]
    decreasing = all(means[i] > means[i + 1] for i in range(len(means) - 1))
    final_ok = means[-1] < rel_tol
    n_big = max(sizes)
    s1_floor = c[(K_S1, n_big)] > bias_factor * c[(K_S3, n_big)]
    properties = [
        {"name": "S3 error strictly decreases with dataset size",
         "passed": decreasing, "samples": n_seeds,
         "detail": "relative errors " + " -> ".join(f"{m:.4f}" for m in means),
         "means": means, "sizes": sizes},
        {"name": f"S3 final error below {rel_tol:.0%} of the exact core",
         "passed": final_ok, "samples": n_seeds,
         "detail": f"final {means[-1]:.4f}",
         "final": means[-1]},
        {"name": "S1 bias floor under colored noise",
         "passed": s1_floor, "samples": n_seeds,
         "detail": (f"S1 {c[(K_S1, n_big)]:.4f} vs "
                    f"{bias_factor:.0f} x S3 {c[(K_S3, n_big)]:.4f}"),
         "s1_final": c[(K_S1, n_big)], "s3_final": c[(K_S3, n_big)]},
    ]
    report = _report("consistency", properties)
    report["rows"] = white + colored
    return report


SUITES = {
    "theorem1": theorem1_suite,
    "corollary1": corollary1_suite,
    "gradients": gradients_suite,
    "consistency": consistency_suite,
}


def run_suite(name: str, **kwargs) -> dict:
    try:
        fn = SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}") \
            from None
    start = time.perf_counter()
    report = fn(**kwargs)
    report["runtime_s"] = round(time.perf_counter() - start, 3)
    return report
