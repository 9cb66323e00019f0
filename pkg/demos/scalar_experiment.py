"""Identifying the unstable scalar system from closed-loop data.

The plant x_{t+1} = x_t^2 + 1 + u_t cannot be simulated open-loop (it
blows up in a handful of steps), so identification has to happen inside
the stabilized loop.  We train the indirect strategy on loop data, then
show the learned model does both things the true plant does: it tracks
the loop closely, and it diverges when the controller is removed.

Run:  python demos/scalar_experiment.py   (about half a minute)
"""
import numpy as np

from ici.interconnect import ClosedLoopSystem, collect_dataset
from ici.metrics import evaluate_detailed
from ici.plants import get_benchmark
from ici.stable_family import init_params
from ici.training import Strategy, TrainConfig, model_operator, train

SEED = 0


def main():
    bench = get_benchmark("scalar_unstable")
    loop = ClosedLoopSystem(bench.make_plant(), bench.make_controller(),
                            bench.make_noise())
    data = collect_dataset(loop, 40, 100, sigma_r=0.5, seed=SEED)
    print(f"collected {data.n_traj} closed-loop trajectories, "
          f"max |y| = {np.max(np.abs(data.y)):.2f} (bounded, thanks to K)")

    params = init_params(4, 1, 1, alpha=0.95, activation="identity",
                         rng=np.random.default_rng(SEED + 17))
    cfg = TrainConfig(epochs=2000, learning_rate=0.02, patience=400,
                      clip_grad=1.0)
    result = train(Strategy("s3", params, bench.make_controller()), data, cfg)
    print(f"trained the indirect strategy: loss "
          f"{result.loss_curve[0]:.4f} -> {min(result.loss_curve):.4f} "
          f"({result.epochs_run} epochs)")

    model = model_operator(Strategy("s3", result.params,
                                    bench.make_controller()))
    report, _ = evaluate_detailed(model, bench, 0.5, bench.make_noise(),
                                  n_test=100, horizon=100, seed=1_000_000)
    print(f"closed-loop replay on 100 fresh trajectories: "
          f"MSE {report.cl_mse:.4f}, R^2 {report.cl_r2:.4f}")
    print(f"open-loop evaluation: {report.diverged_ol} of {report.n_test} "
          "true-plant runs diverge, so OL MSE is reported as "
          f"{report.ol_mse} (not computable)")

    print()
    print("zero-input open-loop rollout of the learned model:")
    probe = model.clone()
    outputs = [float(probe.step(np.zeros(1))[0]) for _ in range(8)]
    print(" ", np.array2string(np.array(outputs), precision=2))
    print("the learned surrogate inherits the instability: exactly what a")
    print("model of an unstable plant should do without its controller.")


if __name__ == "__main__":
    main()
