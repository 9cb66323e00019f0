"""Benchmark plants, controllers and noise generators.

Three benchmarks are registered:

``scalar_unstable``
    x_{t+1} = x_t^2 + 1 + u_t with y = x.  Open-loop trajectories blow up
    double-exponentially; the polynomial controller u = -y^2 - 1 + 0.5 y
    turns the loop into the contraction x_{t+1} = 0.5 x_t + r_t.

``robot``
    A planar point mass under velocity drag, position-controlled by a
    proportional law.  Forward Euler with step ``ts``.

``linear_bench``
    A fixed unstable SISO state-space plant with a static stabilizing
    output gain; the exact interconnection core is linear and known in
    closed form, which makes it the reference for consistency studies.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import signal

from .seqops import (CausalOperator, StrictlyCausalOperator, LinearStateSpace,
                     DivergedRunError, DIVERGENCE_LIMIT, check_finite)
from .stable_family import StableOperatorParams


# ---------------------------------------------------------------------------
# plants
# ---------------------------------------------------------------------------

class ScalarUnstablePlant(StrictlyCausalOperator):
    """x_{t+1} = x_t^2 + 1 + u_t, y_t = x_t.  Unstable for every input."""

    in_dim = 1
    out_dim = 1

    def __init__(self, x0: float = 0.0):
        self.x0 = float(x0)
        self.reset()

    def reset(self):
        self.x = self.x0
        self.t = 0

    def readout(self):
        return np.array([self.x])

    def advance(self, u):
        self.x = self.x * self.x + 1.0 + float(u[0])
        self.t += 1
        if not np.isfinite(self.x) or abs(self.x) > DIVERGENCE_LIMIT:
            raise DivergedRunError(self.t - 1, "scalar plant state overflowed")

    def clone(self):
        return ScalarUnstablePlant(self.x0)


def scalar_plant_step(plant: ScalarUnstablePlant, u) -> np.ndarray:
    """Current output y_t = x_t, then the state update."""
    return plant.step(u)


class PointMassRobot(StrictlyCausalOperator):
    """Planar point mass with nonlinear velocity drag, forward-Euler discretized.

    State is position x1 and velocity x2 in R^2; the drag force is
    ``b1 x2 - b2 |x2| x2``, so it opposes motion below speed b1/b2 and
    flips sign above it.  Output is the position.
    """

    in_dim = 2
    out_dim = 2

    def __init__(self, mass: float = 1.0, ts: float = 0.05, b1: float = 1.0,
                 b2: float = 0.02, x1_0=(-2.0, -2.0), x2_0=(10.0, 0.0)):
        if mass <= 0 or ts <= 0:
            raise ValueError("mass and ts must be positive")
        if not 0 < b2 < b1:
            raise ValueError("drag coefficients must satisfy 0 < b2 < b1")
        self.mass = float(mass)
        self.ts = float(ts)
        self.b1 = float(b1)
        self.b2 = float(b2)
        self.x1_0 = np.asarray(x1_0, dtype=float).reshape(2)
        self.x2_0 = np.asarray(x2_0, dtype=float).reshape(2)
        self.reset()

    def reset(self):
        self.x1 = self.x1_0.copy()
        self.x2 = self.x2_0.copy()
        self.t = 0

    def readout(self):
        return self.x1.copy()

    def advance(self, u):
        speed = float(np.linalg.norm(self.x2))
        drag = self.b1 * self.x2 - self.b2 * speed * self.x2
        x2_new = self.x2 + (self.ts / self.mass) * (-drag + u)
        self.x1 = self.x1 + self.ts * self.x2
        self.x2 = x2_new
        self.t += 1
        if (not np.all(np.isfinite(self.x1)) or not np.all(np.isfinite(self.x2))
                or max(np.abs(self.x1).max(), np.abs(self.x2).max()) > DIVERGENCE_LIMIT):
            raise DivergedRunError(self.t - 1, "robot state overflowed")

    def clone(self):
        return PointMassRobot(self.mass, self.ts, self.b1, self.b2,
                              self.x1_0, self.x2_0)


def robot_step(robot: PointMassRobot, u, v) -> np.ndarray:
    """Noisy position y_t = x1_t + v_t from the pre-update state, then update."""
    y = robot.readout() + np.asarray(v, dtype=float).reshape(2)
    robot.advance(np.asarray(u, dtype=float).reshape(2))
    return y


# ---------------------------------------------------------------------------
# controllers
# ---------------------------------------------------------------------------

class StaticController(CausalOperator):
    """Memoryless control law with a pointwise Jacobian.

    ``apply`` and ``jacobian`` accept batches (leading axes broadcast),
    which the training loop relies on.  ``certified_ifg`` is an upper
    bound on the incremental l2 gain when one is available.
    """

    certified_ifg: float | None = None

    def apply(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, y: np.ndarray) -> np.ndarray:
        """d apply / d y with shape (..., out_dim, in_dim)."""
        raise NotImplementedError

    def reset(self):
        pass

    def preview(self, y):
        return np.asarray(self.apply(y), dtype=float).reshape(self.out_dim)

    def advance(self, y):
        pass


class ScalarPolyController(StaticController):
    """u = -y^2 - 1 + 0.5 y: cancels the scalar plant's expansion.

    Not globally incrementally stable (the gain grows with |y|), so no
    certified gain is attached; boundedness claims about loops using it
    are checked empirically.
    """

    in_dim = 1
    out_dim = 1
    certified_ifg = None

    def apply(self, y):
        y = np.asarray(y, dtype=float)
        return -y * y - 1.0 + 0.5 * y

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        return (-2.0 * y + 0.5)[..., None]

    def clone(self):
        return ScalarPolyController()


class ProportionalController(StaticController):
    """u = diag(gains) (target - y), the position law of the robot benchmark."""

    def __init__(self, gains, target=None):
        self.gains = np.atleast_1d(np.asarray(gains, dtype=float))
        self.in_dim = self.out_dim = self.gains.shape[0]
        if target is None:
            target = np.zeros(self.in_dim)
        self.target = np.asarray(target, dtype=float).reshape(self.in_dim)
        self.certified_ifg = float(np.abs(self.gains).max())

    def apply(self, y):
        return self.gains * (self.target - np.asarray(y, dtype=float))

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        jac = -np.diag(self.gains)
        return np.broadcast_to(jac, y.shape[:-1] + jac.shape)

    def clone(self):
        return ProportionalController(self.gains, self.target)


class StaticGainController(StaticController):
    """u = F y for a fixed matrix F."""

    def __init__(self, gain):
        self.gain = np.atleast_2d(np.asarray(gain, dtype=float))
        self.out_dim, self.in_dim = self.gain.shape
        self.certified_ifg = float(np.linalg.svd(self.gain, compute_uv=False)[0])

    def apply(self, y):
        return np.asarray(y, dtype=float) @ self.gain.T

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(self.gain, y.shape[:-1] + self.gain.shape)

    def clone(self):
        return StaticGainController(self.gain)


class ZeroController(StaticController):
    """u = 0; turns the interconnection into the bare model core."""

    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.certified_ifg = 0.0

    def apply(self, y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1] + (self.out_dim,))

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1] + (self.out_dim, self.in_dim))

    def clone(self):
        return ZeroController(self.in_dim, self.out_dim)


# ---------------------------------------------------------------------------
# measurement noise
# ---------------------------------------------------------------------------

class NoiseGenerator:
    def sample(self, n_steps: int, dim: int, rng) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError


class ZeroNoise(NoiseGenerator):
    def sample(self, n_steps, dim, rng):
        return np.zeros((n_steps, dim))

    def describe(self):
        return {"kind": "zero"}


class GaussianNoise(NoiseGenerator):
    """White noise, per-component standard deviation ``std``."""

    def __init__(self, std: float):
        if std < 0:
            raise ValueError("std must be non-negative")
        self.std = float(std)

    def sample(self, n_steps, dim, rng):
        return self.std * rng.standard_normal((n_steps, dim))

    def describe(self):
        return {"kind": "gaussian", "std": self.std}


class TruncatedGaussianNoise(NoiseGenerator):
    """Gaussian noise rejection-sampled into the open interval (low, high)."""

    def __init__(self, std: float, low: float = -0.25, high: float = 0.25):
        if std <= 0 or low >= high:
            raise ValueError("need std > 0 and low < high")
        self.std = float(std)
        self.low = float(low)
        self.high = float(high)

    def sample(self, n_steps, dim, rng):
        out = self.std * rng.standard_normal((n_steps, dim))
        bad = (out <= self.low) | (out >= self.high)
        while np.any(bad):
            out[bad] = self.std * rng.standard_normal(int(bad.sum()))
            bad = (out <= self.low) | (out >= self.high)
        return out

    def describe(self):
        return {"kind": "truncated_gaussian", "std": self.std,
                "low": self.low, "high": self.high}


class ArmaNoise(NoiseGenerator):
    """Colored noise v_t = sum_i ar_i v_{t-i} + e_t + sum_j ma_j e_{t-j}.

    The driving white std is chosen so the stationary output std matches
    ``target_std`` (via the l2 norm of the filter's impulse response), and
    a burn-in prefix is discarded so samples start near stationarity.
    """

    def __init__(self, ar=(0.9,), ma=(0.5,), target_std: float = 0.1,
                 burn_in: int = 500):
        self.ar = [float(a) for a in ar]
        self.ma = [float(m) for m in ma]
        if target_std <= 0:
            raise ValueError("target_std must be positive")
        self.target_std = float(target_std)
        self.burn_in = int(burn_in)
        self._num = [1.0] + self.ma
        self._den = [1.0] + [-a for a in self.ar]
        impulse = np.zeros(4000)
        impulse[0] = 1.0
        gain = float(np.linalg.norm(signal.lfilter(self._num, self._den, impulse)))
        if not np.isfinite(gain) or gain == 0:
            raise ValueError("ARMA filter is unstable or degenerate")
        self.driving_std = self.target_std / gain

    def sample(self, n_steps, dim, rng):
        e = self.driving_std * rng.standard_normal((self.burn_in + n_steps, dim))
        v = signal.lfilter(self._num, self._den, e, axis=0)
        return v[self.burn_in:]

    def describe(self):
        return {"kind": "arma", "ar": self.ar, "ma": self.ma,
                "target_std": self.target_std, "driving_std": self.driving_std}


def noise_from_config(cfg: dict) -> NoiseGenerator:
    """Build a generator from flat config keys (see ``describe`` outputs)."""
    kind = cfg.get("kind", "gaussian")
    if kind == "zero":
        return ZeroNoise()
    if kind == "gaussian":
        return GaussianNoise(cfg["std"])
    if kind == "truncated_gaussian":
        return TruncatedGaussianNoise(cfg["std"], cfg.get("low", -0.25),
                                      cfg.get("high", 0.25))
    if kind == "arma":
        return ArmaNoise(cfg.get("ar", (0.9,)), cfg.get("ma", (0.5,)),
                         cfg.get("target_std", cfg.get("std", 0.1)))
    raise ValueError(f"unknown noise kind {kind!r}")


# ---------------------------------------------------------------------------
# linear reference benchmark
# ---------------------------------------------------------------------------

# Companion-style SISO plant with eigenvalues {1.25, -0.75}: open-loop
# unstable.  The output gain -0.8 moves the closed-loop eigenvalues to
# {0.25, -0.55}.
_LIN_A = np.array([[0.0, 1.0], [0.9375, 0.5]])
_LIN_B = np.array([[0.0], [1.0]])
_LIN_C = np.array([[1.0, 1.0]])
_LIN_GAIN = np.array([[-0.8]])

# Diagonalized realization of the exact interconnection core
# Q = G (I - K G)^{-1}, whose state matrix is A + B F C.
_LIN_Q_A = np.diag([0.25, -0.55])
_LIN_Q_B = np.array([[1.25], [-1.25]])
_LIN_Q_C = np.array([[1.25, 0.45]])


@dataclass
class LinearBenchmark:
    plant: LinearStateSpace
    controller: StaticGainController
    true_q: LinearStateSpace
    true_q_params: StableOperatorParams


def linear_benchmark(alpha: float = 0.95) -> LinearBenchmark:
    """The fixed linear plant, its stabilizing gain, and the exact core.

    ``true_q_params`` embeds the core into the identity-activation family:
    the raw state matrix is pre-divided by alpha so the spectral projection
    restores it exactly, making the true core a member of the trainable
    family.
    """
    params = StableOperatorParams(
        A_raw=_LIN_Q_A / alpha,
        B=_LIN_Q_B.copy(),
        C=_LIN_Q_C.copy(),
        b=np.zeros(2),
        c=np.zeros(1),
        alpha=alpha,
        activation="identity",
    )
    return LinearBenchmark(
        plant=LinearStateSpace(_LIN_A, _LIN_B, _LIN_C),
        controller=StaticGainController(_LIN_GAIN),
        true_q=LinearStateSpace(_LIN_Q_A, _LIN_Q_B, _LIN_Q_C),
        true_q_params=params,
    )


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

@dataclass
class Benchmark:
    """Factories and defaults for one named experimental setup."""

    name: str
    in_dim: int
    out_dim: int
    make_plant: Callable[[], CausalOperator]
    make_controller: Callable[[], CausalOperator]
    make_noise: Callable[[], NoiseGenerator]
    default_sigma_r: float
    model_defaults: dict = field(default_factory=dict)
    true_q_factory: Callable[[], CausalOperator] | None = None


def get_benchmark(name: str) -> Benchmark:
    if name == "scalar_unstable":
        return Benchmark(
            name=name, in_dim=1, out_dim=1,
            make_plant=ScalarUnstablePlant,
            make_controller=ScalarPolyController,
            make_noise=lambda: TruncatedGaussianNoise(0.1, -0.25, 0.25),
            default_sigma_r=0.5,
            model_defaults={"n_h": 4, "alpha": 0.95, "activation": "identity",
                            "scale_mode": "fixed"},
        )
    if name == "robot":
        # alpha must exceed the closed-loop pole magnitude exp(-0.5 ts)
        # (about 0.975), or the family cannot represent the loop's memory.
        # Identity activation: the weak quadratic drag leaves the loop nearly
        # affine, and saturating units underfit the long initial transient.
        return Benchmark(
            name=name, in_dim=2, out_dim=2,
            make_plant=PointMassRobot,
            make_controller=lambda: ProportionalController((1.0, 1.0)),
            make_noise=lambda: GaussianNoise(0.1),
            default_sigma_r=10.0,
            model_defaults={"n_h": 16, "alpha": 0.99, "activation": "identity",
                            "scale_mode": "auto"},
        )
    if name == "linear_bench":
        bench = linear_benchmark()
        return Benchmark(
            name=name, in_dim=1, out_dim=1,
            make_plant=bench.plant.clone,
            make_controller=bench.controller.clone,
            make_noise=lambda: GaussianNoise(0.1),
            default_sigma_r=1.0,
            model_defaults={"n_h": 4, "alpha": 0.95, "activation": "identity",
                            "scale_mode": "fixed"},
            true_q_factory=bench.true_q.clone,
        )
    raise ValueError(f"unknown benchmark {name!r}; "
                     "choose scalar_unstable, robot or linear_bench")
