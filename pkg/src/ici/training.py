"""Training strategies and gradient machinery.

Three ways to fit a model to closed-loop data (r, u, y):

* ``S1_direct_id``: fit the family member G directly, predicting y* = G(u).
* ``S2_dir_ici``: fit the core Q of the interconnected model, predicting
  y* = Q(u - K(y*)); gradients flow through the controller K.
* ``S3_indir_ici``: fit Q against the excitation, predicting y* = Q(r).

All strategies minimize the mean squared output error

    J = (1/N) sum_n (1/T) sum_t |y_t^n - y*_t^n|^2

by backpropagation through time with a plain gradient or adam-like update.
Forward passes are vectorized over trajectories.  A trajectory whose
prediction trips the divergence sentinel contributes a fixed clipped loss
and no gradient; the count of such passes is reported rather than hidden,
since a direct model of an unstable map is expected to fail this way.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .interconnect import ICIModel
from .seqops import DIVERGENCE_LIMIT, DivergedRunError
from .stable_family import (ParamGrads, QOperator, StableOperatorParams,
                            _activation, _project_backward, _projection_info)

K_S1 = "S1_direct_id"
K_S2 = "S2_dir_ici"
K_S3 = "S3_indir_ici"
STRATEGY_KINDS = (K_S1, K_S2, K_S3)

_ALIASES = {
    "s1": K_S1, "s1_direct_id": K_S1,
    "s2": K_S2, "s2_dir_ici": K_S2,
    "s3": K_S3, "s3_indir_ici": K_S3,
}


def normalize_kind(kind: str) -> str:
    try:
        return _ALIASES[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown strategy kind {kind!r}; "
                         f"choose from {STRATEGY_KINDS}") from None


class TrainingAbortError(RuntimeError):
    """Loss became non-finite; carries the epoch and first bad trajectory."""

    def __init__(self, epoch: int, trajectory: int):
        self.epoch = int(epoch)
        self.trajectory = int(trajectory)
        super().__init__(f"non-finite loss at epoch {self.epoch}, "
                         f"trajectory {self.trajectory}")


@dataclass
class Strategy:
    """A strategy kind plus the parameter vector it trains.

    ``controller`` is the loop controller: required for S2 (it sits inside
    the prediction), optional for S1/S3 where it is only needed later to
    assemble the interconnected model for evaluation.
    """

    kind: str
    params: StableOperatorParams
    controller: object | None = None

    def __post_init__(self):
        self.kind = normalize_kind(self.kind)
        if self.kind == K_S2 and self.controller is None:
            raise ValueError("S2 needs a controller inside the prediction")
        if self.kind == K_S2 and not hasattr(self.controller, "jacobian"):
            raise ValueError("S2 needs a controller with a pointwise jacobian")


@dataclass
class TrainConfig:
    epochs: int = 500
    learning_rate: float = 1e-3
    lr_decay: float = 1.0       # per-epoch multiplicative decay; 1 = constant
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 0              # 0 = full batch
    patience: int = 50
    min_delta: float = 1e-9
    shuffle_seed: int = 0
    clip_loss: float = 1e6
    clip_grad: float = 0.0      # global gradient-norm limit; 0 = off
    keep_best: bool = True      # return the best-loss parameters, not the last
    snapshot_every: int = 0     # 0 = keep no intermediate parameter copies

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    params: StableOperatorParams
    loss_curve: np.ndarray
    divergence_count: int = 0
    epochs_run: int = 0
    stopped_early: bool = False
    snapshots: list = field(default_factory=list)


def cost(predictions: np.ndarray, measurements: np.ndarray) -> float:
    """Mean over trajectories of the per-trajectory mean squared error."""
    predictions = np.asarray(predictions, dtype=float)
    measurements = np.asarray(measurements, dtype=float)
    if predictions.shape != measurements.shape:
        raise ValueError("prediction and measurement shapes differ")
    err = predictions - measurements
    return float(np.mean(np.sum(err * err, axis=-1)))


# ---------------------------------------------------------------------------
# batched forward / backward
# ---------------------------------------------------------------------------

def _forward_batch(params, a, w=None, u_meas=None, controller=None,
                   limit=DIVERGENCE_LIMIT):
    """Vectorized rollout over N trajectories.

    Either ``w`` (open-loop inputs, used by S1/S3) or ``u_meas`` plus
    ``controller`` (interconnected prediction, S2) must be given.  Returns
    outputs ``ys`` (N, T, d_y), states ``hs`` (N, T+1, n_h), effective core
    inputs ``ws`` (N, T, d_u) and ``diverged`` (N,) holding the step at
    which each trajectory died, or -1.  Dead trajectories are frozen at
    zero so they cannot poison the others.
    """
    phi, _ = _activation(params.activation)
    drive = w if w is not None else u_meas
    n, t_len = drive.shape[0], drive.shape[1]
    hs = np.zeros((n, t_len + 1, params.n_h))
    ys = np.zeros((n, t_len, params.out_dim))
    ws = np.zeros((n, t_len, params.in_dim))
    diverged = np.full(n, -1, dtype=int)
    alive = np.ones(n, dtype=bool)
    bt = params.B.T / params.in_scale
    for t in range(t_len):
        h = hs[:, t]
        y = params.out_scale * (h @ params.C.T + params.c)
        bad = alive & (~np.all(np.isfinite(y), axis=1) | (np.abs(y).max(axis=1) > limit))
        if np.any(bad):
            diverged[bad] = t
            alive &= ~bad
            y = np.where(alive[:, None], y, 0.0)
        ys[:, t] = np.where(alive[:, None], y, 0.0)
        if controller is None:
            w_t = drive[:, t]
        else:
            w_t = drive[:, t] - controller.apply(y)
        bad = alive & (~np.all(np.isfinite(w_t), axis=1)
                       | (np.abs(w_t).max(axis=1) > limit))
        if np.any(bad):
            diverged[bad] = t
            alive &= ~bad
        w_t = np.where(alive[:, None], w_t, 0.0)
        ws[:, t] = w_t
        z = h @ a.T + w_t @ bt + params.b
        hs[:, t + 1] = np.where(alive[:, None], phi(z), 0.0)
    return ys, hs, ws, diverged


def _backward_batch(params, a, hs, ws, ys, upstream, controller=None):
    """BPTT companion of ``_forward_batch``; upstream is dJ/dy*.

    Rows of ``upstream`` belonging to diverged trajectories must already be
    zeroed.  Returns gradients with the spectral-projection term folded in.
    """
    _, dphi = _activation(params.activation)
    n, t_len, _ = upstream.shape
    g = ParamGrads.zeros_like(params)
    grad_a = np.zeros_like(a)
    lam = np.zeros((n, params.n_h))
    for t in range(t_len - 1, -1, -1):
        mu = dphi(hs[:, t + 1]) * lam
        grad_a += mu.T @ hs[:, t]
        g.B += mu.T @ (ws[:, t] / params.in_scale)
        g.b += mu.sum(axis=0)
        e = upstream[:, t]
        if controller is not None:
            dw = (mu @ params.B) / params.in_scale
            jac = controller.jacobian(ys[:, t])
            e = e - np.einsum("nuy,nu->ny", jac, dw)
        g.C += params.out_scale * (e.T @ hs[:, t])
        g.c += params.out_scale * e.sum(axis=0)
        lam = params.out_scale * (e @ params.C) + mu @ a
    if params.alpha is None:
        g.A_raw = grad_a
    else:
        info = _projection_info(params.A_raw, params.alpha)
        g.A_raw = _project_backward(grad_a, params.A_raw, info)
    return g


def _strategy_drive(kind, r, u):
    """Open-loop input (S1/S3) or measured input for the interconnection (S2)."""
    if kind == K_S1:
        return {"w": u}
    if kind == K_S3:
        return {"w": r}
    return {"u_meas": u}


def _run_strategy(strategy: Strategy, params, r, u):
    a = params.effective_a()
    kw = _strategy_drive(strategy.kind, r, u)
    controller = strategy.controller if strategy.kind == K_S2 else None
    return _forward_batch(params, a, controller=controller, **kw), a


def predict(strategy: Strategy, trajectory):
    """Model prediction y* for one trajectory given as (r, u[, y]) arrays.

    Divergence is surfaced as ``DivergedRunError``: a direct model of an
    unstable map is allowed to fail, not to fail silently.
    """
    r = np.asarray(trajectory[0], dtype=float)[None]
    u = np.asarray(trajectory[1], dtype=float)[None]
    (ys, _, _, diverged), _ = _run_strategy(strategy, strategy.params, r, u)
    if diverged[0] >= 0:
        raise DivergedRunError(int(diverged[0]), "prediction diverged")
    return ys[0]


def model_operator(strategy: Strategy, controller=None):
    """The trained model as a strictly causal operator.

    For S1 the family member *is* the model; for S2/S3 the core is closed
    with the controller into the interconnected model.
    """
    if strategy.kind == K_S1:
        return QOperator(strategy.params)
    controller = controller if controller is not None else strategy.controller
    if controller is None:
        raise ValueError("interconnected strategies need a controller "
                         "to assemble the model")
    return ICIModel(QOperator(strategy.params), controller.clone())


def resolve_scales(kind: str, dataset: Dataset):
    """Fixed input/output scales from dataset statistics.

    The input proxy is the signal the core actually sees at the start of
    training: the excitation for S3, the measured input otherwise.
    """
    kind = normalize_kind(kind)
    drive = dataset.r if kind == K_S3 else dataset.u
    in_scale = max(float(drive.std()), 1e-6)
    out_scale = max(float(dataset.y.std()), 1e-6)
    return in_scale, out_scale


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class _Adam:
    def __init__(self, arrays: dict, cfg: TrainConfig):
        self.arrays = arrays
        self.cfg = cfg
        self.lr = cfg.learning_rate
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.t = 0

    def step(self, grads: dict):
        c = self.cfg
        self.t += 1
        for k, p in self.arrays.items():
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            m_hat = self.m[k] / (1 - c.beta1 ** self.t)
            v_hat = self.v[k] / (1 - c.beta2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + c.eps)


class _Sgd:
    def __init__(self, arrays: dict, cfg: TrainConfig):
        self.arrays = arrays
        self.lr = cfg.learning_rate

    def step(self, grads: dict):
        for k, p in self.arrays.items():
            p -= self.lr * grads[k]


def _clip_gradients(grads: dict, limit: float) -> None:
    """Scale all gradients so their joint norm is at most ``limit``.

    Long rollouts with modes near the unit circle produce occasional huge
    gradients; without a cap they throw the optimizer into limit cycles.
    """
    if limit <= 0:
        return
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > limit:
        scale = limit / total
        for g in grads.values():
            g *= scale


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _epoch_pass(strategy, params, r, u, y_meas, clip_loss, want_grads=True):
    """One full forward (and optional backward) over the given trajectories."""
    (ys, hs, ws, diverged), a = _run_strategy(strategy, params, r, u)
    n, t_len = y_meas.shape[0], y_meas.shape[1]
    err = ys - y_meas
    per_traj = np.mean(np.sum(err * err, axis=-1), axis=-1)
    dead = diverged >= 0
    per_traj = np.where(dead, clip_loss, per_traj)
    loss = float(per_traj.mean())
    grads = None
    if want_grads:
        upstream = (2.0 / (n * t_len)) * err
        upstream[dead] = 0.0
        controller = strategy.controller if strategy.kind == K_S2 else None
        grads = _backward_batch(params, a, hs, ws, ys, upstream, controller)
    return loss, per_traj, int(dead.sum()), grads


def train(strategy: Strategy, dataset: Dataset, cfg: TrainConfig | None = None) -> TrainResult:
    """Fit the strategy's parameters to the dataset.

    Deterministic: the same strategy, dataset and config produce bit-equal
    parameters and loss curves.  Early stopping triggers after
    ``cfg.patience`` epochs without an improvement of ``cfg.min_delta``.
    """
    cfg = cfg or TrainConfig()
    params = strategy.params.copy()
    live = Strategy(strategy.kind, params, strategy.controller)
    arrays = params.arrays()
    opt = _Adam(arrays, cfg) if cfg.optimizer == "adam" else _Sgd(arrays, cfg)

    r, u, y_meas = dataset.r, dataset.u, dataset.y
    n = dataset.n_traj
    batch = cfg.batch if 0 < cfg.batch < n else n
    rng = np.random.default_rng(cfg.shuffle_seed)

    curve = []
    snapshots = []
    divergences = 0
    best = np.inf
    best_params = None
    stale = 0
    stopped_early = False
    epochs_run = 0
    for epoch in range(cfg.epochs):
        opt.lr = cfg.learning_rate * cfg.lr_decay ** epoch
        if batch == n:
            # loss belongs to the current parameters; remember them before
            # stepping so keep_best can return exactly that state
            loss, per_traj, died, grads = _epoch_pass(
                live, params, r, u, y_meas, cfg.clip_loss)
            divergences += died
            if not np.isfinite(loss):
                bad = int(np.flatnonzero(~np.isfinite(per_traj))[0])
                raise TrainingAbortError(epoch, bad)
            curve.append(loss)
            epochs_run = epoch + 1
            if cfg.snapshot_every and epoch % cfg.snapshot_every == 0:
                snapshots.append((epoch, params.copy()))
            improved = loss < best - cfg.min_delta
            if improved:
                best = loss
                stale = 0
                if cfg.keep_best:
                    best_params = params.copy()
            else:
                stale += 1
                if stale >= cfg.patience:
                    stopped_early = True
                    break
            gd = grads.arrays()
            _clip_gradients(gd, cfg.clip_grad)
            opt.step(gd)
        else:
            order = rng.permutation(n)
            chunk_losses = []
            for start in range(0, n, batch):
                idx = order[start:start + batch]
                loss_c, per_traj, died, grads = _epoch_pass(
                    live, params, r[idx], u[idx], y_meas[idx], cfg.clip_loss)
                divergences += died
                if not np.isfinite(loss_c):
                    bad = int(idx[np.flatnonzero(~np.isfinite(per_traj))[0]])
                    raise TrainingAbortError(epoch, bad)
                gd = grads.arrays()
                _clip_gradients(gd, cfg.clip_grad)
                opt.step(gd)
                chunk_losses.append((loss_c, len(idx)))
            loss = sum(l * k for l, k in chunk_losses) / n
            curve.append(loss)
            epochs_run = epoch + 1
            if cfg.snapshot_every and epoch % cfg.snapshot_every == 0:
                snapshots.append((epoch, params.copy()))
            if loss < best - cfg.min_delta:
                best = loss
                stale = 0
                if cfg.keep_best:
                    best_params = params.copy()
            else:
                stale += 1
                if stale >= cfg.patience:
                    stopped_early = True
                    break
    if cfg.keep_best and best_params is not None:
        params = best_params
    return TrainResult(params=params, loss_curve=np.asarray(curve),
                       divergence_count=divergences, epochs_run=epochs_run,
                       stopped_early=stopped_early, snapshots=snapshots)


def grad_check(strategy: Strategy, dataset: Dataset,
               params: StableOperatorParams | None = None,
               fd_step: float = 1e-5) -> float:
    """Max relative error of analytic gradients vs central differences.

    Components where both gradients are below 1e-8 in magnitude are
    skipped.  Diverging rollouts make finite differences meaningless, so
    they raise here instead of being clipped.
    """
    params = (params or strategy.params).copy()
    probe = Strategy(strategy.kind, params, strategy.controller)

    def loss_at(p):
        (ys, _, _, diverged), _ = _run_strategy(probe, p, dataset.r, dataset.u)
        if np.any(diverged >= 0):
            raise DivergedRunError(int(diverged[diverged >= 0][0]),
                                   "rollout diverged during gradient check")
        return cost(ys, dataset.y)

    _, _, _, grads = _epoch_pass(probe, params, dataset.r, dataset.u,
                                 dataset.y, clip_loss=np.inf)
    analytic = grads.flatten()
    theta = params.flatten()
    fd = np.empty_like(theta)
    for i in range(theta.size):
        bump = np.zeros_like(theta)
        bump[i] = fd_step
        fd[i] = (loss_at(params.with_flat(theta + bump))
                 - loss_at(params.with_flat(theta - bump))) / (2 * fd_step)
    scale = np.maximum(np.abs(analytic), np.abs(fd))
    mask = scale > 1e-8
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(analytic - fd)[mask] / scale[mask]))
