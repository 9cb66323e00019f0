"""Model and loop structure for identification under feedback.

Given a controller K that stabilizes the data-generating plant, every
stabilized plant can be written as the interconnection of K with a stable
strictly causal operator Q.  ``ICIModel`` realizes that interconnection as
an ordinary strictly causal operator: its output solves

    y*_t = Q(u_t - K(y*))_t

which is computable by recursion because Q's current output never depends
on its current input.  Training a stable Q inside this structure therefore
yields models that K is guaranteed to stabilize, while the model itself is
free to be open-loop unstable.

``TrueQOperator`` goes the other way: it realizes the exact Q of a given
plant/controller pair, Q = G (I - K G)^{-1}, again by recursion, so the
interconnection of that Q with K reproduces the plant.
"""
from __future__ import annotations

import numpy as np

from .datasets import Dataset
from .seqops import (CausalOperator, StrictlyCausalOperator, STRICTLY_CAUSAL,
                     DivergedRunError, as_sequence, check_finite)


class ICIModel(StrictlyCausalOperator):
    """Interconnection of a strictly causal model core Q with a controller K.

    Maps u to y* with y* = Q(u - K(y*)).  Strictly causal as a whole, so it
    can stand in for a plant anywhere, including inside a closed loop.
    """

    def __init__(self, q: CausalOperator, k: CausalOperator):
        if q.causality != STRICTLY_CAUSAL:
            raise ValueError("model core must be strictly causal")
        if k.in_dim != q.out_dim or k.out_dim != q.in_dim:
            raise ValueError(
                f"controller dims ({k.in_dim} -> {k.out_dim}) do not close the "
                f"loop around the core ({q.in_dim} -> {q.out_dim})")
        self.q = q
        self.k = k
        self.in_dim = q.in_dim
        self.out_dim = q.out_dim
        #: input fed to the core at the last advance, u_t - K(y*)_t
        self.last_internal = np.zeros(self.in_dim)

    def reset(self):
        self.q.reset()
        self.k.reset()
        self.last_internal = np.zeros(self.in_dim)

    def readout(self):
        return self.q.readout()

    def advance(self, u):
        y_star = self.q.readout()
        kappa = self.k.step(y_star)
        self.last_internal = u - kappa
        self.q.advance(self.last_internal)

    def clone(self):
        return ICIModel(self.q.clone(), self.k.clone())


def ici_step(model: ICIModel, u_t) -> np.ndarray:
    """One interconnection step: returns y*_t, then absorbs u_t."""
    return model.step(u_t)


class TrueQOperator(StrictlyCausalOperator):
    """The exact interconnection core of a plant/controller pair.

    Realizes Q = G (I - K G)^{-1} stepwise: the internal plant input solves
    b_t = w_t + K(G(b))_t, available by recursion since G is strictly
    causal.  Interconnecting this operator with (a fresh copy of) K
    reproduces G exactly, which is the reconstruction half of the
    parameterization argument.
    """

    def __init__(self, plant: CausalOperator, controller: CausalOperator):
        if plant.causality != STRICTLY_CAUSAL:
            raise ValueError("plant must be strictly causal")
        if controller.in_dim != plant.out_dim or controller.out_dim != plant.in_dim:
            raise ValueError("controller dims do not match the plant")
        self.plant = plant.clone()
        self.controller = controller.clone()
        self.in_dim = plant.in_dim
        self.out_dim = plant.out_dim

    def reset(self):
        self.plant.reset()
        self.controller.reset()

    def readout(self):
        return self.plant.readout()

    def advance(self, w):
        y = self.plant.readout()
        kappa = self.controller.step(y)
        self.plant.advance(w + kappa)

    def clone(self):
        return TrueQOperator(self.plant, self.controller)


def construct_true_q(plant: CausalOperator, controller: CausalOperator) -> TrueQOperator:
    """Exact model core for ``plant`` under ``controller``.

    Both arguments are cloned; the returned operator owns fresh copies.
    """
    return TrueQOperator(plant, controller)


class ClosedLoopSystem:
    """Plant (true or modelled) in feedback with a controller.

    The loop applies u_t = r_t + K(y_t) to the plant, where y_t is the
    plant output plus measurement noise v_t.  ``noise`` is only consulted
    by ``collect_dataset``; ``run`` takes explicit noise so that a model
    loop can replay the exact realizations seen by the true loop.
    """

    def __init__(self, plant: CausalOperator, controller: CausalOperator,
                 noise=None):
        if plant.causality != STRICTLY_CAUSAL:
            raise ValueError("closed loop requires a strictly causal plant")
        if controller.in_dim != plant.out_dim or controller.out_dim != plant.in_dim:
            raise ValueError("controller dims do not match the plant")
        self.plant = plant
        self.controller = controller
        self.noise = noise

    def run(self, r, v=None):
        """Simulate the loop on excitation r and noise v; returns (u, y).

        Components are reset first, so runs are reproducible.  Raises
        ``DivergedRunError`` when any loop signal leaves the finite range.
        """
        r = as_sequence(r, self.plant.in_dim)
        horizon = r.shape[0]
        if v is None:
            v = np.zeros((horizon, self.plant.out_dim))
        v = as_sequence(v, self.plant.out_dim)
        if v.shape[0] != horizon:
            raise ValueError("noise horizon does not match excitation")
        self.plant.reset()
        self.controller.reset()
        u = np.empty((horizon, self.plant.in_dim))
        y = np.empty((horizon, self.plant.out_dim))
        for t in range(horizon):
            y[t] = self.plant.readout() + v[t]
            check_finite(y[t], t)
            u[t] = r[t] + self.controller.step(y[t])
            check_finite(u[t], t)
            self.plant.advance(u[t])
        return u, y


def closed_loop_run(cl: ClosedLoopSystem, r, v=None):
    """Functional form of ``ClosedLoopSystem.run``."""
    return cl.run(r, v)


def collect_dataset(cl: ClosedLoopSystem, n_traj: int, horizon: int,
                    sigma_r: float, seed: int, labels: dict | None = None) -> Dataset:
    """Run the closed loop on random excitation and record (r, u, y).

    Trajectory n uses the generator seeded with ``seed + n``, drawing first
    the excitation r ~ N(0, sigma_r^2) and then the measurement noise, so
    datasets are reproducible sample for sample.  A diverging loop is an
    error here: benchmark loops are supposed to be stable.
    """
    if n_traj < 1 or horizon < 1:
        raise ValueError("need at least one trajectory and one step")
    if sigma_r < 0:
        raise ValueError("sigma_r must be non-negative")
    d_u, d_y = cl.plant.in_dim, cl.plant.out_dim
    r = np.empty((n_traj, horizon, d_u))
    u = np.empty((n_traj, horizon, d_u))
    y = np.empty((n_traj, horizon, d_y))
    for n in range(n_traj):
        rng = np.random.default_rng(seed + n)
        r[n] = sigma_r * rng.standard_normal((horizon, d_u))
        if cl.noise is None:
            v = np.zeros((horizon, d_y))
        else:
            v = cl.noise.sample(horizon, d_y, rng)
        try:
            u[n], y[n] = cl.run(r[n], v)
        except DivergedRunError as err:
            raise DivergedRunError(
                err.step, f"data-collection loop diverged in trajectory {n} "
                          f"at step {err.step}") from err
    meta = {"sigma_r": float(sigma_r), "base_seed": int(seed)}
    if cl.noise is not None:
        meta["noise"] = cl.noise.describe()
    if labels:
        meta.update(labels)
    return Dataset(r, u, y, meta)
