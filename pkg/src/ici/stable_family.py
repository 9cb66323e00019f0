"""A trainable family of strictly causal operators that is stable by construction.

Each member is a one-layer recurrence

    h_{t+1} = phi(A h_t + B (w_t / in_scale) + b),   h_0 = 0,
    y_t     = out_scale * (C h_t + c),

where phi is an odd 1-Lipschitz activation (tanh by default, identity for
linear modelling) and A is obtained from the raw parameter ``A_raw`` by a
spectral-norm projection that guarantees ||A||_2 <= alpha < 1 for *every*
parameter value.  Because y_t reads the pre-update state, the operator is
strictly causal; because ||A||_2 < 1 and phi is 1-Lipschitz, it has finite
incremental l2 gain bounded by

    gain <= (out_scale / in_scale) * ||C||_2 ||B||_2 / (1 - ||A||_2).

Setting ``alpha`` to None disables the projection.  That variant can model
unstable behaviour but carries no stability guarantee; it exists so the
direct strategy can be benchmarked honestly on data whose underlying map
is unstable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .seqops import StrictlyCausalOperator

ACTIVATIONS = ("tanh", "identity")


def _activation(name):
    if name == "tanh":
        return np.tanh, lambda h_next: 1.0 - h_next ** 2
    if name == "identity":
        return (lambda z: z), lambda h_next: np.ones_like(h_next)
    raise ValueError(f"unknown activation {name!r}; choose from {ACTIVATIONS}")


# ---------------------------------------------------------------------------
# spectral projection
# ---------------------------------------------------------------------------

def _power_iteration(m: np.ndarray, tol: float, max_iter: int):
    """Estimate the largest singular value of ``m`` with alternating power steps.

    Returns ``(sigma, u, v, converged)`` with u, v the corresponding unit
    singular vectors.  The start vector is drawn from a fixed generator so
    repeated calls are deterministic.
    """
    n = m.shape[1]
    rng = np.random.default_rng(0)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma = 0.0
    u = np.zeros(m.shape[0])
    converged = False
    for _ in range(max_iter):
        w = m @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0, u, v, True
        u = w / norm_w
        z = m.T @ u
        norm_z = np.linalg.norm(z)
        if norm_z == 0.0:
            return 0.0, u, v, True
        v = z / norm_z
        if abs(norm_z - sigma) <= tol * max(norm_z, 1e-300):
            sigma = norm_z
            converged = True
            break
        sigma = norm_z
    return sigma, u, v, converged


def _projection_info(a_raw: np.ndarray, alpha: float, tol: float = 1e-12,
                     max_iter: int = 200) -> dict:
    """Scaling data for the projection; shared by forward and backward passes.

    When power iteration fails to converge the Frobenius norm (an upper
    bound on the spectral norm) is used instead, which keeps the contraction
    guarantee at the price of a conservative scaling.
    """
    sigma, u, v, converged = _power_iteration(a_raw, tol, max_iter)
    if not converged:
        fro = float(np.linalg.norm(a_raw))
        return {"method": "frobenius", "norm": fro,
                "scale": alpha / max(1.0, fro)}
    return {"method": "power", "norm": float(sigma), "u": u, "v": v,
            "scale": alpha / max(1.0, float(sigma))}


def project_spectral(a_raw, alpha: float) -> np.ndarray:
    """Scale ``a_raw`` so its spectral norm is at most ``alpha``.

    The map is A = alpha * A_raw / max(1, sigma_max(A_raw)): matrices that
    are already contractions are scaled by alpha; larger ones are first
    normalized to unit spectral norm.  Differentiable almost everywhere.
    """
    a_raw = np.asarray(a_raw, dtype=float)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return _projection_info(a_raw, alpha)["scale"] * a_raw


def _project_backward(grad_a: np.ndarray, a_raw: np.ndarray, info: dict) -> np.ndarray:
    """Pull a gradient w.r.t. the projected A back to A_raw.

    With s = alpha / max(1, n(A_raw)) and A = s * A_raw,
    dL/dA_raw = s * dL/dA + <dL/dA, A_raw> * ds/dn * dn/dA_raw,
    where the second term vanishes on the branch n <= 1.  For the power
    branch dn/dA_raw = u v^T; for the Frobenius branch it is A_raw / n.
    At the branch point n = 1 the n <= 1 subgradient is used.
    """
    s = info["scale"]
    n = info["norm"]
    if n <= 1.0:
        return s * grad_a
    inner = float(np.sum(grad_a * a_raw))
    if info["method"] == "power":
        dn = np.outer(info["u"], info["v"])
    else:
        dn = a_raw / n
    return s * grad_a - (s / n) * inner * dn


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass
class StableOperatorParams:
    """Parameters of one family member.  Arrays are float64 throughout."""

    A_raw: np.ndarray
    B: np.ndarray
    C: np.ndarray
    b: np.ndarray
    c: np.ndarray
    alpha: float | None = 0.95
    activation: str = "tanh"
    in_scale: float = 1.0
    out_scale: float = 1.0

    def __post_init__(self):
        self.A_raw = np.asarray(self.A_raw, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.A_raw.shape[0]
        if self.A_raw.shape != (n, n):
            raise ValueError("A_raw must be square")
        if self.B.shape[0] != n or self.C.shape[1] != n:
            raise ValueError("B and C must share the hidden dimension of A_raw")
        if self.b.shape != (n,) or self.c.shape != (self.C.shape[0],):
            raise ValueError("bias shapes do not match A_raw / C")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1) or be None, got {self.alpha}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.in_scale <= 0 or self.out_scale <= 0:
            raise ValueError("scales must be positive")

    @property
    def n_h(self) -> int:
        return self.A_raw.shape[0]

    @property
    def in_dim(self) -> int:
        return self.B.shape[1]

    @property
    def out_dim(self) -> int:
        return self.C.shape[0]

    @property
    def count(self) -> int:
        """Number of trainable scalars."""
        return self.A_raw.size + self.B.size + self.C.size + self.b.size + self.c.size

    def effective_a(self) -> np.ndarray:
        """The state matrix actually used: projected when alpha is set."""
        if self.alpha is None:
            return self.A_raw.copy()
        return project_spectral(self.A_raw, self.alpha)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"A_raw": self.A_raw, "B": self.B, "C": self.C,
                "b": self.b, "c": self.c}

    def copy(self) -> "StableOperatorParams":
        return StableOperatorParams(
            self.A_raw.copy(), self.B.copy(), self.C.copy(),
            self.b.copy(), self.c.copy(), self.alpha, self.activation,
            self.in_scale, self.out_scale)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def with_flat(self, theta: np.ndarray) -> "StableOperatorParams":
        """A copy whose trainable arrays are taken from the flat vector."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.count,):
            raise ValueError(f"expected a flat vector of length {self.count}")
        out = self.copy()
        pos = 0
        for name, arr in out.arrays().items():
            setattr(out, name, theta[pos:pos + arr.size].reshape(arr.shape))
            pos += arr.size
        return out


def init_params(n_h: int, in_dim: int, out_dim: int, alpha: float | None = 0.95,
                activation: str = "tanh", rng=None, in_scale: float = 1.0,
                out_scale: float = 1.0) -> StableOperatorParams:
    """Small random initialization; deterministic for a given generator."""
    rng = np.random.default_rng(rng)
    scale = 0.5 / np.sqrt(n_h)
    return StableOperatorParams(
        A_raw=scale * rng.standard_normal((n_h, n_h)),
        B=0.5 / np.sqrt(in_dim) * rng.standard_normal((n_h, in_dim)),
        C=scale * rng.standard_normal((out_dim, n_h)),
        b=np.zeros(n_h),
        c=np.zeros(out_dim),
        alpha=alpha,
        activation=activation,
        in_scale=in_scale,
        out_scale=out_scale,
    )


@dataclass
class ParamGrads:
    """Gradient of a scalar loss with respect to every trainable array."""

    A_raw: np.ndarray
    B: np.ndarray
    C: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {"A_raw": self.A_raw, "B": self.B, "C": self.C,
                "b": self.b, "c": self.c}

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    @classmethod
    def zeros_like(cls, params: StableOperatorParams) -> "ParamGrads":
        return cls(np.zeros_like(params.A_raw), np.zeros_like(params.B),
                   np.zeros_like(params.C), np.zeros_like(params.b),
                   np.zeros_like(params.c))


# ---------------------------------------------------------------------------
# stepping and gains
# ---------------------------------------------------------------------------

def q_step(params: StableOperatorParams, h: np.ndarray, w: np.ndarray):
    """One step of the recurrence: returns (y_t, h_{t+1}).

    The output is read from the *current* state, so it does not depend on
    w_t; this is what makes the operator strictly causal.  Note the
    projection of A_raw is recomputed here on every call; hot loops should
    precompute ``params.effective_a()`` once instead.
    """
    phi, _ = _activation(params.activation)
    a = params.effective_a()
    y = params.out_scale * (params.C @ h + params.c)
    z = a @ h + params.B @ (np.asarray(w, dtype=float) / params.in_scale) + params.b
    return y, phi(z)


class QOperator(StrictlyCausalOperator):
    """Sequence-operator view of a parameter vector (state starts at zero)."""

    def __init__(self, params: StableOperatorParams):
        self.params = params
        self.in_dim = params.in_dim
        self.out_dim = params.out_dim
        self._phi, _ = _activation(params.activation)
        self._a = params.effective_a()
        self.reset()

    def reset(self):
        self.h = np.zeros(self.params.n_h)

    def readout(self):
        return self.params.out_scale * (self.params.C @ self.h + self.params.c)

    def advance(self, w):
        p = self.params
        z = self._a @ self.h + p.B @ (w / p.in_scale) + p.b
        self.h = self._phi(z)

    def clone(self):
        return QOperator(self.params)


def incremental_gain_bound(params: StableOperatorParams) -> float:
    """Certified upper bound on the incremental l2 gain.

    Derived from the 1-Lipschitz activation and the contraction of A via
    Young's convolution inequality.  Returns ``inf`` when the projection is
    disabled and A_raw is not a contraction.
    """
    a = params.effective_a()
    norm_a = float(np.linalg.svd(a, compute_uv=False)[0]) if a.size else 0.0
    if norm_a >= 1.0:
        return float("inf")
    norm_b = float(np.linalg.svd(params.B, compute_uv=False)[0]) if params.B.size else 0.0
    norm_c = float(np.linalg.svd(params.C, compute_uv=False)[0]) if params.C.size else 0.0
    return (params.out_scale / params.in_scale) * norm_c * norm_b / (1.0 - norm_a)


# ---------------------------------------------------------------------------
# open-loop backward pass
# ---------------------------------------------------------------------------

def q_forward(params: StableOperatorParams, w: np.ndarray):
    """Open-loop forward pass over a whole sequence.

    Returns ``(y, h)`` with outputs y of shape (T, out_dim) and the state
    trajectory h of shape (T+1, n_h) including h_0 = 0; h is what the
    backward pass needs.
    """
    phi, _ = _activation(params.activation)
    a = params.effective_a()
    w = np.asarray(w, dtype=float)
    t_len = w.shape[0]
    h = np.zeros((t_len + 1, params.n_h))
    y = np.empty((t_len, params.out_dim))
    for t in range(t_len):
        y[t] = params.out_scale * (params.C @ h[t] + params.c)
        z = a @ h[t] + params.B @ (w[t] / params.in_scale) + params.b
        h[t + 1] = phi(z)
    return y, h


def q_backward(params: StableOperatorParams, w: np.ndarray, h: np.ndarray,
               upstream: np.ndarray) -> ParamGrads:
    """Backpropagation through time for one open-loop trajectory.

    Parameters
    ----------
    w : (T, in_dim) array
        Inputs of the forward pass.
    h : (T+1, n_h) array
        State trajectory recorded by ``q_forward``.
    upstream : (T, out_dim) array
        dJ/dy_t for the scalar loss being differentiated.

    Returns
    -------
    ParamGrads
        Gradients for every trainable array, including the contribution of
        the spectral projection (its subgradient on the inactive branch).
    """
    _, dphi = _activation(params.activation)
    w = np.asarray(w, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    t_len = w.shape[0]
    if params.alpha is None:
        a, info = params.A_raw, None
    else:
        info = _projection_info(params.A_raw, params.alpha)
        a = info["scale"] * params.A_raw

    g = ParamGrads.zeros_like(params)
    grad_a = np.zeros_like(a)
    lam = np.zeros(params.n_h)
    for t in range(t_len - 1, -1, -1):
        mu = dphi(h[t + 1]) * lam
        grad_a += np.outer(mu, h[t])
        g.B += np.outer(mu, w[t] / params.in_scale)
        g.b += mu
        e = upstream[t]
        g.C += params.out_scale * np.outer(e, h[t])
        g.c += params.out_scale * e
        lam = params.out_scale * (params.C.T @ e) + a.T @ mu
    if params.alpha is None:
        g.A_raw = grad_a
    else:
        g.A_raw = _project_backward(grad_a, params.A_raw, info)
    return g


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def params_to_dict(params: StableOperatorParams) -> dict:
    return {
        "A_raw": params.A_raw.tolist(),
        "B": params.B.tolist(),
        "C": params.C.tolist(),
        "b": params.b.tolist(),
        "c": params.c.tolist(),
        "alpha": params.alpha,
        "n_h": params.n_h,
        "activation": params.activation,
        "in_scale": params.in_scale,
        "out_scale": params.out_scale,
    }


def params_from_dict(d: dict) -> StableOperatorParams:
    p = StableOperatorParams(
        A_raw=np.array(d["A_raw"], dtype=float),
        B=np.array(d["B"], dtype=float),
        C=np.array(d["C"], dtype=float),
        b=np.array(d["b"], dtype=float),
        c=np.array(d["c"], dtype=float),
        alpha=d["alpha"],
        activation=d.get("activation", "tanh"),
        in_scale=d.get("in_scale", 1.0),
        out_scale=d.get("out_scale", 1.0),
    )
    if p.n_h != d["n_h"]:
        raise ValueError("checkpoint n_h does not match array shapes")
    return p


def save_params(params: StableOperatorParams, path) -> None:
    """Write a JSON checkpoint.  Floats survive a round trip bit-exactly."""
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_params(path) -> StableOperatorParams:
    with open(path) as fh:
        return params_from_dict(json.load(fh))
