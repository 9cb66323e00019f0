"""Finite-horizon sequences and the causal-operator contract.

A sequence is a float array of shape (T, d): T time steps of d-dimensional
samples.  Operators consume and produce sequences one sample at a time
through a small stateful protocol, which lets feedback loops be resolved
by recursion instead of an implicit solve:

* every operator supports ``reset`` / ``step(u_t)`` / ``run(u)``;
* a *strictly causal* operator can additionally ``readout()`` its current
  output before it has seen the current input, because that output depends
  on past inputs only;
* a merely *causal* operator can ``preview(u_t)`` its output without
  advancing its state.

``feedback_inverse`` uses the readout capability to invert I + H for a
strictly causal H by the recursion b_t = a_t - H(b)_t.
"""
from __future__ import annotations

import numpy as np

CAUSAL = "causal"
STRICTLY_CAUSAL = "strictly_causal"

#: Any simulated signal whose magnitude passes this limit is declared diverged.
DIVERGENCE_LIMIT = 1e12


class DivergedRunError(RuntimeError):
    """A simulated signal overflowed or became non-finite.

    ``step`` holds the first offending time index.
    """

    def __init__(self, step: int, message: str | None = None):
        self.step = int(step)
        super().__init__(message or f"signal diverged at step {self.step}")


def as_sequence(x, dim: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a float (T, d) sequence array.

    1-D input is promoted to a scalar-valued sequence of shape (T, 1).
    Raises ``ValueError`` for ragged input or a dimension mismatch.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"sequence must have shape (T, d), got {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"sequence dimension is {arr.shape[1]}, expected {dim}")
    return arr


def truncate(x, i: int, j: int) -> np.ndarray:
    """Samples i..j inclusive; the empty (0, d) sequence when j < i."""
    arr = as_sequence(x)
    if j < i:
        return arr[:0]
    return arr[i:j + 1]


def lp_norm(x, p: float = 2) -> float:
    """l_p norm of a sequence, with the Euclidean norm applied per sample.

    ``lp_norm(x, p) = (sum_t |x_t|_2^p)**(1/p)``.  The empty sequence has
    norm 0.  ``p`` must be >= 1.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    arr = as_sequence(x)
    if arr.shape[0] == 0:
        return 0.0
    steps = np.linalg.norm(arr, axis=1)
    if np.isinf(p):
        return float(steps.max())
    return float(np.sum(steps ** p) ** (1.0 / p))


def check_finite(x, step: int, limit: float = DIVERGENCE_LIMIT) -> None:
    """Raise ``DivergedRunError`` if any entry of ``x`` is huge or non-finite."""
    arr = np.asarray(x)
    if not np.all(np.isfinite(arr)) or np.any(np.abs(arr) > limit):
        raise DivergedRunError(step)


class CausalOperator:
    """Base class for stateful causal maps between sequences.

    Subclasses implement ``preview`` (output at the current step, no state
    change) and ``advance`` (consume the current input).  ``step`` composes
    the two.  Two runs from ``reset`` on identical inputs yield identical
    outputs.
    """

    causality = CAUSAL
    in_dim: int
    out_dim: int

    def reset(self) -> None:
        raise NotImplementedError

    def preview(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def advance(self, u: np.ndarray) -> None:
        raise NotImplementedError

    def step(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(self.in_dim)
        y = self.preview(u)
        self.advance(u)
        return y

    def run(self, u) -> np.ndarray:
        """Apply the operator to a whole sequence from its current state."""
        u = as_sequence(u, self.in_dim)
        out = np.empty((u.shape[0], self.out_dim))
        for t in range(u.shape[0]):
            out[t] = self.step(u[t])
        return out

    def clone(self) -> "CausalOperator":
        """A fresh instance with the same configuration, reset to the start."""
        raise NotImplementedError


class StrictlyCausalOperator(CausalOperator):
    """Causal operator whose current output ignores the current input."""

    causality = STRICTLY_CAUSAL

    def readout(self) -> np.ndarray:
        """Output at the current step, a function of past inputs only."""
        raise NotImplementedError

    def preview(self, u: np.ndarray) -> np.ndarray:
        return self.readout()


def run_guarded(op: CausalOperator, u, limit: float = DIVERGENCE_LIMIT):
    """Run ``op`` on ``u`` but stop at the divergence sentinel.

    Returns ``(y, diverged_at)`` where ``diverged_at`` is ``None`` for a
    clean run, otherwise the first step whose output tripped the limit.
    Outputs from steps after divergence are left as NaN.
    """
    u = as_sequence(u, op.in_dim)
    out = np.full((u.shape[0], op.out_dim), np.nan)
    for t in range(u.shape[0]):
        try:
            y = op.step(u[t])
        except DivergedRunError:
            # operators that police their own state count as diverged here
            return out, t
        out[t] = y
        if not np.all(np.isfinite(y)) or np.any(np.abs(y) > limit):
            return out, t
    return out, None


# ---------------------------------------------------------------------------
# elementary operators
# ---------------------------------------------------------------------------

class StaticOperator(CausalOperator):
    """Memoryless operator y_t = f(u_t)."""

    def __init__(self, f, in_dim: int, out_dim: int):
        self.f = f
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)

    def reset(self):
        pass

    def preview(self, u):
        return np.asarray(self.f(u), dtype=float).reshape(self.out_dim)

    def advance(self, u):
        pass

    def clone(self):
        return StaticOperator(self.f, self.in_dim, self.out_dim)


class IdentityOperator(StaticOperator):
    def __init__(self, dim: int):
        super().__init__(lambda u: u, dim, dim)

    def clone(self):
        return IdentityOperator(self.in_dim)


class ZeroOperator(StrictlyCausalOperator):
    """Constant zero output; vacuously strictly causal."""

    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)

    def reset(self):
        pass

    def readout(self):
        return np.zeros(self.out_dim)

    def advance(self, u):
        pass

    def clone(self):
        return ZeroOperator(self.in_dim, self.out_dim)


class UnitDelay(StrictlyCausalOperator):
    """y_t = u_{t-1}; the output at t = 0 is zero."""

    def __init__(self, dim: int):
        self.in_dim = self.out_dim = int(dim)
        self.reset()

    def reset(self):
        self._mem = np.zeros(self.out_dim)

    def readout(self):
        return self._mem.copy()

    def advance(self, u):
        self._mem = np.asarray(u, dtype=float).reshape(self.in_dim).copy()

    def clone(self):
        return UnitDelay(self.in_dim)


class LinearStateSpace(CausalOperator):
    """x_{t+1} = A x_t + B u_t, y_t = C x_t (+ D u_t when D is given).

    Without a feedthrough term the operator is strictly causal and also
    supports ``readout``.
    """

    def __init__(self, a, b, c, d=None, x0=None):
        self.a = np.atleast_2d(np.asarray(a, dtype=float))
        self.b = np.atleast_2d(np.asarray(b, dtype=float))
        self.c = np.atleast_2d(np.asarray(c, dtype=float))
        n = self.a.shape[0]
        if self.a.shape != (n, n):
            raise ValueError("state matrix must be square")
        if self.b.shape[0] != n or self.c.shape[1] != n:
            raise ValueError("inconsistent state-space shapes")
        self.in_dim = self.b.shape[1]
        self.out_dim = self.c.shape[0]
        if d is None:
            self.d = None
            self.causality = STRICTLY_CAUSAL
        else:
            self.d = np.atleast_2d(np.asarray(d, dtype=float))
            if self.d.shape != (self.out_dim, self.in_dim):
                raise ValueError("feedthrough shape mismatch")
            self.causality = CAUSAL
        self._x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
        self.reset()

    def reset(self):
        self.x = self._x0.copy()

    def readout(self):
        if self.d is not None:
            raise ValueError("operator with feedthrough has no input-free readout")
        return self.c @ self.x

    def preview(self, u):
        y = self.c @ self.x
        if self.d is not None:
            y = y + self.d @ u
        return y

    def advance(self, u):
        self.x = self.a @ self.x + self.b @ u

    def clone(self):
        return LinearStateSpace(self.a, self.b, self.c, self.d, self._x0)


# ---------------------------------------------------------------------------
# combinators
# ---------------------------------------------------------------------------

class SeriesOperator(CausalOperator):
    """Composition second(first(u)); strictly causal if either factor is."""

    def __init__(self, first: CausalOperator, second: CausalOperator):
        if first.out_dim != second.in_dim:
            raise ValueError(
                f"cannot compose: first produces dim {first.out_dim}, "
                f"second expects dim {second.in_dim}")
        self.first = first
        self.second = second
        self.in_dim = first.in_dim
        self.out_dim = second.out_dim
        if STRICTLY_CAUSAL in (first.causality, second.causality):
            self.causality = STRICTLY_CAUSAL

    def reset(self):
        self.first.reset()
        self.second.reset()

    def readout(self):
        if self.second.causality == STRICTLY_CAUSAL:
            return self.second.readout()
        if self.first.causality == STRICTLY_CAUSAL:
            return self.second.preview(self.first.readout())
        raise ValueError("series of two merely causal operators has no readout")

    def preview(self, u):
        return self.second.preview(self.first.preview(u))

    def advance(self, u):
        mid = self.first.step(np.asarray(u, dtype=float).reshape(self.in_dim))
        self.second.advance(mid)

    def clone(self):
        return SeriesOperator(self.first.clone(), self.second.clone())


def series(first: CausalOperator, second: CausalOperator) -> SeriesOperator:
    """Operator applying ``first`` then ``second``."""
    return SeriesOperator(first, second)


class FeedbackInverse(CausalOperator):
    """Inverse of I + H for strictly causal H.

    Output b solves b + H(b) = a, computed stepwise as
    b_t = a_t - H(b)_t, which needs only H's readout at step t because H's
    current output does not depend on b_t.  The inverse itself is causal
    but not strictly causal.
    """

    def __init__(self, inner: CausalOperator):
        if inner.causality != STRICTLY_CAUSAL:
            raise ValueError("feedback inverse requires a strictly causal operator")
        if inner.in_dim != inner.out_dim:
            raise ValueError("feedback inverse requires matching input/output dims")
        self.inner = inner
        self.in_dim = self.out_dim = inner.in_dim

    def reset(self):
        self.inner.reset()

    def preview(self, a):
        return a - self.inner.readout()

    def advance(self, a):
        b = a - self.inner.readout()
        self.inner.step(b)

    def clone(self):
        return FeedbackInverse(self.inner.clone())


def feedback_inverse(inner: CausalOperator) -> FeedbackInverse:
    """Operator mapping a to the solution b of b + inner(b) = a."""
    return FeedbackInverse(inner)
