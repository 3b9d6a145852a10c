"""Sparse target construction with lifetime and population sparsity (EPLS).

For a mini-batch of layer outputs ``H`` (rows = patches) the target ``T`` has
exactly one active entry per row.  Row by row, the active output is the one
maximising ``h_j - a_j`` where ``a`` is an inhibitor that grows by
``n_outputs / budget`` every time output ``j`` is chosen, so over a budget of
``N`` patches each output fires roughly ``N / n_outputs`` times.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .network import apply_nonlinearity, nonlinearity_derivative

# (active, inactive) target values per activation
TARGET_VALUES = {
    "logistic": (1.0, 0.0),
    "identity": (1.0, 0.0),
    "rectifier": (1.0, 0.0),
}


@dataclass
class Inhibitor:
    """Per-output selection counts over a patch budget.

    The inhibition of output j is ``counts[j] * n_outputs / budget``; keeping
    integer counts makes the increments exact.
    """

    counts: np.ndarray
    budget: int

    @classmethod
    def zeros(cls, n_outputs, budget):
        if budget < 1 or n_outputs < 1:
            raise ConfigError("inhibitor needs a positive budget and output count")
        return cls(np.zeros(n_outputs, dtype=np.int64), int(budget))

    @property
    def n_outputs(self):
        return self.counts.shape[0]

    @property
    def increment(self):
        return self.n_outputs / self.budget

    @property
    def values(self):
        return self.counts * self.increment

    def copy(self):
        return Inhibitor(self.counts.copy(), self.budget)


@dataclass
class BatchOutput:
    """Inputs ``X`` (N_b×D), pre-activations ``Z`` and activations ``H`` (N_b×N_h)."""

    X: np.ndarray
    Z: np.ndarray
    H: np.ndarray


def forward_batch(X, W, b, nonlinearity="logistic"):
    Z = X @ W.T + b
    return BatchOutput(X, Z, apply_nonlinearity(Z, nonlinearity))


def _normalize_global(H):
    lo, hi = H.min(), H.max()
    if hi == lo:
        return np.zeros_like(H)
    return (H - lo) / (hi - lo)


def build_target(H, inhibitor, nonlinearity="logistic"):
    """Return ``(T, inhibitor')`` for the mini-batch outputs ``H``.

    ``H`` is min/max normalized with a single global range over the batch.
    Ties in ``argmax(h - a)`` go to the least-inhibited output, then to the
    lowest index.  An output whose inhibition has reached 1 (it already fired
    ``budget / n_outputs`` times) is not eligible while any other output is.
    The input inhibitor is not modified.
    """
    H = H.H if isinstance(H, BatchOutput) else np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] < 1:
        raise ShapeError("H must be a non-empty 2-D matrix")
    if H.shape[1] != inhibitor.n_outputs:
        raise ShapeError(f"H has {H.shape[1]} outputs, inhibitor has {inhibitor.n_outputs}")
    if nonlinearity not in TARGET_VALUES:
        raise ConfigError(f"unknown nonlinearity {nonlinearity!r}")

    Hn = _normalize_global(H)
    counts = inhibitor.counts.copy()
    inc = inhibitor.increment
    n_out, budget = inhibitor.n_outputs, inhibitor.budget
    chosen = np.empty(H.shape[0], dtype=np.intp)
    for n in range(H.shape[0]):
        a = counts * inc
        score = Hn[n] - a
        # fully inhibited outputs (a_j >= 1) are out while any other remains
        saturated = counts * n_out >= budget
        if saturated.any() and not saturated.all():
            score[saturated] = -np.inf
        best = np.flatnonzero(score == score.max())
        k = best[0] if best.size == 1 else best[np.argmin(a[best])]
        chosen[n] = k
        counts[k] += 1

    active, inactive = TARGET_VALUES[nonlinearity]
    T = np.full(H.shape, inactive)
    T[np.arange(H.shape[0]), chosen] = active
    return T, Inhibitor(counts, inhibitor.budget)


def epls_loss(H, T):
    """Squared L2 distance between outputs and targets, summed over the batch."""
    H = H.H if isinstance(H, BatchOutput) else np.asarray(H, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if H.shape != T.shape:
        raise ShapeError(f"H {H.shape} and T {T.shape} differ")
    return float(np.sum((H - T) ** 2))


def loss_gradient(batch, T, nonlinearity="logistic"):
    """Gradient of :func:`epls_loss` w.r.t. the weights and biases, ``T`` held fixed."""
    T = np.asarray(T, dtype=np.float64)
    if batch.H.shape != T.shape:
        raise ShapeError(f"H {batch.H.shape} and T {T.shape} differ")
    if batch.X.shape[0] != T.shape[0]:
        raise ShapeError("input rows do not match target rows")
    delta = 2.0 * (batch.H - T) * nonlinearity_derivative(batch.Z, nonlinearity)
    return delta.T @ batch.X, delta.sum(axis=0)
