"""Ways of applying the decay matrix (and its transpose) along the time axis.

``dense`` multiplies by the materialized matrix and accepts any learnable
``T x T`` matrix. ``recurrence`` and ``scan`` only exist for the exponential
decay matrix: the first runs the linear filter ``y[t] = lam * y[t-1] + x[t]``
in compiled code, the second evaluates the same prefix recurrence in
``ceil(log2 T)`` vectorized doubling passes.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from .lif import build_decay_matrix

KERNELS = ("dense", "recurrence", "scan")


class DecayOperator:
    """Linear map ``x -> M x`` over the last axis, plus ``M^T`` and ``(M - I)``."""

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"decay matrix must be square, got shape {matrix.shape}")
        self.matrix = matrix
        self.t = matrix.shape[0]
        # both are iteration-invariant, so they are computed once
        self._mt = np.ascontiguousarray(matrix.T)
        self._rt = np.ascontiguousarray((matrix - np.eye(self.t)).T)

    def apply(self, x):
        return x @ self._mt

    def apply_reset(self, x):
        """``(M - I) x``."""
        return x @ self._rt

    def apply_t(self, y):
        return y @ self.matrix

    def apply_reset_t(self, y):
        return y @ self._rt.T


class RecurrenceDecay(DecayOperator):
    def __init__(self, t: int, lam: float):
        self.t = int(t)
        self.lam = float(lam)
        self._b = np.array([1.0])
        self._a = np.array([1.0, -self.lam])

    @property
    def matrix(self):
        return build_decay_matrix(self.t, self.lam)

    def apply(self, x):
        return lfilter(self._b, self._a, x, axis=-1)

    def apply_reset(self, x):
        return self.apply(x) - x

    def apply_t(self, y):
        return lfilter(self._b, self._a, y[..., ::-1], axis=-1)[..., ::-1]

    def apply_reset_t(self, y):
        return self.apply_t(y) - y


class ScanDecay(RecurrenceDecay):
    def apply(self, x):
        y = np.array(x, dtype=np.float64, copy=True)
        step, weight = 1, self.lam
        while step < self.t:
            y[..., step:] = y[..., step:] + weight * y[..., :-step]
            step *= 2
            weight *= weight
        return y

    def apply_t(self, y):
        return self.apply(np.asarray(y)[..., ::-1])[..., ::-1]


def make_decay_operator(t: int, lam: float, kernel: str = "dense") -> DecayOperator:
    if kernel == "dense":
        return DecayOperator(build_decay_matrix(t, lam))
    if kernel == "recurrence":
        return RecurrenceDecay(t, lam)
    if kernel == "scan":
        return ScanDecay(t, lam)
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")
