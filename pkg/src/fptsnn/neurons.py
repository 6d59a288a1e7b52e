"""Learnable parallel neurons and their PSN / PSU special cases.

The learnable neuron replaces the decay matrix by a free matrix ``A`` and the
scalar threshold by a vector ``B``:

    u = -v_th (A - I) s + A c,    s = H(u - B)

One fixed-point iteration gives the reset-free PSN, two iterations with
``B = v_th`` give PSU.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .backward import BackwardResult, backward_alphas, reverse_iterates
from .forward import (FixedPointConfig, ForwardTrace, _check_input, fire,
                      fixed_point_iterate)
from .kernels import DecayOperator
from .lif import build_decay_matrix, heaviside, sigmoid_surrogate

NO_MASK = "none"
LOWER_TRIANGULAR = "lower"
MASKS = (NO_MASK, LOWER_TRIANGULAR)


def apply_mask(a, mask: str = LOWER_TRIANGULAR) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if mask == NO_MASK:
        return a
    if mask == LOWER_TRIANGULAR:
        return np.tril(a)
    raise ValueError(f"unknown mask {mask!r}")


def mask_array(t: int, mask: str) -> Optional[np.ndarray]:
    if mask == LOWER_TRIANGULAR:
        return np.tril(np.ones((t, t), dtype=bool))
    return None


@dataclass
class LearnableNeuronParams:
    a: np.ndarray
    b: np.ndarray
    mask: str = LOWER_TRIANGULAR
    v_th: float = 1.0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        t = self.a.shape[0]
        if self.a.shape != (t, t) or self.b.shape != (t,):
            raise ValueError(f"shape mismatch: A {self.a.shape}, B {self.b.shape}")
        if self.mask not in MASKS:
            raise ValueError(f"unknown mask {self.mask!r}")
        if not np.all(np.isfinite(self.a)) or not np.all(np.isfinite(self.b)):
            raise ValueError("learnable parameters must be finite")
        self.check_mask()

    @property
    def t(self) -> int:
        return self.a.shape[0]

    def check_mask(self):
        if self.mask == LOWER_TRIANGULAR and np.any(np.triu(self.a, 1) != 0):
            raise ValueError("decay matrix has nonzero entries above the diagonal")

    @classmethod
    def init(cls, t: int, lam: float = 0.5, v_th: float = 1.0, mask: str = LOWER_TRIANGULAR,
             noise: float = 0.01, rng=None) -> "LearnableNeuronParams":
        """Start from the LIF decay matrix plus small uniform noise on the free entries."""
        a = build_decay_matrix(t, lam)
        if noise and rng is not None:
            a = a + rng.uniform(-noise, noise, size=a.shape)
        return cls(a=apply_mask(a, mask), b=np.full(t, float(v_th)), mask=mask, v_th=v_th)

    @classmethod
    def from_lif(cls, t: int, lam: float, v_th: float, mask: str = NO_MASK):
        return cls(a=build_decay_matrix(t, lam), b=np.full(t, float(v_th)), mask=mask, v_th=v_th)


def fpt_generalized_forward(c, p: LearnableNeuronParams, cfg: FixedPointConfig,
                            op: Optional[DecayOperator] = None) -> ForwardTrace:
    """Fixed-point forward pass with a learnable decay matrix and threshold vector.

    Firing compares against ``B``; the reset term keeps the scalar ``v_th``.
    """
    p.check_mask()
    c = _check_input(c, p.t)
    if op is None:
        op = DecayOperator(p.a)
    alphas = cfg.surrogate.alpha_forward
    trace = fixed_point_iterate(c, op, p.v_th, p.b, alphas, cfg.k_max, cfg.early_stop_epsilon)
    trace.s_star = fire(trace.u_star, p.b, cfg.firing_mode, trace.alphas[-1], cfg.rng_seed)
    return trace


def fpt_generalized_backward(trace: ForwardTrace, upstream, p: LearnableNeuronParams,
                             cfg: FixedPointConfig,
                             op: Optional[DecayOperator] = None) -> BackwardResult:
    """Gradients for ``c``, ``A`` and ``B``; ``A``'s gradient is zero wherever the mask is."""
    if op is None:
        op = DecayOperator(p.a)
    return reverse_iterates(trace, upstream, op, p.v_th, backward_alphas(trace, cfg),
                            learnable=True, mask=mask_array(p.t, p.mask))


def psn_forward(c, a, b) -> np.ndarray:
    """Parallel spiking neuron, ``s = H(A c - B)``; there is no reset."""
    a = np.asarray(a, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != a.shape[1]:
        raise ValueError(f"input has {c.shape[-1]} timesteps, A is {a.shape}")
    return heaviside(c @ np.ascontiguousarray(a.T) - b)


def psu_forward(c, a, v_th: float, alpha: float) -> np.ndarray:
    """Parallel spiking unit, ``s = H(A c - D S_alpha(A c - v_th) - v_th)`` with ``D = v_th (A - I)``.

    ``D S`` is evaluated as ``v_th * ((A - I) S)``, the same rounding order the
    two-iteration fixed-point pass uses.
    """
    a = np.asarray(a, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    t = a.shape[0]
    drive = c @ np.ascontiguousarray(a.T)
    estimate = sigmoid_surrogate(drive - v_th, alpha)
    u = -v_th * (estimate @ np.ascontiguousarray((a - np.eye(t)).T)) + drive
    return heaviside(u - v_th)
