"""Sequential leaky integrate-and-fire dynamics and surrogate functions.

Everything here is the ground truth the parallel solver is checked against.
Arrays are laid out time-last: ``c[..., t]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class LifParams:
    """Neuron constants: decay ``lam``, threshold ``v_th``, initial potential ``u0``."""

    lam: float = 0.25
    v_th: float = 1.0
    u0: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {self.lam}")
        if not self.v_th > 0.0:
            raise ValueError(f"threshold must be positive, got {self.v_th}")
        if not np.isfinite(self.u0):
            raise ValueError("initial potential must be finite")


@dataclass
class SequentialTrace:
    u: np.ndarray
    s: np.ndarray


def heaviside(x):
    # H(0) = 1: a neuron sitting exactly on threshold fires.
    return (np.asarray(x) >= 0.0).astype(np.float64)


def build_decay_matrix(t: int, lam: float) -> np.ndarray:
    """Lower-triangular ``t x t`` matrix with ``entries[i, j] = lam**(i - j)`` for ``i >= j``."""
    if int(t) != t or t < 1:
        raise ValueError(f"timesteps must be a positive integer, got {t}")
    if not 0.0 <= lam < 1.0:
        raise ValueError(f"decay must lie in [0, 1), got {lam}")
    t = int(t)
    lag = np.subtract.outer(np.arange(t), np.arange(t))
    out = np.zeros((t, t))
    lower = lag >= 0
    # 0**0 == 1, so lam = 0 yields the identity
    out[lower] = np.power(float(lam), lag[lower])
    return out


def fold_initial_potential(c, params: LifParams) -> np.ndarray:
    """Return ``c`` with a nonzero ``u0`` folded into the first timestep as ``lam * u0``."""
    c = np.asarray(c, dtype=np.float64)
    if params.u0 == 0.0:
        return c
    c = c.copy()
    c[..., 0] += params.lam * params.u0
    return c


def sequential_lif(c, params: LifParams) -> SequentialTrace:
    """Step the LIF recurrence through time with hard (Heaviside) firing.

    ``u[t] = lam * (u[t-1] - v_th * s[t-1]) + c[t]`` with ``u[-1] = u0`` and ``s[-1] = 0``.
    Leading axes of ``c`` are treated as independent neurons.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 0 or c.shape[-1] < 1:
        raise ValueError("input current needs at least one timestep")
    lam, v_th = params.lam, params.v_th
    u = np.empty_like(c)
    s = np.empty_like(c)
    u_prev = np.full(c.shape[:-1], params.u0)
    s_prev = np.zeros(c.shape[:-1])
    for t in range(c.shape[-1]):
        u_prev = lam * (u_prev - v_th * s_prev) + c[..., t]
        s_prev = (u_prev >= v_th).astype(np.float64)
        u[..., t] = u_prev
        s[..., t] = s_prev
    return SequentialTrace(u=u, s=s)


def sigmoid_surrogate(x, alpha: float):
    """``1 / (1 + exp(-alpha * x))``, evaluated without overflow."""
    if not alpha > 0:
        raise ValueError(f"steepness must be positive, got {alpha}")
    return expit(alpha * np.asarray(x, dtype=np.float64))


def surrogate_gradient(x, alpha: float):
    """Derivative of :func:`sigmoid_surrogate` in ``x``: ``alpha * S * (1 - S)``."""
    x = np.asarray(x, dtype=np.float64)
    # 1 - S(x) == S(-x); this form avoids cancellation in the upper tail
    return alpha * sigmoid_surrogate(x, alpha) * sigmoid_surrogate(-x, alpha)


def sequential_bptt_gradient(c, params: LifParams, upstream, alpha_b: float,
                             surrogate_forward: bool = False) -> np.ndarray:
    """Backpropagation through time for ``dl/dc`` given ``upstream = dl/ds``.

    ``ds/du`` is replaced by :func:`surrogate_gradient` at ``alpha_b``; the reset
    path ``du[t+1]/ds[t] = -lam * v_th`` is kept.

    With ``surrogate_forward=True`` the trajectory itself is built from soft spikes
    ``S_alpha_b(u - v_th)``, so the result is the exact derivative of a smooth
    function and can be checked against finite differences. The default replays
    the hard-firing trajectory, which is what network training uses.
    """
    c = fold_initial_potential(c, params)
    upstream = np.broadcast_to(np.asarray(upstream, dtype=np.float64), c.shape)
    if not alpha_b > 0:
        raise ValueError(f"backward steepness must be positive, got {alpha_b}")
    lam, v_th = params.lam, params.v_th

    if surrogate_forward:
        u = np.empty_like(c)
        u_prev = np.zeros(c.shape[:-1])
        s_prev = np.zeros(c.shape[:-1])
        for t in range(c.shape[-1]):
            u_prev = lam * (u_prev - v_th * s_prev) + c[..., t]
            s_prev = sigmoid_surrogate(u_prev - v_th, alpha_b)
            u[..., t] = u_prev
    else:
        u = sequential_lif(c, LifParams(lam, v_th)).u

    dsdu = surrogate_gradient(u - v_th, alpha_b)
    grad_c = np.empty_like(c)
    # du_next: dl/du[t+1] carried backwards
    du_next = np.zeros(c.shape[:-1])
    for t in range(c.shape[-1] - 1, -1, -1):
        ds = upstream[..., t] - lam * v_th * du_next
        du = ds * dsdu[..., t] + lam * du_next
        grad_c[..., t] = du
        du_next = du
    return grad_c
