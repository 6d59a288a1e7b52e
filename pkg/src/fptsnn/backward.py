"""Reverse-mode gradient of the K-iteration fixed-point forward pass.

The stored iterates are walked backwards. Every ``ds/du`` factor, at the output
and at each inner step, comes from the backward surrogate
``S'_alpha_b(k)`` evaluated at the forward iterate ``u_(k)``. Hard firing of
``s*`` (deterministic or Bernoulli) is treated as straight-through.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .forward import FixedPointConfig, ForwardTrace, fpt_forward
from .kernels import DecayOperator, make_decay_operator
from .lif import LifParams, sigmoid_surrogate, surrogate_gradient


@dataclass
class BackwardResult:
    grad_c: np.ndarray
    grad_A: Optional[np.ndarray] = None
    grad_B: Optional[np.ndarray] = None


def reverse_iterates(trace: ForwardTrace, upstream, op: DecayOperator, v_th: float,
                     alphas_b, learnable: bool = False, mask=None) -> BackwardResult:
    """Backpropagate ``upstream = dl/ds*`` through the kept iterates of ``trace``.

    With ``learnable=True`` also accumulates gradients for the decay matrix
    (summed over leading batch axes) and the threshold vector.
    """
    iterates = trace.u_iterates
    n = len(iterates)
    if n == 0 or trace.c is None or trace.iterations_used != n:
        raise ValueError("trace is missing its intermediate iterates")
    if len(alphas_b) < n:
        raise ValueError("need one backward steepness per kept iterate")
    upstream = np.broadcast_to(np.asarray(upstream, dtype=np.float64), iterates[-1].shape)
    threshold = trace.threshold
    c = trace.c

    # delta = dl/du_(k), starting from the output firing
    delta = upstream * surrogate_gradient(iterates[-1] - threshold, alphas_b[n - 1])
    deltas = [delta]
    for k in range(n - 1, 0, -1):
        # u_(k+1) = -v_th (M - I) s_(k) + M c   (1-based k)
        ds = -v_th * op.apply_reset_t(delta)
        delta = ds * surrogate_gradient(iterates[k - 1] - threshold, alphas_b[k - 1])
        deltas.append(delta)
    deltas.reverse()  # deltas[k-1] = dl/du_(k)

    # M c enters every iterate, so its adjoint is the sum
    delta_sum = deltas[0]
    for d in deltas[1:]:
        delta_sum = delta_sum + d
    grad_c = op.apply_t(delta_sum)

    if not learnable:
        return BackwardResult(grad_c=grad_c)

    t = c.shape[-1]
    flat = lambda x: np.reshape(x, (-1, t))
    grad_A = flat(delta_sum).T @ flat(c)
    for k in range(2, n + 1):
        s_prev = trace.s_iterates[k - 2]
        grad_A = grad_A - v_th * (flat(deltas[k - 1]).T @ flat(s_prev))
    grad_B = -flat(delta_sum).sum(axis=0)
    if mask is not None:
        grad_A = np.where(mask, grad_A, 0.0)
    return BackwardResult(grad_c=grad_c, grad_A=grad_A, grad_B=grad_B)


def backward_alphas(trace: ForwardTrace, cfg: FixedPointConfig):
    ratio = cfg.surrogate.alpha_backward_ratio
    return [a * ratio for a in trace.alphas]


def fpt_backward(trace: ForwardTrace, upstream, params: LifParams,
                 cfg: FixedPointConfig, op: Optional[DecayOperator] = None) -> BackwardResult:
    """``dl/dc`` for an LIF forward trace. Runs over however many iterates were kept."""
    if trace.c is None:
        raise ValueError("trace is missing its input current")
    if op is None:
        op = make_decay_operator(trace.c.shape[-1], params.lam, cfg.kernel)
    return reverse_iterates(trace, upstream, op, params.v_th, backward_alphas(trace, cfg))


def surrogate_loss(c, params: LifParams, cfg: FixedPointConfig, upstream) -> float:
    """``upstream . S_alpha_b(K)(u_(K) - v_th)`` for the smooth K-iteration forward."""
    trace = fpt_forward(c, params, cfg)
    alpha_out = cfg.surrogate.alpha_backward(trace.iterations_used)
    return float(np.sum(upstream * sigmoid_surrogate(trace.u_star - params.v_th, alpha_out)))


def finite_difference_gradient(c, params: LifParams = None, cfg: FixedPointConfig = None,
                               upstream=None, h: float = 1e-5,
                               loss: Optional[Callable] = None) -> np.ndarray:
    """Central differences ``(l(c + h e_i) - l(c - h e_i)) / 2h`` for every coordinate of ``c``.

    The default loss is :func:`surrogate_loss`; pass ``loss`` to differentiate any
    other scalar function of ``c``.
    """
    if not h > 0:
        raise ValueError("step must be positive")
    if loss is None:
        loss = lambda x: surrogate_loss(x, params, cfg, upstream)
    c = np.asarray(c, dtype=np.float64)
    grad = np.empty_like(c)
    for idx in np.ndindex(c.shape):
        x = c.copy()
        x[idx] = c[idx] + h
        plus = loss(x)
        x[idx] = c[idx] - h
        minus = loss(x)
        grad[idx] = (plus - minus) / (2 * h)
    return grad


def relative_error(a, b) -> float:
    """``||a - b||_inf / max(||a||_inf, ||b||_inf)``, 0 when both vanish."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - b)) / scale)
