"""Fixed-point parallel forward pass for LIF neurons.

All ``T`` timesteps are solved together by iterating

    u_(1) = M c
    u_(k) = -v_th (M - I) S_alpha_k-1(u_(k-1) - theta) + M c

(``M`` is the decay matrix, ``theta`` the firing threshold) and firing once from
the last iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kernels import KERNELS, DecayOperator, make_decay_operator
from .lif import LifParams, fold_initial_potential, heaviside, sigmoid_surrogate

DETERMINISTIC = "deterministic"
BERNOULLI = "bernoulli"
FIRING_MODES = (DETERMINISTIC, BERNOULLI)


@dataclass(frozen=True)
class SurrogateConfig:
    """Per-iteration forward steepness and the backward/forward ratio."""

    alpha_forward: tuple = (3.0, 12.0, 12.0)
    alpha_backward_ratio: float = 1.0 / 3.0

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alpha_forward)
        object.__setattr__(self, "alpha_forward", alphas)
        if not alphas:
            raise ValueError("alpha schedule is empty")
        if any(not a > 0 or not np.isfinite(a) for a in alphas):
            raise ValueError(f"alpha schedule must be positive and finite: {alphas}")
        if any(b < a for a, b in zip(alphas, alphas[1:])):
            raise ValueError(f"alpha schedule must be non-decreasing: {alphas}")
        if not 0 < self.alpha_backward_ratio <= 1:
            raise ValueError("backward ratio must lie in (0, 1] so that alpha_b <= alpha_f")

    @classmethod
    def constant(cls, alpha: float, k: int, ratio: float = 1.0 / 3.0) -> "SurrogateConfig":
        return cls(alpha_forward=(float(alpha),) * int(k), alpha_backward_ratio=ratio)

    def alpha_backward(self, k: int) -> float:
        """Backward steepness for 1-based iteration ``k``."""
        return self.alpha_forward[k - 1] * self.alpha_backward_ratio


@dataclass(frozen=True)
class FixedPointConfig:
    k_max: int = 3
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    firing_mode: str = DETERMINISTIC
    early_stop_epsilon: Optional[float] = None
    rng_seed: int = 0
    kernel: str = "dense"
    # reserved: a learnable forward steepness is not implemented
    learnable_alpha: bool = False

    def __post_init__(self):
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise ValueError(f"k_max must be a positive integer, got {self.k_max}")
        if len(self.surrogate.alpha_forward) < self.k_max:
            raise ValueError(
                f"alpha schedule has {len(self.surrogate.alpha_forward)} entries, "
                f"need at least k_max={self.k_max}")
        if self.firing_mode not in FIRING_MODES:
            raise ValueError(f"unknown firing mode {self.firing_mode!r}")
        if self.early_stop_epsilon is not None:
            eps = self.early_stop_epsilon
            if not (eps > 0 and np.isfinite(eps)):
                raise ValueError(f"early-stop tolerance must be positive and finite, got {eps}")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.learnable_alpha:
            raise NotImplementedError("learnable forward steepness is not supported")

    @classmethod
    def constant(cls, alpha: float, k: int, ratio: float = 1.0 / 3.0, **kwargs):
        return cls(k_max=k, surrogate=SurrogateConfig.constant(alpha, k, ratio), **kwargs)


@dataclass
class ForwardTrace:
    u_iterates: list
    s_iterates: list
    u_star: np.ndarray
    s_star: np.ndarray
    residuals: list
    iterations_used: int
    # needed to replay the iteration in the backward pass
    c: Optional[np.ndarray] = None
    threshold: object = None
    alphas: tuple = ()


def iteration_residual(u_curr, u_prev) -> float:
    """Euclidean norm of ``u_curr - u_prev`` over all entries."""
    u_curr = np.asarray(u_curr, dtype=np.float64)
    u_prev = np.asarray(u_prev, dtype=np.float64)
    if u_curr.shape != u_prev.shape:
        raise ValueError(f"shape mismatch: {u_curr.shape} vs {u_prev.shape}")
    return float(np.linalg.norm((u_curr - u_prev).ravel()))


def fire(u_star, v_th, mode: str = DETERMINISTIC, alpha_f_final: float = 12.0,
         rng_seed: int = 0) -> np.ndarray:
    """Binary spikes from the equilibrium potential.

    ``deterministic`` thresholds with ``H(0) = 1``. ``bernoulli`` draws each entry
    once with probability ``S_alpha(u* - v_th)`` from a Philox stream keyed by
    ``rng_seed``, so the sample is reproducible. ``v_th`` may be a vector.
    """
    u_star = np.asarray(u_star, dtype=np.float64)
    if mode == DETERMINISTIC:
        return heaviside(u_star - v_th)
    if mode == BERNOULLI:
        if not alpha_f_final > 0:
            raise ValueError("Bernoulli firing needs a positive steepness")
        prob = sigmoid_surrogate(u_star - v_th, alpha_f_final)
        rng = np.random.Generator(np.random.Philox(int(rng_seed)))
        return (rng.random(u_star.shape) < prob).astype(np.float64)
    raise ValueError(f"unknown firing mode {mode!r}")


def _check_input(c, t_expected=None):
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 0 or c.shape[-1] < 1:
        raise ValueError("input current needs at least one timestep")
    if t_expected is not None and c.shape[-1] != t_expected:
        raise ValueError(f"input has {c.shape[-1]} timesteps, operator expects {t_expected}")
    if not np.all(np.isfinite(c)):
        raise ValueError("input current contains non-finite values")
    return c


def fixed_point_iterate(c, op: DecayOperator, v_th: float, threshold,
                        alphas: Sequence[float], k_max: int,
                        epsilon: Optional[float] = None) -> ForwardTrace:
    """Shared iteration core; firing is left to the caller.

    ``threshold`` is what the soft spikes are measured against (scalar ``v_th``
    for LIF, the threshold vector for learnable neurons); ``v_th`` scales the
    reset term.
    """
    drive = op.apply(c)  # M c, cached across iterations
    u = drive
    s = sigmoid_surrogate(u - threshold, alphas[0])
    u_iterates, s_iterates, residuals = [u], [s], []
    for k in range(2, k_max + 1):
        u_next = -v_th * op.apply_reset(s) + drive
        s = sigmoid_surrogate(u_next - threshold, alphas[k - 1])
        residuals.append(iteration_residual(u_next, u))
        u = u_next
        u_iterates.append(u)
        s_iterates.append(s)
        if epsilon is not None and residuals[-1] < epsilon:
            break
    return ForwardTrace(
        u_iterates=u_iterates, s_iterates=s_iterates, u_star=u, s_star=None,
        residuals=residuals, iterations_used=len(u_iterates), c=c,
        threshold=threshold, alphas=tuple(alphas[:len(u_iterates)]))


def _run(c, params: LifParams, cfg: FixedPointConfig, epsilon, op=None) -> ForwardTrace:
    c = fold_initial_potential(_check_input(c), params)
    if op is None:
        op = make_decay_operator(c.shape[-1], params.lam, cfg.kernel)
    elif op.t != c.shape[-1]:
        raise ValueError(f"input has {c.shape[-1]} timesteps, operator expects {op.t}")
    alphas = cfg.surrogate.alpha_forward
    trace = fixed_point_iterate(c, op, params.v_th, params.v_th, alphas, cfg.k_max, epsilon)
    trace.s_star = fire(trace.u_star, params.v_th, cfg.firing_mode,
                        trace.alphas[-1], cfg.rng_seed)
    return trace


def fpt_forward(c, params: LifParams, cfg: FixedPointConfig, op=None) -> ForwardTrace:
    """Run exactly ``cfg.k_max`` iterations (no early stop) and fire from the last one.

    ``op`` may pass a prebuilt :class:`~fptsnn.kernels.DecayOperator` to reuse
    the decay matrix across calls.
    """
    return _run(c, params, cfg, None, op)


def fpt_forward_early_stop(c, params: LifParams, cfg: FixedPointConfig, op=None) -> ForwardTrace:
    """Like :func:`fpt_forward` but stops once ``||u_(k) - u_(k-1)||_2 < epsilon``.

    The first comparison happens at ``k = 2``; there is no residual for ``u_(1)``.
    """
    if cfg.early_stop_epsilon is None:
        raise ValueError("early stop requires cfg.early_stop_epsilon")
    return _run(c, params, cfg, cfg.early_stop_epsilon, op)


def fpt_forward_adaptive(c, params: LifParams, cfg: FixedPointConfig, op=None) -> ForwardTrace:
    """Forward pass with a growing steepness schedule ``alpha_f1 <= ... <= alpha_fK``."""
    alphas = cfg.surrogate.alpha_forward[:cfg.k_max]
    if any(b < a for a, b in zip(alphas, alphas[1:])):
        raise ValueError(f"adaptive schedule must be non-decreasing: {alphas}")
    return _run(c, params, cfg, cfg.early_stop_epsilon, op)
