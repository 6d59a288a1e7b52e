"""Contraction analysis of the surrogate fixed-point map and empirical error sweeps."""

from __future__ import annotations

import csv
import math
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .forward import FixedPointConfig, fpt_forward
from .kernels import make_decay_operator
from .lif import LifParams, heaviside, sequential_lif, sigmoid_surrogate

ITERATIONS = "iterations"
ALPHA = "alpha"
TIMESTEPS = "timesteps"
AXES = (ITERATIONS, ALPHA, TIMESTEPS)

CURVE_COLUMNS = ("axis", "x", "mean_abs_u_err", "spike_err_rate", "std")


def lipschitz_constant_sigmoid(alpha: float) -> float:
    """Lipschitz constant of ``S_alpha``: its derivative peaks at ``alpha / 4``."""
    if not alpha > 0:
        raise ValueError(f"steepness must be positive, got {alpha}")
    return alpha / 4.0


def decay_offdiag_norm(lam: float, t: int) -> float:
    """Closed-form max row sum of ``Lambda - I``: ``lam (1 - lam^(T-1)) / (1 - lam)``."""
    if lam == 0.0:
        return 0.0
    return lam * (1.0 - lam ** (t - 1)) / (1.0 - lam)


@dataclass
class ContractionReport:
    lipschitz_alpha: float
    infnorm_lambda_minus_i: float
    contraction_constant: float
    satisfied: bool
    # 1 - L evaluated exactly; L itself can round to 1.0 when the gap is below ulp(1)
    margin: float = 0.0

    def to_dict(self):
        return asdict(self)


def contraction_report(params: LifParams, alpha: float, t: int,
                       lipschitz: Optional[float] = None) -> ContractionReport:
    """Evaluate the contraction constant ``L = v_th * L_alpha * ||Lambda - I||_inf``.

    ``lipschitz`` overrides the sigmoid constant for other surrogate shapes.
    """
    if int(t) != t or t < 1:
        raise ValueError(f"timesteps must be a positive integer, got {t}")
    t = int(t)
    l_alpha = lipschitz_constant_sigmoid(alpha) if lipschitz is None else float(lipschitz)
    norm = decay_offdiag_norm(params.lam, t)
    const = params.v_th * l_alpha * norm
    # exact rational arithmetic on the float inputs decides the strict inequality
    lam = Fraction(params.lam)
    exact_norm = lam * (1 - lam ** (t - 1)) / (1 - lam)
    margin = 1 - Fraction(params.v_th) * Fraction(l_alpha) * exact_norm
    return ContractionReport(lipschitz_alpha=l_alpha, infnorm_lambda_minus_i=norm,
                             contraction_constant=const, satisfied=margin > 0,
                             margin=float(margin))


def iterate_from(c, params: LifParams, alpha: float, n_iter: int, u_init) -> np.ndarray:
    """Apply the surrogate map ``n_iter`` times from an arbitrary starting potential."""
    c = np.asarray(c, dtype=np.float64)
    op = make_decay_operator(c.shape[-1], params.lam)
    drive = op.apply(c)
    u = np.asarray(u_init, dtype=np.float64)
    for _ in range(n_iter):
        u = -params.v_th * op.apply_reset(sigmoid_surrogate(u - params.v_th, alpha)) + drive
    return u


def residual_ratios(c, params: LifParams, alpha: float, k_max: int) -> list:
    """Successive ratios ``r_(k+1) / r_(k)`` of 2-norm step sizes at constant ``alpha``.

    Stops early (shorter list) once a residual is exactly zero.
    """
    cfg = FixedPointConfig.constant(alpha, k_max)
    res = fpt_forward(c, params, cfg).residuals
    ratios = []
    for prev, curr in zip(res, res[1:]):
        if prev == 0.0:
            break
        ratios.append(curr / prev)
    return ratios


def empirical_contraction_rate(c, params: LifParams, alpha: float, k_max: int = 6) -> Optional[float]:
    """Geometric-mean step ratio of the iteration, or ``None`` if it converged at once."""
    if k_max < 3:
        raise ValueError("need k_max >= 3 to measure a ratio")
    ratios = residual_ratios(c, params, alpha, k_max)
    if not ratios or any(r == 0.0 for r in ratios):
        return None
    return float(math.exp(np.mean(np.log(ratios))))


@dataclass
class CurvePoint:
    x: float
    mean_abs_potential_error: float
    spike_error_rate: float
    std_dev: float
    # per-trial values kept so aggregation does not depend on trial order
    trial_abs_errors: list = field(default_factory=list, repr=False)
    trial_spike_errors: list = field(default_factory=list, repr=False)


@dataclass
class ErrorCurves:
    axis: str
    points: list

    def rows(self):
        for p in self.points:
            yield (self.axis, p.x, p.mean_abs_potential_error, p.spike_error_rate, p.std_dev)

    def write_csv(self, path_or_file):
        if hasattr(path_or_file, "write"):
            _write_rows(path_or_file, self.rows())
        else:
            with open(path_or_file, "w", newline="") as f:
                _write_rows(f, self.rows())


def _write_rows(f, rows):
    writer = csv.writer(f)
    writer.writerow(CURVE_COLUMNS)
    for row in rows:
        writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def trial_seeds(master_seed: int, trials: int) -> list:
    seq = np.random.SeedSequence(master_seed)
    return [int(child.generate_state(1)[0]) for child in seq.spawn(trials)]


def _trial_errors(c, params, cfg):
    ref = sequential_lif(c, params)
    trace = fpt_forward(c, params, cfg)
    abs_err = float(np.mean(np.abs(trace.u_star - ref.u)))
    spike_err = float(np.mean(heaviside(trace.u_star - params.v_th) != ref.s))
    return abs_err, spike_err


def convergence_sweep(generator_seed: int, params: LifParams, t: int, axis: str,
                      values: Sequence[float], trials: int = 5, k: int = 3,
                      alpha: float = 12.0, inputs=None) -> ErrorCurves:
    """Compare the fixed-point potentials against the sequential oracle along one axis.

    For each swept value ``trials`` fresh standard-normal input sequences are drawn
    (the same draws at every swept value, except along ``timesteps`` where the
    length changes). Firing is deterministic. ``inputs`` replaces the random
    draws with fixed sequences, one per trial.
    """
    if trials < 3:
        raise ValueError("need at least 3 trials for a spread estimate")
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}; expected one of {AXES}")
    seeds = trial_seeds(generator_seed, trials)

    def draws(length):
        if inputs is not None:
            return [np.asarray(x, dtype=np.float64) for x in inputs]
        return [np.random.default_rng(s).standard_normal(length) for s in seeds]

    points = []
    for x in values:
        if axis == ITERATIONS:
            length, cfg = t, FixedPointConfig.constant(alpha, int(x))
        elif axis == ALPHA:
            length, cfg = t, FixedPointConfig.constant(float(x), k)
        else:
            length, cfg = int(x), FixedPointConfig.constant(alpha, k)
        errs = [_trial_errors(c, params, cfg) for c in draws(length)]
        abs_errs = [e[0] for e in errs]
        spike_errs = [e[1] for e in errs]
        points.append(CurvePoint(
            x=float(x), mean_abs_potential_error=float(np.mean(abs_errs)),
            spike_error_rate=float(np.mean(spike_errs)), std_dev=float(np.std(abs_errs)),
            trial_abs_errors=abs_errs, trial_spike_errors=spike_errs))
    return ErrorCurves(axis=axis, points=points)
