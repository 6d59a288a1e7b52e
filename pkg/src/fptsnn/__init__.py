"""Leaky integrate-and-fire neurons solved in parallel over time by fixed-point iteration."""

from .backward import BackwardResult, finite_difference_gradient, fpt_backward
from .convergence import (ContractionReport, ErrorCurves, contraction_report,
                          convergence_sweep, empirical_contraction_rate,
                          lipschitz_constant_sigmoid)
from .forward import (FixedPointConfig, ForwardTrace, SurrogateConfig, fire, fpt_forward,
                      fpt_forward_adaptive, fpt_forward_early_stop, iteration_residual)
from .lif import (LifParams, SequentialTrace, build_decay_matrix, sequential_bptt_gradient,
                  sequential_lif, sigmoid_surrogate, surrogate_gradient)
from .neurons import (LearnableNeuronParams, apply_mask, fpt_generalized_backward,
                      fpt_generalized_forward, psn_forward, psu_forward)

__version__ = "0.1.0"
