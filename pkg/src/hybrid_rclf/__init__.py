"""Robust control Lyapunov functions for hybrid systems: data model,
simulator, pointwise min-norm feedback, the impacting pendulum example and
barrier-based robust-safety margins."""

from .hybrid_core import (Controller, DisturbanceGenerator, HybridSystemModel, HybridTime,
                          HybridTimeDomain, InputBox, ModelError, NumericalError, SampleSpec,
                          gradient_rel_error, validate_model)
from .pendulum import (PendulumParams, closed_form_law, lambda_const, make_pendulum,
                       pendulum_controller, pendulum_rclf, psi_terms)
from .rclf import (GridSpec, InfeasibleInputError, Rclf, certify_rclf, min_norm_controller,
                   min_norm_flow, min_norm_jump, minimality_oracle, quadratic_rclf)
from .report import VerificationReport, Violation
from .safety_margin import (BarrierProblem, DegenerateGradientError, barrier_candidate_check,
                            linear_safety_problem, simulate_perturbed, strict_decrease_boundary,
                            uniform_margin)
from .simulator import (HybridArc, SimLimits, TerminationStatus, lyapunov_trace, read_arc_csv,
                        simulate, write_arc_csv)

__version__ = "0.1.0"
