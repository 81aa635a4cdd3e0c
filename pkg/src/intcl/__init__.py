"""Integral concurrent-learning adaptive control."""
__version__ = "0.1.0"

from .model import (PlantModel, DesiredTrajectory, DomainError, eval_regressor, eval_drift,
                    eval_desired, register_model, lookup_model, TWO_STATE, TWO_STATE_TRAJECTORY)
from .estimator import (Gains, EstimatorState, DivergenceError, control_input, gradient_term,
                        icl_term, dcl_term, estimate_state_derivative)
from .memory import (WindowSample, IntegrationBuffer, StackEntry, HistoryStack, OrderingError,
                     window_integrals, try_record, excitation_metric)
from .sim import (TrialConfig, TrialResult, StabilityBounds, run_trial, step, lyapunov,
                  exponential_envelope, add_measurement_noise)
