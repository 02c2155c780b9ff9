"""Closed-loop identification of neural feedforward controllers with instrumental variables."""

from .errors import *  # noqa: F401,F403
from .signals import (FourthOrderLimits, Signal, delay_line, delay_matrix, derivative_basis_matrix,
                      derivative_scales, fourth_order_phase_durations, make_fourth_order_reference)
from .lti import RationalFilter, dc_gain, filter_signal, filter_step, impulse_response
from .plant import (ClosedLoopDataset, StribeckPlant, g_y, g_y_signal, generate_disturbance, plant_step,
                    simulate_closed_loop, simulate_open_loop, solve_increment)
from .nn import (MlpParams, MlpShape, flatten, forward, forward_signal, forward_windows, init_params,
                 jacobian_windows, load_params, param_jacobian, save_params, unflatten)
from .train import (IV, LS, InstrumentMatrix, OptimizerOptions, PretrainResult, TrainReport, build_instruments,
                    grad_iv, grad_ls, loss_iv, loss_ls, minimize, pretrain_noiseless, residual)
from .analysis import (MONITORED_WEIGHT, Cell, LinearizationRow, SweepConfig, SweepResult, consistency_sweep,
                       linear_regressors, linearization_check, local_iv_estimate, local_ls_estimate,
                       median_realization, read_results_csv, residual_norm, residual_trace, write_results_csv)
from .config import ExperimentConfig

__version__ = "0.1.0"
