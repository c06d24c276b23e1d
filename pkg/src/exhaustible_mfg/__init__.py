"""Cournot mean field game with exhaustible reserves.

PDE solver for the coupled HJB / Fokker-Planck system with market clearing,
an N-player particle simulator, and Monte Carlo checks of the equilibrium
(verification identity, propagation of chaos, epsilon-Nash gap).
"""

from .coupler import MfgSolution, solve_decoupled, solve_mfg, uniqueness_residual
from .errors import (GridMismatch, InvalidGrid, InvalidInitialMeasure, InvalidTerminalPayoff,
                     MfgError, ModelValidationError, NewtonDivergence, NoConvergence,
                     OuterNoConvergence, TruncationFailure)
from .fokker_planck import fourier_mass, fourier_oracle, solve_fp_forward
from .game import (NashGapReport, StrategySpec, default_deviation_family, mean_field_payoff,
                   nash_gap_experiment, nplayer_payoff)
from .hjb import solve_hjb_backward
from .market import clear_market_slice
from .model import (DiscreteField, Grid, InitialMeasure, Model, ModelParams, TerminalPayoff,
                    canonical_model, load_model, model_from_dict, project_measure_to_cells,
                    validate_params)
from .particles import simulate_ensemble, skorokhod_map, w1_subprobability, weak_error

__version__ = "0.1.0"
