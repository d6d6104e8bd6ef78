"""Numerical solvers for collective-choice mean-field games.

A large noisy population of linear agents must split among a finite set of
destination points while being pulled toward its own mean.  The package
computes the explicit best-response feedback policy (a Gibbs blend of
per-destination LQG laws), solves the mean-field fixed-point problem over
choice-distribution matrices, and validates equilibria by Fokker-Planck
transport and Monte Carlo population simulation.
"""

__version__ = "0.1.0"

from .model import (AgentClassParams, DestinationSet, GaussianInitial,
                    Population, SampleInitial, TimeGrid, ValidationReport,
                    nearest_destination, validate_params, weighted_norm_sq)
from .lqg import (RiccatiBlowupError, RiccatiSolution, TrackingOffsets,
                  TransitionKernel, lqg_control, lqg_value, solve_offsets,
                  solve_riccati, transition_and_covariance)
from .policy import (DegenerateWeightsError, MinLqgPolicy, hjb_residual,
                     kolmogorov_residual, parabolic_residual)
from .meanfield import (AggregateModel, AggregateRiccatiError, DensityField,
                        FpGrid, MassConservationError, MeanFieldPath,
                        MeanFieldProblem, PathBasis, bisection_fixed_point,
                        boundedness_sweep, build_aggregate,
                        check_row_stochastic, consistency_residual,
                        damped_iteration, eval_F, eval_G,
                        find_all_fixed_points, mean_path_for_cdm,
                        multistart_fixed_points, solve_aggregate_riccati,
                        solve_fokker_planck, solve_path_basis,
                        with_terminal_weight)
from .mc import (SimulationConfig, SimulationError, TrajectoryEnsemble,
                 allocate_classes, empirical_cdm, estimate_epsilon_nash,
                 mc_cell_probability, simulate_population,
                 terminal_proximity_curve)
from .scenarios import binary_scenario, scenario_with
from .config import default_config, load_problem, problem_from_dict
