"""FedAvg simulation, heterogeneity metrics and convergence-bound checks on
quadratic federated problems."""

from .algorithms import RunConfig, RunRecord, fedavg_run, gd_run, minibatch_sgd_run
from .errors import DivergenceError, NumericalError, SingularProblemError
from .localupdate import (LocalTrajectory, gradient_bias, iterate_bias, pseudo_gradient,
                          run_local_gd, run_local_sgd)
from .metrics import (HeterogeneityReport, bias_curves, dissimilarity_bound_curve,
                      drift_at_optimum, drift_scaling_experiment, drift_via_Pc,
                      gradient_dissimilarity)
from .objective import (AdditiveGaussian, ClientObjective, FederatedProblem, Minibatch,
                        global_gradient, load_problem, local_gradient, save_problem,
                        smoothness_constants, solve_global_minimizer, stochastic_gradient)
from .synthgen import SynthConfig, generate

__version__ = "0.1.0"
