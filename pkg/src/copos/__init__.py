"""Compatible policy search with entropy-constrained trust regions."""

from .analysis import (ToyConfig, ToyIterates, entropy_reg_iterates,
                       natural_gradient_iterates, verify_iterative_vs_closed_form)
from .compat import (CompatibleSolution, GradientEstimate, compatible_features,
                     fisher_vector_product, policy_gradient, psi_features,
                     solve_natural_gradient)
from .dual import (DualProblem, DualSolution, DualSolveError,
                   EntropyBudgetError, eval_discrete_dual, eval_gaussian_dual,
                   eval_gaussian_dual_nonlinear, solve_dual)
from .envs import (ChainMdp, FvrsEnv, QuadraticBandit, bandit_expected_reward,
                   make_env, make_fvrs)
from .features import IdentityFeatureMap, MlpFeatureMap
from .harness import ExperimentConfig, run_experiment, run_oracles
from .policies import (DegeneratePrecisionError, NaturalGaussianPolicy,
                       SoftmaxPolicy, kl, load_policy, mean_entropy, save_policy)
from .rollout import Batch, collect, compute_advantages
from .update import (EntropySchedule, UpdateConfig, copos_update,
                     entropy_budget, tnpg_update, trpo_update, vpg_update)

__version__ = "0.1.0"

__all__ = [
    "Batch", "ChainMdp", "CompatibleSolution", "DegeneratePrecisionError",
    "DualProblem", "DualSolution", "DualSolveError", "EntropyBudgetError",
    "EntropySchedule", "ExperimentConfig", "FvrsEnv", "GradientEstimate",
    "IdentityFeatureMap", "MlpFeatureMap", "NaturalGaussianPolicy",
    "QuadraticBandit", "SoftmaxPolicy", "ToyConfig", "ToyIterates",
    "UpdateConfig", "bandit_expected_reward", "collect", "compatible_features",
    "compute_advantages", "copos_update", "entropy_budget",
    "entropy_reg_iterates", "eval_discrete_dual", "eval_gaussian_dual",
    "eval_gaussian_dual_nonlinear", "fisher_vector_product", "kl",
    "load_policy", "make_env", "make_fvrs", "mean_entropy",
    "natural_gradient_iterates", "policy_gradient", "psi_features",
    "run_experiment", "run_oracles", "save_policy", "solve_dual",
    "solve_natural_gradient", "tnpg_update", "trpo_update",
    "verify_iterative_vs_closed_form", "vpg_update",
]
