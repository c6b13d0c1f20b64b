"""Policy update engines: trust-region updates and baselines.

The main entry point is `copos_update`, which solves the natural
gradient by conjugate gradient, obtains the KL / entropy multipliers
from the dual, applies the exact interpolation update to the log-linear
blocks and the scaled natural-gradient step to the feature-map block,
then runs the alternating refinement (binary search on the nonlinear
step, exact re-solve of omega). `tnpg_update`, `trpo_update` and
`vpg_update` are the comparison updaters.

All updaters are deterministic functions of (policy, batch, config) and
return (new_policy, diagnostics dict).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import compat
from .dual import DualProblem, solve_dual, solve_omega
from .policies import NaturalGaussianPolicy, SoftmaxPolicy, kl, mean_entropy


@dataclass
class UpdateConfig:
    algo: str = "copos"
    epsilon: float = 0.01
    beta_mode: str = "none"            # fixed | auto | none
    beta_value: float = 0.01           # budget when beta_mode == fixed
    entropy_constraint: str = "equality"   # equality | inequality
    total_iterations: int = 100
    vpg_learning_rate: float = 1000.0
    trpo_entropy_bonus_coeff: float = 0.0
    backtrack_ratio: float = 0.8
    max_line_search_steps: int = 15
    alternating_rounds: int = 2
    binary_search_steps: int = 30
    damping: float = 1e-4
    cg_iters: int = 10
    cg_tol: float = 1e-10
    normalize_advantages: bool = True
    baseline: str = "state_value"
    fixed_eta: float | None = None     # bypass the dual (toy verification)
    fixed_omega: float | None = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be >= 1")


@dataclass
class EntropySchedule:
    h0: float
    horizon: int
    kind: str = "auto_linear"          # auto_linear | constant_beta
    beta: float = 0.0

    def target(self, iteration) -> float:
        """Linear schedule from +H0 at iteration 0 to -H0 at the horizon."""
        return self.h0 * (1.0 - 2.0 * iteration / self.horizon)


def entropy_budget(schedule, iteration, h_current) -> float:
    """Per-update entropy-loss budget beta_H."""
    if schedule.kind == "constant_beta":
        return schedule.beta
    if iteration > schedule.horizon:
        raise ValueError("iteration beyond schedule horizon")
    return h_current - schedule.target(iteration + 1)


# -- shared helpers -----------------------------------------------------------


def batch_log_probs(policy, obs, actions) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if isinstance(policy, NaturalGaussianPolicy):
        return np.asarray(policy.log_prob(obs, np.asarray(actions, dtype=float)))
    lp = policy.log_probs(obs)
    return lp[np.arange(lp.shape[0]), np.asarray(actions).astype(int)]


def surrogate_objective(policy_new, policy_old, batch, adv) -> float:
    """Likelihood-ratio surrogate mean(ratio * A) over the batch."""
    lp_new = batch_log_probs(policy_new, batch.obs, batch.actions)
    lp_old = batch_log_probs(policy_old, batch.obs, batch.actions)
    return float(np.mean(np.exp(lp_new - lp_old) * adv))


def _normalized_advantages(batch, cfg):
    adv = np.asarray(batch.advantages, dtype=float)
    if cfg.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv


def entropy_gradient(policy, states) -> np.ndarray:
    """grad of the batch-mean policy entropy w.r.t. all parameters."""
    lay = policy.layout
    g = np.zeros(lay.total)
    if isinstance(policy, NaturalGaussianPolicy):
        # H = const - 0.5 log|Lambda|
        if policy.diagonal:
            g[lay.prec] = -0.5 / policy.prec
        else:
            g[lay.prec] = (-0.5 * policy.cov).ravel()
        return g
    states = np.atleast_2d(np.asarray(states, dtype=float))
    n = states.shape[0]
    phi = policy.feats(states)
    lp = policy.log_probs(states)
    p = np.exp(lp)
    centered = lp - (p * lp).sum(axis=1, keepdims=True)
    u = -p * centered
    g[lay.lin] = (u.T @ phi).ravel() / n
    if policy.features.n_params:
        g[lay.beta] = policy.features.vjp_sum(states, u @ policy.Theta) / n
    return g


def _resolve_beta(cfg, beta_h):
    if beta_h is not None:
        return float(beta_h)
    if cfg.beta_mode == "fixed":
        return float(cfg.beta_value)
    if cfg.beta_mode == "none":
        return np.inf
    raise ValueError("beta_mode 'auto' requires an explicit beta_h per iteration")


def _constraint_kind(cfg, beta_h):
    if not np.isfinite(beta_h):
        return "inequality"
    return "equality_entropy" if cfg.entropy_constraint == "equality" else "inequality"


def _assemble_gaussian(policy, sol, eta, omega, s_beta):
    lay = policy.layout
    vec = policy.param_vector().copy()
    w_prec = sol.w[lay.prec]
    w_lin = sol.w[lay.lin]
    if omega == 0.0:
        vec[lay.prec] = vec[lay.prec] + w_prec / eta
        vec[lay.lin] = vec[lay.lin] + w_lin / eta
    else:
        vec[lay.prec] = (eta * vec[lay.prec] + w_prec) / (eta + omega)
        vec[lay.lin] = (eta * vec[lay.lin] + w_lin) / (eta + omega)
    if sol.w_beta.size:
        vec[lay.beta] = vec[lay.beta] + s_beta * sol.w_beta / eta
    return policy.with_params(vec)


def _assemble_softmax(policy, sol, eta, omega, s_beta):
    lay = policy.layout
    vec = policy.param_vector().copy()
    w_lin = sol.w[lay.lin]
    if omega == 0.0:
        vec[lay.lin] = vec[lay.lin] + w_lin / eta
    else:
        vec[lay.lin] = (eta * vec[lay.lin] + w_lin) / (eta + omega)
    if sol.w_beta.size:
        vec[lay.beta] = vec[lay.beta] + s_beta * sol.w_beta / eta
    return policy.with_params(vec)


def _assemble(policy, sol, eta, omega, s_beta):
    if isinstance(policy, NaturalGaussianPolicy):
        return _assemble_gaussian(policy, sol, eta, omega, s_beta)
    return _assemble_softmax(policy, sol, eta, omega, s_beta)


# -- COPOS --------------------------------------------------------------------


def copos_update(policy, batch, cfg, beta_h=None, solution=None):
    """One COPOS update; returns (new_policy, diagnostics)."""
    if batch.advantages is None:
        raise ValueError("batch advantages must be computed before the update")
    if solution is None:
        solution = compat.solve_natural_gradient(
            policy, batch, damping=cfg.damping, cg_iters=cfg.cg_iters,
            cg_tol=cfg.cg_tol, normalize_advantages=cfg.normalize_advantages)
    diag = {
        "grad_norm": float(np.linalg.norm(solution.grad.g)),
        "w_norm": float(np.linalg.norm(solution.w)),
        "cg_residual": solution.cg_residual,
        "warnings": [],
    }
    states = np.asarray(batch.obs, dtype=float)

    if cfg.fixed_eta is not None:
        # constant-rate variant: old parameters decay by eta/(eta+omega)
        # while the compatible step keeps the natural-gradient scale w/eta
        eta = float(cfg.fixed_eta)
        omega = float(cfg.fixed_omega or 0.0)
        lay = policy.layout
        vec = policy.param_vector().copy()
        decay = eta / (eta + omega) if omega != 0.0 else 1.0
        for sl in (lay.prec, lay.lin):
            vec[sl] = decay * vec[sl] + solution.w[sl] / eta
        if solution.w_beta.size:
            vec[lay.beta] = vec[lay.beta] + solution.w_beta / eta
        new_policy = policy.with_params(vec)
        diag.update(eta=eta, omega=omega, linesearch_s=1.0,
                    realized_kl=kl(new_policy, policy, states),
                    entropy_change=mean_entropy(policy, states) - mean_entropy(new_policy, states))
        return new_policy, diag

    beta_h = _resolve_beta(cfg, beta_h)
    kind = _constraint_kind(cfg, beta_h)
    if isinstance(policy, NaturalGaussianPolicy):
        problem = DualProblem.from_gaussian(policy, states, solution,
                                            cfg.epsilon, beta_h, kind)
    else:
        problem = DualProblem.from_softmax(policy, states, solution,
                                           cfg.epsilon, beta_h, kind)
    w_norm = diag["w_norm"]
    eta_scale = diag["grad_norm"] / (cfg.epsilon * w_norm) if w_norm > 0 else 1.0
    dual_sol = solve_dual(problem, eta_scale=max(eta_scale, 1e-6))
    eta, omega = dual_sol.eta, dual_sol.omega
    diag.update(eta=eta, omega=omega, dual_value=dual_sol.dual_value,
                dual_evaluations=dual_sol.evaluations)

    if kind == "inequality" and omega == 0.0 and \
            dual_sol.realized_kl < cfg.epsilon * (1.0 - 1e-6):
        # neither constraint active: no direction to move in
        diag.update(linesearch_s=0.0, realized_kl=0.0, entropy_change=0.0, skipped=True)
        return policy, diag

    s_beta = 1.0
    if isinstance(policy, NaturalGaussianPolicy):
        has_beta = solution.w_beta.size > 0
        rounds = cfg.alternating_rounds if has_beta else 1
        for _ in range(rounds):
            if has_beta:
                s_beta = _kl_binary_search(policy, solution, eta, omega, states,
                                           cfg, diag)
            omega = solve_omega(problem, eta, bracket_hint=max(eta_scale, 1.0))
        new_policy = _assemble(policy, solution, eta, omega, s_beta)
    else:
        new_policy = _assemble(policy, solution, eta, omega, 0.0)
        if solution.w_beta.size:
            s_beta = _discrete_line_search(policy, solution, eta, omega,
                                           batch, cfg, diag)
            new_policy = _assemble(policy, solution, eta, omega, s_beta)

    diag.update(omega=omega, linesearch_s=s_beta,
                realized_kl=kl(new_policy, policy, states),
                entropy_change=mean_entropy(policy, states) - mean_entropy(new_policy, states))
    return new_policy, diag


def _kl_binary_search(policy, solution, eta, omega, states, cfg, diag):
    """Largest s in (0, 1] with empirical KL of the full candidate <= epsilon."""
    def kl_at(s):
        cand = _assemble(policy, solution, eta, omega, s)
        return kl(cand, policy, states)

    if kl_at(1.0) <= cfg.epsilon:
        return 1.0
    lo, hi = 0.0, 1.0
    best = None
    for _ in range(cfg.binary_search_steps):
        mid = 0.5 * (lo + hi)
        if kl_at(mid) <= cfg.epsilon:
            best = mid
            lo = mid
        else:
            hi = mid
    if best is None:
        diag["warnings"].append("kl binary search exhausted; freezing nonlinear step")
        return 0.0
    return best


def _discrete_line_search(policy, solution, eta, omega, batch, cfg, diag):
    """Backtracking factor s on the nonlinear step (discrete actions)."""
    adv = _normalized_advantages(batch, cfg)
    surr_old = float(np.mean(adv))
    states = np.asarray(batch.obs, dtype=float)
    s = 1.0
    for _ in range(cfg.max_line_search_steps):
        cand = _assemble(policy, solution, eta, omega, s)
        if kl(cand, policy, states) <= 1.5 * cfg.epsilon and \
                surrogate_objective(cand, policy, batch, adv) >= surr_old:
            return s
        s *= cfg.backtrack_ratio
    diag["warnings"].append("line search exhausted; freezing nonlinear step")
    return 0.0


# -- baselines ----------------------------------------------------------------


def tnpg_update(policy, batch, cfg):
    """Natural-gradient step scaled so the quadratic KL model equals epsilon."""
    if batch.advantages is None:
        raise ValueError("batch advantages must be computed before the update")
    solution = compat.solve_natural_gradient(
        policy, batch, damping=cfg.damping, cg_iters=cfg.cg_iters,
        cg_tol=cfg.cg_tol, normalize_advantages=cfg.normalize_advantages)
    states = np.asarray(batch.obs, dtype=float)
    quad = float(solution.w @ compat.fisher_vector_product(policy, states, solution.w))
    if quad <= 0:
        raise ValueError("non-positive curvature along the natural gradient")
    scale = np.sqrt(2.0 * cfg.epsilon / quad)
    new_policy = policy.with_params(policy.param_vector() + scale * solution.w)
    diag = {
        "grad_norm": float(np.linalg.norm(solution.grad.g)),
        "w_norm": float(np.linalg.norm(solution.w)),
        "cg_residual": solution.cg_residual,
        "eta": 1.0 / scale, "omega": 0.0, "linesearch_s": 1.0,
        "realized_kl": kl(new_policy, policy, states),
        "entropy_change": mean_entropy(policy, states) - mean_entropy(new_policy, states),
        "warnings": [],
    }
    return new_policy, diag


def trpo_update(policy, batch, cfg):
    """TNPG direction with backtracking line search; optional entropy bonus."""
    if batch.advantages is None:
        raise ValueError("batch advantages must be computed before the update")
    states = np.asarray(batch.obs, dtype=float)
    grad = compat.policy_gradient(policy, batch,
                                  normalize_advantages=cfg.normalize_advantages)
    coeff = cfg.trpo_entropy_bonus_coeff
    if coeff:
        grad = compat.GradientEstimate(
            g=grad.g + coeff * entropy_gradient(policy, states),
            sample_count=grad.sample_count, baseline_kind=grad.baseline_kind)
    solution = compat.solve_natural_gradient(
        policy, batch, damping=cfg.damping, cg_iters=cfg.cg_iters,
        cg_tol=cfg.cg_tol, gradient=grad)
    quad = float(solution.w @ compat.fisher_vector_product(policy, states, solution.w))
    if quad <= 0:
        raise ValueError("non-positive curvature along the natural gradient")
    scale = np.sqrt(2.0 * cfg.epsilon / quad)
    adv = _normalized_advantages(batch, cfg)
    old_score = float(np.mean(adv)) + coeff * mean_entropy(policy, states)
    params = policy.param_vector()
    diag = {
        "grad_norm": float(np.linalg.norm(grad.g)),
        "w_norm": float(np.linalg.norm(solution.w)),
        "cg_residual": solution.cg_residual,
        "eta": 1.0 / scale, "omega": 0.0,
        "warnings": [],
    }
    factor = 1.0
    for _ in range(cfg.max_line_search_steps):
        cand = policy.with_params(params + factor * scale * solution.w)
        realized = kl(cand, policy, states)
        score = surrogate_objective(cand, policy, batch, adv) \
            + coeff * mean_entropy(cand, states)
        if realized <= cfg.epsilon and score > old_score:
            diag.update(linesearch_s=factor, realized_kl=realized,
                        entropy_change=mean_entropy(policy, states) - mean_entropy(cand, states))
            return cand, diag
        factor *= cfg.backtrack_ratio
    diag["warnings"].append("trpo line search found no acceptable step")
    diag.update(linesearch_s=0.0, realized_kl=0.0, entropy_change=0.0)
    return policy, diag


def vpg_update(policy, batch, cfg):
    """Vanilla policy gradient with a constant learning rate."""
    if batch.advantages is None:
        raise ValueError("batch advantages must be computed before the update")
    grad = compat.policy_gradient(policy, batch,
                                  normalize_advantages=cfg.normalize_advantages)
    new_policy = policy.with_params(policy.param_vector() + cfg.vpg_learning_rate * grad.g)
    states = np.asarray(batch.obs, dtype=float)
    diag = {
        "grad_norm": float(np.linalg.norm(grad.g)),
        "w_norm": 0.0, "cg_residual": 0.0,
        "eta": np.nan, "omega": np.nan, "linesearch_s": 1.0,
        "realized_kl": kl(new_policy, policy, states),
        "entropy_change": mean_entropy(policy, states) - mean_entropy(new_policy, states),
        "warnings": [],
    }
    return new_policy, diag
