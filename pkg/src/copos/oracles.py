"""Independent verification oracles.

Each suite checks a closed-form code path against an implementation
that shares nothing with it: Monte-Carlo integration for the Gaussian
dual, central finite differences for dual gradients, dense linear
algebra and least squares for the conjugate-gradient natural-gradient
solve, grid search for the discrete dual, a brute-force primal solve
for the trust-region update, and the analytic recursions for the
iterative toy run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import analysis, compat
from .dual import DualProblem, solve_dual
from .envs import QuadraticBandit
from .features import IdentityFeatureMap, MlpFeatureMap
from .policies import NaturalGaussianPolicy, SoftmaxPolicy
from .rollout import batch_from_arrays
from .update import UpdateConfig, copos_update


@dataclass
class OracleCheck:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.error < self.tolerance)

    def as_dict(self) -> dict:
        return {"name": self.name, "error": self.error,
                "tolerance": self.tolerance, "passed": self.passed}


# -- random dual instances ------------------------------------------------


def random_gaussian_dual(rng, k=1, n_states=3, nonlinear=False, dense=False,
                         epsilon=0.01, beta_h=0.005, constraint="inequality",
                         w_scale=0.4):
    """A small random Gaussian policy, advantage blocks, and its dual."""
    if nonlinear:
        features = MlpFeatureMap.create(2, max(k, 2), hidden=(5,), rng=rng)
    else:
        features = IdentityFeatureMap(k)
    m = features.output_dim
    U = rng.normal(scale=0.5, size=(k, m))
    if dense:
        A = rng.normal(size=(k, k))
        prec = A @ A.T + np.eye(k)
        policy = NaturalGaussianPolicy(features, U, prec, diagonal=False)
    else:
        prec = np.exp(rng.uniform(-0.3, 0.6, size=k))
        policy = NaturalGaussianPolicy(features, U, prec, diagonal=True)
    states = rng.normal(size=(n_states, features.input_dim))
    lay = policy.layout
    w = rng.normal(scale=w_scale, size=lay.total)
    sol = compat.partition_solution(
        policy, w, 0.0,
        compat.GradientEstimate(g=w.copy(), sample_count=n_states, baseline_kind="none"))
    problem = DualProblem.from_gaussian(policy, states, sol, epsilon, beta_h,
                                        constraint_kind=constraint)
    return policy, states, sol, problem


def random_discrete_dual(rng, n_actions=3, n_states=4, epsilon=0.01,
                         beta_h=0.005, constraint="inequality"):
    features = IdentityFeatureMap(3)
    Theta = rng.normal(scale=0.5, size=(n_actions, 3))
    policy = SoftmaxPolicy(features, Theta)
    states = rng.normal(size=(n_states, 3))
    w = rng.normal(scale=0.4, size=policy.layout.total)
    sol = compat.partition_solution(
        policy, w, 0.0,
        compat.GradientEstimate(g=w.copy(), sample_count=n_states, baseline_kind="none"))
    problem = DualProblem.from_softmax(policy, states, sol, epsilon, beta_h,
                                       constraint_kind=constraint)
    return policy, states, sol, problem


def feasible_point(problem, rng):
    """A random (eta, omega) inside the dual domain."""
    floor = problem.eta_floor()
    eta = (floor + 0.2) * np.exp(rng.uniform(0.0, 2.5))
    if problem.constraint_kind == "equality_entropy":
        omega = rng.uniform(-0.4, 1.5) * eta * 0.5
        omega = max(omega, -eta * 0.9)
    else:
        # keep away from the omega = 0 boundary so central differences stay inside
        omega = rng.uniform(0.01, 1.5)
    return float(eta), float(omega)


# -- dual oracles -----------------------------------------------------------


def dual_fd_gradient(problem, eta, omega, rel_h=1e-6):
    """Central finite differences of the dual value."""
    he = rel_h * max(1.0, abs(eta))
    ho = rel_h * max(1.0, abs(omega), 0.1 * eta)
    g_eta = (problem.eval(eta + he, omega) - problem.eval(eta - he, omega)) / (2 * he)
    g_omega = (problem.eval(eta, omega + ho) - problem.eval(eta, omega - ho)) / (2 * ho)
    return g_eta, g_omega


def suite_dual_fd(seed=0, n_points=20) -> list[OracleCheck]:
    rng = np.random.default_rng(seed)
    checks = []
    variants = [
        ("gaussian_loglinear", lambda: random_gaussian_dual(rng, k=int(rng.integers(1, 4)))),
        ("gaussian_nonlinear", lambda: random_gaussian_dual(rng, k=2, nonlinear=True)),
        ("discrete", lambda: random_discrete_dual(rng)),
    ]
    for name, make in variants:
        worst = 0.0
        done = 0
        while done < n_points:
            _, _, _, problem = make()
            eta, omega = feasible_point(problem, rng)
            if not np.isfinite(problem.eval(eta, omega)):
                continue
            ga, go = problem.grad(eta, omega)
            fa, fo = dual_fd_gradient(problem, eta, omega)
            scale = max(abs(ga), abs(go), 1e-8)
            worst = max(worst, abs(ga - fa) / scale, abs(go - fo) / scale)
            done += 1
        checks.append(OracleCheck(f"dual_fd/{name}", worst, 1e-5))
    return checks


def mc_gaussian_dual(problem, eta, omega, n_samples, rng):
    """Monte-Carlo evaluation of the dual through its defining integral.

    Samples actions from the old policy (antithetic pairs, which is
    still plain Monte-Carlo but cancels the odd part of the exponent)
    and log-mean-exps the tilted integrand.
    """
    k = problem.action_dim
    cov = problem.cov_old
    chol = np.linalg.cholesky(cov)
    prec = problem.prec_old
    sign, logdet_prec = np.linalg.slogdet(prec)
    mu = problem.p_nat @ cov                      # (B, k)
    lin = problem.phi @ problem.W_lin.T           # (B, k)
    if problem.w_a is not None:
        lin = lin + problem.w_a
    log_z = []
    for b in range(mu.shape[0]):
        z_half = rng.standard_normal((n_samples // 2, k))
        z = np.concatenate([z_half, -z_half])
        a = mu[b] + z @ chol.T
        d = a - mu[b]
        logp = -0.5 * np.einsum("ni,ij,nj->n", d, prec, d) \
            + 0.5 * logdet_prec - 0.5 * k * np.log(2 * np.pi)
        q_tilde = -0.5 * np.einsum("ni,ij,nj->n", a, problem.W_aa, a) + a @ lin[b]
        expo = (q_tilde - omega * logp) / (eta + omega)
        log_z.append(logsumexp(expo) - np.log(len(z)))
    value = eta * problem.epsilon + omega * problem.beta_h - omega * problem.h_old \
        + (eta + omega) * np.mean(log_z)
    return float(value)


def _mc_probe_std(problem, eta, omega, rng, n=2000) -> float:
    """Worst per-state relative std of the tilted integrand (instance probe)."""
    k = problem.action_dim
    chol = np.linalg.cholesky(problem.cov_old)
    prec = problem.prec_old
    mu = problem.p_nat @ problem.cov_old
    lin = problem.phi @ problem.W_lin.T
    if problem.w_a is not None:
        lin = lin + problem.w_a
    worst = 0.0
    for b in range(mu.shape[0]):
        z = rng.standard_normal((n, k))
        a = mu[b] + z @ chol.T
        d = a - mu[b]
        logp = -0.5 * np.einsum("ni,ij,nj->n", d, prec, d)
        q_tilde = -0.5 * np.einsum("ni,ij,nj->n", a, problem.W_aa, a) + a @ lin[b]
        x = np.exp((q_tilde - omega * logp) / (eta + omega))
        worst = max(worst, float(x.std() / x.mean()))
    return worst


def suite_dual_mc(seed=1, n_instances=5, n_samples=1_000_000) -> list[OracleCheck]:
    rng = np.random.default_rng(seed)
    checks = []
    for i in range(n_instances):
        k = 1 + i % 3
        nonlinear = i % 2 == 1
        while True:
            _, _, _, problem = random_gaussian_dual(rng, k=k, n_states=8,
                                                    nonlinear=nonlinear,
                                                    w_scale=0.25)
            eta = problem.eta_floor() + rng.uniform(10.0, 25.0)
            omega = rng.uniform(0.1, 0.3)
            # keep the relative comparison well-conditioned: shrink the
            # advantage blocks until the integrand is resolvable at the
            # fixed sample budget (probed with a cheap pre-draw), and
            # require a value away from zero
            for _ in range(8):
                if _mc_probe_std(problem, eta, omega, rng) < 0.015:
                    break
                problem.W_aa = 0.6 * problem.W_aa
                problem.W_lin = 0.6 * problem.W_lin
                if problem.w_a is not None:
                    problem.w_a = 0.6 * problem.w_a
            else:
                continue
            closed = problem.eval(eta, omega)
            if np.isfinite(closed) and abs(closed) > 0.8:
                break
        approx = mc_gaussian_dual(problem, eta, omega, n_samples, rng)
        rel = abs(approx - closed) / abs(closed)
        checks.append(OracleCheck(f"dual_mc/{problem.mode}/k{k}", rel, 1e-3))
    return checks


def discrete_grid_oracle(problem, n_grid=200):
    """Locate the dual minimum on a (log eta, omega) grid."""
    log_etas = np.linspace(np.log(1e-3), np.log(1e3), n_grid)
    best = (np.inf, None, None)
    for le in log_etas:
        eta = np.exp(le)
        lo = -eta * 0.999 if problem.constraint_kind == "equality_entropy" else 0.0
        omegas = np.linspace(lo, 3.0 * max(eta, 1.0), n_grid)
        for om in omegas:
            v = problem.eval(eta, om)
            if v < best[0]:
                best = (v, eta, om)
    return best


# -- toy and trust-region oracles ------------------------------------------


def suite_toy_closed_form(seed=2) -> list[OracleCheck]:
    checks = []
    report = analysis.verify_iterative_vs_closed_form(analysis.ToyConfig())
    checks.append(OracleCheck("toy/iterative_vs_closed_B", report["max_dev_B"], 1e-9))
    checks.append(OracleCheck("toy/iterative_vs_closed_b", report["max_dev_b"], 1e-9))

    ng_report = analysis.verify_iterative_vs_closed_form(
        analysis.ToyConfig(omega=0.0))
    closed_ng = analysis.natural_gradient_iterates(1.0, 0.0, 1.0, 1.0, 10.0, 200)
    dev = np.max(np.abs(ng_report["B_iterative"] - closed_ng.B_seq))
    checks.append(OracleCheck("toy/omega0_matches_natural_gradient", float(dev), 1e-9))

    checks.append(OracleCheck("toy/sampled_tracking",
                              _sampled_toy_deviation(seed), 0.2))
    return checks


def _sampled_toy_deviation(seed, n_iters=30, n_samples=10_000):
    """Relative closed-form deviation of a sampled-advantage toy run."""
    env = QuadraticBandit()
    policy = NaturalGaussianPolicy(IdentityFeatureMap(1), U=np.array([[0.0]]),
                                   prec=np.array([1.0]))
    cfg = UpdateConfig(algo="copos", fixed_eta=10.0, fixed_omega=1.0,
                       normalize_advantages=False, damping=1e-8, cg_iters=50)
    from .rollout import collect, compute_advantages
    for it in range(n_iters):
        batch = collect(policy, env, n_samples, horizon=1,
                        master_seed=seed * 10_000 + it)
        batch = compute_advantages(batch, "none")
        policy, _ = copos_update(policy, batch, cfg)
    closed = analysis.entropy_reg_iterates(1.0, 0.0, 1.0, 1.0, 10.0, 1.0, n_iters)
    dev_B = abs(policy.prec[0] - closed.B_seq[-1]) / closed.B_seq[-1]
    dev_b = abs(policy.U[0, 0] - closed.b_seq[-1]) / max(abs(closed.b_seq[-1]), 1e-12)
    return float(max(dev_B, dev_b))


def brute_force_bandit_update(policy, W_aa, W_lin, epsilon, beta_h,
                              n_grid=121, zoom_rounds=4):
    """Grid-search the constrained primal over new (mu, log var).

    Maximizes the expected compatible advantage subject to the KL and
    entropy-loss constraints, refining the grid around the incumbent.
    """
    mu0 = float(policy.mean(np.array([[1.0]]))[0, 0])
    var0 = float(policy.cov[0, 0])
    waa = float(W_aa[0, 0])
    wsa = float(W_lin[0, 0])

    def objective(mu, var):
        return -0.5 * waa * (mu * mu + var) + wsa * mu

    def kl_gauss(mu, var):
        return 0.5 * (var / var0 + (mu - mu0) ** 2 / var0 - 1.0 + np.log(var0 / var))

    def ent_loss(var):
        return 0.5 * np.log(var0 / var)

    span_mu = 4.0 * np.sqrt(var0)
    mu_lo, mu_hi = mu0 - span_mu, mu0 + span_mu
    lv_lo, lv_hi = np.log(var0) - 2.0, np.log(var0) + 2.0
    best = (-np.inf, mu0, var0)
    for _ in range(zoom_rounds):
        mus = np.linspace(mu_lo, mu_hi, n_grid)
        lvs = np.linspace(lv_lo, lv_hi, n_grid)
        for mu in mus:
            for lv in lvs:
                var = np.exp(lv)
                if kl_gauss(mu, var) > epsilon or ent_loss(var) > beta_h:
                    continue
                val = objective(mu, var)
                if val > best[0]:
                    best = (val, mu, var)
        _, mu_c, var_c = best
        dmu = (mu_hi - mu_lo) / (n_grid - 1)
        dlv = (lv_hi - lv_lo) / (n_grid - 1)
        mu_lo, mu_hi = mu_c - 2 * dmu, mu_c + 2 * dmu
        lv_lo, lv_hi = np.log(var_c) - 2 * dlv, np.log(var_c) + 2 * dlv
    return best[1], best[2]


def gaussian_tv_distance(mu1, var1, mu2, var2, n_grid=20001):
    lo = min(mu1 - 9 * np.sqrt(var1), mu2 - 9 * np.sqrt(var2))
    hi = max(mu1 + 9 * np.sqrt(var1), mu2 + 9 * np.sqrt(var2))
    x = np.linspace(lo, hi, n_grid)
    p = np.exp(-0.5 * (x - mu1) ** 2 / var1) / np.sqrt(2 * np.pi * var1)
    q = np.exp(-0.5 * (x - mu2) ** 2 / var2) / np.sqrt(2 * np.pi * var2)
    return 0.5 * float(np.trapezoid(np.abs(p - q), x))


def suite_brute_force_tr(seed=3) -> list[OracleCheck]:
    policy = NaturalGaussianPolicy(IdentityFeatureMap(1), U=np.array([[0.0]]),
                                   prec=np.array([1.0]))
    w = np.array([1.0, 1.0])
    sol = compat.partition_solution(
        policy, w, 0.0, compat.GradientEstimate(g=w.copy(), sample_count=1,
                                                baseline_kind="none"))
    epsilon, beta_h = 0.01, 0.001
    batch = batch_from_arrays(obs=np.array([[1.0]]), actions=np.array([[0.0]]),
                              advantages=np.array([0.0]))
    cfg = UpdateConfig(algo="copos", epsilon=epsilon, beta_mode="fixed",
                       beta_value=beta_h, entropy_constraint="inequality")
    new_policy, _ = copos_update(policy, batch, cfg, solution=sol)
    mu_d = float(new_policy.mean(np.array([[1.0]]))[0, 0])
    var_d = float(new_policy.cov[0, 0])
    mu_b, var_b = brute_force_bandit_update(policy, sol.W_aa, sol.W_lin,
                                            epsilon, beta_h)
    tv = gaussian_tv_distance(mu_d, var_d, mu_b, var_b)
    return [OracleCheck("brute_force_tr/tv_distance", tv, 1e-2)]


# -- dense Fisher / compatible least squares --------------------------------


def dense_softmax_instance(seed=4, n_states=5):
    """Uniform log-linear softmax whose sampled batch enumerates (s, a).

    With equal action probabilities the uniformly weighted enumeration
    realizes the on-policy weighting exactly, so the conjugate-gradient
    solve, the dense Fisher solve and the advantage least-squares fit
    must all coincide.
    """
    rng = np.random.default_rng(seed)
    features = IdentityFeatureMap(4)
    policy = SoftmaxPolicy(features, np.zeros((3, 4)))
    states = rng.normal(size=(n_states, 4))
    adv_table = rng.normal(size=(n_states, 3))
    obs = np.repeat(states, 3, axis=0)
    actions = np.tile(np.arange(3), n_states)
    advantages = adv_table.ravel()
    batch = batch_from_arrays(obs=obs, actions=actions, advantages=advantages)
    return policy, batch


def dense_fisher_matrix(policy, states) -> np.ndarray:
    states = np.atleast_2d(states)
    n_params = policy.layout.total
    F = np.zeros((n_params, n_params))
    for s in states:
        p = policy.probs(s[None, :])[0]
        for a, pa in enumerate(p):
            f = compat.compatible_features(policy, s[None, :], a)
            F += pa * np.outer(f, f)
    return F / states.shape[0]


def suite_dense_fisher(seed=4) -> list[OracleCheck]:
    policy, batch = dense_softmax_instance(seed)
    damping = 1e-10
    sol = compat.solve_natural_gradient(policy, batch, damping=damping,
                                        cg_iters=200, cg_tol=1e-14,
                                        normalize_advantages=False)
    g = sol.grad.g
    F = dense_fisher_matrix(policy, np.asarray(batch.obs)[::3])
    w_dense, *_ = np.linalg.lstsq(F + damping * np.eye(F.shape[0]), g, rcond=None)
    rel_dense = np.linalg.norm(sol.w - w_dense) / np.linalg.norm(w_dense)

    # compatible least squares: argmin_w sum_i (A_i - phi_i^T w)^2
    Phi = np.stack([compat.compatible_features(policy, batch.obs[i][None, :],
                                               batch.actions[i])
                    for i in range(batch.n_samples)])
    w_ls, *_ = np.linalg.lstsq(Phi, np.asarray(batch.advantages), rcond=None)
    rel_ls = np.linalg.norm(sol.w - w_ls) / np.linalg.norm(w_ls)
    return [
        OracleCheck("dense_fisher/cg_vs_dense", float(rel_dense), 1e-3),
        OracleCheck("dense_fisher/cg_vs_least_squares", float(rel_ls), 1e-3),
    ]


SUITES = {
    "dual_fd": suite_dual_fd,
    "dual_mc": suite_dual_mc,
    "toy_closed_form": suite_toy_closed_form,
    "brute_force_tr": suite_brute_force_tr,
    "dense_fisher": suite_dense_fisher,
}
