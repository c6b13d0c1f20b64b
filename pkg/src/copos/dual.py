"""Lagrangian duals of the KL + entropy trust-region problem.

For multipliers eta (KL bound epsilon) and omega (entropy-loss bound
beta_H) the dual of

    max_pi  E_s[ E_pi[G_w(s, a)] ]
    s.t.    E_s[ KL(pi || pi_old) ] <= epsilon,
            E_s[ H(pi_old) - H(pi) ] <= beta_H   (or == beta_H)

is  g(eta, omega) = eta epsilon + omega beta_H - omega H_old
                    + (eta + omega) E_s[ log Z(s) ],
    Z(s) = integral  pi_old(a|s)^(eta/(eta+omega)) exp(G_w(s,a)/(eta+omega)) da,

minimized over eta > 0 and omega >= 0 (omega free in equality mode).
Grouping the omega terms as -omega (H_old - beta_H) recovers the usual
form in which the multiplier weights the entropy *target*; keeping the
loss budget beta_H explicit makes the stationarity conditions read
directly as the realized constraints:

    d g / d eta   = epsilon - KL(eta, omega)
    d g / d omega = beta_H - (H_old - H_new(eta, omega))

For Gaussian policies in natural parameters Z(s) is a Gaussian integral
and collapses to a closed form in H_aa = eta Lambda + W_aa; for softmax
policies it is a per-state log-sum-exp. Both realized quantities above
are closed-form as well, so the multipliers are solved by exact
root-finding on the KKT system (coordinate-wise: omega from the entropy
condition given eta, then eta from the KL condition), which for a convex
dual is the global minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import brentq
from scipy.special import logsumexp

from .policies import NaturalGaussianPolicy, SoftmaxPolicy

ETA_MIN_FRAC = 1e-6
LOG_2PI = np.log(2.0 * np.pi)
LOG_2PIE = np.log(2.0 * np.pi * np.e)


class DualSolveError(RuntimeError):
    """Dual solver failed; carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class EntropyBudgetError(ValueError):
    """The requested entropy change is outside the policy class range."""


@dataclass
class DualSolution:
    eta: float
    omega: float
    dual_value: float
    converged: bool
    evaluations: int
    realized_kl: float = np.nan
    realized_entropy_change: float = np.nan


@dataclass
class DualProblem:
    """Cached per-batch quantities defining one dual instance."""

    epsilon: float
    beta_h: float
    mode: str                      # gaussian_loglinear | gaussian_nonlinear | discrete
    constraint_kind: str           # inequality | equality_entropy
    h_old: float
    # Gaussian caches
    phi: np.ndarray | None = None          # (B, M)
    prec_old: np.ndarray | None = None     # (k, k)
    cov_old: np.ndarray | None = None      # (k, k)
    logdet_prec_old: float = 0.0
    p_nat: np.ndarray | None = None        # (B, k) = U_old phi(s)
    W_aa: np.ndarray | None = None         # (k, k) symmetric
    W_lin: np.ndarray | None = None        # (k, M)
    w_a: np.ndarray | None = None          # (B, k), nonlinear mode
    action_dim: int = 0
    # discrete caches
    logp_old: np.ndarray | None = None     # (B, A)
    gtilde: np.ndarray | None = None       # (B, A), zero mean under pi_old
    evaluations: int = field(default=0, compare=False)

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_gaussian(cls, policy, states, solution, epsilon, beta_h,
                      constraint_kind="inequality"):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        phi = policy.feats(states)
        nonlinear = policy.features.n_params > 0
        w_a = None
        if nonlinear:
            jv = policy.features.jvp(states, solution.w_beta)
            w_a = jv @ policy.U.T
        return cls(
            epsilon=float(epsilon), beta_h=float(beta_h),
            mode="gaussian_nonlinear" if nonlinear else "gaussian_loglinear",
            constraint_kind=constraint_kind,
            h_old=float(policy.entropy()),
            phi=phi,
            prec_old=policy.prec_matrix.copy(),
            cov_old=policy.cov.copy(),
            logdet_prec_old=float(policy.logdet_prec),
            p_nat=phi @ policy.U.T,
            W_aa=solution.W_aa.copy(),
            W_lin=solution.W_lin.copy(),
            w_a=w_a,
            action_dim=policy.action_dim,
        )

    @classmethod
    def from_softmax(cls, policy, states, solution, epsilon, beta_h,
                     constraint_kind="inequality"):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        phi = policy.feats(states)
        logp_old = policy.log_probs(states)
        raw = phi @ solution.W_lin.T
        if solution.w_beta.size:
            raw = raw + policy.features.jvp(states, solution.w_beta) @ policy.Theta.T
        p_old = np.exp(logp_old)
        gtilde = raw - (p_old * raw).sum(axis=1, keepdims=True)
        h_old = float(np.mean(-(p_old * logp_old).sum(axis=1)))
        return cls(
            epsilon=float(epsilon), beta_h=float(beta_h),
            mode="discrete", constraint_kind=constraint_kind,
            h_old=h_old, logp_old=logp_old, gtilde=gtilde,
        )

    # -- domain -------------------------------------------------------------

    def _feasible_multipliers(self, eta, omega) -> bool:
        if not np.isfinite(eta) or eta <= 0:
            return False
        if self.constraint_kind == "inequality" and omega < 0:
            return False
        if eta + omega < eta * ETA_MIN_FRAC:
            return False
        return True

    def _haa_chol(self, eta):
        """Cholesky of H_aa = eta Lambda_old + W_aa, or None if not PD."""
        haa = eta * self.prec_old + self.W_aa
        try:
            return np.linalg.cholesky(haa)
        except np.linalg.LinAlgError:
            return None

    def eta_floor(self) -> float:
        """Smallest eta keeping H_aa positive definite (Gaussian modes)."""
        if self.mode == "discrete":
            return 0.0
        # eta Lambda + W_aa > 0  <=>  eta > max generalized eig of (-W_aa, Lambda)
        eigs = scipy.linalg.eigh(-self.W_aa, self.prec_old, eigvals_only=True)
        return float(max(0.0, eigs.max()))

    # -- evaluation -----------------------------------------------------------

    def eval(self, eta, omega) -> float:
        self.evaluations += 1
        if not self._feasible_multipliers(eta, omega):
            return np.inf
        mult_terms = eta * self.epsilon - omega * self.h_old
        if omega != 0.0:
            mult_terms += omega * self.beta_h
        if self.mode == "discrete":
            tilted = (eta * self.logp_old + self.gtilde) / (eta + omega)
            lse = logsumexp(tilted, axis=1)
            return float(mult_terms + (eta + omega) * np.mean(lse))
        chol = self._haa_chol(eta)
        if chol is None:
            return np.inf
        k = self.action_dim
        q = eta * self.p_nat + self.phi @ self.W_lin.T
        if self.w_a is not None:
            q = q + self.w_a
        x = scipy.linalg.cho_solve((chol, True), q.T).T
        quad_new = np.einsum("bi,bi->b", q, x)
        quad_old = eta * np.einsum("bi,ij,bj->b", self.p_nat, self.cov_old, self.p_nat)
        logdet_haa = 2.0 * np.log(np.diag(chol)).sum()
        value = (
            mult_terms
            + 0.5 * np.mean(quad_new - quad_old)
            - 0.5 * eta * (k * LOG_2PI - self.logdet_prec_old)
            + 0.5 * (eta + omega) * (k * np.log(2.0 * np.pi * (eta + omega)) - logdet_haa)
        )
        return float(value)

    def realized(self, eta, omega):
        """(mean KL, new mean entropy) of the closed-form update at (eta, omega)."""
        self.evaluations += 1
        if not self._feasible_multipliers(eta, omega):
            return np.inf, -np.inf
        if self.mode == "discrete":
            tilted = (eta * self.logp_old + self.gtilde) / (eta + omega)
            logp_new = tilted - logsumexp(tilted, axis=1, keepdims=True)
            p_new = np.exp(logp_new)
            kl = float(np.mean((p_new * (logp_new - self.logp_old)).sum(axis=1)))
            h_new = float(np.mean(-(p_new * logp_new).sum(axis=1)))
            return kl, h_new
        chol = self._haa_chol(eta)
        if chol is None:
            return np.inf, -np.inf
        k = self.action_dim
        logdet_haa = 2.0 * np.log(np.diag(chol)).sum()
        logdet_cov_new = k * np.log(eta + omega) - logdet_haa
        logdet_cov_old = -self.logdet_prec_old
        q = eta * self.p_nat + self.phi @ self.W_lin.T
        if self.w_a is not None:
            q = q + self.w_a
        mu_new = scipy.linalg.cho_solve((chol, True), q.T).T
        mu_old = self.p_nat @ self.cov_old
        d = mu_new - mu_old
        cov_new = (eta + omega) * scipy.linalg.cho_solve((chol, True), np.eye(k))
        tr = float(np.trace(self.prec_old @ cov_new))
        quad = np.einsum("bi,ij,bj->b", d, self.prec_old, d)
        kl = float(np.mean(0.5 * (tr + quad - k + logdet_cov_old - logdet_cov_new)))
        h_new = 0.5 * (k * LOG_2PIE + logdet_cov_new)
        return kl, float(h_new)

    def grad(self, eta, omega):
        """Analytic dual gradient: (eps - KL, beta_H - entropy loss)."""
        kl, h_new = self.realized(eta, omega)
        return self.epsilon - kl, self.beta_h - (self.h_old - h_new)


def eval_gaussian_dual(problem, eta, omega) -> float:
    if problem.mode != "gaussian_loglinear":
        raise ValueError("problem is not in gaussian_loglinear mode")
    return problem.eval(eta, omega)


def eval_gaussian_dual_nonlinear(problem, eta, omega) -> float:
    if problem.mode != "gaussian_nonlinear":
        raise ValueError("problem is not in gaussian_nonlinear mode")
    return problem.eval(eta, omega)


def eval_discrete_dual(problem, eta, omega) -> float:
    if problem.mode != "discrete":
        raise ValueError("problem is not in discrete mode")
    return problem.eval(eta, omega)


# -- solving ------------------------------------------------------------------


def solve_omega(problem, eta, bracket_hint=1.0) -> float:
    """Entropy-coordinate solve: omega with entropy loss = beta_H at fixed eta.

    Gaussian modes are closed form (the new covariance determinant
    depends on the multipliers only); the discrete case root-finds the
    monotone entropy condition. Inequality mode clamps at omega = 0.
    """
    if not np.isfinite(problem.beta_h):
        return 0.0
    omega_floor = -eta * (1.0 - ETA_MIN_FRAC)
    h_target = problem.h_old - problem.beta_h
    if problem.mode != "discrete":
        chol = problem._haa_chol(eta)
        if chol is None:
            raise ValueError("H_aa not positive definite at this eta")
        k = problem.action_dim
        logdet_haa = 2.0 * np.log(np.diag(chol)).sum()
        # 0.5 (k log 2 pi e + k log(eta+omega) - logdet_haa) = h_target
        log_sum = (2.0 * h_target - k * LOG_2PIE + logdet_haa) / k
        omega = float(np.exp(log_sum) - eta)
        omega = max(omega, omega_floor)
    else:
        def gap(om):
            _, h_new = problem.realized(eta, om)
            return h_new - h_target

        lo = omega_floor + abs(omega_floor) * 1e-12 + 1e-300
        if gap(lo) > 0:
            # even the sharpest update keeps more entropy than the target
            raise EntropyBudgetError("entropy budget unreachable")
        hi = max(bracket_hint, eta, 1.0)
        for _ in range(200):
            if gap(hi) > 0:
                break
            hi *= 2.0
        else:
            raise EntropyBudgetError("entropy budget unreachable")
        omega = float(brentq(gap, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200))
    if problem.constraint_kind == "inequality":
        omega = max(0.0, omega)
    return omega


def _eta_bracket(problem, eta_scale):
    floor = problem.eta_floor()
    lo = max(floor * (1.0 + 1e-9) + 1e-300, eta_scale * 1e-10, 1e-12)
    hi = max(eta_scale, lo) * 1e12
    return lo, hi


def solve_dual(problem, eta_scale=1.0, max_evals=20000) -> DualSolution:
    """Minimize the dual; returns the KKT-exact multipliers.

    The KL condition is root-found in log eta with the entropy
    coordinate re-solved exactly at every trial eta. For the convex
    dual the KKT point found this way is the global minimum.
    """
    if problem.mode == "discrete" and np.isfinite(problem.beta_h):
        n_actions = problem.logp_old.shape[1]
        target = problem.h_old - problem.beta_h
        if target >= np.log(n_actions) + 1e-12 or target <= -1e-12:
            raise EntropyBudgetError("entropy budget unreachable")

    problem.evaluations = 0
    eta_lo, eta_hi = _eta_bracket(problem, eta_scale)

    def kl_gap(log_eta):
        eta = float(np.exp(log_eta))
        omega = solve_omega(problem, eta, bracket_hint=eta_scale)
        kl, _ = problem.realized(eta, omega)
        return kl - problem.epsilon

    # scan for a sign change of the (generally decreasing) KL gap
    grid = np.linspace(np.log(eta_lo), np.log(eta_hi), 90)
    vals = []
    for le in grid:
        try:
            vals.append(kl_gap(le))
        except EntropyBudgetError:
            raise
        except (ValueError, FloatingPointError):
            vals.append(np.nan)
        if problem.evaluations > max_evals:
            break
    vals = np.asarray(vals)
    finite = np.isfinite(vals)

    log_eta_star = None
    for i in range(len(vals) - 1):
        if finite[i] and finite[i + 1] and vals[i] > 0 >= vals[i + 1]:
            log_eta_star = brentq(kl_gap, grid[i], grid[i + 1],
                                  xtol=1e-13, rtol=1e-15, maxiter=300)
            break
    kl_active = log_eta_star is not None
    if log_eta_star is None:
        if not finite.any():
            raise DualSolveError("dual has no feasible multipliers")
        if vals[finite].max() <= 0:
            # KL constraint never active: take the smallest feasible eta
            log_eta_star = float(grid[np.where(finite)[0][0]])
        else:
            # KL gap positive everywhere: bounds cannot be met jointly
            raise EntropyBudgetError("entropy budget unreachable")

    eta = float(np.exp(log_eta_star))
    omega = solve_omega(problem, eta, bracket_hint=eta_scale)
    kl, h_new = problem.realized(eta, omega)
    value = problem.eval(eta, omega)
    dh = problem.h_old - h_new

    kl_ok = (abs(kl - problem.epsilon) <= 1e-5 * max(problem.epsilon, 1e-12)) if kl_active \
        else (kl <= problem.epsilon)
    if np.isfinite(problem.beta_h):
        if problem.constraint_kind == "equality_entropy" or omega > 0:
            ent_ok = abs(dh - problem.beta_h) <= 1e-6 * max(1.0, abs(problem.beta_h))
        else:
            ent_ok = dh <= problem.beta_h + 1e-9
    else:
        ent_ok = True
    sol = DualSolution(eta=eta, omega=omega, dual_value=value,
                       converged=bool(kl_ok and ent_ok),
                       evaluations=problem.evaluations,
                       realized_kl=kl, realized_entropy_change=dh)
    if not sol.converged:
        raise DualSolveError(
            f"dual solve did not satisfy KKT conditions (kl={kl:.3e}, dH={dh:.3e})",
            best=sol)
    return sol
