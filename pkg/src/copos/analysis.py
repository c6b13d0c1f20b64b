"""Closed-form iterates for the quadratic-bandit study.

With a stateless 1-D Gaussian policy (natural parameters B, b), a
quadratic reward -0.5 R a^2 + r a and perfectly estimated compatible
advantages, constant-multiplier updates admit closed forms:

* natural gradient (omega = 0): B_n = B_0 + n R / eta, the mean gap
  d_n = mu_n - a* decays like 1 / n;
* entropy-regularized (omega > 0): the old parameters decay
  geometrically, B_n converges to R (eta + omega) / (eta omega) and d_n
  decays like c2^-n with c2 = (eta + omega)/eta > 1.

These sequences are the analytic oracle that the iterative update
engine is verified against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PIE = np.log(2.0 * np.pi * np.e)


@dataclass
class ToyIterates:
    B_seq: np.ndarray
    b_seq: np.ndarray
    d_seq: np.ndarray
    entropy_seq: np.ndarray
    c0: float
    c1: float
    c2: float
    divergent: bool

    @property
    def mu_seq(self) -> np.ndarray:
        return self.b_seq / self.B_seq


def _entropy_1d(B):
    return 0.5 * (LOG_2PIE - np.log(B))


def natural_gradient_iterates(B0, b0, R, r, eta, n) -> ToyIterates:
    """Constant-eta natural-gradient sequences; d_n = c0 / (c1 + c2 n)."""
    if eta <= 0 or R <= 0 or B0 <= 0:
        raise ValueError("eta, R and B0 must be positive")
    ns = np.arange(n + 1, dtype=float)
    B = B0 + ns * R / eta
    b = b0 + ns * r / eta
    d = (b0 * R - r * B0) / (R * B)
    return ToyIterates(B_seq=B, b_seq=b, d_seq=d, entropy_seq=_entropy_1d(B),
                       c0=(b0 * R - r * B0) / R, c1=B0, c2=R / eta,
                       divergent=bool(np.any(B <= 0)))


def entropy_reg_iterates(B0, b0, R, r, eta, omega, n) -> ToyIterates:
    """Constant (eta, omega) sequences; d_n = c0 / (c1 + c2^n), c2 > 1."""
    if omega == 0:
        return natural_gradient_iterates(B0, b0, R, r, eta, n)
    if eta <= 0 or omega <= 0 or R <= 0 or B0 <= 0:
        raise ValueError("eta, omega, R and B0 must be positive")
    ns = np.arange(n + 1, dtype=float)
    q = eta / (eta + omega)
    qn = q ** ns
    amp = R * (eta + omega) / (eta * omega)     # limit of B_n
    B = B0 * qn + amp * (1.0 - qn)
    b = b0 * qn + (r / R) * amp * (1.0 - qn)
    d = qn * (b0 - r * B0 / R) / B
    return ToyIterates(B_seq=B, b_seq=b, d_seq=d, entropy_seq=_entropy_1d(B),
                       c0=(b0 - r * B0 / R) / amp, c1=B0 / amp - 1.0,
                       c2=(eta + omega) / eta,
                       divergent=bool(np.any(B <= 0)))


def limit_precision(R, eta, omega) -> float:
    return R * (eta + omega) / (eta * omega)


def loglog_slope(ns, values) -> float:
    """Least-squares slope of log|values| against log ns."""
    ns = np.asarray(ns, dtype=float)
    values = np.abs(np.asarray(values, dtype=float))
    mask = (ns > 0) & (values > 0)
    return float(np.polyfit(np.log(ns[mask]), np.log(values[mask]), 1)[0])


def toy_series(iterates, R, r) -> dict:
    """Figure-panel series derived from the iterates.

    distance d_n, expected reward, differential entropy, and the KL
    between consecutive policies.
    """
    B, b = iterates.B_seq, iterates.b_seq
    mu = b / B
    var = 1.0 / B
    reward = -0.5 * R * (mu * mu + var) + r * mu
    kl = np.zeros_like(B)
    if len(B) > 1:
        v_new, v_old = var[1:], var[:-1]
        dmu = mu[1:] - mu[:-1]
        kl[1:] = 0.5 * (v_new / v_old + dmu * dmu / v_old - 1.0 + np.log(v_old / v_new))
    return {
        "distance": iterates.d_seq,
        "reward": reward,
        "entropy": iterates.entropy_seq,
        "kl": kl,
    }


@dataclass
class ToyConfig:
    B0: float = 1.0
    b0: float = 0.0
    R: float = 1.0
    r: float = 1.0
    eta: float = 10.0
    omega: float = 1.0
    n: int = 200


def verify_iterative_vs_closed_form(toy_cfg: ToyConfig) -> dict:
    """Run the update engine with fixed multipliers against the closed forms.

    Uses exact compatible advantages (w = [R, r]) so the only difference
    between the two paths is floating-point accumulation.
    """
    from .compat import GradientEstimate, partition_solution
    from .features import IdentityFeatureMap
    from .policies import NaturalGaussianPolicy
    from .rollout import batch_from_arrays
    from .update import UpdateConfig, copos_update

    policy = NaturalGaussianPolicy(IdentityFeatureMap(1),
                                   U=np.array([[toy_cfg.b0]]),
                                   prec=np.array([toy_cfg.B0]))
    w = np.array([toy_cfg.R, toy_cfg.r])
    cfg = UpdateConfig(algo="copos", epsilon=0.01,
                       fixed_eta=toy_cfg.eta, fixed_omega=toy_cfg.omega)
    batch = batch_from_arrays(obs=np.array([[1.0]]), actions=np.array([[0.0]]),
                              advantages=np.array([0.0]))
    B_iter = [toy_cfg.B0]
    b_iter = [toy_cfg.b0]
    for _ in range(toy_cfg.n):
        sol = partition_solution(policy, w, 0.0,
                                 GradientEstimate(g=w.copy(), sample_count=1,
                                                  baseline_kind="none"))
        policy, _ = copos_update(policy, batch, cfg, solution=sol)
        B_iter.append(float(policy.prec[0]))
        b_iter.append(float(policy.U[0, 0]))
    closed = entropy_reg_iterates(toy_cfg.B0, toy_cfg.b0, toy_cfg.R, toy_cfg.r,
                                  toy_cfg.eta, toy_cfg.omega, toy_cfg.n)
    B_iter = np.asarray(B_iter)
    b_iter = np.asarray(b_iter)
    return {
        "max_dev_B": float(np.max(np.abs(B_iter - closed.B_seq))),
        "max_dev_b": float(np.max(np.abs(b_iter - closed.b_seq))),
        "B_iterative": B_iter,
        "b_iterative": b_iter,
        "closed_form": closed,
    }
