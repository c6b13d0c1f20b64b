"""Compatible features, policy gradients and natural-gradient solves.

The compatible feature vector of a policy is the gradient of its
log-density with respect to every parameter. For the exponential-family
policies used here it splits into

* sufficient statistics `psi(s, a)` for the log-linear blocks
  (precision and linear map for Gaussians, logits for softmax), and
* a feature-map block obtained by backpropagating the action residual
  through the network.

Fisher-vector products are computed in closed form per state (for the
Gaussian the score is linear-plus-quadratic in the action residual, for
the softmax the logit-space Fisher is diag(p) - p p^T) and averaged
over the batch, which is what differentiating the batch-mean KL twice
yields, without ever forming the matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policies import NaturalGaussianPolicy, SoftmaxPolicy


@dataclass
class GradientEstimate:
    g: np.ndarray
    sample_count: int
    baseline_kind: str


@dataclass
class CompatibleSolution:
    """Natural-gradient vector and its parameter-block partitions."""

    w: np.ndarray
    W_aa: np.ndarray | None      # symmetric (k, k), Gaussian only
    W_lin: np.ndarray            # (k, M) Gaussian / (A, M) softmax
    w_beta: np.ndarray
    cg_residual: float
    grad: GradientEstimate

    @property
    def W_sa(self) -> np.ndarray:
        """Linear block in (feature_dim, action_dim) orientation."""
        return self.W_lin.T


def psi_features(policy, state, action) -> np.ndarray:
    """Action-dependent sufficient statistics of the log-linear blocks.

    Gaussian layout matches (precision, U): [-0.5 vec(a a^T), vec(a phi^T)],
    with the quadratic block reduced to -0.5 a_i^2 in diagonal mode.
    """
    if isinstance(policy, NaturalGaussianPolicy):
        phi = policy.feats(state)[0]
        a = np.asarray(action, dtype=float).reshape(policy.action_dim)
        if policy.diagonal:
            quad = -0.5 * a * a
        else:
            quad = (-0.5 * np.outer(a, a)).ravel()
        return np.concatenate([quad, np.outer(a, phi).ravel()])
    if isinstance(policy, SoftmaxPolicy):
        phi = policy.feats(state)[0]
        e = np.zeros(policy.action_count)
        e[int(action)] = 1.0
        return np.outer(e, phi).ravel()
    raise TypeError(f"unsupported policy type {type(policy)!r}")


def compatible_features(policy, state, action) -> np.ndarray:
    """grad_params log pi(a|s) over the full parameter vector.

    Equals psi(s, a) - E_pi[psi(s, .)] on the log-linear blocks and is
    zero-mean under pi(.|s) in every block.
    """
    if isinstance(policy, NaturalGaussianPolicy):
        phi = policy.feats(state)
        mu = (phi @ policy.K.T)[0]
        a = np.asarray(action, dtype=float).reshape(policy.action_dim)
        z = a - mu
        if policy.diagonal:
            prec_part = -0.5 * (a * a - mu * mu - np.diag(policy.cov))
        else:
            prec_part = (-0.5 * (np.outer(a, a) - np.outer(mu, mu) - policy.cov)).ravel()
        lin_part = np.outer(z, phi[0]).ravel()
        beta_part = policy.features.vjp_sum(state, (z @ policy.U)[None, :])
        return np.concatenate([prec_part, lin_part, beta_part])
    if isinstance(policy, SoftmaxPolicy):
        phi = policy.feats(state)
        p = policy.probs(state)[0]
        e = np.zeros(policy.action_count)
        e[int(action)] = 1.0
        d = e - p
        lin_part = np.outer(d, phi[0]).ravel()
        beta_part = policy.features.vjp_sum(state, (d @ policy.Theta)[None, :])
        return np.concatenate([lin_part, beta_part])
    raise TypeError(f"unsupported policy type {type(policy)!r}")


def policy_gradient(policy, batch, normalize_advantages=True) -> GradientEstimate:
    """Mean over samples of compatible_features(s_i, a_i) * A_i, vectorized."""
    obs = np.asarray(batch.obs, dtype=float)
    n = obs.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    adv = np.asarray(batch.advantages, dtype=float)
    if adv.shape[0] != n:
        raise ValueError("advantages not populated for this batch")
    if normalize_advantages:
        std = adv.std()
        adv = (adv - adv.mean()) / (std + 1e-8)
    wts = adv / n

    if isinstance(policy, NaturalGaussianPolicy):
        phi = policy.feats(obs)
        mu = phi @ policy.K.T
        acts = np.asarray(batch.actions, dtype=float).reshape(n, policy.action_dim)
        z = acts - mu
        if policy.diagonal:
            diff = acts * acts - mu * mu - np.diag(policy.cov)[None, :]
            prec_part = -0.5 * (wts[:, None] * diff).sum(axis=0)
        else:
            prec_part = np.zeros((policy.action_dim, policy.action_dim))
            prec_part -= 0.5 * np.einsum("b,bi,bj->ij", wts, acts, acts)
            prec_part += 0.5 * np.einsum("b,bi,bj->ij", wts, mu, mu)
            prec_part += 0.5 * wts.sum() * policy.cov
            prec_part = prec_part.ravel()
        wz = wts[:, None] * z
        lin_part = (wz.T @ phi).ravel()
        beta_part = policy.features.vjp_sum(obs, wz @ policy.U)
        g = np.concatenate([prec_part, lin_part, beta_part])
    elif isinstance(policy, SoftmaxPolicy):
        phi = policy.feats(obs)
        p = policy.probs(obs)
        acts = np.asarray(batch.actions).astype(int)
        d = -p
        d[np.arange(n), acts] += 1.0
        wd = wts[:, None] * d
        lin_part = (wd.T @ phi).ravel()
        beta_part = policy.features.vjp_sum(obs, wd @ policy.Theta)
        g = np.concatenate([lin_part, beta_part])
    else:
        raise TypeError(f"unsupported policy type {type(policy)!r}")

    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite policy gradient")
    return GradientEstimate(g=g, sample_count=n,
                            baseline_kind=getattr(batch, "baseline_kind", "none"))


def fisher_vector_product(policy, states, v, damping=0.0) -> np.ndarray:
    """(F + damping I) v with F the state-averaged Fisher information.

    Exact: the Gaussian score decomposes into a part linear in the
    residual z = a - mu (all blocks) and a quadratic part confined to
    the precision block, whose fourth-moment covariance is known; the
    softmax Fisher acts in logit space.
    """
    v = np.asarray(v, dtype=float)
    lay = policy.layout
    if v.shape != (lay.total,):
        raise ValueError("vector length does not match parameter count")
    states = np.atleast_2d(np.asarray(states, dtype=float))
    n = states.shape[0]
    out = np.zeros_like(v)

    if isinstance(policy, NaturalGaussianPolicy):
        k = policy.action_dim
        phi = policy.feats(states)
        mu = phi @ policy.K.T
        V_lin = v[lay.lin].reshape(policy.U.shape)
        v_beta = v[lay.beta]
        jv = policy.features.jvp(states, v_beta) if v_beta.size else None

        c = phi @ V_lin.T
        if jv is not None:
            c = c + jv @ policy.U.T
        if policy.diagonal:
            v_prec = v[lay.prec]
            c = c - mu * v_prec[None, :]
        else:
            V_prec = 0.5 * (v[lay.prec].reshape(k, k) + v[lay.prec].reshape(k, k).T)
            c = c - mu @ V_prec
        t = c @ policy.cov

        if policy.diagonal:
            sig = np.diag(policy.cov)
            out[lay.prec] = -(mu * t).mean(axis=0) + 0.5 * sig * sig * v_prec
        else:
            quad = 0.5 * policy.cov @ V_prec @ policy.cov
            cross = -0.5 * (t.T @ mu + mu.T @ t) / n
            out[lay.prec] = (cross + quad).ravel()
        out[lay.lin] = (t.T @ phi).ravel() / n
        if v_beta.size:
            out[lay.beta] = policy.features.vjp_sum(states, t @ policy.U) / n
    elif isinstance(policy, SoftmaxPolicy):
        phi = policy.feats(states)
        p = policy.probs(states)
        V_lin = v[lay.lin].reshape(policy.Theta.shape)
        v_beta = v[lay.beta]
        dl = phi @ V_lin.T
        if v_beta.size:
            dl = dl + policy.features.jvp(states, v_beta) @ policy.Theta.T
        u = p * dl - p * (p * dl).sum(axis=1, keepdims=True)
        out[lay.lin] = (u.T @ phi).ravel() / n
        if v_beta.size:
            out[lay.beta] = policy.features.vjp_sum(states, u @ policy.Theta) / n
    else:
        raise TypeError(f"unsupported policy type {type(policy)!r}")

    if damping:
        out = out + damping * v
    return out


def conjugate_gradient(matvec, b, iters=10, tol=1e-10):
    """Plain CG for symmetric PSD matvec; returns (x, relative residual)."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    b_norm = float(np.sqrt(b @ b))
    if b_norm == 0.0:
        return x, 0.0
    for _ in range(iters):
        if np.sqrt(rs) <= tol * b_norm:
            break
        Ap = matvec(p)
        alpha = rs / float(p @ Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, float(np.sqrt(rs)) / b_norm


def solve_natural_gradient(policy, batch, damping=1e-4, cg_iters=10,
                           cg_tol=1e-10, normalize_advantages=True,
                           gradient=None) -> CompatibleSolution:
    """w = (F + damping I)^-1 grad J via conjugate gradient, partitioned."""
    if gradient is None:
        gradient = policy_gradient(policy, batch, normalize_advantages=normalize_advantages)
    if not np.all(np.isfinite(gradient.g)):
        raise ValueError("non-finite policy gradient")
    if cg_iters < 1:
        raise ValueError("cg_iters must be >= 1")
    states = np.asarray(batch.obs, dtype=float)

    def matvec(u):
        return fisher_vector_product(policy, states, u, damping=damping)

    w, residual = conjugate_gradient(matvec, gradient.g, iters=cg_iters, tol=cg_tol)
    return partition_solution(policy, w, residual, gradient)


def partition_solution(policy, w, residual, gradient) -> CompatibleSolution:
    lay = policy.layout
    if isinstance(policy, NaturalGaussianPolicy):
        k = policy.action_dim
        if policy.diagonal:
            W_aa = np.diag(w[lay.prec])
        else:
            raw = w[lay.prec].reshape(k, k)
            W_aa = 0.5 * (raw + raw.T)
        W_lin = w[lay.lin].reshape(policy.U.shape)
    else:
        W_aa = None
        W_lin = w[lay.lin].reshape(policy.Theta.shape)
    return CompatibleSolution(w=w, W_aa=W_aa, W_lin=W_lin,
                              w_beta=w[lay.beta].copy(),
                              cg_residual=residual, grad=gradient)
