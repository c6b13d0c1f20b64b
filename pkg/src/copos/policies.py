"""Policy distributions in natural parameterization.

Two families:

* `NaturalGaussianPolicy`: Gaussian over continuous actions with natural
  parameters (precision Lambda, linear map U) on top of a feature map,
  so the mean is mu(s) = Sigma U phi(s) and the log-density is linear in
  (Lambda, U). Precision is stored diagonally by default; dense
  symmetric storage is available for exactness tests.
* `SoftmaxPolicy`: categorical with logits Theta_out phi(s).

Policies are immutable value objects: updates build new instances via
`with_params`. The flat parameter vector is laid out as
[precision block, linear block, feature-map block]; the same layout is
used by gradients, Fisher-vector products and conjugate-gradient
solutions so blocks can be cross-partitioned without bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import IdentityFeatureMap, MlpFeatureMap

PD_TOL = 1e-12


class DegeneratePrecisionError(ValueError):
    """Raised when a precision matrix is not positive definite."""


@dataclass(frozen=True)
class ParamLayout:
    """Index ranges of the parameter blocks inside the flat vector."""

    prec: slice
    lin: slice
    beta: slice
    total: int


class NaturalGaussianPolicy:
    """N(mu(s), Sigma) with mu(s) = Sigma U phi(s), Sigma = Lambda^-1.

    `prec` is the diagonal of Lambda (shape (k,)) in diagonal mode or
    the full symmetric matrix (k, k) in dense mode. U has shape
    (action_dim, feature_dim).
    """

    def __init__(self, features, U, prec, diagonal=True):
        self.features = features
        self.U = np.asarray(U, dtype=float)
        self.diagonal = bool(diagonal)
        self.action_dim = self.U.shape[0]
        if self.U.shape[1] != features.output_dim:
            raise ValueError("U width must equal feature dimension")
        prec = np.asarray(prec, dtype=float)
        if self.diagonal:
            if prec.shape != (self.action_dim,):
                raise ValueError("diagonal precision must have shape (action_dim,)")
            if np.any(prec <= PD_TOL):
                raise DegeneratePrecisionError("degenerate precision")
            self.prec = prec
            self.prec_matrix = np.diag(prec)
        else:
            if prec.shape != (self.action_dim, self.action_dim):
                raise ValueError("dense precision must be square")
            prec = 0.5 * (prec + prec.T)
            eigs = np.linalg.eigvalsh(prec)
            if np.any(eigs <= PD_TOL):
                raise DegeneratePrecisionError("degenerate precision")
            self.prec = prec
            self.prec_matrix = prec
        self.cov = np.linalg.inv(self.prec_matrix)
        self.cov = 0.5 * (self.cov + self.cov.T)
        # K maps features to the mean: mu(s) = K phi(s)
        self.K = self.cov @ self.U
        sign, self.logdet_prec = np.linalg.slogdet(self.prec_matrix)
        if sign <= 0:
            raise DegeneratePrecisionError("degenerate precision")
        self._chol_cov = np.linalg.cholesky(self.cov)
        if not (np.all(np.isfinite(self.cov)) and np.all(np.isfinite(self.K))):
            raise ValueError("derived moment parameters are not finite")

    @classmethod
    def create(cls, obs_dim, action_dim, hidden=(32, 32), n_basis=None,
               init_prec=1.0, diagonal=True, rng=None):
        """Default construction: tanh feature net, unit precision, zero mean.

        The basis count follows the max(10, action_dim) convention unless
        overridden.
        """
        if n_basis is None:
            n_basis = max(10, action_dim)
        if hidden:
            features = MlpFeatureMap.create(obs_dim, n_basis, hidden=hidden, rng=rng)
        else:
            features = IdentityFeatureMap(obs_dim)
            n_basis = obs_dim
        U = np.zeros((action_dim, n_basis))
        if diagonal:
            prec = np.full(action_dim, float(init_prec))
        else:
            prec = np.eye(action_dim) * float(init_prec)
        return cls(features, U, prec, diagonal=diagonal)

    # -- parameter plumbing ------------------------------------------------

    @property
    def layout(self) -> ParamLayout:
        k = self.action_dim
        n_prec = k if self.diagonal else k * k
        n_lin = self.U.size
        n_beta = self.features.n_params
        return ParamLayout(
            prec=slice(0, n_prec),
            lin=slice(n_prec, n_prec + n_lin),
            beta=slice(n_prec + n_lin, n_prec + n_lin + n_beta),
            total=n_prec + n_lin + n_beta,
        )

    def param_vector(self) -> np.ndarray:
        prec_part = self.prec.ravel()
        return np.concatenate([prec_part, self.U.ravel(), self.features.params_vector()])

    def with_params(self, vec) -> "NaturalGaussianPolicy":
        vec = np.asarray(vec, dtype=float)
        lay = self.layout
        if vec.shape != (lay.total,):
            raise ValueError("parameter vector has wrong length")
        prec = vec[lay.prec]
        if not self.diagonal:
            prec = prec.reshape(self.action_dim, self.action_dim)
        U = vec[lay.lin].reshape(self.U.shape)
        features = self.features.with_params(vec[lay.beta])
        return NaturalGaussianPolicy(features, U, prec, diagonal=self.diagonal)

    # -- distribution ------------------------------------------------------

    def feats(self, states) -> np.ndarray:
        return self.features.forward(states)

    def mean(self, states) -> np.ndarray:
        return self.feats(states) @ self.K.T

    def log_prob(self, state, action):
        phi = self.feats(state)
        a = np.atleast_2d(np.asarray(action, dtype=float))
        mu = phi @ self.K.T
        d = a - mu
        quad = np.einsum("bi,ij,bj->b", d, self.prec_matrix, d)
        k = self.action_dim
        out = -0.5 * quad + 0.5 * self.logdet_prec - 0.5 * k * np.log(2.0 * np.pi)
        return out[0] if out.shape[0] == 1 and np.ndim(action) <= 1 else out

    def sample(self, state, rng) -> np.ndarray:
        phi = self.feats(state)
        mu = (phi @ self.K.T)[0]
        z = rng.standard_normal(self.action_dim)
        return mu + self._chol_cov @ z

    def entropy(self) -> float:
        k = self.action_dim
        return 0.5 * (k * np.log(2.0 * np.pi * np.e) - self.logdet_prec)


class SoftmaxPolicy:
    """Categorical policy, log-linear in Theta_out over the feature map."""

    def __init__(self, features, Theta):
        self.features = features
        self.Theta = np.asarray(Theta, dtype=float)
        if self.Theta.ndim != 2 or self.Theta.shape[0] < 2:
            raise ValueError("Theta_out must be (action_count >= 2, feature_dim)")
        if self.Theta.shape[1] != features.output_dim:
            raise ValueError("Theta_out width must equal feature dimension")
        self.action_count = self.Theta.shape[0]

    @classmethod
    def create(cls, obs_dim, action_count, hidden=(30, 30), n_basis=None, rng=None):
        if hidden:
            if n_basis is None:
                n_basis = hidden[-1]
            features = MlpFeatureMap.create(obs_dim, n_basis, hidden=hidden, rng=rng)
        else:
            features = IdentityFeatureMap(obs_dim)
        Theta = np.zeros((action_count, features.output_dim))
        return cls(features, Theta)

    @property
    def layout(self) -> ParamLayout:
        n_lin = self.Theta.size
        n_beta = self.features.n_params
        return ParamLayout(
            prec=slice(0, 0),
            lin=slice(0, n_lin),
            beta=slice(n_lin, n_lin + n_beta),
            total=n_lin + n_beta,
        )

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.Theta.ravel(), self.features.params_vector()])

    def with_params(self, vec) -> "SoftmaxPolicy":
        vec = np.asarray(vec, dtype=float)
        lay = self.layout
        if vec.shape != (lay.total,):
            raise ValueError("parameter vector has wrong length")
        Theta = vec[lay.lin].reshape(self.Theta.shape)
        features = self.features.with_params(vec[lay.beta])
        return SoftmaxPolicy(features, Theta)

    def feats(self, states) -> np.ndarray:
        return self.features.forward(states)

    def logits(self, states) -> np.ndarray:
        return self.feats(states) @ self.Theta.T

    def log_probs(self, states) -> np.ndarray:
        """Normalized log pi(.|s) for each state row."""
        lg = self.logits(states)
        lg = lg - lg.max(axis=1, keepdims=True)
        lse = np.log(np.exp(lg).sum(axis=1, keepdims=True))
        return lg - lse

    def probs(self, states) -> np.ndarray:
        return np.exp(self.log_probs(states))

    def log_prob(self, state, action):
        lp = self.log_probs(state)
        a = np.atleast_1d(np.asarray(action, dtype=int))
        out = lp[np.arange(lp.shape[0]), a]
        return out[0] if out.shape[0] == 1 and np.ndim(action) == 0 else out

    def sample(self, state, rng) -> int:
        p = self.probs(state)[0]
        return int(rng.choice(self.action_count, p=p))

    def entropies(self, states) -> np.ndarray:
        lp = self.log_probs(states)
        p = np.exp(lp)
        return -(p * lp).sum(axis=1)


# -- module-level operations over policies ---------------------------------


def log_prob(policy, state, action):
    return policy.log_prob(state, action)


def sample(policy, state, rng):
    return policy.sample(state, rng)


def kl(policy_new, policy_old, states) -> float:
    """Mean over the state batch of KL(pi_new(.|s) || pi_old(.|s))."""
    if isinstance(policy_new, NaturalGaussianPolicy):
        if policy_new.action_dim != policy_old.action_dim:
            raise ValueError("action dimensions differ")
        k = policy_new.action_dim
        mu1 = policy_new.mean(states)
        mu0 = policy_old.mean(states)
        d = mu1 - mu0
        prec0 = policy_old.prec_matrix
        tr = float(np.trace(prec0 @ policy_new.cov))
        quad = np.einsum("bi,ij,bj->b", d, prec0, d)
        logdets = policy_new.logdet_prec - policy_old.logdet_prec
        return float(np.mean(0.5 * (tr + quad - k + logdets)))
    if isinstance(policy_new, SoftmaxPolicy):
        if policy_new.action_count != policy_old.action_count:
            raise ValueError("action counts differ")
        lp1 = policy_new.log_probs(states)
        lp0 = policy_old.log_probs(states)
        p1 = np.exp(lp1)
        return float(np.mean((p1 * (lp1 - lp0)).sum(axis=1)))
    raise TypeError(f"unsupported policy type {type(policy_new)!r}")


def mean_entropy(policy, states) -> float:
    """Mean per-state entropy over the batch (state-free for Gaussians)."""
    if isinstance(policy, NaturalGaussianPolicy):
        return float(policy.entropy())
    return float(np.mean(policy.entropies(states)))


# -- checkpoint serialization -----------------------------------------------

CHECKPOINT_VERSION = 1


def save_policy(policy, path) -> None:
    """Write a versioned npz checkpoint; round-trips bit-exactly."""
    data = {"format_version": np.array(CHECKPOINT_VERSION)}
    fm = policy.features
    if isinstance(fm, MlpFeatureMap):
        data["features.kind"] = np.array("mlp")
        for i, (W, b) in enumerate(zip(fm.weights, fm.biases)):
            data[f"features.W{i}"] = W
            data[f"features.b{i}"] = b
    else:
        data["features.kind"] = np.array("identity")
        data["features.dim"] = np.array(fm.input_dim)
    if isinstance(policy, NaturalGaussianPolicy):
        data["policy.kind"] = np.array("gaussian")
        data["U"] = policy.U
        if policy.diagonal:
            data["Lambda_diag"] = policy.prec
        else:
            data["Lambda_dense"] = policy.prec
    elif isinstance(policy, SoftmaxPolicy):
        data["policy.kind"] = np.array("softmax")
        data["Theta_out"] = policy.Theta
    else:
        raise TypeError(f"unsupported policy type {type(policy)!r}")
    np.savez(path, **data)


def load_policy(path):
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if str(z["features.kind"]) == "mlp":
            weights, biases = [], []
            i = 0
            while f"features.W{i}" in z:
                weights.append(z[f"features.W{i}"])
                biases.append(z[f"features.b{i}"])
                i += 1
            fm = MlpFeatureMap(weights, biases)
        else:
            fm = IdentityFeatureMap(int(z["features.dim"]))
        kind = str(z["policy.kind"])
        if kind == "gaussian":
            if "Lambda_diag" in z:
                return NaturalGaussianPolicy(fm, z["U"], z["Lambda_diag"], diagonal=True)
            return NaturalGaussianPolicy(fm, z["U"], z["Lambda_dense"], diagonal=False)
        if kind == "softmax":
            return SoftmaxPolicy(fm, z["Theta_out"])
        raise ValueError(f"unknown policy kind {kind!r}")
