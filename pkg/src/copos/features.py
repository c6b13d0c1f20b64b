"""Nonlinear state-feature maps with exact parameter derivatives.

A feature map turns an observation vector into a vector of basis
functions. Policies are log-linear on top of these bases; the map's own
weights form the "nonlinear" parameter block that trust-region updates
treat approximately. Everything downstream needs Jacobian-vector
products with respect to those weights, so the maps implement exact
forward-mode (`jvp`) and reverse-mode (`vjp_sum`) propagation rather
than relying on an autodiff framework.
"""

from __future__ import annotations

import numpy as np


class IdentityFeatureMap:
    """phi(s) = s. No internal parameters.

    Used for purely log-linear policies (toy studies, exactness tests).
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("feature dimension must be positive")
        self.input_dim = dim
        self.output_dim = dim
        self.n_params = 0

    def forward(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return states

    def params_vector(self) -> np.ndarray:
        return np.zeros(0)

    def with_params(self, vec: np.ndarray) -> "IdentityFeatureMap":
        if len(vec) != 0:
            raise ValueError("identity map has no parameters")
        return self

    def jvp(self, states, v) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return np.zeros((states.shape[0], self.output_dim))

    def vjp_sum(self, states, upstream) -> np.ndarray:
        return np.zeros(0)


class MlpFeatureMap:
    """Feed-forward tanh network: hidden layers tanh, linear output.

    Parameters are stored as per-layer (W, b) pairs and exposed as one
    flat vector ordered [W0, b0, W1, b1, ...] (row-major). `jvp`
    propagates a parameter tangent forward; `vjp_sum` accumulates
    sum_i J_i^T u_i over a batch in a single backward pass, which is the
    shape every gradient/Fisher computation here needs.
    """

    def __init__(self, weights, biases):
        self.weights = [np.asarray(W, dtype=float) for W in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        if len(self.weights) != len(self.biases):
            raise ValueError("weights/biases length mismatch")
        for W, b in zip(self.weights, self.biases):
            if W.shape[0] != b.shape[0]:
                raise ValueError("layer shape mismatch")
        self.input_dim = self.weights[0].shape[1]
        self.output_dim = self.weights[-1].shape[0]
        self.n_params = sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    @classmethod
    def create(cls, input_dim, output_dim, hidden=(32, 32), rng=None) -> "MlpFeatureMap":
        """Fresh map with uniform(+-1/sqrt(fan_in)) weights, zero biases."""
        if rng is None:
            rng = np.random.default_rng(0)
        sizes = [input_dim, *hidden, output_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def layer_sizes(self):
        return [self.input_dim] + [W.shape[0] for W in self.weights]

    # -- forward / parameter plumbing ------------------------------------

    def _activations(self, states):
        """All layer activations, input first, output (pre-identity) last."""
        h = np.atleast_2d(np.asarray(states, dtype=float))
        acts = [h]
        n_layers = len(self.weights)
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W.T + b
            h = z if l == n_layers - 1 else np.tanh(z)
            acts.append(h)
        return acts

    def forward(self, states) -> np.ndarray:
        return self._activations(states)[-1]

    def params_vector(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def with_params(self, vec) -> "MlpFeatureMap":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ValueError("parameter vector has wrong length")
        weights, biases = [], []
        k = 0
        for W, b in zip(self.weights, self.biases):
            weights.append(vec[k:k + W.size].reshape(W.shape))
            k += W.size
            biases.append(vec[k:k + b.size].copy())
            k += b.size
        return MlpFeatureMap(weights, biases)

    # -- derivatives ------------------------------------------------------

    def _split(self, vec):
        out = []
        k = 0
        for W, b in zip(self.weights, self.biases):
            dW = vec[k:k + W.size].reshape(W.shape)
            k += W.size
            db = vec[k:k + b.size]
            k += b.size
            out.append((dW, db))
        return out

    def jvp(self, states, v) -> np.ndarray:
        """Directional derivative of forward(states) along parameter tangent v.

        Returns a (batch, output_dim) array.
        """
        v = np.asarray(v, dtype=float)
        acts = self._activations(states)
        tangents = self._split(v)
        n_layers = len(self.weights)
        dh = np.zeros_like(acts[0])
        for l, (W, _b) in enumerate(zip(self.weights, self.biases)):
            dW, db = tangents[l]
            dz = dh @ W.T + acts[l] @ dW.T + db
            if l == n_layers - 1:
                dh = dz
            else:
                h = acts[l + 1]
                dh = (1.0 - h * h) * dz
        return dh

    def vjp_sum(self, states, upstream) -> np.ndarray:
        """sum_i J(s_i)^T u_i for upstream rows u_i, one backward pass."""
        upstream = np.atleast_2d(np.asarray(upstream, dtype=float))
        acts = self._activations(states)
        n_layers = len(self.weights)
        grads = [None] * n_layers
        delta = upstream
        for l in range(n_layers - 1, -1, -1):
            # delta is d/dz_l; output layer is linear so no mask there
            gW = delta.T @ acts[l]
            gb = delta.sum(axis=0)
            grads[l] = (gW, gb)
            if l > 0:
                h = acts[l]
                delta = (delta @ self.weights[l]) * (1.0 - h * h)
        parts = []
        for gW, gb in grads:
            parts.append(gW.ravel())
            parts.append(gb.ravel())
        return np.concatenate(parts)
