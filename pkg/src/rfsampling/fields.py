"""Velocity fields ``v(x, tau, c)`` with analytic ground truth.

Time runs from ``tau=0`` (standard normal prior) to ``tau=1`` (data) along
the straight path ``x_tau = (1-tau) z + tau y``.

Any object with ``state_dim``, ``cond_dim`` and ``velocity(x, tau, c)`` can
be handed to the samplers. ``cond_jvp`` is optional; :func:`cond_jvp`
falls back to a central difference in the embedding.
"""

from __future__ import annotations

import numpy as np

from . import _backend
from .numerics import DimensionError, as_mat, as_vec

EMBED_MAPS = ("onehot", "softmax")


def check_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau={tau} outside [0, 1]")
    return tau


def _check_dim(v, n, what):
    if v.shape != (n,):
        raise DimensionError(f"{what} must have shape ({n},), got {v.shape}")


def cond_jvp(field, x, tau, c, u, h=1e-4):
    """Directional derivative of the velocity along ``u`` in embedding space."""
    if hasattr(field, "cond_jvp"):
        return field.cond_jvp(x, tau, c, u)
    c, u = np.asarray(c, float), np.asarray(u, float)
    return (field.velocity(x, tau, c + h * u) - field.velocity(x, tau, c - h * u)) / (2 * h)


def _softmax(z):
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


class GaussianMixtureField:
    """Exact marginal flow-matching velocity for an isotropic Gaussian mixture.

    Class ``k`` has mean ``means[k]``, variance ``variances[k]`` per
    coordinate and prior weight ``priors[k]``. Embeddings live in
    ``cond_dim = K + 1`` coordinates: slot ``k`` keys class ``k`` and the last
    slot is a designated null token that no class key reads, so the null
    token and the zero vector both select the unconditional field.

    ``embed_map="onehot"`` combines the class fields linearly in ``c``::

        v(x, tau, c) = v_null + sum_k <c, key_k> (v_k - v_null)

    which is exact classifier-free guidance along class directions and
    reproduces ``v_k`` at ``c = e_k``. ``embed_map="softmax"`` instead
    reweights the mixture by ``priors * exp(kappa <c, key_k>)``, which is
    smooth but nonlinear in ``c``.

    Both are Lipschitz in ``x`` on ``tau`` intervals bounded away from the
    degenerate endpoint; the per-class Jacobian is ``(b var_k - a) / V_k``.
    """

    def __init__(self, means, variances, priors=None, embed_map="onehot", kappa=1.0, keys=None):
        self.means = np.ascontiguousarray(as_mat(means, "means"))
        K, d = self.means.shape
        self.variances = np.ascontiguousarray(as_vec(variances, "variances"))
        _check_dim(self.variances, K, "variances")
        if np.any(self.variances <= 0):
            raise ValueError("class variances must be positive")
        if priors is None:
            priors = np.full(K, 1.0 / K)
        self.priors = as_vec(priors, "priors")
        _check_dim(self.priors, K, "priors")
        if np.any(self.priors <= 0) or abs(self.priors.sum() - 1.0) > 1e-12:
            raise ValueError("priors must be positive and sum to 1")
        if embed_map not in EMBED_MAPS:
            raise ValueError(f"embed_map must be one of {EMBED_MAPS}, got {embed_map!r}")
        self.embed_map = embed_map
        self.kappa = float(kappa)
        if keys is None:
            keys = np.eye(K, K + 1)
        self.keys = as_mat(keys, "keys")
        if self.keys.shape[0] != K:
            raise DimensionError("need one key row per class")
        self.log_priors = np.ascontiguousarray(np.log(self.priors))
        self.state_dim = d
        self.cond_dim = self.keys.shape[1]
        self.n_classes = K
        # scaling c is exact CFG only for the linear map
        self.accepts_guidance_scale = embed_map == "onehot"

    def __repr__(self):
        return (f"GaussianMixtureField(K={self.n_classes}, d={self.state_dim}, "
                f"embed_map={self.embed_map!r})")

    def class_embedding(self, k: int) -> np.ndarray:
        return self.keys[k].copy()

    def null_embedding(self) -> np.ndarray:
        e = np.zeros(self.cond_dim)
        e[-1] = 1.0
        return e

    def _x(self, x, tau):
        x = as_vec(x)
        if x.shape != (self.state_dim,):
            _check_dim(x, self.state_dim, "x")
        tau = check_tau(tau)
        return x, tau, 1.0 - tau

    def _terms(self, x, tau):
        x, b, a = self._x(x, tau)
        return _backend.kernels.gm_class_terms(x, b, a, self.means, self.variances)

    def _c(self, c):
        c = as_vec(c, "c")
        if c.shape != (self.cond_dim,):
            _check_dim(c, self.cond_dim, "embedding")
        return c

    def _class(self, k):
        if not 0 <= k < self.n_classes:
            raise ValueError(f"class id {k} out of range")
        return int(k)

    def mixture_weights(self, c) -> np.ndarray:
        """Class weights defining the data distribution that ``c`` selects.

        Defined for the softmax map everywhere and for the linear map only
        when ``<c, key_k>`` lies on the simplex or is all zero.
        """
        c = self._c(c)
        z = self.keys @ c
        if self.embed_map == "softmax":
            return _softmax(self.log_priors + self.kappa * z)
        if np.allclose(z, 0.0):
            return self.priors.copy()
        if np.all(z >= 0) and abs(z.sum() - 1.0) < 1e-12:
            return z
        raise ValueError("linear map only defines mixture weights on the simplex")

    def velocity(self, x, tau, c) -> np.ndarray:
        c = self._c(c)
        x, b, a = self._x(x, tau)
        soft = self.embed_map == "softmax"
        z = self.keys @ c
        if soft:
            z *= self.kappa
        return _backend.kernels.gm_velocity(x, b, a, self.means, self.variances,
                                            self.log_priors, z, soft)

    def cond_jvp(self, x, tau, c, u):
        c, u = self._c(c), self._c(u)
        logn, vel, _ = self._terms(x, tau)
        if self.embed_map == "softmax":
            r = _softmax(self.log_priors + self.kappa * (self.keys @ c) + logn)
            dz = self.kappa * (self.keys @ u)
            dr = r * (dz - r @ dz)
            return dr @ vel
        p = _softmax(self.log_priors + logn)
        return (self.keys @ u) @ (vel - p @ vel)

    def class_velocity(self, x, tau, k: int) -> np.ndarray:
        _, vel, _ = self._terms(x, tau)
        return vel[self._class(k)].copy()

    def log_posterior(self, x, tau, k: int) -> float:
        """Alignment score ``log p(class k | x_tau)`` under the true priors."""
        k = self._class(k)
        x, b, a = self._x(x, tau)
        return _backend.kernels.gm_posterior(x, b, a, self.means, self.variances, self.log_priors, k)[0]

    def posterior_score(self, x, tau, k: int) -> np.ndarray:
        """Gradient in ``x`` of :meth:`log_posterior`."""
        k = self._class(k)
        x, b, a = self._x(x, tau)
        return _backend.kernels.gm_posterior(x, b, a, self.means, self.variances, self.log_priors, k)[1]

    def sample_data(self, rng, n: int, weights=None):
        """Draw ``n`` data points and their class ids."""
        w = self.priors if weights is None else np.asarray(weights, float)
        cdf = np.cumsum(w)
        cdf[-1] = 1.0
        cls = np.searchsorted(cdf, rng.uniform(n), side="right")
        noise = rng.normal(n * self.state_dim).reshape(n, self.state_dim)
        y = self.means[cls] + np.sqrt(self.variances[cls])[:, None] * noise
        return y, cls


class LinearEmbeddingField:
    """``v(x, tau, c) = g(tau) * (A x + b + B c)``, exactly linear in ``c``.

    Lipschitz in ``x`` with constant ``max|g| * ||A||_2``. With ``A = 0`` the
    Euler round trip is exact for any gain, so the reflective displacement
    equals its first-order term to rounding.
    """

    def __init__(self, base_matrix, base_bias, cond_matrix, time_gain=None):
        self.base_matrix = as_mat(base_matrix, "base_matrix")
        d = self.base_matrix.shape[0]
        if self.base_matrix.shape != (d, d):
            raise DimensionError("base_matrix must be square")
        self.base_bias = as_vec(base_bias, "base_bias")
        _check_dim(self.base_bias, d, "base_bias")
        self.cond_matrix = as_mat(cond_matrix, "cond_matrix")
        if self.cond_matrix.shape[0] != d:
            raise DimensionError("cond_matrix must have state_dim rows")
        self.time_gain = time_gain if time_gain is not None else (lambda tau: 1.0)
        self.state_dim = d
        self.cond_dim = self.cond_matrix.shape[1]
        self.accepts_guidance_scale = False

    @classmethod
    def constant(cls, v, cond_dim=1):
        v = as_vec(v, "v")
        d = v.size
        return cls(np.zeros((d, d)), v, np.zeros((d, cond_dim)))

    def __repr__(self):
        return f"LinearEmbeddingField(d={self.state_dim}, m={self.cond_dim})"

    def velocity(self, x, tau, c) -> np.ndarray:
        x, c = as_vec(x), as_vec(c, "c")
        _check_dim(x, self.state_dim, "x")
        _check_dim(c, self.cond_dim, "embedding")
        g = self.time_gain(check_tau(tau))
        return g * (self.base_matrix @ x + self.base_bias + self.cond_matrix @ c)

    def cond_jvp(self, x, tau, c, u):
        return self.time_gain(check_tau(tau)) * (self.cond_matrix @ as_vec(u, "u"))

    def x_jacobian(self, tau) -> np.ndarray:
        return self.time_gain(check_tau(tau)) * self.base_matrix

    @property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.base_matrix, 2))
