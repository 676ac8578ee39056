"""Analytic diffusion priors with exact denoisers, and linear codecs.

All vector arguments may carry leading batch axes; the last axis is the
signal dimension ``d``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateScheduleError

__all__ = [
    "GaussianPrior",
    "GmmPrior",
    "LinearCodec",
    "denoise",
    "noise_prediction",
    "denoiser_jvp",
    "score",
    "encode",
    "decode",
    "toeplitz_covariance",
]


def _check_point(alpha, sigma):
    if sigma < 0 or alpha < 0:
        raise DegenerateScheduleError(f"schedule point must be nonnegative, got ({alpha}, {sigma})")
    if sigma == 0 and alpha == 0:
        raise DegenerateScheduleError("alpha and sigma are both zero")


def toeplitz_covariance(shape, rho, scale=1.0):
    """Covariance ``scale * rho^|i - j|`` on a 1D signal, or the separable
    (Kronecker) version ``rho^(|di| + |dj|)`` on a 2D image of ``shape``."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    if not -1 < rho < 1:
        raise ValueError(f"rho must lie in (-1, 1), got {rho}")
    cov = np.ones((1, 1))
    for n in shape:
        idx = np.arange(n)
        cov = np.kron(cov, rho ** np.abs(idx[:, None] - idx[None, :]))
    return scale * cov


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """``N(mean, covariance)``; the denoiser is the conjugate-Gaussian posterior mean."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.covariance, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(mean.size)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ValueError("covariance is not symmetric")
        np.linalg.cholesky(cov)  # raises LinAlgError if not SPD
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def isotropic(cls, mean, variance):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls(mean, variance * np.eye(mean.size))

    @property
    def dim(self):
        return self.mean.size

    @cached_property
    def chol(self):
        return np.linalg.cholesky(self.covariance)

    @cached_property
    def _eig(self):
        # one eigendecomposition serves every schedule point
        evals, evecs = np.linalg.eigh(self.covariance)
        return np.clip(evals, 0.0, None), evecs

    def _spectral(self, x, fn):
        evals, U = self._eig
        return ((x @ U) * fn(evals)) @ U.T

    def denoise(self, alpha, sigma, x):
        _check_point(alpha, sigma)
        x = np.asarray(x, dtype=float)
        r = x - alpha * self.mean
        return self.mean + self._spectral(r, lambda l: alpha * l / (alpha**2 * l + sigma**2))

    def jvp(self, alpha, sigma, x, v):
        _check_point(alpha, sigma)
        return self._spectral(np.asarray(v, dtype=float), lambda l: alpha * l / (alpha**2 * l + sigma**2))

    def score(self, alpha, sigma, x):
        _check_point(alpha, sigma)
        r = np.asarray(x, dtype=float) - alpha * self.mean
        return -self._spectral(r, lambda l: 1.0 / (alpha**2 * l + sigma**2))

    def sample(self, rng, n=None):
        shape = (self.dim,) if n is None else (n, self.dim)
        return self.mean + rng.standard_normal(shape) @ self.chol.T

    def components(self):
        """``(weights, means, covariances)`` view used by the oracle."""
        return np.ones(1), self.mean[None, :], self.covariance[None, :, :]


@dataclass(frozen=True, eq=False)
class GmmPrior:
    """Mixture ``sum_j w_j N(m_j, s_j^2 I)`` of isotropic Gaussians."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        v = np.broadcast_to(np.asarray(self.variances, dtype=float), w.shape).copy()
        if w.ndim != 1 or m.shape[0] != w.size:
            raise ValueError("weights and means disagree on the number of components")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must lie on the simplex, got {w}")
        if np.any(v <= 0):
            raise ValueError("component variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def dim(self):
        return self.means.shape[1]

    def _terms(self, alpha, sigma, x):
        x = np.asarray(x, dtype=float)
        v = alpha**2 * self.variances + sigma**2  # (J,)
        diff = x[..., None, :] - alpha * self.means  # (..., J, d)
        logr = (
            np.log(self.weights, where=self.weights > 0, out=np.full_like(self.weights, -np.inf))
            - 0.5 * self.dim * np.log(2 * np.pi * v)
            - 0.5 * np.sum(diff**2, axis=-1) / v
        )
        r = np.exp(logr - logsumexp(logr, axis=-1, keepdims=True))
        mu = (alpha * self.variances[:, None] * x[..., None, :] + sigma**2 * self.means) / v[:, None]
        return x, v, diff, r, mu

    def responsibilities(self, alpha, sigma, x):
        _check_point(alpha, sigma)
        return self._terms(alpha, sigma, x)[3]

    def denoise(self, alpha, sigma, x):
        _check_point(alpha, sigma)
        _, _, _, r, mu = self._terms(alpha, sigma, x)
        return np.einsum("...j,...jd->...d", r, mu)

    def jvp(self, alpha, sigma, x, v):
        _check_point(alpha, sigma)
        x, var, diff, r, mu = self._terms(alpha, sigma, x)
        v = np.asarray(v, dtype=float)
        # d log r_j / dx = g_j - sum_l r_l g_l with g_j = -(x - alpha m_j) / var_j
        g_dot_v = -np.einsum("...jd,...d->...j", diff, v) / var
        dlogr = g_dot_v - np.sum(r * g_dot_v, axis=-1, keepdims=True)
        gain = np.sum(r * alpha * self.variances / var, axis=-1)
        return gain[..., None] * v + np.einsum("...j,...jd->...d", r * dlogr, mu)

    def score(self, alpha, sigma, x):
        _check_point(alpha, sigma)
        _, var, diff, r, _ = self._terms(alpha, sigma, x)
        return -np.einsum("...j,...jd->...d", r / var, diff)

    def sample(self, rng, n=None):
        count = 1 if n is None else n
        j = rng.choice(self.weights.size, size=count, p=self.weights)
        out = self.means[j] + np.sqrt(self.variances[j])[:, None] * rng.standard_normal((count, self.dim))
        return out[0] if n is None else out

    def components(self):
        eye = np.eye(self.dim)
        return self.weights, self.means, self.variances[:, None, None] * eye


def denoise(prior, schedule_point, x):
    """Exact ``E[X_0 | X_t = x]`` for ``X_t = alpha X_0 + sigma X_1``."""
    alpha, sigma = schedule_point
    return prior.denoise(alpha, sigma, x)


def noise_prediction(prior, schedule_point, x):
    """``(x - alpha D(x)) / sigma``."""
    alpha, sigma = schedule_point
    if sigma <= 0:
        raise DegenerateScheduleError("noise prediction needs sigma > 0")
    x = np.asarray(x, dtype=float)
    return (x - alpha * prior.denoise(alpha, sigma, x)) / sigma


def denoiser_jvp(prior, schedule_point, x, v):
    """Jacobian-vector product of the denoiser. The Jacobian is symmetric for
    these priors, so this doubles as the vector-Jacobian product."""
    alpha, sigma = schedule_point
    return prior.jvp(alpha, sigma, x, v)


def score(prior, schedule_point, x):
    """Marginal score ``grad log p_t(x)`` of the noised prior."""
    alpha, sigma = schedule_point
    return prior.score(alpha, sigma, x)


@dataclass(frozen=True, eq=False)
class LinearCodec:
    """Orthogonal encoder ``z = E x`` with decoder ``x = E^T z``; ``matrix=None`` is the identity."""

    matrix: np.ndarray = field(default=None)
    dim: int = None

    def __post_init__(self):
        if self.matrix is None:
            return
        E = np.asarray(self.matrix, dtype=float)
        if E.ndim != 2 or E.shape[0] != E.shape[1]:
            raise ValueError("codec matrix must be square")
        if not np.allclose(E.T @ E, np.eye(E.shape[0]), rtol=0, atol=1e-10):
            raise ValueError("codec matrix is not orthogonal")
        object.__setattr__(self, "matrix", E)
        object.__setattr__(self, "dim", E.shape[0])

    @classmethod
    def identity(cls, dim=None):
        return cls(None, dim)

    @classmethod
    def random_orthogonal(cls, dim, rng):
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        return cls(q * np.sign(np.diag(r)))

    @property
    def is_identity(self):
        return self.matrix is None

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim is not None and x.shape[-1] != self.dim:
            raise ValueError(f"codec expects dimension {self.dim}, got {x.shape[-1]}")
        return x

    def encode(self, x):
        x = self._check(x)
        return x if self.matrix is None else x @ self.matrix.T

    def decode(self, z):
        z = self._check(z)
        return z if self.matrix is None else z @ self.matrix

    def decode_matrix(self, d):
        return np.eye(d) if self.matrix is None else self.matrix.T


def encode(codec, x):
    return codec.encode(x)


def decode(codec, z):
    return codec.decode(z)
