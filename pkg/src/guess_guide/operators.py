"""Forward measurement operators, the Gaussian data term, and synthetic observations.

Operators act on the last axis of their input, so a batch of signals
``(B, d)`` maps to ``(B, m)``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "DenseLinear",
    "Mask",
    "CircularBlur",
    "Decimate",
    "ClipScale",
    "Chain",
    "ForwardTask",
    "apply",
    "adjoint",
    "grad_data_term",
    "data_term",
    "synthesize_observation",
]


class ForwardOperator:
    """Base class. Subclasses define ``in_dim``, ``out_dim``, ``apply`` and ``vjp``."""

    is_linear = True

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"{type(self).__name__} expects dimension {self.in_dim}, got {x.shape[-1]}")
        return x

    def adjoint(self, u):
        if not self.is_linear:
            raise TypeError(f"{type(self).__name__} is nonlinear and has no adjoint")
        return self.vjp(None, u)

    @cached_property
    def matrix(self):
        """Dense ``m x d`` matrix of a linear operator."""
        if not self.is_linear:
            raise TypeError(f"{type(self).__name__} is nonlinear")
        return self.apply(np.eye(self.in_dim)).T

    def lipschitz(self):
        """Upper bound on the operator (or Jacobian) norm."""
        return float(np.linalg.norm(self.matrix, 2))

    def __call__(self, x):
        return self.apply(x)


@dataclass(frozen=True, eq=False)
class DenseLinear(ForwardOperator):
    A: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        object.__setattr__(self, "A", A)

    @property
    def in_dim(self):
        return self.A.shape[1]

    @property
    def out_dim(self):
        return self.A.shape[0]

    def apply(self, x):
        return self._check(x) @ self.A.T

    def vjp(self, x, u):
        return np.asarray(u, dtype=float) @ self.A

    @cached_property
    def matrix(self):
        return self.A


@dataclass(frozen=True, eq=False)
class Mask(ForwardOperator):
    """Keeps the coordinates in ``indices``; the output has ``len(indices)`` entries."""

    indices: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= self.dim):
            raise ValueError("mask indices out of range")
        if np.unique(idx).size != idx.size:
            raise ValueError("mask indices must be distinct")
        object.__setattr__(self, "indices", idx)

    @property
    def in_dim(self):
        return self.dim

    @property
    def out_dim(self):
        return self.indices.size

    def apply(self, x):
        return self._check(x)[..., self.indices]

    def vjp(self, x, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape[:-1] + (self.dim,))
        out[..., self.indices] = u
        return out

    def lipschitz(self):
        return 1.0


@dataclass(frozen=True, eq=False)
class CircularBlur(ForwardOperator):
    """Circular convolution with a centred kernel on a signal of ``shape``.

    A 1D kernel on a 2D shape is applied separably along both axes.
    """

    kernel: np.ndarray
    shape: tuple

    def __post_init__(self):
        shape = (int(self.shape),) if np.isscalar(self.shape) else tuple(int(n) for n in self.shape)
        k = np.asarray(self.kernel, dtype=float)
        if k.ndim == 1 and len(shape) == 2:
            k = np.outer(k, k)
        if k.ndim != len(shape) or any(a > b for a, b in zip(k.shape, shape)):
            raise ValueError(f"kernel of shape {k.shape} does not fit signal shape {shape}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "kernel", k)

    @cached_property
    def _transfer(self):
        padded = np.zeros(self.shape)
        padded[tuple(slice(0, n) for n in self.kernel.shape)] = self.kernel
        centre = tuple(-(n // 2) for n in self.kernel.shape)
        padded = np.roll(padded, centre, axis=tuple(range(len(self.shape))))
        return np.fft.fftn(padded)

    @property
    def in_dim(self):
        return int(np.prod(self.shape))

    @property
    def out_dim(self):
        return self.in_dim

    def _filter(self, x, H):
        axes = tuple(range(-len(self.shape), 0))
        img = x.reshape(x.shape[:-1] + self.shape)
        out = np.fft.ifftn(np.fft.fftn(img, axes=axes) * H, axes=axes).real
        return out.reshape(x.shape)

    def apply(self, x):
        return self._filter(self._check(x), self._transfer)

    def vjp(self, x, u):
        return self._filter(np.asarray(u, dtype=float), np.conj(self._transfer))

    def lipschitz(self):
        return float(np.max(np.abs(self._transfer)))


@dataclass(frozen=True, eq=False)
class Decimate(ForwardOperator):
    """Pure subsampling: keeps every ``factor``-th sample along each axis of ``shape``."""

    factor: int
    shape: tuple

    def __post_init__(self):
        shape = (int(self.shape),) if np.isscalar(self.shape) else tuple(int(n) for n in self.shape)
        if int(self.factor) != self.factor or self.factor < 1:
            raise ValueError(f"decimation factor must be a positive integer, got {self.factor}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "factor", int(self.factor))

    @property
    def _slices(self):
        return tuple(slice(None, None, self.factor) for _ in self.shape)

    @property
    def in_dim(self):
        return int(np.prod(self.shape))

    @property
    def out_dim(self):
        return int(np.prod([len(range(0, n, self.factor)) for n in self.shape]))

    def apply(self, x):
        x = self._check(x)
        img = x.reshape(x.shape[:-1] + self.shape)
        return img[(Ellipsis,) + self._slices].reshape(x.shape[:-1] + (self.out_dim,))

    def vjp(self, x, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape[:-1] + self.shape)
        sub = tuple(len(range(0, n, self.factor)) for n in self.shape)
        out[(Ellipsis,) + self._slices] = u.reshape(u.shape[:-1] + sub)
        return out.reshape(u.shape[:-1] + (self.in_dim,))

    def lipschitz(self):
        return 1.0


@dataclass(frozen=True, eq=False)
class ClipScale(ForwardOperator):
    """``clamp(c * x, lo, hi)`` elementwise; a toy stand-in for HDR-style saturation."""

    c: float
    lo: float
    hi: float
    dim: int

    is_linear = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got lo={self.lo}, hi={self.hi}")

    @property
    def in_dim(self):
        return self.dim

    @property
    def out_dim(self):
        return self.dim

    def apply(self, x):
        return np.clip(self.c * self._check(x), self.lo, self.hi)

    def vjp(self, x, u):
        cx = self.c * np.asarray(x, dtype=float)
        # subgradient 0 on the plateau and at the exact boundary
        inside = (cx > self.lo) & (cx < self.hi)
        return self.c * inside * np.asarray(u, dtype=float)

    def lipschitz(self):
        return abs(float(self.c))


@dataclass(frozen=True, eq=False)
class Chain(ForwardOperator):
    """Sequential composition; ``parts[0]`` is applied first."""

    parts: tuple

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise ValueError("a chain needs at least one operator")
        for a, b in zip(parts, parts[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"cannot chain {type(a).__name__} ({a.out_dim}) into {type(b).__name__} ({b.in_dim})")
        object.__setattr__(self, "parts", parts)

    @property
    def is_linear(self):
        return all(p.is_linear for p in self.parts)

    @property
    def in_dim(self):
        return self.parts[0].in_dim

    @property
    def out_dim(self):
        return self.parts[-1].out_dim

    def apply(self, x):
        for p in self.parts:
            x = p.apply(x)
        return x

    def vjp(self, x, u):
        inputs = []
        for p in self.parts:
            inputs.append(x)
            if x is not None:
                x = p.apply(x)
        for p, xin in zip(reversed(self.parts), reversed(inputs)):
            u = p.vjp(xin, u)
        return u

    def lipschitz(self):
        return float(np.prod([p.lipschitz() for p in self.parts]))


def apply(op, x):
    return op.apply(x)


def adjoint(op, u):
    return op.adjoint(u)


def data_term(op, x, y, sigma_y):
    """``||y - A(x)||^2 / (2 sigma_y^2)`` over the last axis."""
    r = op.apply(x) - y
    return 0.5 * np.sum(r * r, axis=-1) / sigma_y**2


def grad_data_term(op, x, y, sigma_y):
    """Gradient of ``||y - A(x)||^2 / (2 sigma_y^2)``, i.e. ``J^T (A(x) - y) / sigma_y^2``."""
    x = np.asarray(x, dtype=float)
    return op.vjp(x, op.apply(x) - y) / sigma_y**2


@dataclass(frozen=True, eq=False)
class ForwardTask:
    """An observation ``y = A(x_true) + sigma_y W``."""

    operator: ForwardOperator
    sigma_y: float
    y: np.ndarray
    x_true: np.ndarray = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if not self.sigma_y > 0:
            raise ValueError(f"sigma_y must be positive, got {self.sigma_y}")
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if y.shape[-1] != self.operator.out_dim:
            raise ValueError(f"observation has dimension {y.shape[-1]}, operator outputs {self.operator.out_dim}")
        object.__setattr__(self, "y", y)
        if self.x_true is not None:
            object.__setattr__(self, "x_true", np.asarray(self.x_true, dtype=float))


def synthesize_observation(op, x_true, sigma_y, rng):
    """Draw ``y = A(x_true) + sigma_y w`` with ``w ~ N(0, I_m)`` from ``rng``."""
    if not sigma_y > 0:
        raise ValueError(f"sigma_y must be positive, got {sigma_y}")
    x_true = np.asarray(x_true, dtype=float)
    clean = op.apply(x_true)
    y = clean + sigma_y * rng.standard_normal(clean.shape)
    return ForwardTask(op, sigma_y, y, x_true)
