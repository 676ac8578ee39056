"""Noise schedules and weight-based allocation of guidance timesteps."""

from dataclasses import dataclass, field
from fractions import Fraction
import math

import numpy as np
from scipy import stats

from .errors import AllocationError

__all__ = [
    "NoiseSchedule",
    "WeightStrategy",
    "TimestepGrid",
    "eval_schedule",
    "schedule_weights",
    "allocate_grid",
    "build_grid",
    "STRATEGIES",
]

NOISE_KINDS = ("linear", "trig_vp")
STRATEGIES = ("uniform", "linear", "polynomial", "exponential", "gaussian", "beta")


@dataclass(frozen=True)
class NoiseSchedule:
    """Interpolation coefficients ``x_t = alpha_t x_0 + sigma_t x_1`` on an integer grid.

    ``kind`` is ``"linear"`` (alpha = 1 - t, sigma = t) or ``"trig_vp"``
    (alpha = cos(pi t / 2), sigma = sin(pi t / 2)). Continuous time is
    ``t = index / T_max``.
    """

    kind: str = "trig_vp"
    T_max: int = 1000

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise schedule kind {self.kind!r}")
        if int(self.T_max) != self.T_max or self.T_max < 1:
            raise ValueError(f"T_max must be a positive integer, got {self.T_max}")

    def __call__(self, t_index):
        return eval_schedule(self, t_index)

    def index_of(self, t):
        """Grid index closest to continuous time ``t`` in [0, 1]."""
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"continuous time must lie in [0, 1], got {t}")
        return int(round(t * self.T_max))


def eval_schedule(s, t_index):
    """Return ``(alpha, sigma)`` at integer grid index ``t_index``."""
    if int(t_index) != t_index:
        raise TypeError(f"t_index must be an integer, got {t_index!r}")
    t_index = int(t_index)
    if not 0 <= t_index <= s.T_max:
        raise IndexError(f"t_index {t_index} outside [0, {s.T_max}]")
    # exact boundary values; cos(pi/2) is not exactly 0 in floating point
    if t_index == 0:
        return 1.0, 0.0
    if t_index == s.T_max:
        return 0.0, 1.0
    t = t_index / s.T_max
    if s.kind == "linear":
        return 1.0 - t, t
    return math.cos(0.5 * math.pi * t), math.sin(0.5 * math.pi * t)


@dataclass(frozen=True)
class WeightStrategy:
    """A weight function over guidance positions ``i = 1..M``.

    Parameters are only read for the strategy that uses them: ``p``
    (polynomial), ``k`` (exponential), ``mu``/``sigma`` (gaussian) and
    ``a``/``b`` (beta shapes).
    """

    kind: str = "gaussian"
    p: float = 2.0
    k: float = 1.5
    mu: float = 0.4
    sigma: float = 10.0
    a: float = 2.0
    b: float = 2.0

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if self.kind == "polynomial" and not self.p > 1:
            raise ValueError(f"polynomial power p must exceed 1, got {self.p}")
        if self.kind == "exponential" and not self.k > 1:
            raise ValueError(f"exponential base k must exceed 1, got {self.k}")
        if self.kind == "gaussian":
            if not 0.0 <= self.mu <= 1.0:
                raise ValueError(f"gaussian centre mu must lie in [0, 1], got {self.mu}")
            if not self.sigma > 0:
                raise ValueError(f"gaussian width sigma must be positive, got {self.sigma}")
        if self.kind == "beta" and not (self.a > 0 and self.b > 0):
            raise ValueError(f"beta shapes must be positive, got a={self.a}, b={self.b}")

    def params(self):
        """The parameters relevant to this strategy, for reports."""
        relevant = {
            "uniform": (),
            "linear": (),
            "polynomial": ("p",),
            "exponential": ("k",),
            "gaussian": ("mu", "sigma"),
            "beta": ("a", "b"),
        }[self.kind]
        return {name: getattr(self, name) for name in relevant}


def schedule_weights(strategy, M):
    """Positive weights ``w_1..w_M`` for ``strategy``.

    The beta density is evaluated at the midpoints ``(i - 1/2) / M`` so that
    shapes below one never hit the singular endpoints.
    """
    if M < 1:
        raise ValueError(f"M must be at least 1, got {M}")
    i = np.arange(1, M + 1, dtype=float)
    kind = strategy.kind
    if kind == "uniform":
        w = np.ones(M)
    elif kind == "linear":
        w = i + 1.0
    elif kind == "polynomial":
        w = (i + 1.0) ** strategy.p
    elif kind == "exponential":
        w = strategy.k ** i
    elif kind == "gaussian":
        w = np.exp(-((i / M - strategy.mu) ** 2) / (2.0 * strategy.sigma ** 2))
    else:
        w = 1.0 / stats.beta.pdf((i - 0.5) / M, strategy.a, strategy.b)
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError(f"{kind} weights are not finite and positive for M={M}")
    return w


@dataclass(frozen=True)
class TimestepGrid:
    """Guidance timesteps ``t_1 < ... < t_M = T_start`` and their decrements.

    ``steps[k - 1]`` holds ``t_k``; ``deltas[k - 1]`` holds ``Delta_k``.
    """

    steps: tuple
    deltas: tuple = field(repr=False)

    @property
    def M(self):
        return len(self.steps)

    @property
    def t_start(self):
        return self.steps[-1]


def cumulative_decrements(weights, T_start):
    """Integer decrements ``Delta_i = C_i - C_{i-1}`` with
    ``C_i = floor((T_start - 1) * sum_{j<=i} w_j / sum_j w_j)``.

    Computed in exact rational arithmetic on the given float weights so the
    floor never lands on the wrong side of an integer.
    """
    w = [Fraction(float(x)) for x in weights]
    if any(x <= 0 for x in w):
        raise ValueError("weights must be positive")
    total = sum(w)
    C = [0]
    running = Fraction(0)
    for x in w:
        running += x
        C.append(math.floor((T_start - 1) * running / total))
    return [C[i] - C[i - 1] for i in range(1, len(C))]


def allocate_grid(weights, T_start):
    """Allocate ``M = len(weights)`` guidance timesteps ending at ``T_start``.

    Raises
    ------
    AllocationError
        If ``T_start < M + 1`` or flooring produces two equal consecutive
        timesteps. ``err.index`` is the (1-based) position ``k`` with
        ``t_k == t_{k+1}``.
    """
    M = len(weights)
    if M < 1:
        raise AllocationError("at least one weight is required")
    T_start = int(T_start)
    if T_start < M + 1:
        raise AllocationError(f"T_start={T_start} is too small for M={M} (need T_start >= M + 1)")
    deltas = cumulative_decrements(weights, T_start)
    # t_k = T_start - sum_{j>k} Delta_j
    tail = np.concatenate([np.cumsum(deltas[::-1])[::-1][1:], [0]])
    steps = [T_start - int(s) for s in tail]
    for k in range(1, M):
        if deltas[k] == 0:
            raise AllocationError(
                f"t_{k} == t_{k + 1} == {steps[k]}: weight {k + 1} receives no timesteps", index=k
            )
    return TimestepGrid(steps=tuple(steps), deltas=tuple(int(d) for d in deltas))


def build_grid(strategy, M, T_start):
    return allocate_grid(schedule_weights(strategy, M), T_start)
