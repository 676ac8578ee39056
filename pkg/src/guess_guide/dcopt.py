"""Data-consistency solvers for the pixel-space objective

    F(x) = ||y - A(x)||^2 / (2 sigma_y^2) + (lam / 2) ||x - anchor||^2,

by fixed-step gradient descent or, for linear operators, in closed form.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DegenerateScheduleError, DivergenceError, UnsupportedSolverError

__all__ = ["OptimizeSpec", "optimize", "prox_data", "lambda_at", "objective"]

SOLVERS = ("gradient_descent", "closed_form")
LAMBDA_MODES = ("constant", "snr_scaled")


@dataclass(frozen=True)
class OptimizeSpec:
    """Settings for one phase's data-consistency step.

    With ``lambda_mode="snr_scaled"`` the weight at a schedule point is
    ``lam * (alpha / sigma)^2``. ``absorb_sigma_y=False`` switches to the
    unweighted objective ``||y - A(x)||^2 + lam ||x - anchor||^2``.
    """

    iterations: int = 50
    learning_rate: float = 1e-3
    lam: float = 0.0
    lambda_mode: str = "constant"
    solver: str = "gradient_descent"
    momentum: float = 0.0
    absorb_sigma_y: bool = True

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ValueError(f"iterations must be a nonnegative integer, got {self.iterations}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.lambda_mode not in LAMBDA_MODES:
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")


def lambda_at(schedule_point, mode="constant", lam=0.0):
    """Anchor weight at ``(alpha, sigma)``: ``lam`` or ``lam * (alpha / sigma)^2``."""
    if mode == "constant":
        return float(lam)
    if mode == "snr_scaled":
        alpha, sigma = schedule_point
        if sigma <= 0:
            raise DegenerateScheduleError("SNR-scaled lambda is undefined at sigma = 0")
        return float(lam) * (alpha / sigma) ** 2
    raise ValueError(f"unknown lambda_mode {mode!r}")


def _weights(task, spec):
    # (data weight, anchor weight) so that grad F = wd J^T(Ax - y) + wa (x - anchor)
    if spec.absorb_sigma_y:
        return 1.0 / task.sigma_y**2, spec.lam
    return 2.0, 2.0 * spec.lam


def objective(task, x, anchor, spec):
    wd, wa = _weights(task, spec)
    r = task.operator.apply(x) - task.y
    val = 0.5 * wd * np.sum(r * r, axis=-1)
    if spec.lam > 0:
        val = val + 0.5 * wa * np.sum((x - anchor) ** 2, axis=-1)
    return val


def _closed_form(task, anchor, init, spec):
    op = task.operator
    if not op.is_linear:
        raise UnsupportedSolverError(f"closed-form solve needs a linear operator, got {type(op).__name__}")
    wd, wa = _weights(task, spec)
    A = op.matrix
    if wa > 0:
        key = ("chol", wd, wa)
        if key not in task._cache:
            H = wd * A.T @ A + wa * np.eye(A.shape[1])
            task._cache[key] = cho_factor(H)
        rhs = wd * (task.y @ A) + wa * anchor
        return cho_solve(task._cache[key], rhs.T).T
    # lam = 0: the limit of gradient descent from init, init + A^+ (y - A init)
    if "pinv" not in task._cache:
        task._cache["pinv"] = np.linalg.pinv(A)
    return init + (task.y - init @ A.T) @ task._cache["pinv"].T


def optimize(task, anchor, init, spec):
    """Minimise the data-consistency objective starting from ``init``.

    ``anchor`` is ignored when ``spec.lam == 0``. Gradient descent runs
    exactly ``spec.iterations`` fixed steps.

    Raises
    ------
    UnsupportedSolverError
        Closed form requested for a nonlinear operator.
    DivergenceError
        Non-finite iterates, or the objective exceeding 10x its initial value.
    """
    init = np.asarray(init, dtype=float)
    anchor = init if anchor is None else np.asarray(anchor, dtype=float)
    if spec.solver == "closed_form":
        return _closed_form(task, anchor, init, spec)

    op, y = task.operator, task.y
    wd, wa = _weights(task, spec)
    lr, beta = spec.learning_rate, spec.momentum
    x = init.copy()
    velocity = np.zeros_like(x)
    # absolute floor keeps round-off near an exact solution from tripping the guard
    limit = 10.0 * objective(task, x, anchor, spec) + 1e-10
    for it in range(spec.iterations):
        grad = wd * op.vjp(x, op.apply(x) - y)
        if wa > 0:
            grad = grad + wa * (x - anchor)
        velocity = beta * velocity - lr * grad
        x = x + velocity
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite iterate at iteration {it}", iteration=it)
        if np.any(objective(task, x, anchor, spec) > limit):
            raise DivergenceError(f"objective grew above 10x its initial value at iteration {it}", iteration=it)
    return x


def prox_data(task, v, lambda_t, iterations=2000, learning_rate=None):
    """``argmin_x f(x) + (lambda_t / 2) ||x - v||^2`` with ``f = ||y - A(x)||^2 / (2 sigma_y^2)``.

    Linear operators are solved exactly; nonlinear ones by gradient descent
    from ``v`` with step ``1 / L`` unless ``learning_rate`` is given.
    """
    if not lambda_t > 0:
        raise ValueError(f"lambda_t must be positive, got {lambda_t}")
    op = task.operator
    if op.is_linear:
        spec = OptimizeSpec(iterations=0, lam=lambda_t, solver="closed_form")
    else:
        if learning_rate is None:
            learning_rate = 1.0 / (op.lipschitz() ** 2 / task.sigma_y**2 + lambda_t)
        spec = OptimizeSpec(iterations=iterations, learning_rate=learning_rate, lam=lambda_t)
    return optimize(task, v, v, spec)


def with_lambda(spec, lam):
    """Copy of ``spec`` with a resolved constant anchor weight."""
    return replace(spec, lam=float(lam), lambda_mode="constant")
