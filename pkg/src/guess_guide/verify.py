"""Executable checks of the fixed-point theory behind the data-consistency step.

The test maps are affine: a single-Gaussian denoiser and the proximal map
of a linear-Gaussian data term. Their Lipschitz constants follow from
spectra, so every bound checked here is sharp and falsifiable.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dcopt import prox_data
from .errors import InapplicableError
from .operators import DenseLinear, ForwardTask
from .prior import GaussianPrior
from .sampler import phase1_renoise, phase2_renoise

__all__ = [
    "FixedPointSpec",
    "KMResult",
    "CheckResult",
    "km_iterate",
    "fit_geometric_rate",
    "perturbed_recursion",
    "check_inexact_bound",
    "check_unrolled_bound",
    "coupling_cost",
    "gaussian_denoiser_map",
    "identity_prox_map",
    "contraction_factor",
    "run_suite",
    "CHECKS",
]

COUPLING_MODES = ("shared", "independent")


@dataclass(frozen=True)
class FixedPointSpec:
    """Parameters of the relaxed iteration ``x <- (1 - rho) x + rho P(D(x))``.

    ``rho = 1`` gives the plain Picard iteration used for the
    linear-convergence check.
    """

    L_t: float
    lambda_t: float
    rho: float = 0.5
    max_iters: int = 1000
    tolerance: float = 1e-12

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if not self.lambda_t > 0:
            raise ValueError(f"lambda_t must be positive, got {self.lambda_t}")
        if self.L_t < 0:
            raise ValueError(f"L_t must be nonnegative, got {self.L_t}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")
        if self.tolerance < 0:
            raise ValueError(f"tolerance must be nonnegative, got {self.tolerance}")


class KMResult(NamedTuple):
    fixed_point: np.ndarray
    iterates: np.ndarray
    residuals: np.ndarray
    converged: bool


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)

    def line(self):
        vals = " ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} {vals}".rstrip()


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def km_iterate(denoise_map, prox_map, spec, x0):
    """Run the relaxed iteration until a step is at most ``spec.tolerance``.

    ``residuals[k] = ||x^{k+1} - x^k||``. Hitting ``max_iters`` first is
    reported through ``converged=False`` rather than raised.
    """
    x = np.asarray(x0, dtype=float)
    iterates = [x]
    residuals = []
    converged = False
    for _ in range(spec.max_iters):
        x_new = (1.0 - spec.rho) * x + spec.rho * prox_map(denoise_map(x))
        residuals.append(float(np.linalg.norm(x_new - x)))
        iterates.append(x_new)
        x = x_new
        if residuals[-1] <= spec.tolerance:
            converged = True
            break
    return KMResult(x, np.array(iterates), np.array(residuals), converged)


def fit_geometric_rate(residuals):
    """Least-squares rate ``r`` in ``residual_k ~ C r^k`` over the final half.

    Zero residuals (exact convergence) are dropped before fitting.
    """
    res = np.asarray(residuals, dtype=float)
    tail = np.arange(res.size)[res.size // 2:]
    tail = tail[res[tail] > 0]
    if tail.size < 2:
        raise ValueError("need at least two positive residuals in the final half to fit a rate")
    slope = np.polyfit(tail, np.log(res[tail]), 1)[0]
    return float(np.exp(slope))


def _require_contraction(q):
    if not 0 <= q < 1:
        raise InapplicableError(f"contraction factor q = {q} is not in [0, 1); the inexact-update bound does not apply")


def perturbed_recursion(T, x_star, x0, eps, rng, iters):
    """Errors ``||x^k - x*||`` of ``x^{k+1} = T(x^k) + e_k`` with ``||e_k|| = eps``
    in uniformly random directions."""
    x = np.asarray(x0, dtype=float)
    errors = [float(np.linalg.norm(x - x_star))]
    for _ in range(iters):
        e = rng.standard_normal(x.shape)
        x = T(x) + eps * e / np.linalg.norm(e)
        errors.append(float(np.linalg.norm(x - x_star)))
    return np.array(errors)


def check_inexact_bound(q, eps, trajectory_errors, tolerance=1e-6):
    """Whether the final half of ``trajectory_errors`` stays within ``eps / (1 - q) + tolerance``.

    Raises
    ------
    InapplicableError
        If ``q >= 1``.
    """
    _require_contraction(q)
    err = np.asarray(trajectory_errors, dtype=float)
    if err.size == 0:
        raise ValueError("empty error trajectory")
    return bool(np.all(err[err.size // 2:] <= eps / (1.0 - q) + tolerance))


def check_unrolled_bound(q, eps, trajectory_errors, tolerance=1e-12):
    """Whether ``a_k <= q^k a_0 + eps (1 - q^k) / (1 - q)`` holds at every ``k``."""
    _require_contraction(q)
    err = np.asarray(trajectory_errors, dtype=float)
    qk = q ** np.arange(err.size)
    bound = qk * err[0] + eps * (1.0 - qk) / (1.0 - q)
    return bool(np.all(err <= bound + tolerance))


def coupling_cost(mean_a, mean_b, cov_chol, rng, n, mode="shared"):
    """Monte-Carlo ``E||X - X'||^2`` for ``X ~ N(m_a, L L^T)``, ``X' ~ N(m_b, L L^T)``.

    ``"shared"`` feeds both draws the same noise; ``"independent"`` uses two.
    """
    if mode not in COUPLING_MODES:
        raise ValueError(f"unknown coupling mode {mode!r}")
    mean_a = np.asarray(mean_a, dtype=float)
    mean_b = np.asarray(mean_b, dtype=float)
    L = np.asarray(cov_chol, dtype=float)
    xi = rng.standard_normal((n, mean_a.size))
    xi_b = xi if mode == "shared" else rng.standard_normal((n, mean_a.size))
    x = mean_a + xi @ L.T
    x_b = mean_b + xi_b @ L.T
    return float(np.mean(np.sum((x - x_b) ** 2, axis=1)))


def gaussian_denoiser_map(prior, alpha, sigma):
    """The denoiser of ``prior`` at ``(alpha, sigma)`` and its Lipschitz constant."""
    evals = prior._eig[0]
    L_t = float(np.max(alpha * evals / (alpha**2 * evals + sigma**2)))
    return (lambda x: prior.denoise(alpha, sigma, x)), L_t


def identity_prox_map(y, sigma_y, lambda_t):
    """Prox of ``||y - x||^2 / (2 sigma_y^2)`` with weight ``lambda_t``, and its modulus ``mu``."""
    task = ForwardTask(DenseLinear(np.eye(np.size(y))), sigma_y, y)
    return (lambda v: prox_data(task, v, lambda_t)), 1.0 / sigma_y**2


def contraction_factor(L_t, mu, lambda_t):
    return L_t / (1.0 + mu / lambda_t)


def _test_prior(rng, d):
    # eigenvalues in [0.2, 2] keep the denoiser nonexpansive at (0.8, 0.6)
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    cov = (Q * rng.uniform(0.2, 2.0, d)) @ Q.T
    return GaussianPrior(rng.standard_normal(d), 0.5 * (cov + cov.T))


def check_prox_nonexpansive(rng, pairs=100, slack=1e-9):
    worst = -np.inf
    for _ in range(pairs):
        d = int(rng.integers(2, 12))
        m = int(rng.integers(1, 2 * d))
        task = ForwardTask(DenseLinear(rng.standard_normal((m, d))), float(rng.uniform(0.05, 2.0)), rng.standard_normal(m))
        lam = float(10 ** rng.uniform(-3, 3))
        v, w = rng.standard_normal((2, d)) * rng.uniform(0.1, 10.0)
        gap = np.linalg.norm(prox_data(task, v, lam) - prox_data(task, w, lam)) - np.linalg.norm(v - w)
        worst = max(worst, float(gap))
    return CheckResult("prox_nonexpansive", worst <= slack, {"pairs": pairs, "max_excess": worst, "slack": slack})


def check_prox_strong_convexity(rng, pairs=100, slack=1e-9):
    worst = 0.0
    for _ in range(pairs):
        d = int(rng.integers(1, 12))
        sigma_y = float(rng.uniform(0.05, 2.0))
        lam = float(10 ** rng.uniform(-3, 3))
        prox, mu = identity_prox_map(rng.standard_normal(d), sigma_y, lam)
        v, w = rng.standard_normal((2, d))
        ratio = np.linalg.norm(prox(v) - prox(w)) / np.linalg.norm(v - w)
        worst = max(worst, float(ratio - 1.0 / (1.0 + mu / lam)))
    return CheckResult("prox_strong_convexity", worst <= slack, {"pairs": pairs, "max_excess": worst, "slack": slack})


def check_km_rate(rng, d=6, alpha=0.8, sigma=0.6, sigma_y=0.5, lambda_t=2.0):
    prior = _test_prior(rng, d)
    D, L_t = gaussian_denoiser_map(prior, alpha, sigma)
    P, mu = identity_prox_map(rng.standard_normal(d), sigma_y, lambda_t)
    q = contraction_factor(L_t, mu, lambda_t)
    spec = FixedPointSpec(L_t, lambda_t, rho=1.0, max_iters=500, tolerance=1e-13)
    res = km_iterate(D, P, spec, 10.0 * rng.standard_normal(d))
    rate = fit_geometric_rate(res.residuals)
    measured = {"q": q, "fitted_rate": rate, "iterations": int(res.residuals.size), "converged": res.converged}
    return CheckResult("km_linear_rate", bool(q < 1 and res.converged and rate <= q + 0.02), measured)


def check_km_monotone(rng, d=6, alpha=0.8, sigma=0.6, sigma_y=0.5, lambda_t=2.0, rho=0.5):
    prior = _test_prior(rng, d)
    D, L_t = gaussian_denoiser_map(prior, alpha, sigma)
    P, _ = identity_prox_map(rng.standard_normal(d), sigma_y, lambda_t)
    spec = FixedPointSpec(L_t, lambda_t, rho=rho, max_iters=2000, tolerance=1e-12)
    res = km_iterate(D, P, spec, 10.0 * rng.standard_normal(d))
    rise = float(np.max(np.diff(res.residuals), initial=0.0))
    fixed_gap = float(np.linalg.norm(P(D(res.fixed_point)) - res.fixed_point))
    measured = {"L_t": L_t, "max_residual_increase": rise, "fixed_point_gap": fixed_gap, "converged": res.converged}
    return CheckResult("km_monotone", bool(L_t <= 1 and rise <= 1e-12 and res.converged), measured)


def check_inexact(rng, q=0.5, eps=0.01, d=6, alpha=0.8, sigma=0.6, sigma_y=0.5, iters=200):
    _require_contraction(q)
    prior = _test_prior(rng, d)
    D, L_t = gaussian_denoiser_map(prior, alpha, sigma)
    mu = 1.0 / sigma_y**2
    if not q < L_t:
        raise InapplicableError(f"q = {q} is not reachable with denoiser Lipschitz constant {L_t}")
    lambda_t = mu * q / (L_t - q)  # solves L_t / (1 + mu / lambda_t) = q
    P, _ = identity_prox_map(rng.standard_normal(d), sigma_y, lambda_t)
    T = lambda x: P(D(x))
    exact = km_iterate(D, P, FixedPointSpec(L_t, lambda_t, rho=1.0, max_iters=5000, tolerance=1e-15), np.zeros(d))
    x_star = exact.fixed_point
    errors = perturbed_recursion(T, x_star, x_star + rng.standard_normal(d), eps, rng, iters)
    tail_ok = check_inexact_bound(q, eps, errors, tolerance=1e-6)
    unrolled_ok = check_unrolled_bound(q, eps, errors, tolerance=1e-10)
    measured = {
        "q": contraction_factor(L_t, mu, lambda_t),
        "eps": eps,
        "tail_max": float(np.max(errors[errors.size // 2:])),
        "bound": eps / (1.0 - q),
        "unrolled_ok": unrolled_ok,
    }
    return CheckResult("inexact_tail", tail_ok and unrolled_ok, measured)


def check_coupling(rng, d=3, n=100_000):
    m_a, m_b = rng.standard_normal((2, d))
    L = np.linalg.cholesky(np.eye(d))
    gap = float(np.sum((m_a - m_b) ** 2))
    shared = coupling_cost(m_a, m_b, L, rng, n, "shared")
    indep_rng = np.random.default_rng(rng.integers(2**63))
    xi, xi_b = indep_rng.standard_normal((2, n, d))
    sq = np.sum((m_a - m_b + xi - xi_b) ** 2, axis=1)
    indep = float(sq.mean())
    se = float(sq.std(ddof=1) / np.sqrt(n))
    expected = gap + 2.0 * np.trace(L @ L.T)
    ok = abs(shared - gap) <= 1e-12 * max(gap, 1.0) and shared <= indep and abs(indep - expected) <= 3 * se
    measured = {"shared": shared, "mean_gap_sq": gap, "independent": indep, "independent_expected": float(expected), "se": se}
    return CheckResult("optimal_coupling", bool(ok), measured)


def check_renoise_identities(rng, draws=1000, tol=1e-12):
    worst1 = worst2 = 0.0
    for _ in range(draws):
        d = int(rng.integers(1, 8))
        alpha, sigma = rng.uniform(0.0, 1.0, 2)
        z0, zh, e_k, w = rng.standard_normal((4, d)) * rng.uniform(0.1, 3.0)
        got = phase1_renoise(z0, zh, e_k, alpha, sigma, w, "sigma_squared")
        want = alpha * (alpha * z0 + sigma * zh) + sigma * (alpha * e_k + sigma * w)
        worst1 = max(worst1, float(np.max(np.abs(got - want))))
        got = phase2_renoise(z0, e_k, alpha, sigma, w, "sigma_squared")
        want = alpha * z0 + sigma * (alpha * e_k + sigma * w)
        worst2 = max(worst2, float(np.max(np.abs(got - want))))
    measured = {"draws": draws, "warm_start_err": worst1, "guided_err": worst2}
    return CheckResult("renoise_identities", worst1 <= tol and worst2 <= tol, measured)


CHECKS = {
    "prox_nonexpansive": check_prox_nonexpansive,
    "prox_strong_convexity": check_prox_strong_convexity,
    "km_linear_rate": check_km_rate,
    "km_monotone": check_km_monotone,
    "inexact_tail": check_inexact,
    "optimal_coupling": check_coupling,
    "renoise_identities": check_renoise_identities,
}


def run_suite(seed=0, names=None, q=0.5, eps=0.01):
    """Run the named checks (all by default), each on its own seeded stream.

    Raises
    ------
    InapplicableError
        If the inexact-update check is requested with ``q >= 1``.
    KeyError
        For an unknown check name.
    """
    names = list(CHECKS) if names is None else list(names)
    for name in names:
        if name not in CHECKS:
            raise KeyError(f"unknown check {name!r}; choose from {', '.join(CHECKS)}")
    if "inexact_tail" in names:
        _require_contraction(q)
    streams = dict(zip(CHECKS, np.random.SeedSequence(seed).spawn(len(CHECKS))))
    results = []
    for name in names:
        rng = np.random.default_rng(streams[name])
        if name == "inexact_tail":
            results.append(CHECKS[name](rng, q=q, eps=eps))
        else:
            results.append(CHECKS[name](rng))
    return results
