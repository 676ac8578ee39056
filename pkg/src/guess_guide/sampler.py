"""Guess-and-Guide posterior sampling over analytic priors, plus a DPS baseline.

Every routine here is batched: a state ``z`` of shape ``(B, d)`` carries B
independent trajectories, and ``rng`` is either one ``numpy`` Generator (a
single trajectory, ``z`` of shape ``(d,)``) or a sequence of B Generators,
one per trajectory. Each trajectory only ever draws from its own stream, so
results do not depend on how samples are batched.
"""

from dataclasses import dataclass, field, asdict
import time

import numpy as np

from .dcopt import OptimizeSpec, lambda_at, optimize, with_lambda
from .errors import DegenerateScheduleError
from .operators import grad_data_term
from .prior import denoiser_jvp
from .schedule import NoiseSchedule, TimestepGrid

__all__ = [
    "GngConfig",
    "Counters",
    "RunReport",
    "ddim_step",
    "phase1_renoise",
    "phase2_renoise",
    "phase1_warm_start",
    "phase2_guided_denoise",
    "run_gng",
    "run_dps_baseline",
    "spawn_streams",
    "expected_denoiser_calls",
]

RENOISE_MODES = ("sigma_squared", "standard_sigma")


@dataclass
class Counters:
    """Per-trajectory call counts; a batched call counts once per trajectory."""

    denoiser_calls: int = 0
    denoiser_grad_calls: int = 0
    operator_grad_calls: int = 0

    def scaled(self, n):
        return Counters(self.denoiser_calls * n, self.denoiser_grad_calls * n, self.operator_grad_calls * n)


@dataclass(frozen=True)
class GngConfig:
    """Hyper-parameters of one Guess-and-Guide run.

    ``grid.t_start`` must equal ``schedule.index_of(t_star)``.
    """

    t_star: float
    N: int
    grid: TimestepGrid
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    ddim_substeps: int = 2
    eta_interleave: float = 1.0
    phase1_opt: OptimizeSpec = field(default_factory=lambda: OptimizeSpec(iterations=50, learning_rate=1e-4))
    phase2_opt: OptimizeSpec = field(default_factory=lambda: OptimizeSpec(iterations=50, learning_rate=1e-3))
    renoise_std_mode: str = "sigma_squared"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.t_star < 1:
            raise ValueError(f"t_star must lie in (0, 1), got {self.t_star}")
        if int(self.N) != self.N or self.N < 0:
            raise ValueError(f"N must be a nonnegative integer, got {self.N}")
        if self.ddim_substeps < 1:
            raise ValueError(f"ddim_substeps must be at least 1, got {self.ddim_substeps}")
        if not 0 <= self.eta_interleave <= 1:
            raise ValueError(f"eta_interleave must lie in [0, 1], got {self.eta_interleave}")
        if self.renoise_std_mode not in RENOISE_MODES:
            raise ValueError(f"unknown renoise_std_mode {self.renoise_std_mode!r}")
        if self.grid.t_start != self.t_star_index:
            raise ValueError(
                f"grid ends at {self.grid.t_start} but t_star={self.t_star} maps to index {self.t_star_index}"
            )
        if self.grid.t_start > self.schedule.T_max:
            raise ValueError("grid extends beyond the noise schedule")

    @property
    def t_star_index(self):
        return self.schedule.index_of(self.t_star)

    @property
    def M(self):
        return self.grid.M


@dataclass
class RunReport:
    samples: np.ndarray
    metrics: list
    counters: Counters
    config: dict
    wall_time: float
    rng_paths: list = field(default_factory=list)

    def to_dict(self):
        return {
            "config": self.config,
            "counters": asdict(self.counters),
            "metrics": self.metrics,
            "rng_paths": self.rng_paths,
            "samples": np.asarray(self.samples).tolist(),
        }


def spawn_streams(seed, num_samples):
    """Per-sample ``(phase1, phase2)`` Generators from one root seed.

    Sample ``i`` phase ``p`` uses ``SeedSequence(seed).spawn(num_samples)[i].spawn(2)[p]``.
    """
    children = np.random.SeedSequence(seed).spawn(num_samples)
    streams = [tuple(np.random.default_rng(s) for s in child.spawn(2)) for child in children]
    paths = [f"seed={seed}/sample={i}/phase={{1,2}}" for i in range(num_samples)]
    return streams, paths


def _normal(rng, like):
    """Standard normal noise shaped like ``like``, drawn per trajectory."""
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(like.shape)
    if len(rng) != like.shape[0]:
        raise ValueError(f"{len(rng)} generators for a batch of {like.shape[0]}")
    return np.stack([g.standard_normal(like.shape[1:]) for g in rng])


def _counted_denoise(prior, point, z, counters):
    if counters is not None:
        counters.denoiser_calls += 1
    return prior.denoise(point[0], point[1], z)


def ddim_step(prior, schedule, from_index, to_index, z, eta, rng, counters=None):
    """One DDIM transition ``from_index -> to_index``:

        alpha_to D(z) + sqrt(sigma_to^2 - eta_to^2) eps_hat(z) + eta_to W,   eta_to = eta * sigma_to.
    """
    if not to_index < from_index:
        raise ValueError(f"DDIM runs backwards in time, got {from_index} -> {to_index}")
    if not 0 <= eta <= 1:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    a_from, s_from = schedule(from_index)
    a_to, s_to = schedule(to_index)
    if s_from == 0:
        raise DegenerateScheduleError(f"noise prediction undefined at index {from_index}")
    z = np.asarray(z, dtype=float)
    x0 = _counted_denoise(prior, (a_from, s_from), z, counters)
    eps_hat = (z - a_from * x0) / s_from
    eta_to = eta * s_to
    out = a_to * x0 + np.sqrt(max(s_to**2 - eta_to**2, 0.0)) * eps_hat
    if eta_to > 0:
        out = out + eta_to * _normal(rng, z)
    return out


def ddim_substep_indices(start, stop, n):
    """Uniformly spaced integer indices from ``start`` down to ``stop``.

    Gives ``n`` substeps, or one per index when the gap is narrower than ``n``.
    """
    if not stop < start:
        raise ValueError(f"substeps run backwards in time, got {start} -> {stop}")
    n = min(n, start - stop)
    return [int(i) for i in np.rint(np.linspace(start, stop, n + 1)).astype(int)]


def phase1_renoise(z_opt, z_hat, eps_k, alpha, sigma, fresh, mode="sigma_squared"):
    """Warm-start re-noising: ``alpha * mu + std * fresh`` with
    ``mu = alpha z_opt + sigma z_hat + sigma eps_k`` and ``std = sigma^2``
    (``sigma_squared``) or ``sigma`` (``standard_sigma``)."""
    mu = alpha * z_opt + sigma * z_hat + sigma * eps_k
    std = sigma**2 if mode == "sigma_squared" else sigma
    return alpha * mu + std * fresh


def phase2_renoise(z_star, eps_k, alpha_next, sigma_next, fresh, mode="sigma_squared"):
    """Guided-denoising re-noising back to ``t_{k+1}``: ``mu + std * fresh`` with
    ``mu = alpha z_star + sigma alpha eps_k`` and ``std = sigma^2`` or ``sigma``."""
    mu = alpha_next * z_star + sigma_next * alpha_next * eps_k
    std = sigma_next**2 if mode == "sigma_squared" else sigma_next
    return mu + std * fresh


def embed_observation(prior, codec, task):
    """Pixel-space stand-in for the observation used to seed the warm start.

    Square operators use ``y`` itself. Dimension-reducing operators use the
    adjoint fill ``A^T y`` on observed coordinates and the decoded prior
    mean elsewhere.
    """
    op = task.operator
    y = task.y
    if op.out_dim == op.in_dim:
        return y
    prior_mean = codec.decode(prior.components()[0] @ prior.components()[1])
    if not op.is_linear:
        return prior_mean
    observed = np.abs(op.matrix).sum(axis=0) > 0
    return np.where(observed, op.adjoint(y), prior_mean)


def _phase_lambda(spec, point):
    lam = lambda_at(point, spec.lambda_mode, spec.lam) if spec.lam > 0 else 0.0
    return with_lambda(spec, lam)


def phase1_warm_start(prior, codec, task, config, rng, counters=None, trace=None):
    """Warm start at ``t_star``: N rounds of predict, optimise, re-noise.

    Returns the latent ``z`` at ``t_star``. ``trace``, if a list, receives a
    dict per round with the intermediate quantities.
    """
    sched = config.schedule
    t_idx = config.t_star_index
    alpha, sigma = sched(t_idx)
    if counters is None:
        counters = Counters()
    y_emb = embed_observation(prior, codec, task)
    batch = isinstance(rng, np.random.Generator) is False
    base = np.broadcast_to(codec.encode(y_emb), (len(rng), prior.dim) if batch else (prior.dim,))
    z = alpha * base + sigma * _normal(rng, base)
    spec = _phase_lambda(config.phase1_opt, (alpha, sigma))
    for _ in range(config.N):
        z_hat = _counted_denoise(prior, (alpha, sigma), z, counters)
        eps_k = (z - alpha * z_hat) / sigma
        x_hat = codec.decode(z_hat)
        x_opt = optimize(task, x_hat, x_hat, spec)
        counters.operator_grad_calls += spec.iterations if spec.solver == "gradient_descent" else 0
        z_opt = codec.encode(x_opt)
        fresh = _normal(rng, z)
        z_next = phase1_renoise(z_opt, z_hat, eps_k, alpha, sigma, fresh, config.renoise_std_mode)
        if trace is not None:
            trace.append(dict(z=z, z_hat=z_hat, eps=eps_k, z_opt=z_opt, fresh=fresh, z_next=z_next))
        z = z_next
    return z


def phase2_guided_denoise(prior, codec, task, config, z_at_tstar, rng, counters=None, trace=None):
    """Guided denoising over the grid ``t_M = t_star > ... > t_1``.

    Returns the pixel-space sample ``decode(D_{t_1}(z))``.
    """
    sched = config.schedule
    steps = config.grid.steps
    n = config.ddim_substeps
    eta = config.eta_interleave
    if counters is None:
        counters = Counters()
    z = np.asarray(z_at_tstar, dtype=float)
    for k in range(config.M - 1, 0, -1):
        t_next, t_cur = steps[k], steps[k - 1]
        a_cur, s_cur = sched(t_cur)
        a_next, s_next = sched(t_next)
        z_tilde = ddim_step(prior, sched, t_next, t_cur, z, eta, rng, counters)
        z0_tilde = _counted_denoise(prior, (a_cur, s_cur), z_tilde, counters)
        eps_k = (z_tilde - a_cur * z0_tilde) / s_cur
        x0_tilde = codec.decode(z0_tilde)
        spec = _phase_lambda(config.phase2_opt, (a_cur, s_cur))
        x_star = optimize(task, x0_tilde, x0_tilde, spec)
        counters.operator_grad_calls += spec.iterations if spec.solver == "gradient_descent" else 0
        z_star = codec.encode(x_star)
        fresh = _normal(rng, z)
        z = phase2_renoise(z_star, eps_k, a_next, s_next, fresh, config.renoise_std_mode)
        if trace is not None:
            trace.append(dict(k=k, z_tilde=z_tilde, z0=z0_tilde, eps=eps_k, z_star=z_star, fresh=fresh, z_renoised=z))
        idx = ddim_substep_indices(t_next, t_cur, n)
        for i_from, i_to in zip(idx[:-1], idx[1:]):
            z = ddim_step(prior, sched, i_from, i_to, z, eta, rng, counters)
    a1, s1 = sched(steps[0])
    return codec.decode(_counted_denoise(prior, (a1, s1), z, counters))


def expected_denoiser_calls(N, M, n, grid=None):
    """Denoiser evaluations per sample: N warm-start predictions, then per
    guidance step one jump, one prediction and n substeps, then the final
    prediction.

    With ``grid`` given, segments narrower than ``n`` indices count one
    substep per index.
    """
    if grid is None:
        return N + (M - 1) * (2 + n) + 1
    gaps = np.diff(grid.steps)
    return int(N + np.sum(2 + np.minimum(n, gaps)) + 1)


def _sample_metrics(samples, task, counters_per_sample, wall_ms, post=None):
    from .oracle import moment_error  # noqa: PLC0415 - avoids an import cycle at module load

    rows = []
    if post is not None:
        mean_err, cov_err = moment_error(samples, post)
    for i, x in enumerate(samples):
        resid = float(np.linalg.norm(task.operator.apply(x) - task.y))
        mse = float(np.mean((x - task.x_true) ** 2)) if task.x_true is not None else float("nan")
        rows.append(
            dict(
                sample_id=i,
                mse_to_truth=mse,
                residual_norm=resid,
                posterior_mean_err=mean_err if post is not None else float("nan"),
                posterior_cov_err=cov_err if post is not None else float("nan"),
                denoiser_calls=counters_per_sample.denoiser_calls,
                denoiser_grad_calls=counters_per_sample.denoiser_grad_calls,
                wall_ms=wall_ms,
            )
        )
    return rows


def _batches(n, size):
    for start in range(0, n, size):
        yield start, min(start + size, n)


def run_gng(prior, codec, task, config, num_samples, posterior=None, batch_size=512, config_echo=None):
    """Draw ``num_samples`` Guess-and-Guide samples.

    ``posterior`` (an ``ExactPosterior``) is used only to fill the moment
    error columns of the per-sample metrics.
    """
    streams, paths = spawn_streams(config.seed, num_samples)
    per_sample = Counters()
    out = []
    t0 = time.perf_counter()
    for lo, hi in _batches(num_samples, batch_size):
        c = Counters()
        rng1 = [streams[i][0] for i in range(lo, hi)]
        rng2 = [streams[i][1] for i in range(lo, hi)]
        z = phase1_warm_start(prior, codec, task, config, rng1, counters=c)
        out.append(phase2_guided_denoise(prior, codec, task, config, z, rng2, counters=c))
        per_sample = c
    wall = time.perf_counter() - t0
    samples = np.concatenate(out) if out else np.zeros((0, prior.dim))
    assert per_sample.denoiser_grad_calls == 0
    metrics = _sample_metrics(samples, task, per_sample, 1e3 * wall / max(num_samples, 1), posterior)
    return RunReport(samples, metrics, per_sample.scaled(num_samples), config_echo or {}, wall, paths)


def dps_step(prior, codec, task, schedule, from_index, to_index, z, guidance_scale, eta, rng, counters):
    """One DDIM step with the denoiser replaced by its DPS-guided version

        D(z) + guidance_scale * (sigma^2 / alpha) grad_z log l_0(y | decode(D(z))).
    """
    alpha, sigma = schedule(from_index)
    z = np.asarray(z, dtype=float)
    x0 = _counted_denoise(prior, (alpha, sigma), z, counters)
    x_pix = codec.decode(x0)
    g_pix = -grad_data_term(task.operator, x_pix, task.y, task.sigma_y)
    counters.operator_grad_calls += 1
    # chain rule through the orthogonal decoder and the (symmetric) denoiser Jacobian
    g_z = denoiser_jvp(prior, (alpha, sigma), z, codec.encode(g_pix))
    counters.denoiser_grad_calls += 1
    # at alpha = 0 the denoiser is constant and its Jacobian vanishes
    if guidance_scale and alpha > 0:
        x0 = x0 + guidance_scale * (sigma**2 / alpha) * g_z
    eps_hat = (z - alpha * x0) / sigma
    a_to, s_to = schedule(to_index)
    eta_to = eta * s_to
    out = a_to * x0 + np.sqrt(max(s_to**2 - eta_to**2, 0.0)) * eps_hat
    if eta_to > 0:
        out = out + eta_to * _normal(rng, z)
    return out


def run_dps_baseline(
    prior, codec, task, steps, guidance_scale, rng=0, schedule=None, eta=1.0, num_samples=1,
    posterior=None, batch_size=512, config_echo=None,
):
    """Gradient-based DPS baseline: a full ``steps``-step reverse trajectory
    from ``t = 1`` with guidance through the denoiser Jacobian at every step.

    ``rng`` is the root seed (an int) from which per-sample streams are split.
    """
    schedule = schedule or NoiseSchedule()
    idx = ddim_substep_indices(schedule.T_max, 0, steps)
    seed = rng if isinstance(rng, (int, np.integer)) else int(rng.integers(2**63))
    children = np.random.SeedSequence(seed).spawn(num_samples)
    streams = [np.random.default_rng(c) for c in children]
    paths = [f"seed={seed}/sample={i}" for i in range(num_samples)]
    per_sample = Counters()
    out = []
    t0 = time.perf_counter()
    for lo, hi in _batches(num_samples, batch_size):
        c = Counters()
        rngs = streams[lo:hi]
        z = _normal(rngs, np.zeros((hi - lo, prior.dim)))
        # the last step lands on t = 0, where sigma = 0 and the state is the guided clean estimate
        for i_from, i_to in zip(idx[:-1], idx[1:]):
            z = dps_step(prior, codec, task, schedule, i_from, i_to, z, guidance_scale, eta, rngs, c)
        out.append(codec.decode(z))
        per_sample = c
    wall = time.perf_counter() - t0
    samples = np.concatenate(out)
    metrics = _sample_metrics(samples, task, per_sample, 1e3 * wall / max(num_samples, 1), posterior)
    return RunReport(samples, metrics, per_sample.scaled(num_samples), config_echo or {}, wall, paths)
