"""Experiment configuration: YAML loading, validation and object construction.

Every validation failure raises ``ConfigError`` whose ``path`` names the
offending field in dotted form, e.g. ``gng.phase2.learning_rate`` or
``operator.parts[1].kernel``.
"""

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .dcopt import OptimizeSpec
from .errors import AllocationError, ConfigError
from .operators import Chain, CircularBlur, ClipScale, Decimate, DenseLinear, ForwardTask, Mask, synthesize_observation
from .prior import GaussianPrior, GmmPrior, LinearCodec, toeplitz_covariance
from .sampler import GngConfig
from .schedule import NoiseSchedule, WeightStrategy, build_grid

__all__ = ["ExperimentConfig", "BaselineSpec", "load_config", "parse_config", "resolve_config_path", "bundled_configs"]

_MISSING = object()


class _Section:
    """A mapping plus its dotted path; tracks which keys were read."""

    def __init__(self, data, path):
        if not isinstance(data, dict):
            raise ConfigError(path or "<root>", f"expected a mapping, got {type(data).__name__}")
        self.data = data
        self.path = path
        self._seen = set()

    def _p(self, key):
        return f"{self.path}.{key}" if self.path else str(key)

    def has(self, key):
        return key in self.data

    def raw(self, key, default=_MISSING):
        self._seen.add(key)
        if key not in self.data:
            if default is _MISSING:
                raise ConfigError(self._p(key), "required field is missing")
            return default
        return self.data[key]

    def section(self, key, default=_MISSING):
        value = self.raw(key, {} if default is _MISSING else default)
        if value is None:
            value = {}
        return _Section(value, self._p(key))

    def real(self, key, default=_MISSING, positive=False, nonneg=False):
        val = self.raw(key, default)
        path = self._p(key)
        out = _to_real(val, path)
        if positive and not out > 0:
            raise ConfigError(path, f"must be positive, got {out}")
        if nonneg and out < 0:
            raise ConfigError(path, f"must be nonnegative, got {out}")
        return out

    def integer(self, key, default=_MISSING, minimum=None):
        val = self.raw(key, default)
        path = self._p(key)
        if isinstance(val, bool) or not isinstance(val, (int, np.integer)):
            raise ConfigError(path, f"expected an integer, got {val!r}")
        if minimum is not None and val < minimum:
            raise ConfigError(path, f"must be at least {minimum}, got {val}")
        return int(val)

    def string(self, key, default=_MISSING, choices=None):
        val = self.raw(key, default)
        path = self._p(key)
        if not isinstance(val, str):
            raise ConfigError(path, f"expected a string, got {val!r}")
        if choices is not None and val not in choices:
            raise ConfigError(path, f"unknown value {val!r}; expected one of {', '.join(choices)}")
        return val

    def boolean(self, key, default=_MISSING):
        val = self.raw(key, default)
        if not isinstance(val, bool):
            raise ConfigError(self._p(key), f"expected true or false, got {val!r}")
        return val

    def array(self, key, default=_MISSING, ndim=None):
        val = self.raw(key, default)
        path = self._p(key)
        try:
            arr = np.asarray(_to_real_tree(val, path), dtype=float)
        except ValueError as exc:
            raise ConfigError(path, f"not a rectangular numeric list ({exc})") from None
        if ndim is not None and arr.ndim != ndim:
            raise ConfigError(path, f"expected a {ndim}-dimensional list, got {arr.ndim} dimensions")
        return arr

    def finish(self):
        extra = sorted(set(map(str, self.data)) - set(map(str, self._seen)))
        if extra:
            raise ConfigError(self._p(extra[0]), "unknown field")


def _to_real(val, path):
    if isinstance(val, bool):
        raise ConfigError(path, f"expected a number, got {val!r}")
    if isinstance(val, (int, float, np.integer, np.floating)):
        return float(val)
    if isinstance(val, str):
        # YAML 1.1 reads exponent forms without a dot (1e-4) as strings
        try:
            return float(val)
        except ValueError:
            pass
    raise ConfigError(path, f"expected a number, got {val!r}")


def _to_real_tree(val, path):
    if isinstance(val, list):
        return [_to_real_tree(v, f"{path}[{i}]") for i, v in enumerate(val)]
    return _to_real(val, path)


def _wrap(path, fn, *args, **kwargs):
    """Call a constructor, re-raising its validation errors under ``path``."""
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError, np.linalg.LinAlgError) as exc:
        raise ConfigError(path, str(exc)) from None


@dataclass(frozen=True)
class BaselineSpec:
    """Settings of the gradient-based comparison sampler."""

    enabled: bool = False
    steps: int = 1000
    guidance_scale: float = 1.0
    eta: float = 1.0


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    num_samples: int
    prior: object
    codec: LinearCodec
    task: ForwardTask
    gng: GngConfig
    baseline: BaselineSpec
    output_dir: Path
    record_timing: bool
    strategy: WeightStrategy
    raw: dict = field(repr=False)
    source: Path = None
    sweep_params: dict = field(default_factory=dict)


def _shape_of(sec):
    if sec.has("shape"):
        shape = sec.raw("shape")
        if not isinstance(shape, list) or not shape or not all(isinstance(n, int) and n > 0 for n in shape):
            raise ConfigError(sec._p("shape"), f"expected a list of positive integers, got {shape!r}")
        return tuple(shape)
    return (sec.integer("dim", minimum=1),)


def _vector(sec, key, d, default):
    arr = sec.array(key, default)
    if arr.ndim == 0:
        return np.full(d, float(arr))
    if arr.shape != (d,):
        raise ConfigError(sec._p(key), f"expected {d} entries, got shape {arr.shape}")
    return arr


def _covariance(sec, shape):
    d = int(np.prod(shape))
    kind = sec.string("kind", "identity", ("identity", "diag", "toeplitz"))
    scale = sec.real("scale", 1.0, positive=True)
    if kind == "identity":
        cov = scale * np.eye(d)
    elif kind == "diag":
        vals = _vector(sec, "values", d, _MISSING)
        if np.any(vals <= 0):
            raise ConfigError(sec._p("values"), "diagonal entries must be positive")
        cov = scale * np.diag(vals)
    else:
        rho = sec.real("rho")
        cov = _wrap(sec._p("rho"), toeplitz_covariance, shape, rho, scale)
    sec.finish()
    return cov


def _prior(sec):
    kind = sec.string("kind", choices=("gaussian", "gmm"))
    if kind == "gaussian":
        shape = _shape_of(sec)
        d = int(np.prod(shape))
        mean = _vector(sec, "mean", d, 0.0)
        cov = _covariance(sec.section("covariance", {}), shape)
        prior = _wrap(sec.path, GaussianPrior, mean, cov)
    else:
        weights = sec.array("weights", ndim=1)
        means = sec.array("means")
        if means.ndim == 1:
            means = means[:, None]
        if means.ndim != 2 or means.shape[0] != weights.size:
            raise ConfigError(sec._p("means"), f"expected {weights.size} component means")
        variances = sec.array("variances")
        prior = _wrap(sec.path, GmmPrior, weights, means, variances)
        shape = _shape_of(sec) if sec.has("shape") else (prior.dim,)
        if int(np.prod(shape)) != prior.dim:
            raise ConfigError(sec._p("shape"), f"shape {shape} does not match component dimension {prior.dim}")
    sec.finish()
    return prior, shape


def _codec(sec, d):
    kind = sec.string("kind", "identity", ("identity", "orthogonal"))
    if kind == "identity":
        codec = LinearCodec.identity(d)
    else:
        codec = LinearCodec.random_orthogonal(d, np.random.default_rng(sec.integer("seed", 0)))
    sec.finish()
    return codec


def _kernel(sec, base_dir):
    if sec.has("kernel") == sec.has("kernel_file"):
        raise ConfigError(sec._p("kernel"), "give exactly one of kernel or kernel_file")
    if sec.has("kernel"):
        k = sec.array("kernel")
    else:
        path = Path(sec.string("kernel_file"))
        path = path if path.is_absolute() else base_dir / path
        try:
            k = np.loadtxt(path, ndmin=1)
        except (OSError, ValueError) as exc:
            raise ConfigError(sec._p("kernel_file"), f"cannot read kernel: {exc}") from None
    if sec.boolean("normalize", False):
        k = k / k.sum()
    return k


def _operator(sec, shape, base_dir):
    d = int(np.prod(shape))
    kinds = ("identity", "scale", "dense", "mask", "blur", "decimate", "clip_scale", "chain")
    kind = sec.string("kind", choices=kinds)
    path = sec.path
    if kind == "identity":
        op = DenseLinear(np.eye(d))
    elif kind == "scale":
        op = DenseLinear(sec.real("a") * np.eye(d))
    elif kind == "dense":
        if sec.has("matrix"):
            A = sec.array("matrix", ndim=2)
        else:
            rows = sec.integer("rows", minimum=1)
            A = np.random.default_rng(sec.integer("seed", 0)).standard_normal((rows, d)) / np.sqrt(d)
        if A.shape[1] != d:
            raise ConfigError(sec._p("matrix"), f"expected {d} columns, got {A.shape[1]}")
        op = DenseLinear(A)
    elif kind == "mask":
        if sec.has("indices"):
            idx = sec.array("indices", ndim=1)
            if not np.all(idx == np.round(idx)):
                raise ConfigError(sec._p("indices"), "indices must be integers")
        else:
            frac = sec.real("keep_fraction")
            if not 0 < frac <= 1:
                raise ConfigError(sec._p("keep_fraction"), f"must lie in (0, 1], got {frac}")
            rng = np.random.default_rng(sec.integer("seed", 0))
            idx = np.sort(rng.choice(d, size=max(1, int(round(frac * d))), replace=False))
        op = _wrap(path, Mask, idx.astype(int), d)
    elif kind == "blur":
        op = _wrap(path, CircularBlur, _kernel(sec, base_dir), shape)
    elif kind == "decimate":
        op = _wrap(path, Decimate, sec.integer("factor", minimum=1), shape)
    elif kind == "clip_scale":
        op = _wrap(path, ClipScale, sec.real("c"), sec.real("lo"), sec.real("hi"), d)
    else:
        specs = sec.raw("parts")
        if not isinstance(specs, list) or not specs:
            raise ConfigError(sec._p("parts"), "expected a nonempty list of operators")
        parts, dim_shape = [], shape
        for i, spec in enumerate(specs):
            part = _operator(_Section(spec, f"{sec._p('parts')}[{i}]"), dim_shape, base_dir)
            parts.append(part)
            dim_shape = (part.out_dim,)
        op = _wrap(path, Chain, parts)
    sec.finish()
    return op


def _observation(sec, prior, codec, op):
    sigma_y = sec.real("sigma_y", positive=True)
    rng = np.random.default_rng(sec.integer("seed", 0))
    x_true = _vector(sec, "x_true", op.in_dim, _MISSING) if sec.has("x_true") else None
    if sec.has("y"):
        y = _vector(sec, "y", op.out_dim, _MISSING)
        task = _wrap(sec.path, ForwardTask, op, sigma_y, y, x_true)
    else:
        if x_true is None:
            x_true = codec.decode(prior.sample(rng))
        task = synthesize_observation(op, x_true, sigma_y, rng)
    sec.finish()
    return task


def _opt_spec(sec, default_lr):
    spec = _wrap(
        sec.path,
        OptimizeSpec,
        iterations=sec.integer("iterations", 50, minimum=0),
        learning_rate=sec.real("learning_rate", default_lr, positive=True),
        lam=sec.real("lambda", 0.0, nonneg=True),
        lambda_mode=sec.string("lambda_mode", "constant", ("constant", "snr_scaled")),
        solver=sec.string("solver", "gradient_descent", ("gradient_descent", "closed_form")),
        momentum=sec.real("momentum", 0.0),
        absorb_sigma_y=sec.boolean("absorb_sigma_y", True),
    )
    sec.finish()
    return spec


def _strategy(sec):
    kind = sec.string("strategy", "gaussian")
    params = {}
    for key in ("p", "k", "mu", "sigma", "a", "b"):
        if sec.has(key):
            params[key] = sec.real(key)
    strategy = _wrap(sec.path, WeightStrategy, kind, **params)
    sec.finish()
    return strategy


def _gng(sec, schedule, seed, strategy_override=None):
    t_star = sec.real("t_star")
    M = sec.integer("M", minimum=1)
    ts = sec.section("timesteps", {})
    strategy = _strategy(ts)
    if strategy_override is not None:
        strategy = strategy_override
    try:
        grid = build_grid(strategy, M, _wrap(sec._p("t_star"), schedule.index_of, t_star))
    except AllocationError as exc:
        raise ConfigError(sec._p("timesteps"), str(exc)) from None
    config = _wrap(
        sec.path,
        GngConfig,
        t_star=t_star,
        N=sec.integer("N", minimum=0),
        grid=grid,
        schedule=schedule,
        ddim_substeps=sec.integer("ddim_substeps", 2, minimum=1),
        eta_interleave=sec.real("eta", 1.0),
        phase1_opt=_opt_spec(sec.section("phase1", {}), 1e-4),
        phase2_opt=_opt_spec(sec.section("phase2", {}), 1e-3),
        renoise_std_mode=sec.string("renoise_std_mode", "sigma_squared", ("sigma_squared", "standard_sigma")),
        seed=seed,
    )
    sec.finish()
    return config, strategy


def _sweep(sec):
    """Per-strategy parameters for schedule sweeps, validated up front."""
    params = {}
    for name in list(sec.data):
        sub = sec.section(name)
        values = {key: sub.real(key) for key in list(sub.data) if key in ("p", "k", "mu", "sigma", "a", "b")}
        sub.finish()
        _wrap(sub.path, WeightStrategy, name, **values)
        params[name] = values
    sec.finish()
    return params


def parse_config(raw, source=None, seed=None, num_samples=None, out_dir=None, strategy=None):
    """Build an ``ExperimentConfig`` from a parsed YAML mapping.

    ``seed``, ``num_samples`` and ``out_dir`` override the file's values;
    ``strategy`` (a ``WeightStrategy``) replaces ``gng.timesteps``. ``raw``
    itself is kept unchanged as the report echo.
    """
    root = _Section(raw, "")
    base_dir = Path(source).parent if source is not None else Path.cwd()
    name = root.string("name", Path(source).stem if source is not None else "experiment")
    file_seed = root.integer("seed", 0)
    file_samples = root.integer("num_samples", minimum=1)
    seed = file_seed if seed is None else int(seed)
    num_samples = file_samples if num_samples is None else int(num_samples)
    if num_samples < 1:
        raise ConfigError("num_samples", f"must be at least 1, got {num_samples}")

    ns = root.section("noise_schedule", {})
    schedule = _wrap(
        "noise_schedule",
        NoiseSchedule,
        ns.string("kind", "trig_vp", ("trig_vp", "linear")),
        ns.integer("T_max", 1000, minimum=1),
    )
    ns.finish()

    prior, shape = _prior(root.section("prior"))
    codec = _codec(root.section("codec", {}), prior.dim)
    op = _operator(root.section("operator"), shape, base_dir)
    if op.in_dim != prior.dim:
        raise ConfigError("operator", f"operator acts on dimension {op.in_dim}, prior has dimension {prior.dim}")
    task = _observation(root.section("observation"), prior, codec, op)
    gng, strategy = _gng(root.section("gng"), schedule, seed, strategy)

    bl = root.section("baseline", {})
    baseline = BaselineSpec(
        enabled=bl.boolean("enabled", False),
        steps=bl.integer("steps", 1000, minimum=1),
        guidance_scale=bl.real("guidance_scale", 1.0, nonneg=True),
        eta=bl.real("eta", 1.0),
    )
    if not 0 <= baseline.eta <= 1:
        raise ConfigError("baseline.eta", f"must lie in [0, 1], got {baseline.eta}")
    if baseline.steps > schedule.T_max:
        raise ConfigError("baseline.steps", f"cannot exceed T_max = {schedule.T_max}")
    bl.finish()

    out = root.section("output", {})
    file_dir = out.string("dir", "out")
    output_dir = Path(file_dir if out_dir is None else out_dir)
    record_timing = out.boolean("record_timing", False)
    out.finish()
    sweep_params = _sweep(root.section("compare", {}))
    root.finish()
    return ExperimentConfig(
        name, seed, num_samples, prior, codec, task, gng, baseline, output_dir, record_timing, strategy, raw,
        Path(source) if source is not None else None, sweep_params,
    )


def bundled_configs():
    """Names of the example configurations shipped with the package."""
    root = resources.files("guess_guide") / "configs"
    return sorted(p.name[: -len(".yaml")] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_config_path(name_or_path):
    """A filesystem path, or the bundled config called ``name_or_path``."""
    path = Path(name_or_path)
    if path.exists():
        return path
    bundled = resources.files("guess_guide") / "configs" / f"{name_or_path}.yaml"
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError("--config", f"no such file or bundled config: {name_or_path}")


def load_config(name_or_path, **overrides):
    """Read, parse and validate a YAML config file (or bundled config name)."""
    path = resolve_config_path(name_or_path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"YAML parse error in {path}: {exc}") from None
    if raw is None:
        raise ConfigError("<root>", f"{path} is empty")
    return parse_config(raw, source=path, **overrides)
