"""Command-line front end: ``run``, ``compare-schedules``, ``baseline``, ``oracle`` and ``verify``.

Exit statuses: 0 on success, ``EXIT_CONFIG`` for invalid configuration or
arguments, ``EXIT_RUNTIME`` when a run fails, and ``EXIT_VERIFY`` when a
check fails or cannot be applied.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import bundled_configs, load_config
from .errors import ConfigError, GuessGuideError, InapplicableError
from .oracle import exact_posterior
from .sampler import expected_denoiser_calls, run_dps_baseline, run_gng
from .schedule import STRATEGIES, WeightStrategy
from .verify import CHECKS, run_suite

__all__ = ["main", "run_experiment", "run_baseline", "compare_schedules", "oracle_dump", "METRIC_COLUMNS"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_VERIFY = 4

METRIC_COLUMNS = (
    "sample_id",
    "mse_to_truth",
    "residual_norm",
    "posterior_mean_err",
    "posterior_cov_err",
    "denoiser_calls",
    "denoiser_grad_calls",
    "wall_ms",
)
SUMMARY_COLUMNS = METRIC_COLUMNS[1:]
SCHEDULE_COLUMNS = ("strategy", "params", "status", "error") + SUMMARY_COLUMNS


# ----------------------------------------------------------------------------- output


def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        # shortest round-trip form with '.' decimals; undefined metrics stay blank
        return repr(float(v)) if math.isfinite(v) else ""
    return str(v)


def csv_text(rows, columns):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def json_text(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


# ----------------------------------------------------------------------------- runners


def _summary(rows):
    if not rows:
        return {c: None for c in SUMMARY_COLUMNS}
    out = {}
    for c in SUMMARY_COLUMNS:
        vals = [r[c] for r in rows if r[c] is not None and math.isfinite(r[c])]
        out[c] = float(np.mean(vals)) if vals else None
    return out


def _posterior(cfg):
    return exact_posterior(cfg.prior, cfg.task, cfg.codec) if cfg.task.operator.is_linear else None


def _finish_rows(cfg, rows):
    if not cfg.record_timing:
        for r in rows:
            r["wall_ms"] = None
    return rows


def _base_report(cfg, command, overrides):
    g = cfg.gng
    return {
        "command": command,
        "name": cfg.name,
        "config": cfg.raw,
        "overrides": {k: v for k, v in overrides.items() if v is not None},
        "resolved": {
            "seed": cfg.seed,
            "num_samples": cfg.num_samples,
            "noise_schedule": {"kind": g.schedule.kind, "T_max": g.schedule.T_max},
            "t_star_index": g.t_star_index,
            "strategy": {"kind": cfg.strategy.kind, "params": cfg.strategy.params()},
            "grid": list(g.grid.steps),
            "deltas": list(g.grid.deltas),
            "operator": type(cfg.task.operator).__name__,
            "signal_dim": cfg.prior.dim,
            "observation_dim": cfg.task.operator.out_dim,
        },
        "rng": "SeedSequence(seed).spawn(num_samples)[sample].spawn(2)[phase - 1]",
    }


def _moments(samples):
    samples = np.asarray(samples)
    return {"sample_mean": samples.mean(axis=0), "sample_std": samples.std(axis=0, ddof=1) if len(samples) > 1 else None}


def run_experiment(cfg, overrides=None):
    """Run Guess-and-Guide for ``cfg``; returns ``(report, rows)``."""
    post = _posterior(cfg)
    rr = run_gng(cfg.prior, cfg.codec, cfg.task, cfg.gng, cfg.num_samples, posterior=post)
    rows = _finish_rows(cfg, rr.metrics)
    report = _base_report(cfg, "run", overrides or {})
    g = cfg.gng
    report.update(
        counters=asdict(rr.counters),
        per_sample_denoiser_calls=rows[0]["denoiser_calls"] if rows else 0,
        expected_denoiser_calls=expected_denoiser_calls(g.N, g.M, g.ddim_substeps, g.grid),
        summary=_summary(rows),
        wall_time_s=rr.wall_time if cfg.record_timing else None,
        **_moments(rr.samples),
    )
    if post is not None:
        report["exact_posterior"] = {"weights": post.weights, "mean": post.mean()}
    return report, rows


def run_baseline(cfg, overrides=None):
    """Run the gradient-guided baseline with ``cfg.baseline`` settings."""
    post = _posterior(cfg)
    b = cfg.baseline
    rr = run_dps_baseline(
        cfg.prior, cfg.codec, cfg.task, b.steps, b.guidance_scale, rng=cfg.seed, schedule=cfg.gng.schedule,
        eta=b.eta, num_samples=cfg.num_samples, posterior=post,
    )
    rows = _finish_rows(cfg, rr.metrics)
    report = _base_report(cfg, "baseline", overrides or {})
    report["resolved"]["baseline"] = asdict(b)
    report.update(
        counters=asdict(rr.counters),
        summary=_summary(rows),
        wall_time_s=rr.wall_time if cfg.record_timing else None,
        rng="SeedSequence(seed).spawn(num_samples)[sample]",
        **_moments(rr.samples),
    )
    if post is not None:
        report["exact_posterior"] = {"weights": post.weights, "mean": post.mean()}
    return report, rows


def _strategy_for(name, base, sweep_params):
    if name in sweep_params:
        return WeightStrategy(name, **sweep_params[name])
    return base if base.kind == name else WeightStrategy(name)


def compare_schedules(config_path, strategies=None, **overrides):
    """One row of summary metrics per timestep strategy, all with the same seed.

    A strategy that fails (for instance an infeasible allocation) yields a
    row with ``status = "error"``; the sweep carries on.
    """
    base = load_config(config_path, **overrides)
    base_strategy = base.strategy
    rows = []
    for name in strategies or STRATEGIES:
        row = {"strategy": name, "params": "", "status": "ok", "error": ""}
        try:
            strategy = _strategy_for(name, base_strategy, base.sweep_params)
            row["params"] = json.dumps(strategy.params(), sort_keys=True)
            cfg = load_config(config_path, strategy=strategy, **overrides)
            _, sample_rows = run_experiment(cfg)
            row.update(_summary(sample_rows))
        except (GuessGuideError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            row.update(status="error", error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return base, rows


def oracle_dump(cfg):
    post = exact_posterior(cfg.prior, cfg.task, cfg.codec)
    return {"name": cfg.name, "config": cfg.raw, "posterior": post.to_dict()}


# ----------------------------------------------------------------------------- commands


def _load(args, **extra):
    return load_config(args.config, seed=args.seed, num_samples=args.samples, out_dir=args.out_dir, **extra)


def _overrides(args):
    return {"seed": args.seed, "num_samples": args.samples}


def _write_pair(cfg, stem, report, rows, columns=METRIC_COLUMNS):
    out = cfg.output_dir
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    report["files"] = {"csv": csv_path.name, "json": json_path.name}
    _atomic_write(csv_path, csv_text(rows, columns))
    _atomic_write(json_path, json_text(report))
    return csv_path, json_path


def _print_summary(label, summary):
    keys = ("mse_to_truth", "residual_norm", "posterior_mean_err", "posterior_cov_err", "denoiser_calls", "denoiser_grad_calls")
    vals = " ".join(f"{k}={_cell(summary.get(k))}" for k in keys)
    print(f"{label}: {vals}")


def cmd_run(args):
    cfg = _load(args)
    report, rows = run_experiment(cfg, _overrides(args))
    if cfg.baseline.enabled:
        b_report, b_rows = run_baseline(cfg, _overrides(args))
        _write_pair(cfg, f"{cfg.name}_baseline", b_report, b_rows)
        report["baseline_summary"] = b_report["summary"]
        _print_summary("baseline", b_report["summary"])
    csv_path, _ = _write_pair(cfg, cfg.name, report, rows)
    _print_summary(cfg.name, report["summary"])
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_baseline(args):
    cfg = _load(args)
    report, rows = run_baseline(cfg, _overrides(args))
    csv_path, _ = _write_pair(cfg, f"{cfg.name}_baseline", report, rows)
    _print_summary(f"{cfg.name} baseline", report["summary"])
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_compare(args):
    unknown = [s for s in args.strategies or () if s not in STRATEGIES]
    if unknown:
        raise ConfigError("--strategies", f"unknown strategy {unknown[0]!r}; expected one of {', '.join(STRATEGIES)}")
    cfg, rows = compare_schedules(
        args.config, args.strategies, seed=args.seed, num_samples=args.samples, out_dir=args.out_dir
    )
    report = _base_report(cfg, "compare-schedules", _overrides(args))
    report["rows"] = rows
    csv_path, _ = _write_pair(cfg, f"{cfg.name}_schedules", report, rows, SCHEDULE_COLUMNS)
    for row in rows:
        if row["status"] == "ok":
            _print_summary(row["strategy"], row)
        else:
            print(f"{row['strategy']}: {row['error']}")
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_oracle(args):
    cfg = _load(args)
    if not cfg.task.operator.is_linear:
        raise ConfigError("operator", f"no closed-form posterior for nonlinear {type(cfg.task.operator).__name__}")
    dump = oracle_dump(cfg)
    path = cfg.output_dir / f"{cfg.name}_oracle.json"
    _atomic_write(path, json_text(dump))
    post = dump["posterior"]
    print(f"weights: {_clean(post['weights'])}")
    if cfg.prior.dim <= 8:
        print(f"mean: {_clean(post['mean'])}")
        print(f"covariance: {_clean(post['covariance'])}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_verify(args):
    try:
        results = run_suite(seed=args.seed or 0, names=args.checks, q=args.q, eps=args.eps)
    except InapplicableError as exc:
        print(f"inapplicable: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    for r in results:
        print(r.line())
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} checks passed")
    if args.out_dir is not None:
        doc = {"seed": args.seed or 0, "q": args.q, "eps": args.eps, "checks": [asdict(r) for r in results]}
        _atomic_write(Path(args.out_dir) / "verify.json", json_text(doc))
    return EXIT_OK if passed == len(results) else EXIT_VERIFY


def _common(p, needs_config=True):
    if needs_config:
        p.add_argument("--config", required=True, help="YAML config path, or a bundled config name")
    p.add_argument("--seed", type=int, default=None, help="root seed, overriding the config")
    p.add_argument("--out-dir", default=None, help="output directory, overriding the config")
    p.add_argument("--samples", type=int, default=None, help="number of samples, overriding the config")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="guess-guide",
        description="Gradient-free diffusion posterior sampling over analytic priors.",
        epilog=f"bundled configs: {', '.join(bundled_configs())}",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="sample and write per-sample metrics")
    _common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("compare-schedules", help="sweep timestep strategies on one config")
    _common(p)
    p.add_argument("--strategies", nargs="+", default=None, metavar="NAME", help=f"subset of {', '.join(STRATEGIES)}")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("baseline", help="run the gradient-guided baseline sampler")
    _common(p)
    p.set_defaults(func=cmd_baseline)
    p = sub.add_parser("oracle", help="write the exact posterior of a linear task")
    _common(p)
    p.set_defaults(func=cmd_oracle)
    p = sub.add_parser("verify", help="run the fixed-point and coupling checks")
    _common(p, needs_config=False)
    p.add_argument("--checks", nargs="+", default=None, choices=list(CHECKS), metavar="NAME", help=f"subset of {', '.join(CHECKS)}")
    p.add_argument("--q", type=float, default=0.5, help="contraction factor for the inexact-update check")
    p.add_argument("--eps", type=float, default=0.01, help="per-step perturbation size for the inexact-update check")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "samples", None) is not None and args.samples < 1:
        print("error: --samples: must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GuessGuideError, ValueError, TypeError, ArithmeticError, np.linalg.LinAlgError, OSError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
