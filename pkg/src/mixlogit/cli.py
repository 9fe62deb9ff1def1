"""Command-line entry point: ``mixlogit simulate|fit|evaluate|report --config PATH``.

Exit codes: 0 success, 2 configuration or input error, 3 runtime or sampler
error.  The output tree under ``[run] output_root`` (or ``$MIXLOGIT_OUTPUT_ROOT``)::

    data/rep_000/{train,validation,train_tastes,validation_tastes}.csv, scenario.json
    fits/<method>/rep_000/            draws directory
    fits/<method>/rep_000.timing.json wall-clock runtime
    metrics/metrics.csv               method, replication, metric, value
    report/summary.csv                method, metric, n, mean, std_err
    report/<method>_*.csv             heterogeneity tables and grids (replication 0)
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluate as ev
from .config import RunConfig, load_config
from .data import ChoiceDataset, atomic_write, format_float, load_csv, split_train_validation, write_csv
from .errors import (ConfigError, CoverageError, IntegrityError, MixLogitError, SamplerError, SchemaError,
                     SpecMismatch)
from .sampler import PosteriorDraws, run_estimation
from .stats import RandomStream
from .synthgen import ScenarioTasteLaw, simulate_replication, true_predictive_distribution, write_tastes_csv
from .utility import WTP

log = logging.getLogger("mixlogit")

METRICS = ("tvd", "lppd_train", "lppd_validation", "p_waic", "waic", "runtime")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
INPUT_ERRORS = (ConfigError, SchemaError, IntegrityError, SpecMismatch, CoverageError, OSError)


# ---------------------------------------------------------------------------
# Data access


def _replications(cfg: RunConfig) -> range:
    return range(1 if cfg.data is not None else cfg.replications)


def load_replication(cfg: RunConfig, r: int) -> tuple[ChoiceDataset, ChoiceDataset | None]:
    if cfg.data is not None:
        train = load_csv(cfg.data.train, cfg.data.schema)
        if cfg.data.validation is not None:
            return train, load_csv(cfg.data.validation, cfg.data.schema)
        if cfg.data.split is not None:
            return split_train_validation(train, cfg.data.split)
        return train, None
    d = cfg.replication_dir(r)
    if not (d / "train.csv").exists():
        raise ConfigError(f"{d / 'train.csv'} not found; run `simulate` first")
    val = d / "validation.csv"
    return load_csv(d / "train.csv"), load_csv(val) if val.exists() else None


# ---------------------------------------------------------------------------
# Commands


def cmd_simulate(cfg: RunConfig, jobs: int = 1) -> None:
    if cfg.scenario is None:
        raise ConfigError("simulate needs a [scenario] section")
    for r in _replications(cfg):
        spec = cfg.scenario_for(r)
        rep = simulate_replication(spec, cfg.n_validation, cfg.validation_tasks)
        d = cfg.replication_dir(r)
        d.mkdir(parents=True, exist_ok=True)
        write_csv(rep.train, d / "train.csv")
        write_csv(rep.validation, d / "validation.csv")
        write_tastes_csv(rep.train_tastes, rep.train.person_ids, d / "train_tastes.csv")
        write_tastes_csv(rep.validation_tastes, rep.validation.person_ids, d / "validation_tastes.csv")
        meta = {"scenario": spec.scenario, "N": spec.N, "T": spec.T, "J": spec.J,
                "attribute_range": list(spec.attribute_range), "seed": spec.seed,
                "n_validation": cfg.n_validation, "validation_tasks": cfg.validation_tasks}
        atomic_write(d / "scenario.json", lambda fh: fh.write(json.dumps(meta, indent=2, sort_keys=True) + "\n"))
        log.info("replication %d written to %s", r, d)


def _fit_job(args) -> tuple[str, int, float]:
    cfg_path, seed, method, r = args
    cfg = load_config(cfg_path, seed)
    train, _ = load_replication(cfg, r)
    cfg.utility.check_columns(len(train.attribute_names))
    mixing = cfg.methods[method]
    draws = run_estimation(train, cfg.utility, mixing, cfg.priors_for(mixing), cfg.mcmc_for(r))
    out = cfg.fit_dir(method, r)
    draws.save(out)
    atomic_write(timing_path(out), lambda fh: fh.write(json.dumps({"runtime_seconds": draws.runtime}) + "\n"))
    return method, r, draws.runtime


def timing_path(fit_dir: Path) -> Path:
    """Wall-clock sidecar, kept outside the draws directory so that
    directory is bit-identical across repeated fits."""
    return fit_dir.with_name(fit_dir.name + ".timing.json")


def _pool_map(fn, jobs_args, jobs: int):
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, jobs_args))
    return [fn(a) for a in jobs_args]


def cmd_fit(cfg: RunConfig, jobs: int = 1) -> None:
    if cfg.utility is None:
        raise ConfigError("fit needs a [utility] section")
    args = [(cfg.path, cfg.seed, m, r) for m in cfg.methods for r in _replications(cfg)]
    for method, r, runtime in _pool_map(_fit_job, args, jobs):
        log.info("fit %s replication %d in %.1f s", method, r, runtime)


def _true_predictive(cfg: RunConfig, r: int, validation: ChoiceDataset) -> np.ndarray | None:
    if cfg.data is not None:
        return None
    d = cfg.replication_dir(r)
    if not (d / "validation_tastes.csv").exists() or not (d / "scenario.json").exists():
        return None
    scenario = json.loads((d / "scenario.json").read_text(encoding="utf-8"))["scenario"]
    law = ScenarioTasteLaw(scenario)
    rng = RandomStream(cfg.seed + r).child(7)
    return true_predictive_distribution(validation.arrays.X, law.sample, cfg.evaluate.true_taste_draws, rng)


def _evaluate_job(args) -> list[tuple[str, int, str, float]]:
    cfg_path, seed, method, r = args
    cfg = load_config(cfg_path, seed)
    train, validation = load_replication(cfg, r)
    if validation is None:
        raise ConfigError("evaluate needs validation data ([data] validation or a split)")
    mixing = cfg.methods[method]
    fit = cfg.fit_dir(method, r)
    if not (fit / "meta.json").exists():
        raise ConfigError(f"no draws at {fit}; run `fit` first")
    draws = PosteriorDraws.load(fit)
    s = cfg.evaluate
    values = {}
    w = ev.waic(draws, train, cfg.utility)
    values.update(lppd_train=w.lppd, p_waic=w.p_waic, waic=w.waic)
    pred = ev.predictive_choice_distribution(draws, mixing, cfg.utility, validation, s.n_taste_draws,
                                             RandomStream(cfg.seed + r).child(8), s.max_posterior_draws)
    values["lppd_validation"] = ev.lppd_validation(pred, validation)
    truth = _true_predictive(cfg, r, validation)
    if truth is not None:
        values["tvd"] = ev.tvd_mean(pred.probs, truth)
    else:
        log.warning("no true-taste sidecar for %s replication %d; TVD omitted", method, r)
    timing = timing_path(fit)
    if timing.exists():
        values["runtime"] = json.loads(timing.read_text(encoding="utf-8"))["runtime_seconds"]
    return [(method, r, m, float(values[m])) for m in METRICS if m in values]


def cmd_evaluate(cfg: RunConfig, jobs: int = 1) -> None:
    args = [(cfg.path, cfg.seed, m, r) for m in cfg.methods for r in _replications(cfg)]
    rows = [row for rows in _pool_map(_evaluate_job, args, jobs) for row in rows]
    cfg.metrics_path.parent.mkdir(parents=True, exist_ok=True)

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "replication", "metric", "value"])
        for method, r, metric, value in rows:
            w.writerow([method, r, metric, format_float(value)])
    atomic_write(cfg.metrics_path, write)


def read_metrics(path) -> list[tuple[str, int, str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [(row["method"], int(row["replication"]), row["metric"], float(row["value"]))
                for row in csv.DictReader(fh)]


def summarize_metrics(rows) -> list[tuple[str, str, int, float, float | None]]:
    """``(method, metric, n, mean, std_err)`` sorted by method then metric;
    ``std_err`` is ``None`` for a single replication."""
    groups: dict[tuple[str, str], list[float]] = {}
    for method, _, metric, value in rows:
        groups.setdefault((method, metric), []).append(value)
    out = []
    for (method, metric), vals in sorted(groups.items()):
        v = np.asarray(vals)
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else None
        out.append((method, metric, int(v.size), float(v.mean()), se))
    return out


def cmd_report(cfg: RunConfig, jobs: int = 1) -> None:
    if not cfg.metrics_path.exists():
        raise ConfigError(f"{cfg.metrics_path} not found; run `evaluate` first")
    rows = read_metrics(cfg.metrics_path)
    if not rows:
        raise ConfigError(f"{cfg.metrics_path} holds no metrics")
    cfg.report_dir.mkdir(parents=True, exist_ok=True)

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "metric", "n", "mean", "std_err"])
        for method, metric, n, mean, se in summarize_metrics(rows):
            w.writerow([method, metric, n, format_float(mean), "" if se is None else format_float(se)])
    atomic_write(cfg.report_dir / "summary.csv", write)

    for method, mixing in cfg.methods.items():
        fit = cfg.fit_dir(method, 0)
        if not (fit / "meta.json").exists():
            continue
        draws = PosteriorDraws.load(fit)
        names = draws.meta.get("param_names")
        rng = RandomStream(cfg.seed).child(9)
        summary = ev.wtp_summary(draws, mixing, cfg.utility, cfg.evaluate.summary_taste_draws, rng, names)
        prefix = "wtp" if cfg.utility.variant == WTP else "taste"
        ev.write_summary_csv(summary, cfg.report_dir / f"{method}_{prefix}_percentiles.csv")
        ev.write_cdf_csv(summary, cfg.report_dir / f"{method}_{prefix}_cdf.csv")
        if draws.layout.R in (1, 2):
            grid = _density_grid_points(summary, cfg.utility)
            dens = ev.mixture_density_grid(draws, grid, max_posterior_draws=500)
            mix_names = [summary.names[i] for i in cfg.utility.partition.mixing]
            ev.write_density_grid_csv(dens, cfg.report_dir / f"{method}_density_grid.csv", mix_names)


def _density_grid_points(summary, utility, n: int = 41) -> np.ndarray:
    axes = [np.linspace(summary.cdf_x[i, 0], summary.cdf_x[i, -1], n) for i in utility.partition.mixing]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixlogit", description="Bayesian mixed logit estimation")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--jobs", type=int, default=1, help="parallel replication/method jobs")
    p.add_argument("--seed", type=int, default=None, help="override [run] seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = load_config(args.config, args.seed)
        COMMANDS[args.command](cfg, args.jobs)
    except SamplerError as exc:
        print(f"error: sampler aborted at iteration {exc.iteration}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MixLogitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
