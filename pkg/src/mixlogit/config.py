"""Run configuration: one INI-style file per run, validated before any work.

Values are parsed as JSON when possible (numbers, lists, objects, booleans),
otherwise kept as strings.  Unknown sections and keys are rejected.

Example::

    [run]
    output_root = out
    seed = 0
    replications = 3

    [scenario]
    scenario = multimodal
    N = 500
    T = 8

    [utility]
    variant = linear
    columns = [0, 1]

    [methods]
    names = ["mvn", "fmon", "dpmon"]

    [method.dpmon]
    kind = dpmon
    K = 50

    [mcmc]
    n_iterations = 20000
    n_burnin = 10000
"""

from __future__ import annotations

import configparser
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .data import SplitSpec
from .errors import ConfigError
from .sampler.model import HyperPriors, MCMCConfig, MixingSpec, ModelPriors, default_priors
from .synthgen import ScenarioSpec
from .utility import UtilitySpec

OUTPUT_ROOT_ENV = "MIXLOGIT_OUTPUT_ROOT"

SECTION_KEYS = {
    "run": {"output_root", "seed", "replications"},
    "scenario": {"scenario", "N", "T", "J", "attribute_low", "attribute_high", "n_validation",
                 "validation_tasks"},
    "data": {"train", "validation", "schema", "split_train_fraction", "split_validation_persons",
             "split_validation_tasks"},
    "utility": {"variant", "columns", "asc", "price", "wtp_columns"},
    "methods": {"names"},
    "priors": {"mixing", "normal"},
    "mcmc": {"n_chains", "n_iterations", "n_burnin", "thinning", "rho0", "rho_increment", "rho_min",
             "target_acceptance", "freeze_after_burnin"},
    "evaluate": {"n_taste_draws", "true_taste_draws", "max_posterior_draws", "summary_taste_draws"},
}
METHOD_KEYS = {"kind", "K", "dirichlet_alpha", "dp_alpha_shape", "dp_alpha_rate", "fixed_alpha"}


def _value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw.strip()


@dataclass(frozen=True)
class EvalSettings:
    n_taste_draws: int = 2000
    true_taste_draws: int = 10_000
    max_posterior_draws: int | None = None
    summary_taste_draws: int = 200


@dataclass(frozen=True)
class DataSource:
    """Observed data instead of simulated replications."""

    train: Path
    validation: Path | None = None
    schema: dict | None = None
    split: SplitSpec | None = None


@dataclass(frozen=True)
class RunConfig:
    path: Path
    output_root: Path
    seed: int = 0
    replications: int = 1
    scenario: ScenarioSpec | None = None
    n_validation: int = 25
    validation_tasks: int = 1
    data: DataSource | None = None
    utility: UtilitySpec | None = None
    methods: dict[str, MixingSpec] = field(default_factory=dict)
    priors: dict = field(default_factory=dict)
    mcmc: MCMCConfig = MCMCConfig()
    evaluate: EvalSettings = EvalSettings()

    # layout of the output tree
    def replication_dir(self, r: int) -> Path:
        return self.output_root / "data" / f"rep_{r:03d}"

    def fit_dir(self, method: str, r: int) -> Path:
        return self.output_root / "fits" / method / f"rep_{r:03d}"

    @property
    def metrics_path(self) -> Path:
        return self.output_root / "metrics" / "metrics.csv"

    @property
    def report_dir(self) -> Path:
        return self.output_root / "report"

    def mcmc_for(self, r: int) -> MCMCConfig:
        return replace(self.mcmc, seed=self.seed + r)

    def scenario_for(self, r: int) -> ScenarioSpec:
        if self.scenario is None:
            raise ConfigError("config has no [scenario] section")
        return replace(self.scenario, seed=self.seed + r)

    def priors_for(self, mixing: MixingSpec) -> ModelPriors:
        part = self.utility.partition
        base = default_priors(mixing, len(part.mixing), len(part.normal))
        mix = HyperPriors.from_dict(self.priors["mixing"], len(part.mixing)) if "mixing" in self.priors \
            else base.mixing
        normal = base.normal
        if part.normal and "normal" in self.priors:
            normal = HyperPriors.from_dict(self.priors["normal"], len(part.normal))
        return ModelPriors(mix, normal)


def _section(cp: configparser.ConfigParser, name: str) -> dict:
    if not cp.has_section(name):
        return {}
    return {k: _value(v) for k, v in cp.items(name)}


def load_config(path, seed: int | None = None) -> RunConfig:
    """Parse and validate a run config; ``seed`` overrides ``[run] seed``."""
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (N, T, K)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    method_sections = [s for s in cp.sections() if s.startswith("method.")]
    for s in cp.sections():
        if s in method_sections:
            allowed = METHOD_KEYS
        elif s in SECTION_KEYS:
            allowed = SECTION_KEYS[s]
        else:
            raise ConfigError(f"unknown config section [{s}]")
        unknown = set(cp.options(s)) - allowed
        if unknown:
            raise ConfigError(f"unknown keys in [{s}]: {sorted(unknown)}")

    base = path.parent
    run = _section(cp, "run")
    root = os.environ.get(OUTPUT_ROOT_ENV) or run.get("output_root", "output")
    root = Path(root) if Path(root).is_absolute() else base / root
    kwargs = {"path": path, "output_root": root,
              "seed": int(seed if seed is not None else run.get("seed", 0)),
              "replications": int(run.get("replications", 1))}
    if kwargs["replications"] < 1:
        raise ConfigError("replications must be at least 1")

    try:
        sc = _section(cp, "scenario")
        if sc:
            lo, hi = sc.pop("attribute_low", -5.0), sc.pop("attribute_high", 5.0)
            kwargs["n_validation"] = int(sc.pop("n_validation", 25))
            kwargs["validation_tasks"] = int(sc.pop("validation_tasks", 1))
            kwargs["scenario"] = ScenarioSpec(attribute_range=(float(lo), float(hi)), **sc)

        ds = _section(cp, "data")
        if ds:
            if "train" not in ds:
                raise ConfigError("[data] needs a train path")
            split = None
            if "split_train_fraction" in ds or "split_validation_persons" in ds:
                n_val = ds.get("split_validation_persons")
                split = SplitSpec(float(ds.get("split_train_fraction", 0.8)),
                                  int(ds.get("split_validation_tasks", 1)), kwargs["seed"],
                                  None if n_val is None else int(n_val))
            val = ds.get("validation")
            kwargs["data"] = DataSource(base / ds["train"], base / val if val else None, ds.get("schema"), split)
        if kwargs.get("scenario") and kwargs.get("data"):
            raise ConfigError("[scenario] and [data] are mutually exclusive")

        ut = _section(cp, "utility")
        if ut:
            kwargs["utility"] = UtilitySpec.from_dict(ut)
        elif kwargs.get("scenario"):
            kwargs["utility"] = UtilitySpec.linear([0, 1])

        names = _section(cp, "methods").get("names")
        if names is None:
            names = [s.split(".", 1)[1] for s in method_sections] or ["mvn"]
        if isinstance(names, str):
            names = [n.strip() for n in names.split(",") if n.strip()]
        methods = {}
        for name in names:
            spec = _section(cp, f"method.{name}")
            spec.setdefault("kind", name)
            methods[name] = MixingSpec.from_dict(spec)
        for s in method_sections:
            if s.split(".", 1)[1] not in methods:
                raise ConfigError(f"[{s}] is not listed in [methods] names")
        kwargs["methods"] = methods

        kwargs["priors"] = _section(cp, "priors")
        kwargs["mcmc"] = MCMCConfig.from_dict({**_section(cp, "mcmc"), "seed": kwargs["seed"]})
        kwargs["evaluate"] = EvalSettings(**_section(cp, "evaluate"))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc

    cfg = RunConfig(**kwargs)
    if cfg.utility is not None and cfg.priors:
        for m in cfg.methods.values():
            cfg.priors_for(m)  # validate dimensions up front
    return cfg
