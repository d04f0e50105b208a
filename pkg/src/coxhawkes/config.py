"""Run configuration: a JSON document validated against flat dotted key paths.

Nested objects are flattened (``{"mcmc": {"n_chains": 3}}`` becomes
``mcmc.n_chains``); every resulting key must appear in :data:`SCHEMA` or match
one of :data:`PATTERNS`.  Unknown keys and wrongly typed values are rejected
before any computation starts.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass

from .domain import Domain, GPHyper, ModelKind, TriggerParams
from .inference import McmcConfig
from .likelihood import Normal, PriorSpec, TruncNormal
from .simulate import SimConfig


class ConfigError(ValueError):
    """The configuration file is missing, malformed or violates the schema."""


_NUM = (int, float)
_KINDS = tuple(k.value for k in ModelKind)

# key -> (accepted types, default); a default of None means "no value"
SCHEMA = {
    "seed": (int, 0),
    "threads": (int, 1),
    "out": (str, None),
    "domain.t_max": (_NUM, 50.0),
    "domain.x_range": (list, [0.0, 1.0]),
    "domain.y_range": (list, [0.0, 1.0]),
    "model.kind": (str, "cox_hawkes"),
    "grid.n_t": (int, 50),
    "grid.n_x": (int, 25),
    "grid.n_y": (int, 25),
    "grid.var_frac": (_NUM, 0.99),
    "gp.t.length_scale": (_NUM, 10.0),
    "gp.t.variance": (_NUM, 1.0),
    "gp.s.length_scale": (_NUM, 0.25),
    "gp.s.variance": (_NUM, 1.0),
    "truth.a0": (_NUM, None),
    "truth.alpha": (_NUM, None),
    "truth.beta": (_NUM, None),
    "truth.sigma_x2": (_NUM, None),
    "truth.sigma_y2": (_NUM, None),
    "sim.var_frac": (_NUM, 1.0),
    "sim.background_method": (str, "categorical"),
    "priors.a0.mean": (_NUM, 0.0),
    "priors.a0.sd": (_NUM, 2.0),
    "priors.alpha.loc": (_NUM, 0.0),
    "priors.alpha.scale": (_NUM, 1.0),
    "priors.beta.loc": (_NUM, 0.0),
    "priors.beta.scale": (_NUM, 5.0),
    "priors.sigma_x2.loc": (_NUM, 0.0),
    "priors.sigma_x2.scale": (_NUM, 1.0),
    "priors.sigma_y2.loc": (_NUM, 0.0),
    "priors.sigma_y2.scale": (_NUM, 1.0),
    "mcmc.n_chains": (int, 3),
    "mcmc.n_samples": (int, 1500),
    "mcmc.n_warmup": (int, 500),
    "mcmc.n_leapfrog": (int, 32),
    "mcmc.leapfrog_jitter": (_NUM, 0.2),
    "mcmc.target_accept": (_NUM, 0.8),
    "mcmc.adapt_mass": (bool, False),
    "mcmc.init_jitter": (_NUM, 0.1),
    "mcmc.step_size": (_NUM, None),
    "predict.k": (int, 10),
    "predict.n_replicates": (int, 200),
    "predict.n_draws": (int, 50),
    "experiment.n_datasets": (int, 10),
    "experiment.n_predictions": (int, 50),
    "experiment.k": (int, 10),
    "experiment.train_frac": (_NUM, 0.8),
    "experiment.n_draws": (int, 50),
    "experiment.inference_kinds": (list, list(_KINDS)),
    "experiment.mcmc.n_chains": (int, 1),
    "experiment.mcmc.n_samples": (int, 600),
    "experiment.mcmc.n_warmup": (int, 300),
    "experiment.mcmc.n_leapfrog": (int, 16),
    "experiment.mcmc.adapt_mass": (bool, True),
}

# per-generator truths in the experiment grid: experiment.generators.<kind>.<param>
PATTERNS = {
    re.compile(rf"experiment\.generators\.({'|'.join(_KINDS)})\.(a0|alpha|beta|sigma_x2|sigma_y2)"): _NUM,
}


def flatten(obj: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in obj.items():
        if not isinstance(k, str) or not k:
            raise ConfigError(f"invalid key {k!r}")
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            if not v:
                raise ConfigError(f"{key}: empty section")
            out.update(flatten(v, key + "."))
        else:
            if key in out:
                raise ConfigError(f"duplicate key {key}")
            out[key] = v
    return out


def _check_type(key, value, types):
    if value is None:
        return
    types = types if isinstance(types, tuple) else (types,)
    # bool is an int subclass; only accept it where bool is asked for
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{key}: expected {'/'.join(t.__name__ for t in types)}, got bool")
    if not isinstance(value, types):
        raise ConfigError(f"{key}: expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")


@dataclass(frozen=True)
class RunConfig:
    """Validated flat configuration with defaults filled in."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def hash(self) -> str:
        """Short SHA-256 of the canonical JSON of every resolved key except ``out``."""
        payload = {k: v for k, v in self.values.items() if k != "out"}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # typed views
    @property
    def kind(self) -> ModelKind:
        return ModelKind(self.values["model.kind"])

    def domain(self) -> Domain:
        v = self.values
        return Domain(float(v["domain.t_max"]), tuple(v["domain.x_range"]), tuple(v["domain.y_range"]))

    def gp_t(self) -> GPHyper:
        return GPHyper(float(self["gp.t.length_scale"]), float(self["gp.t.variance"]))

    def gp_s(self) -> GPHyper:
        return GPHyper(float(self["gp.s.length_scale"]), float(self["gp.s.variance"]))

    def trigger(self, prefix: str = "truth") -> TriggerParams | None:
        names = ("alpha", "beta", "sigma_x2", "sigma_y2")
        vals = [self.values.get(f"{prefix}.{n}") for n in names]
        if all(v is None for v in vals):
            return None
        missing = [n for n, v in zip(names, vals) if v is None]
        if missing:
            raise ConfigError(f"{prefix}: missing trigger parameter(s) {', '.join(missing)}")
        return TriggerParams(*map(float, vals))

    def priors(self) -> PriorSpec:
        v = self.values
        return PriorSpec(
            Normal(v["priors.a0.mean"], v["priors.a0.sd"]),
            *(TruncNormal(v[f"priors.{n}.loc"], v[f"priors.{n}.scale"])
              for n in ("alpha", "beta", "sigma_x2", "sigma_y2")),
        )

    def mcmc(self, prefix: str = "mcmc") -> McmcConfig:
        v = self.values
        base = {
            "n_chains": v["mcmc.n_chains"],
            "n_samples": v["mcmc.n_samples"],
            "n_warmup": v["mcmc.n_warmup"],
            "n_leapfrog": v["mcmc.n_leapfrog"],
            "leapfrog_jitter": float(v["mcmc.leapfrog_jitter"]),
            "target_accept": float(v["mcmc.target_accept"]),
            "adapt_mass": v["mcmc.adapt_mass"],
            "init_jitter": float(v["mcmc.init_jitter"]),
            "step_size": None if v["mcmc.step_size"] is None else float(v["mcmc.step_size"]),
            "seed": v["seed"],
        }
        if prefix != "mcmc":
            for k in ("n_chains", "n_samples", "n_warmup", "n_leapfrog", "adapt_mass"):
                base[k] = v[f"{prefix}.{k}"]
        return McmcConfig(**base)

    def sim_config(self, kind: ModelKind | None = None, truth_prefix: str = "truth") -> SimConfig:
        kind = self.kind if kind is None else ModelKind(kind)
        a0 = self.values.get(f"{truth_prefix}.a0")
        if a0 is None:
            raise ConfigError(f"{truth_prefix}.a0 is required for simulation")
        trig = self.trigger(truth_prefix) if kind.has_trigger else None
        if kind.has_trigger and trig is None:
            raise ConfigError(f"model kind {kind.value} requires {truth_prefix}.alpha/beta/sigma_x2/sigma_y2")
        try:
            return SimConfig(
                self.domain(), kind, float(a0), trig,
                self.gp_t() if kind.has_gp else None, self.gp_s() if kind.has_gp else None,
                self["grid.n_t"], self["grid.n_x"], self["grid.n_y"], float(self["sim.var_frac"]),
                self.seed, background_method=self["sim.background_method"],
            )
        except ValueError as exc:
            raise ConfigError(f"{truth_prefix}: {exc}") from exc

    def generators(self) -> dict:
        kinds = sorted({k.split(".")[2] for k in self.values if k.startswith("experiment.generators.")},
                       key=_KINDS.index)
        return {k: self.sim_config(k, f"experiment.generators.{k}") for k in kinds}


def validate(raw: dict, overrides: dict | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    flat = flatten(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            flat[k] = v
    for key, value in flat.items():
        if key in SCHEMA:
            _check_type(key, value, SCHEMA[key][0])
            continue
        for pat, types in PATTERNS.items():
            if pat.fullmatch(key):
                _check_type(key, value, types)
                break
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    values = {k: d for k, (_, d) in SCHEMA.items()}
    values.update(flat)
    _check_semantics(values)
    cfg = RunConfig(values)
    # surface constructor-level invariants as configuration errors
    try:
        cfg.domain()
        cfg.priors()
        cfg.mcmc()
        cfg.mcmc("experiment.mcmc")
        cfg.gp_t()
        cfg.gp_s()
        cfg.trigger()
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg


def _check_semantics(v: dict) -> None:
    if v["model.kind"] not in _KINDS:
        raise ConfigError(f"model.kind must be one of {', '.join(_KINDS)}")
    for key in ("domain.x_range", "domain.y_range"):
        r = v[key]
        if len(r) != 2 or not all(isinstance(e, _NUM) and not isinstance(e, bool) for e in r):
            raise ConfigError(f"{key}: expected two numbers")
    for key in ("grid.n_t", "grid.n_x", "grid.n_y", "threads", "predict.k", "predict.n_replicates",
                "predict.n_draws", "experiment.n_datasets", "experiment.n_predictions", "experiment.k",
                "experiment.n_draws"):
        if v[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    for key in ("grid.var_frac", "sim.var_frac"):
        if not 0 < v[key] <= 1:
            raise ConfigError(f"{key} must lie in (0, 1]")
    if not 0 < v["experiment.train_frac"] < 1:
        raise ConfigError("experiment.train_frac must lie in (0, 1)")
    bad = [k for k in v["experiment.inference_kinds"] if k not in _KINDS]
    if bad or not v["experiment.inference_kinds"]:
        raise ConfigError(f"experiment.inference_kinds: unknown kind(s) {bad}")
    if v["sim.background_method"] not in ("categorical", "rejection"):
        raise ConfigError("sim.background_method must be 'categorical' or 'rejection'")
    if v["seed"] < 0:
        raise ConfigError("seed must be nonnegative")


def load(path, overrides: dict | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return validate(raw, overrides)
