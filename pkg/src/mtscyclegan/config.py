"""JSON run configuration with full defaulting."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .nets import DiscriminatorConfig, GeneratorConfig
from .synthgen import (ChannelMapping, DomainParams, DriverSpec, WindowSpec, check_domain_pair,
                       default_source_params, default_target_params)
from .training import LossWeights, OptimizerConfig, TrainConfig

EVAL_SEED_OFFSET = 100


@dataclass(frozen=True)
class RunConfig:
    spec: WindowSpec = field(default_factory=WindowSpec)
    source: DomainParams = field(default_factory=default_source_params)
    target: DomainParams = field(default_factory=default_target_params)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_windows: int = 512
    n_eval_windows: int = 256
    output_dir: str = "runs/default"
    seed: int = 0

    def eval_params(self, which: str) -> DomainParams:
        p = self.source if which == "source" else self.target
        return replace(p, seed=p.seed + EVAL_SEED_OFFSET)

    def domain(self, name: str) -> DomainParams:
        if name == "source":
            return self.source
        if name == "target":
            return self.target
        raise ConfigError(f"unknown domain {name!r}")


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _domain(data, default: DomainParams, driver: DriverSpec, spec: WindowSpec, seed, where) -> DomainParams:
    data = dict(data or {})
    unknown = sorted(set(data) - {"mappings", "seed"})
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    mappings = default.mappings
    if "mappings" in data:
        raw = data["mappings"]
        names = spec.names[1:]
        if isinstance(raw, dict):
            missing = [n for n in names if n not in raw]
            if missing:
                raise ConfigError(f"{where}.mappings: missing channel(s) {', '.join(missing)}")
            raw = [raw[n] for n in names]
        if not isinstance(raw, list) or len(raw) != len(names):
            raise ConfigError(f"{where}.mappings: need one mapping per derived channel ({', '.join(names)})")
        mappings = tuple(_build(ChannelMapping, m, f"{where}.mappings.{n}") for n, m in zip(names, raw))
    seed = int(data.get("seed", seed))
    params = DomainParams(default.name, mappings, driver, seed)
    params.validate(spec)
    return params


def _train(data, seed) -> TrainConfig:
    data = dict(data or {})
    names = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"train: unknown field(s) {', '.join(unknown)}")
    if "weights" in data:
        data["weights"] = _build(LossWeights, data["weights"], "train.weights")
    for k in ("generator_opt", "discriminator_opt"):
        if k in data:
            data[k] = _build(OptimizerConfig, data[k], f"train.{k}")
    data.setdefault("seed", seed)
    return _build(TrainConfig, data, "train")


def config_from_dict(data: dict | None = None, seed: int | None = None) -> RunConfig:
    """Build a :class:`RunConfig`; ``seed`` overrides the file's global seed."""
    data = dict(data or {})
    known = {"window_spec", "driver", "source", "target", "generator", "discriminator", "train",
             "n_windows", "n_eval_windows", "output_dir", "seed"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level field(s) {', '.join(unknown)}")
    g = int(data.get("seed", 0) if seed is None else seed)
    spec = _build(WindowSpec, data.get("window_spec"), "window_spec")
    driver = _build(DriverSpec, data.get("driver"), "driver")
    try:
        driver.validate(spec)
    except ConfigError as exc:
        raise ConfigError(f"driver: {exc}") from None
    source = _domain(data.get("source"), default_source_params(), driver, spec, g + 1, "source")
    target = _domain(data.get("target"), default_target_params(), driver, spec, g + 2, "target")
    check_domain_pair(source, target, spec)
    train_data = dict(data.get("train") or {})
    if seed is not None:
        train_data["seed"] = g
    cfg = RunConfig(
        spec=spec,
        source=source,
        target=target,
        generator=_build(GeneratorConfig, data.get("generator"), "generator"),
        discriminator=_build(DiscriminatorConfig, data.get("discriminator"), "discriminator"),
        train=_train(train_data, g),
        n_windows=int(data.get("n_windows", 512)),
        n_eval_windows=int(data.get("n_eval_windows", 256)),
        output_dir=str(data.get("output_dir", "runs/default")),
        seed=g,
    )
    if cfg.n_windows < 1 or cfg.n_eval_windows < 0:
        raise ConfigError("n_windows must be >= 1 and n_eval_windows >= 0")
    return cfg


def load_config(path=None, seed: int | None = None) -> RunConfig:
    if path is None:
        return config_from_dict({}, seed)
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data, seed)
