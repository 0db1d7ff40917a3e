"""Synthetic source/target datasets of step-driven multivariate time series.

A driver channel ``A`` holds a baseline level with one random step per 6 h
window. Each derived channel ``d`` follows ``alpha_d * A(t - gamma_d) + beta_d``
plus observation noise, with a per-domain ``(alpha, beta, gamma)`` table.
The lag reads the continuous stream, so early samples of a window can still
show the previous window's level.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetError, ParseError, ShapeError

GENERATOR_VERSION = "mtscyclegan-synthgen/1"
MEAN_STEP_MAGNITUDE = 27.5


def channel_names(n_channels: int) -> tuple[str, ...]:
    return tuple(chr(ord("A") + i) for i in range(n_channels))


@dataclass(frozen=True)
class WindowSpec:
    sample_period_s: int = 300
    window_duration_s: int = 21600
    channels: int = 4

    def __post_init__(self):
        if self.sample_period_s <= 0 or self.window_duration_s <= 0:
            raise ConfigError("WindowSpec: durations must be positive")
        if self.window_duration_s % self.sample_period_s:
            raise ConfigError(
                f"WindowSpec.window_duration_s={self.window_duration_s} is not a multiple of "
                f"sample_period_s={self.sample_period_s}"
            )
        if self.channels < 2:
            raise ConfigError(f"WindowSpec.channels must be >= 2, got {self.channels}")

    @property
    def steps(self) -> int:
        """Samples per window (``T``)."""
        return self.window_duration_s // self.sample_period_s

    @property
    def names(self) -> tuple[str, ...]:
        return channel_names(self.channels)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class DriverSpec:
    baseline: float = 100.0
    step_magnitude_min: float = 5.0
    step_magnitude_max: float = 50.0
    trigger_window_s: int = 10800
    noise_sigma: float = 0.5

    def validate(self, spec: WindowSpec) -> None:
        if not 0 < self.step_magnitude_min < self.step_magnitude_max:
            raise ConfigError(
                "DriverSpec: need 0 < step_magnitude_min < step_magnitude_max, got "
                f"{self.step_magnitude_min}, {self.step_magnitude_max}"
            )
        if not 0 < self.trigger_window_s <= spec.window_duration_s:
            raise ConfigError(
                f"DriverSpec.trigger_window_s={self.trigger_window_s} must lie in "
                f"(0, window_duration_s={spec.window_duration_s}]"
            )
        if self.noise_sigma < 0:
            raise ConfigError("DriverSpec.noise_sigma must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


MAX_GAMMA_S = 7200


@dataclass(frozen=True)
class ChannelMapping:
    alpha: float
    beta: float
    gamma_s: int

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class DomainParams:
    name: str
    mappings: tuple[ChannelMapping, ...]
    driver: DriverSpec = field(default_factory=DriverSpec)
    seed: int = 0

    def validate(self, spec: WindowSpec) -> None:
        names = spec.names
        if len(self.mappings) != spec.channels - 1:
            raise ConfigError(
                f"domain {self.name!r}: expected {spec.channels - 1} channel mappings "
                f"({', '.join(names[1:])}), got {len(self.mappings)}"
            )
        self.driver.validate(spec)
        for ch, m in zip(names[1:], self.mappings):
            if m.alpha == 0 or not math.isfinite(m.alpha):
                raise ConfigError(f"domain {self.name!r}, channel {ch}: alpha must be finite and nonzero")
            if not math.isfinite(m.beta):
                raise ConfigError(f"domain {self.name!r}, channel {ch}: beta must be finite")
            if m.gamma_s < 0 or m.gamma_s % spec.sample_period_s:
                raise ConfigError(
                    f"domain {self.name!r}, channel {ch}: gamma_s={m.gamma_s} is not a "
                    f"non-negative multiple of sample_period_s={spec.sample_period_s}"
                )
            if m.gamma_s > MAX_GAMMA_S:
                raise ConfigError(
                    f"domain {self.name!r}, channel {ch}: gamma_s={m.gamma_s} exceeds {MAX_GAMMA_S} s"
                )

    def gamma_samples(self, spec: WindowSpec) -> np.ndarray:
        return np.array([m.gamma_s // spec.sample_period_s for m in self.mappings])

    def resting_values(self) -> np.ndarray:
        """Noiseless level of each derived channel when the driver sits at baseline."""
        b = self.driver.baseline
        return np.array([m.alpha * b + m.beta for m in self.mappings])

    def to_dict(self):
        return {
            "name": self.name,
            "mappings": [m.to_dict() for m in self.mappings],
            "driver": self.driver.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            name=d["name"],
            mappings=tuple(ChannelMapping.from_dict(m) for m in d["mappings"]),
            driver=DriverSpec.from_dict(d.get("driver", {})),
            seed=int(d.get("seed", 0)),
        )


def default_source_params(seed=1, driver=None) -> DomainParams:
    return DomainParams(
        "source",
        (ChannelMapping(1.2, 10.0, 1800), ChannelMapping(0.8, -5.0, 3600), ChannelMapping(1.5, 0.0, 5400)),
        driver or DriverSpec(),
        seed,
    )


def default_target_params(seed=2, driver=None) -> DomainParams:
    return DomainParams(
        "target",
        (ChannelMapping(2.0, 20.0, 900), ChannelMapping(0.5, 0.0, 2700), ChannelMapping(1.0, -10.0, 7200)),
        driver or DriverSpec(),
        seed,
    )


def check_domain_pair(source: DomainParams, target: DomainParams, spec: WindowSpec) -> None:
    source.validate(spec)
    target.validate(spec)
    if source.mappings == target.mappings:
        raise ConfigError("source and target domains have identical channel mappings")
    if source.driver != target.driver:
        raise ConfigError("source and target domains must share the same driver settings")


@dataclass(frozen=True)
class Window:
    values: np.ndarray
    domain_tag: str
    window_index: int

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"window values must be T x C, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DatasetError(f"window {self.window_index} contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class DomainDataset:
    windows: tuple[Window, ...]
    params: DomainParams
    spec: WindowSpec
    channel_stats: tuple[np.ndarray, np.ndarray]
    provenance: dict = field(default_factory=dict)

    @property
    def array(self) -> np.ndarray:
        """All windows stacked as ``n x T x C``."""
        return np.stack([w.values for w in self.windows])

    @property
    def domain_tag(self) -> str:
        return self.windows[0].domain_tag if self.windows else self.params.name

    def __len__(self):
        return len(self.windows)

    def with_windows(self, windows, **provenance) -> "DomainDataset":
        return slice_windows(np.concatenate([w.values for w in windows]), self.spec,
                             windows[0].domain_tag, self.params, {**self.provenance, **provenance})

    def equals(self, other: "DomainDataset") -> bool:
        return (
            self.params == other.params
            and self.spec == other.spec
            and self.provenance == other.provenance
            and len(self) == len(other)
            and all(
                a.domain_tag == b.domain_tag and a.window_index == b.window_index
                and np.array_equal(a.values, b.values)
                for a, b in zip(self.windows, other.windows)
            )
            and all(np.array_equal(x, y) for x, y in zip(self.channel_stats, other.channel_stats))
        )


def _draw_step_events(spec: WindowSpec, driver: DriverSpec, n_windows: int, rng):
    # trigger drawn on [0, trigger_window_s) seconds then floored onto the sample grid
    u = rng.uniform(0.0, driver.trigger_window_s, n_windows)
    trig = np.floor(u / spec.sample_period_s).astype(np.int64)
    mag = rng.uniform(driver.step_magnitude_min, driver.step_magnitude_max, n_windows)
    sign = rng.integers(0, 2, n_windows) * 2 - 1
    return trig, mag * sign


def generate_driver(spec: WindowSpec, driver: DriverSpec, n_windows: int, rng=None,
                    return_events: bool = False):
    """Driver signal for ``n_windows`` consecutive windows.

    With ``return_events`` the per-window trigger sample indices and signed
    step sizes are returned alongside the signal.
    """
    if n_windows < 1:
        raise ConfigError(f"n_windows must be >= 1, got {n_windows}")
    driver.validate(spec)
    rng = np.random.default_rng(rng)
    T = spec.steps
    trig, steps = _draw_step_events(spec, driver, n_windows, rng)
    t = np.arange(T)
    level = driver.baseline + np.where(t[None, :] >= trig[:, None], steps[:, None], 0.0)
    values = level.reshape(-1)
    if driver.noise_sigma > 0:
        values = values + rng.normal(0.0, driver.noise_sigma, values.shape)
    if return_events:
        return values, trig, steps
    return values


def derive_channels(driver_values: np.ndarray, params: DomainParams, spec: WindowSpec, rng=None) -> np.ndarray:
    """Build the full ``N x C`` stream from a driver sequence.

    Lagged reads before the start of the stream use the channel's resting
    value ``alpha * baseline + beta``.
    """
    a = np.asarray(driver_values, dtype=np.float64)
    if a.ndim != 1 or a.size < spec.steps:
        raise ShapeError(f"driver must be a 1-D sequence of length >= {spec.steps}, got shape {a.shape}")
    params.validate(spec)
    N = a.size
    out = np.empty((N, spec.channels))
    out[:, 0] = a
    sigma = params.driver.noise_sigma
    noise = None
    if sigma > 0:
        rng = np.random.default_rng(params.seed if rng is None else rng)
        noise = rng.normal(0.0, sigma, (N, spec.channels - 1))
    lags = params.gamma_samples(spec)
    for j, (m, lag) in enumerate(zip(params.mappings, lags)):
        col = np.full(N, m.alpha * params.driver.baseline + m.beta)
        if lag < N:
            col[lag:] = m.alpha * a[:N - lag] + m.beta
        if noise is not None:
            col += noise[:, j]
        out[:, j + 1] = col
    return out


def compute_channel_stats(stream: np.ndarray):
    mean = stream.mean(axis=0)
    std = stream.std(axis=0)
    return mean, std


def slice_windows(stream: np.ndarray, spec: WindowSpec, domain_tag: str,
                  params: DomainParams | None = None, provenance: dict | None = None) -> DomainDataset:
    stream = np.asarray(stream, dtype=np.float64)
    T = spec.steps
    if stream.ndim != 2 or stream.shape[1] != spec.channels:
        raise ShapeError(f"stream must be N x {spec.channels}, got shape {stream.shape}")
    if stream.shape[0] == 0 or stream.shape[0] % T:
        raise ShapeError(f"stream length {stream.shape[0]} is not a positive multiple of T={T}")
    mean, std = compute_channel_stats(stream)
    bad = [spec.names[i] for i in np.flatnonzero(~(std > 0))]
    if bad:
        raise DatasetError(f"channel(s) {', '.join(bad)} have zero standard deviation")
    mean.flags.writeable = False
    std.flags.writeable = False
    n = stream.shape[0] // T
    windows = tuple(Window(stream[i * T:(i + 1) * T], domain_tag, i) for i in range(n))
    if params is None:
        params = DomainParams(domain_tag, tuple(ChannelMapping(1.0, 0.0, 0) for _ in range(spec.channels - 1)))
    return DomainDataset(windows, params, spec, (mean, std), dict(provenance or {}))


def generate_dataset(params: DomainParams, spec: WindowSpec, n_windows: int) -> DomainDataset:
    """Generate a full dataset deterministically from ``params.seed``."""
    params.validate(spec)
    rng = np.random.default_rng(params.seed)
    a = generate_driver(spec, params.driver, n_windows, rng)
    stream = derive_channels(a, params, spec, rng)
    return slice_windows(stream, spec, params.name, params, {"generator_version": GENERATOR_VERSION})


def analytic_cross_domain_map(window: Window, src: DomainParams, dst: DomainParams, spec: WindowSpec) -> Window:
    """Closed-form translation of a noiseless window between two domains.

    Derived channel ``d`` is rescaled as ``(alpha_dst / alpha_src) * (x - beta_src) + beta_dst``
    and moved by ``gamma_dst - gamma_src`` samples. Samples exposed at the
    start of the window take the destination resting value; samples exposed
    at the end repeat the last mapped sample.
    """
    if src.driver != dst.driver:
        raise ConfigError("cross-domain map requires both domains to share driver settings")
    src.validate(spec)
    dst.validate(spec)
    x = window.values
    if x.shape != (spec.steps, spec.channels):
        raise ShapeError(f"window shape {x.shape} != ({spec.steps}, {spec.channels})")
    T = spec.steps
    out = np.empty_like(x)
    out[:, 0] = x[:, 0]
    rest = dst.resting_values()
    for j, (ms, md) in enumerate(zip(src.mappings, dst.mappings)):
        scaled = (md.alpha / ms.alpha) * (x[:, j + 1] - ms.beta) + md.beta
        shift = (md.gamma_s - ms.gamma_s) // spec.sample_period_s
        col = np.empty(T)
        if shift >= 0:
            col[:shift] = rest[j]
            col[shift:] = scaled[:T - shift]
        else:
            k = -shift
            col[:T - k] = scaled[k:]
            col[T - k:] = scaled[-1]
        out[:, j + 1] = col
    return Window(out, dst.name, window.window_index)


# -- persistence -------------------------------------------------------------

def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".meta.json")


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_dataset(ds: DomainDataset, path) -> None:
    """Write ``<name>.csv`` plus the ``<name>.meta.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    spec = ds.spec
    buf = io.StringIO()
    buf.write(",".join(("t_s",) + spec.names) + "\n")
    stream = np.concatenate([w.values for w in ds.windows]) if ds.windows else np.empty((0, spec.channels))
    for i, row in enumerate(stream):
        buf.write(str(i * spec.sample_period_s))
        for v in row:
            buf.write("," + repr(float(v)))
        buf.write("\n")
    meta = {
        "generator_version": GENERATOR_VERSION,
        "window_spec": spec.to_dict(),
        "domain_params": ds.params.to_dict(),
        "domain_tag": ds.domain_tag,
        "n_windows": len(ds),
        "provenance": ds.provenance,
    }
    _atomic_write_text(path, buf.getvalue())
    _atomic_write_text(sidecar_path(path), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_dataset(path) -> DomainDataset:
    path = Path(path)
    meta_path = sidecar_path(path)
    if not path.exists():
        raise ParseError("dataset file not found", path)
    if not meta_path.exists():
        raise ParseError("missing sidecar metadata file", meta_path)
    try:
        meta = json.loads(meta_path.read_text())
        spec = WindowSpec.from_dict(meta["window_spec"])
        params = DomainParams.from_dict(meta["domain_params"])
        tag = meta.get("domain_tag", params.name)
        provenance = meta.get("provenance", {})
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"invalid sidecar metadata: {exc}", meta_path) from exc
    expected_header = ["t_s", *spec.names]
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            raise ParseError(f"expected header {','.join(expected_header)}, got {','.join(header or [])}",
                             path, line=1)
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(expected_header):
                raise ParseError(f"expected {len(expected_header)} columns, got {len(rec)}", path, line=lineno)
            row = []
            for name, cell in zip(expected_header, rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"not a number: {cell!r}", path, line=lineno, field=name) from None
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value {cell!r}", path, line=lineno, field=name)
                row.append(v)
            if row[0] != (lineno - 2) * spec.sample_period_s:
                raise ParseError(f"t_s={rec[0]!r} breaks the {spec.sample_period_s} s sample grid",
                                 path, line=lineno, field="t_s")
            rows.append(row[1:])
    stream = np.array(rows, dtype=np.float64).reshape(-1, spec.channels)
    if stream.shape[0] == 0 or stream.shape[0] % spec.steps:
        raise ParseError(f"row count {stream.shape[0]} is not a positive multiple of T={spec.steps}", path)
    return slice_windows(stream, spec, tag, params, provenance)


def replace_seed(params: DomainParams, seed: int) -> DomainParams:
    return replace(params, seed=int(seed))
