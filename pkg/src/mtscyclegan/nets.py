"""Generator and discriminator networks for multivariate time-series windows.

Both are plain layer stacks built from :mod:`mtscyclegan.diffcore`:

* generator: Conv1D x n (ReLU) -> LSTM encoder x n -> LSTM decoder x n
  -> time-distributed Dense to C channels (linear). Output shape equals
  input shape, ``batch x T x C``.
* discriminator: Conv1D x n (ReLU) -> stacked LSTM -> last timestep
  -> Dense(head_units, ReLU) -> Dense(1, linear). One unbounded score per
  window, for use with a least-squares adversarial objective.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import LSTM, Conv1D, Dense, GradCheckReport, LastStep, Layer, finite_difference_check
from .errors import ConfigError, ShapeError
from .synthgen import Window, WindowSpec

ROLES = ("generator_st", "generator_ts", "discriminator_s", "discriminator_t")
DIRECTIONS = {"source_to_target": "generator_st", "target_to_source": "generator_ts"}


def _check_counts(cfg, names):
    for n in names:
        v = getattr(cfg, n)
        if not isinstance(v, (int, np.integer)) or v < 1:
            raise ConfigError(f"{type(cfg).__name__}.{n} must be an integer >= 1, got {v!r}")


@dataclass(frozen=True)
class GeneratorConfig:
    conv_layers: int = 2
    conv_filters: int = 32
    kernel_size: int = 5
    lstm_layers: int = 2
    hidden: int = 64

    def __post_init__(self):
        _check_counts(self, ("conv_layers", "conv_filters", "kernel_size", "lstm_layers", "hidden"))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DiscriminatorConfig:
    conv_layers: int = 2
    conv_filters: int = 32
    kernel_size: int = 5
    lstm_layers: int = 2
    hidden: int = 64
    head_units: int = 32

    def __post_init__(self):
        _check_counts(self, ("conv_layers", "conv_filters", "kernel_size", "lstm_layers",
                             "hidden", "head_units"))

    def to_dict(self):
        return asdict(self)


class Network:
    """An ordered stack of layers with a cached forward pass."""

    def __init__(self, role: str, layers: list[Layer], config, spec: WindowSpec):
        if role not in ROLES:
            raise ConfigError(f"unknown network role {role!r}")
        self.role = role
        self.layers = layers
        self.config = config
        self.spec = spec

    @property
    def is_generator(self) -> bool:
        return self.role.startswith("generator")

    @property
    def params(self) -> dict[str, np.ndarray]:
        """Flat ``{"layer.param": array}`` view sharing memory with the layers."""
        out = {}
        for layer in self.layers:
            for k, v in layer.params.items():
                out[f"{layer.name}.{k}"] = v
        return out

    def load_params(self, values: dict[str, np.ndarray]) -> None:
        for layer in self.layers:
            for k, v in layer.params.items():
                key = f"{layer.name}.{k}"
                src = values[key]
                if src.shape != v.shape:
                    raise ShapeError(f"{self.role}/{key}: shape {src.shape} != {v.shape}")
                v[...] = src

    def astype(self, dtype) -> "Network":
        return Network(self.role, [l.astype(dtype) for l in self.layers], self.config, self.spec)

    def forward(self, x: np.ndarray, keep_cache: bool = True):
        """Return ``(y, caches)``; caches are ``None`` when ``keep_cache`` is false."""
        x = np.asarray(x, dtype=self.layers[0].dtype)
        caches = [] if keep_cache else None
        for layer in self.layers:
            x, cache = layer.forward(x)
            if keep_cache:
                caches.append(cache)
        return x, caches

    def __call__(self, x):
        return self.forward(x, keep_cache=False)[0]

    def backward(self, caches, grad_out, param_grads: bool = True):
        """Return ``(grad_input, {"layer.param": grad})``."""
        grads = {}
        g = grad_out
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            g, lg = layer.backward(cache, g, param_grads=param_grads)
            for k, v in lg.items():
                grads[f"{layer.name}.{k}"] = v
        return g, grads

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def __repr__(self):
        return f"Network({self.role!r}, layers={[l.name for l in self.layers]})"


def build_generator(cfg: GeneratorConfig, spec: WindowSpec, rng=None, role="generator_st",
                    dtype=np.float32) -> Network:
    if not role.startswith("generator"):
        raise ConfigError(f"generator role expected, got {role!r}")
    rng = np.random.default_rng(rng)
    C = spec.channels
    layers: list[Layer] = []
    width = C
    for i in range(cfg.conv_layers):
        layers.append(Conv1D(f"conv{i}", width, cfg.conv_filters, cfg.kernel_size, "relu", rng, dtype))
        width = cfg.conv_filters
    for i in range(cfg.lstm_layers):
        layers.append(LSTM(f"enc{i}", width, cfg.hidden, rng, dtype))
        width = cfg.hidden
    for i in range(cfg.lstm_layers):
        layers.append(LSTM(f"dec{i}", width, cfg.hidden, rng, dtype))
    layers.append(Dense("out", cfg.hidden, C, "linear", rng, dtype))
    return Network(role, layers, cfg, spec)


def build_discriminator(cfg: DiscriminatorConfig, spec: WindowSpec, rng=None,
                        role="discriminator_t", dtype=np.float32) -> Network:
    if not role.startswith("discriminator"):
        raise ConfigError(f"discriminator role expected, got {role!r}")
    rng = np.random.default_rng(rng)
    layers: list[Layer] = []
    width = spec.channels
    for i in range(cfg.conv_layers):
        layers.append(Conv1D(f"conv{i}", width, cfg.conv_filters, cfg.kernel_size, "relu", rng, dtype))
        width = cfg.conv_filters
    for i in range(cfg.lstm_layers):
        layers.append(LSTM(f"lstm{i}", width, cfg.hidden, rng, dtype))
        width = cfg.hidden
    layers.append(LastStep("last"))
    layers.append(Dense("head", cfg.hidden, cfg.head_units, "relu", rng, dtype))
    layers.append(Dense("score", cfg.head_units, 1, "linear", rng, dtype))
    return Network(role, layers, cfg, spec)


def check_network(net: Network, x: np.ndarray, tolerance=1e-4, h=1e-5, corrupt=None) -> GradCheckReport:
    """Finite-difference check of a whole network (float64 copy)."""
    net64 = net.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)

    def fwd(inp):
        return net64.forward(inp, keep_cache=False)[0]

    def bwd(inp):
        y, caches = net64.forward(inp)
        dx, grads = net64.backward(caches, np.ones_like(y))
        if corrupt is not None:
            grads[corrupt] = -grads[corrupt]
        return dx, grads

    report = finite_difference_check(fwd, net64.params, x, bwd, tolerance=tolerance, h=h)
    report.errors = {f"{net.role}/{k}": v for k, v in report.errors.items()}
    return report


# -- translation ---------------------------------------------------------------

def normalize(values: np.ndarray, stats) -> np.ndarray:
    mean, std = stats
    return (values - mean) / std


def denormalize(values: np.ndarray, stats) -> np.ndarray:
    mean, std = stats
    return values * std + mean


def translate(g, windows: list[Window], direction: str, stats_in, stats_out,
              destination: str | None = None) -> list[Window]:
    """Map raw-unit windows across domains with generator ``g``.

    ``stats_in``/``stats_out`` are ``(mean, std)`` per-channel arrays of the
    input and output domains. ``g`` may be a :class:`Network` or any callable
    on normalized ``batch x T x C`` arrays.
    """
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown direction {direction!r}; expected one of {sorted(DIRECTIONS)}")
    if isinstance(g, Network) and g.role != DIRECTIONS[direction]:
        raise ConfigError(f"generator role {g.role!r} does not match direction {direction!r}")
    if stats_in is None or stats_out is None:
        raise ConfigError("translate requires channel statistics for both domains")
    if destination is None:
        destination = "target" if direction == "source_to_target" else "source"
    if not windows:
        return []
    x = np.stack([w.values for w in windows])
    z = normalize(x, stats_in)
    if isinstance(g, Network):
        z = z.astype(g.layers[0].dtype)
    out = []
    batch = 64
    ys = []
    for i in range(0, len(z), batch):
        ys.append(np.asarray(g(z[i:i + batch]), dtype=np.float64))
    y = denormalize(np.concatenate(ys), stats_out)
    for w, v in zip(windows, y):
        out.append(Window(v, destination, w.window_index))
    return out
