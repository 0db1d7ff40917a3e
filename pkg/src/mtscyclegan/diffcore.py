"""Trainable primitives with hand-written reverse-mode gradients.

Each layer exposes ``forward(x) -> (y, cache)`` and
``backward(cache, grad_out) -> (grad_x, grads)``. Parameters live in a plain
``dict`` of numpy arrays so that optimizers and checkpoints can treat every
layer uniformly. Training runs in float32; gradient verification casts the
same layers to float64 with :meth:`Layer.astype`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError, UsageError

ACTIVATIONS = ("linear", "relu")


class Layer:
    kind = "abstract"

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}

    @property
    def dtype(self):
        for p in self.params.values():
            return p.dtype
        return np.dtype(np.float32)

    def astype(self, dtype) -> "Layer":
        clone = self.__class__.__new__(self.__class__)
        clone.__dict__.update(self.__dict__)
        clone.params = {k: v.astype(dtype, copy=True) for k, v in self.params.items()}
        return clone

    def forward(self, x: np.ndarray):
        raise NotImplementedError

    def backward(self, cache, grad_out: np.ndarray, param_grads: bool = True):
        raise NotImplementedError

    def param_shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self.params.items()}

    def __repr__(self):
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self.params.items())
        return f"{self.__class__.__name__}({self.name!r}, {shapes})"


def _check_cache(cache, layer):
    if cache is None:
        raise UsageError(f"backward called on {layer.name!r} without a forward cache")


def _check_grad_shape(grad_out, expected, layer):
    if grad_out.shape != expected:
        raise ShapeError(
            f"{layer.name}: grad_out shape {grad_out.shape} != forward output shape {expected}"
        )


class Dense(Layer):
    """Affine map over the last axis; leading axes are treated as batch."""

    kind = "dense"

    def __init__(self, name, in_features, out_features, activation="linear", rng=None,
                 dtype=np.float32):
        super().__init__(name)
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.activation = activation
        rng = np.random.default_rng() if rng is None else rng
        self.params["W"] = rng.normal(0.0, 0.02, (self.in_features, self.out_features)).astype(dtype)
        self.params["b"] = np.zeros(self.out_features, dtype=dtype)

    def forward(self, x):
        if x.ndim < 2 or x.shape[-1] != self.in_features:
            raise ShapeError(
                f"{self.name}: expected last dimension (features) = {self.in_features}, "
                f"got input shape {x.shape}"
            )
        y = x @ self.params["W"] + self.params["b"]
        mask = None
        if self.activation == "relu":
            mask = y > 0
            y = y * mask
        return y, (x, mask, y.shape)

    def backward(self, cache, grad_out, param_grads=True):
        _check_cache(cache, self)
        x, mask, out_shape = cache
        _check_grad_shape(grad_out, out_shape, self)
        g = grad_out * mask if mask is not None else grad_out
        dx = g @ self.params["W"].T
        grads = {}
        if param_grads:
            x2 = x.reshape(-1, self.in_features)
            g2 = g.reshape(-1, self.out_features)
            grads["W"] = x2.T @ g2
            grads["b"] = g2.sum(axis=0)
        return dx, grads


class Conv1D(Layer):
    """Stride-1 1-D convolution over time with "same" padding.

    Input and output are ``batch x T x channels``; the kernel has shape
    ``kernel_size x in_channels x out_channels``.
    """

    kind = "conv1d"

    def __init__(self, name, in_channels, out_channels, kernel_size, activation="relu",
                 rng=None, dtype=np.float32):
        super().__init__(name)
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.activation = activation
        self.pad_left = (self.kernel_size - 1) // 2
        self.pad_right = self.kernel_size - 1 - self.pad_left
        rng = np.random.default_rng() if rng is None else rng
        shape = (self.kernel_size, self.in_channels, self.out_channels)
        self.params["W"] = rng.normal(0.0, 0.02, shape).astype(dtype)
        self.params["b"] = np.zeros(self.out_channels, dtype=dtype)

    def forward(self, x):
        if x.ndim != 3:
            raise ShapeError(f"{self.name}: expected batch x T x channels, got shape {x.shape}")
        if x.shape[2] != self.in_channels:
            raise ShapeError(
                f"{self.name}: expected channels = {self.in_channels}, got {x.shape[2]}"
            )
        B, T, C = x.shape
        k = self.kernel_size
        xp = np.pad(x, ((0, 0), (self.pad_left, self.pad_right), (0, 0)))
        # (B, T, C, k) -> (B, T, k, C) so columns match W.reshape(k*C, out)
        win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)
        cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B * T, k * C)
        y = cols @ self.params["W"].reshape(k * C, self.out_channels) + self.params["b"]
        y = y.reshape(B, T, self.out_channels)
        mask = None
        if self.activation == "relu":
            mask = y > 0
            y = y * mask
        return y, (cols, mask, x.shape)

    def backward(self, cache, grad_out, param_grads=True):
        _check_cache(cache, self)
        cols, mask, in_shape = cache
        B, T, C = in_shape
        k = self.kernel_size
        _check_grad_shape(grad_out, (B, T, self.out_channels), self)
        g = grad_out * mask if mask is not None else grad_out
        g2 = g.reshape(B * T, self.out_channels)
        Wr = self.params["W"].reshape(k * C, self.out_channels)
        dcols = (g2 @ Wr.T).reshape(B, T, k, C)
        dxp = np.zeros((B, T + k - 1, C), dtype=g.dtype)
        for j in range(k):
            dxp[:, j:j + T] += dcols[:, :, j]
        dx = dxp[:, self.pad_left:self.pad_left + T]
        grads = {}
        if param_grads:
            grads["W"] = (cols.T @ g2).reshape(self.params["W"].shape)
            grads["b"] = g2.sum(axis=0)
        return dx, grads


class LSTM(Layer):
    """Single LSTM layer returning the full hidden sequence.

    Gate blocks in ``Wx``, ``Wh`` and ``b`` are ordered input, forget, output,
    candidate. Initial hidden and cell states are zero.
    """

    kind = "lstm"

    def __init__(self, name, in_features, hidden, rng=None, dtype=np.float32):
        super().__init__(name)
        self.in_features = int(in_features)
        self.hidden = int(hidden)
        H = self.hidden
        rng = np.random.default_rng() if rng is None else rng
        bound = 1.0 / np.sqrt(H)
        self.params["Wx"] = rng.uniform(-bound, bound, (self.in_features, 4 * H)).astype(dtype)
        self.params["Wh"] = rng.uniform(-bound, bound, (H, 4 * H)).astype(dtype)
        b = np.zeros(4 * H, dtype=dtype)
        b[H:2 * H] = 1.0
        self.params["b"] = b

    def _gate_scale(self, dt):
        # sigmoid(z) = 0.5 * tanh(0.5 z) + 0.5, so one tanh covers all four blocks
        H = self.hidden
        s = np.full(4 * H, 0.5, dtype=dt)
        s[3 * H:] = 1.0
        return s, (1.0 - s).astype(dt)

    def forward(self, x):
        if x.ndim != 3:
            raise ShapeError(f"{self.name}: expected batch x T x features, got shape {x.shape}")
        if x.shape[2] != self.in_features:
            raise ShapeError(
                f"{self.name}: expected features = {self.in_features}, got {x.shape[2]}"
            )
        B, T, D = x.shape
        H = self.hidden
        Wh = self.params["Wh"]
        dt = Wh.dtype
        scale, shift = self._gate_scale(dt)
        # time-major buffers keep every per-step slice contiguous
        x_tm = np.ascontiguousarray(x.transpose(1, 0, 2))
        xw = (x_tm.reshape(T * B, D) @ self.params["Wx"]).reshape(T, B, 4 * H)
        xw += self.params["b"]
        acts = np.empty((T, B, 4 * H), dtype=dt)
        cs = np.empty((T, B, H), dtype=dt)
        tcs = np.empty((T, B, H), dtype=dt)
        hs = np.empty((T, B, H), dtype=dt)
        h = np.zeros((B, H), dtype=dt)
        c = np.zeros((B, H), dtype=dt)
        tmp = np.empty((B, H), dtype=dt)
        for t in range(T):
            a = acts[t]
            np.dot(h, Wh, out=a)
            a += xw[t]
            a *= scale
            np.tanh(a, out=a)
            a *= scale
            a += shift
            c_new = cs[t]
            np.multiply(a[:, H:2 * H], c, out=c_new)
            np.multiply(a[:, :H], a[:, 3 * H:], out=tmp)
            c_new += tmp
            c = c_new
            tc = tcs[t]
            np.tanh(c, out=tc)
            h = hs[t]
            np.multiply(a[:, 2 * H:3 * H], tc, out=h)
        out = np.ascontiguousarray(hs.transpose(1, 0, 2))
        return out, (x_tm, acts, cs, tcs, hs)

    def backward(self, cache, grad_out, param_grads=True):
        _check_cache(cache, self)
        x_tm, acts, cs, tcs, hs = cache
        T, B, D = x_tm.shape
        H = self.hidden
        _check_grad_shape(grad_out, (B, T, H), self)
        dt = acts.dtype
        dy = np.ascontiguousarray(grad_out.transpose(1, 0, 2), dtype=dt)
        i_g = acts[..., :H]
        f_g = acts[..., H:2 * H]
        o_g = acts[..., 2 * H:3 * H]
        g_g = acts[..., 3 * H:]
        c_prev = np.zeros_like(cs)
        c_prev[1:] = cs[:-1]
        # dz = factor * [dc, dc, dh, dc] blockwise
        factor = np.empty((T, B, 4, H), dtype=dt)
        factor[:, :, 0] = g_g * i_g * (1 - i_g)
        factor[:, :, 1] = c_prev * f_g * (1 - f_g)
        factor[:, :, 2] = tcs * o_g * (1 - o_g)
        factor[:, :, 3] = i_g * (1 - g_g * g_g)
        dh_to_dc = o_g * (1 - tcs * tcs)
        f_c = np.ascontiguousarray(f_g)
        WhT = np.ascontiguousarray(self.params["Wh"].T)
        dZ = np.empty((T, B, 4, H), dtype=dt)
        mult = np.empty((B, 4, H), dtype=dt)
        dh = np.zeros((B, H), dtype=dt)
        dc = np.empty((B, H), dtype=dt)
        dc_next = np.zeros((B, H), dtype=dt)
        for t in range(T - 1, -1, -1):
            dh += dy[t]
            np.multiply(dh, dh_to_dc[t], out=dc)
            dc += dc_next
            mult[:, 0] = dc
            mult[:, 1] = dc
            mult[:, 2] = dh
            mult[:, 3] = dc
            dz = dZ[t]
            np.multiply(factor[t], mult, out=dz)
            np.multiply(dc, f_c[t], out=dc_next)
            np.dot(dz.reshape(B, 4 * H), WhT, out=dh)
        dZ2 = dZ.reshape(T * B, 4 * H)
        dx = (dZ2 @ self.params["Wx"].T).reshape(T, B, D).transpose(1, 0, 2)
        grads = {}
        if param_grads:
            grads["Wx"] = x_tm.reshape(T * B, D).T @ dZ2
            h_prev = np.zeros_like(hs)
            h_prev[1:] = hs[:-1]
            grads["Wh"] = h_prev.reshape(T * B, H).T @ dZ2
            grads["b"] = dZ2.sum(axis=0)
        return np.ascontiguousarray(dx), grads


class LastStep(Layer):
    """Select the final timestep of a ``batch x T x features`` sequence."""

    kind = "last_step"

    def forward(self, x):
        if x.ndim != 3:
            raise ShapeError(f"{self.name}: expected batch x T x features, got shape {x.shape}")
        return x[:, -1, :], x.shape

    def backward(self, cache, grad_out, param_grads=True):
        _check_cache(cache, self)
        in_shape = cache
        _check_grad_shape(grad_out, (in_shape[0], in_shape[2]), self)
        dx = np.zeros(in_shape, dtype=grad_out.dtype)
        dx[:, -1, :] = grad_out
        return dx, {}


class Adam:
    """Adam with bias correction, one instance per network.

    Moment accumulators are keyed like the parameter dict passed to
    :meth:`step` and created lazily at zero.
    """

    def __init__(self, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def init_state(self, params):
        for k, p in params.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        for k, p in params.items():
            if k not in grads:
                raise ShapeError(f"missing gradient for parameter {k!r}")
            if grads[k].shape != p.shape:
                raise ShapeError(f"gradient shape {grads[k].shape} != parameter shape {p.shape} for {k!r}")
            if k in self.m and self.m[k].shape != p.shape:
                raise ShapeError(f"accumulator shape {self.m[k].shape} != parameter shape {p.shape} for {k!r}")
        self.init_state(params)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if self.lr == 0:
                continue
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p -= update.astype(p.dtype, copy=False)

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def failing(self) -> list[str]:
        return [k for k, e in self.errors.items() if not e < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failing

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def relative_error(analytic, numeric, floor=1e-5):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``, maximised over entries.

    Central differences at ``h=1e-5`` carry round-off near ``1e-10``; the
    floor stops entries whose true gradient is essentially zero from
    dominating the maximum.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def finite_difference_check(forward, params, x, backward, tolerance=1e-4, h=1e-5,
                            check_input=True):
    """Compare analytic gradients against central differences.

    ``forward(x)`` must return the output array using the *current* contents
    of ``params`` (a ``{name: array}`` mapping perturbed in place), and
    ``backward(x)`` must return ``(grad_x, {name: grad})`` for the probe loss
    ``sum(forward(x))``. All arrays should be float64.
    """

    def probe(inp):
        val = float(np.sum(forward(inp)))
        if not np.isfinite(val):
            raise NumericError("probe loss is not finite")
        return val

    probe(x)
    grad_x, grads = backward(x)
    report = GradCheckReport(tolerance=tolerance)
    for name, p in params.items():
        num = np.zeros_like(p, dtype=np.float64)
        flat = p.reshape(-1)
        nflat = num.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = probe(x)
            flat[idx] = orig - h
            fm = probe(x)
            flat[idx] = orig
            nflat[idx] = (fp - fm) / (2 * h)
        report.errors[name] = relative_error(grads[name], num)
    if check_input:
        xx = np.array(x, dtype=np.float64, copy=True)
        num = np.zeros_like(xx)
        xf, nf = xx.reshape(-1), num.reshape(-1)
        for idx in range(xf.size):
            orig = xf[idx]
            xf[idx] = orig + h
            fp = probe(xx)
            xf[idx] = orig - h
            fm = probe(xx)
            xf[idx] = orig
            nf[idx] = (fp - fm) / (2 * h)
        report.errors["input"] = relative_error(grad_x, num)
    return report


def relu_margin(layers, x) -> float:
    """Smallest ``|pre-activation|`` over all ReLU units when ``x`` flows
    through ``layers``; central differences are unreliable within ``h`` of 0."""
    margin = np.inf
    for layer in layers:
        if getattr(layer, "activation", None) == "relu":
            layer.activation = "linear"
            try:
                pre, _ = layer.forward(x)
            finally:
                layer.activation = "relu"
            margin = min(margin, float(np.min(np.abs(pre))))
            x = np.maximum(pre, 0)
        else:
            x, _ = layer.forward(x)
    return margin


def check_layer(layer: Layer, x: np.ndarray, tolerance=1e-4, h=1e-5, corrupt=None):
    """Finite-difference check of one layer in float64.

    ``corrupt`` optionally names a parameter whose analytic gradient is
    sign-flipped, as a negative control.
    """
    lay = layer.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)

    def fwd(inp):
        return lay.forward(inp)[0]

    def bwd(inp):
        y, cache = lay.forward(inp)
        dx, grads = lay.backward(cache, np.ones_like(y))
        if corrupt is not None:
            grads = dict(grads)
            grads[corrupt] = -grads[corrupt]
        return dx, grads

    report = finite_difference_check(fwd, lay.params, x, bwd, tolerance=tolerance, h=h)
    report.errors = {f"{layer.name}.{k}": v for k, v in report.errors.items()}
    return report
