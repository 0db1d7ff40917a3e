"""Cycle-consistent adversarial training for window translation.

Per batch the four networks are updated one at a time, in the order
``D_t -> D_s -> G_st -> G_ts``; during each update every other network is
frozen (its parameters are read but never stepped). Generator objectives::

    L_g,st = adv(D_t(G_st(x_s)))
             + lambda_cycle * (|G_ts(G_st(x_s)) - x_s| + |G_st(G_ts(x_t)) - x_t|)
             + lambda_identity * |G_st(x_t) - x_t|

and the mirror image for ``G_ts``. The adversarial terms are least-squares.
All tensors here are in per-domain z-scored units.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import Adam
from .errors import (ConfigError, DivergenceError, IntegrityError, NumericError, ShapeError,
                     UnsupportedVersionError, UsageError)
from .nets import (DiscriminatorConfig, GeneratorConfig, Network, build_discriminator,
                   build_generator, normalize)
from .synthgen import DomainDataset, WindowSpec

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class LossWeights:
    lambda_cycle: float = 10.0
    lambda_identity: float = 5.0

    def __post_init__(self):
        if self.lambda_cycle < 0 or self.lambda_identity < 0:
            raise ConfigError("LossWeights: both weights must be >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    adversarial: float
    cycle_forward: float
    cycle_backward: float
    identity: float
    total: float

    def to_dict(self):
        return asdict(self)

    def identity_residual(self, weights: LossWeights) -> float:
        """Relative mismatch between ``total`` and its weighted-sum definition."""
        expect = (self.adversarial + weights.lambda_cycle * (self.cycle_forward + self.cycle_backward)
                  + weights.lambda_identity * self.identity)
        return abs(self.total - expect) / max(abs(expect), 1e-300)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    def make(self) -> Adam:
        return Adam(self.lr, self.beta1, self.beta2, self.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    weights: LossWeights = field(default_factory=LossWeights)
    generator_opt: OptimizerConfig = field(default_factory=OptimizerConfig)
    discriminator_opt: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"TrainConfig.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"TrainConfig.batch_size must be >= 1, got {self.batch_size}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"TrainConfig.checkpoint_every must be >= 1, got {self.checkpoint_every}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        for k in ("generator_opt", "discriminator_opt"):
            if k in d:
                d[k] = OptimizerConfig(**d[k])
        return cls(**d)


# -- losses ------------------------------------------------------------------

def _nonempty(*arrays):
    for a in arrays:
        if np.size(a) == 0:
            raise UsageError("loss called on an empty batch")


def adversarial_loss_discriminator(scores_real, scores_fake) -> float:
    """Least-squares discriminator loss ``mean(0.5 * ((s_real - 1)^2 + s_fake^2))``."""
    _nonempty(scores_real, scores_fake)
    r = np.asarray(scores_real, dtype=np.float64)
    f = np.asarray(scores_fake, dtype=np.float64)
    return float(0.5 * (np.mean((r - 1.0) ** 2) + np.mean(f ** 2)))


def adversarial_loss_generator(scores_fake) -> float:
    _nonempty(scores_fake)
    f = np.asarray(scores_fake, dtype=np.float64)
    return float(0.5 * np.mean((f - 1.0) ** 2))


def _l1(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"L1 loss needs equal shapes, got {a.shape} and {b.shape}")
    _nonempty(a)
    return float(np.mean(np.abs(a.astype(np.float64) - b)))


def cycle_loss(original, reconstructed) -> float:
    """Mean absolute error between a batch and its round-trip reconstruction."""
    return _l1(original, reconstructed)


def identity_loss(target_batch, mapped_batch) -> float:
    """Mean absolute error between a batch and the same batch passed through
    the generator that maps *into* its own domain."""
    return _l1(target_batch, mapped_batch)


def global_generator_loss(adversarial, cycle_forward, cycle_backward, identity,
                          weights: LossWeights) -> LossBreakdown:
    parts = {"adversarial": adversarial, "cycle_forward": cycle_forward,
             "cycle_backward": cycle_backward, "identity": identity}
    for k, v in parts.items():
        if not np.isfinite(v):
            raise NumericError(f"loss component {k} is not finite ({v})")
        if v < 0:
            raise NumericError(f"loss component {k} is negative ({v})")
    total = (adversarial + weights.lambda_cycle * (cycle_forward + cycle_backward)
             + weights.lambda_identity * identity)
    return LossBreakdown(float(adversarial), float(cycle_forward), float(cycle_backward),
                         float(identity), float(total))


def _l1_grad(pred, target, scale):
    # d/dpred of scale * mean|pred - target|
    return (np.sign(pred - target) * (scale / pred.size)).astype(pred.dtype)


# -- model bundle ------------------------------------------------------------

NET_KEYS = ("g_st", "g_ts", "d_s", "d_t")
_ROLE_OF = {"g_st": "generator_st", "g_ts": "generator_ts",
            "d_s": "discriminator_s", "d_t": "discriminator_t"}


class CycleModels:
    """The two generators, two discriminators, their optimizers and the
    per-domain normalization statistics."""

    def __init__(self, nets: dict[str, Network], optimizers: dict[str, Adam], stats: dict):
        self.nets = nets
        self.optimizers = optimizers
        self.stats = stats

    g_st = property(lambda self: self.nets["g_st"])
    g_ts = property(lambda self: self.nets["g_ts"])
    d_s = property(lambda self: self.nets["d_s"])
    d_t = property(lambda self: self.nets["d_t"])

    @classmethod
    def build(cls, spec: WindowSpec, gen_cfg=None, disc_cfg=None, seed=0,
              gen_opt: OptimizerConfig = None, disc_opt: OptimizerConfig = None, stats=None):
        gen_cfg = gen_cfg or GeneratorConfig()
        disc_cfg = disc_cfg or DiscriminatorConfig()
        gen_opt = gen_opt or OptimizerConfig()
        disc_opt = disc_opt or OptimizerConfig()
        seeds = np.random.SeedSequence(seed).spawn(4)
        nets = {
            "g_st": build_generator(gen_cfg, spec, np.random.default_rng(seeds[0]), "generator_st"),
            "g_ts": build_generator(gen_cfg, spec, np.random.default_rng(seeds[1]), "generator_ts"),
            "d_s": build_discriminator(disc_cfg, spec, np.random.default_rng(seeds[2]), "discriminator_s"),
            "d_t": build_discriminator(disc_cfg, spec, np.random.default_rng(seeds[3]), "discriminator_t"),
        }
        optimizers = {k: (gen_opt if k.startswith("g") else disc_opt).make() for k in NET_KEYS}
        for k in NET_KEYS:
            optimizers[k].init_state(nets[k].params)
        return cls(nets, optimizers, stats or {})

    @property
    def spec(self) -> WindowSpec:
        return self.nets["g_st"].spec

    def param_digest(self, key: str) -> str:
        h = hashlib.sha256()
        for name, v in self.nets[key].params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()

    def config_dict(self) -> dict:
        return {
            "window_spec": self.spec.to_dict(),
            "generator": self.nets["g_st"].config.to_dict(),
            "discriminator": self.nets["d_t"].config.to_dict(),
        }


@dataclass
class StepLosses:
    d_t: float
    d_s: float
    g_st: LossBreakdown
    g_ts: LossBreakdown


def _disc_update(D: Network, opt: Adam, real, fake) -> float:
    B = len(real)
    s, caches = D.forward(np.concatenate([real, fake]))
    s = s[:, 0]
    sr, sf = s[:B], s[B:]
    loss = adversarial_loss_discriminator(sr, sf)
    ds = np.concatenate([(sr - 1.0) / B, sf / len(sf)]).astype(s.dtype)[:, None]
    _, grads = D.backward(caches, ds)
    opt.step(D.params, grads)
    return loss


def _gen_update(G: Network, F: Network, D: Network, opt: Adam, x_in, x_out, f_of_out,
                weights: LossWeights) -> LossBreakdown:
    """One step on ``G`` (maps in -> out) with ``F`` (out -> in) and ``D`` (judges out) frozen.

    ``f_of_out`` is ``F(x_out)``, an input-domain batch for the backward cycle.
    """
    B = len(x_in)
    y, g_caches = G.forward(np.concatenate([x_in, f_of_out, x_out]))
    fake, rec_b, idt = y[:B], y[B:2 * B], y[2 * B:]

    s, d_caches = D.forward(fake)
    adv = adversarial_loss_generator(s[:, 0])
    dfake, _ = D.backward(d_caches, ((s - 1.0) / B).astype(s.dtype), param_grads=False)

    rec_f, f_caches = F.forward(fake)
    cyc_f = cycle_loss(x_in, rec_f)
    dcyc, _ = F.backward(f_caches, _l1_grad(rec_f, x_in, weights.lambda_cycle), param_grads=False)
    dfake = dfake + dcyc

    cyc_b = cycle_loss(x_out, rec_b)
    idl = identity_loss(x_out, idt)
    dy = np.concatenate([
        dfake,
        _l1_grad(rec_b, x_out, weights.lambda_cycle),
        _l1_grad(idt, x_out, weights.lambda_identity),
    ])
    _, grads = G.backward(g_caches, dy)
    breakdown = global_generator_loss(adv, cyc_f, cyc_b, idl, weights)
    if not np.isfinite(breakdown.total):
        raise DivergenceError(f"{G.role}: non-finite generator loss")
    opt.step(G.params, grads)
    return breakdown


def train_step(x_s, x_t, models: CycleModels, weights: LossWeights = LossWeights()) -> StepLosses:
    """Run the four sequential updates on one pair of unpaired batches.

    ``x_s`` and ``x_t`` are normalized ``batch x T x C`` arrays of equal batch size.
    """
    if len(x_s) != len(x_t):
        raise ShapeError(f"unequal batch sizes {len(x_s)} and {len(x_t)}")
    if len(x_s) == 0:
        raise UsageError("empty batch")
    dt = models.g_st.layers[0].dtype
    x_s = np.asarray(x_s, dtype=dt)
    x_t = np.asarray(x_t, dtype=dt)
    G, F = models.g_st, models.g_ts
    opt = models.optimizers

    fake_t = G(x_s)
    fake_s = F(x_t)
    d_t = _disc_update(models.d_t, opt["d_t"], x_t, fake_t)
    d_s = _disc_update(models.d_s, opt["d_s"], x_s, fake_s)
    for name, v in (("d_t", d_t), ("d_s", d_s)):
        if not np.isfinite(v):
            raise DivergenceError(f"{name}: non-finite discriminator loss")
    # G_ts is still untouched here, so F(x_t) computed above is current
    g_st = _gen_update(G, F, models.d_t, opt["g_st"], x_s, x_t, fake_s, weights)
    fake_t = G(x_s)
    g_ts = _gen_update(F, G, models.d_s, opt["g_ts"], x_t, x_s, fake_t, weights)
    return StepLosses(d_t, d_s, g_st, g_ts)


def heldout_cycle_loss(models: CycleModels, x_s, x_t, batch=64) -> float:
    """Mean of the two round-trip L1 errors on normalized held-out windows."""
    G, F = models.g_st, models.g_ts
    dt = G.layers[0].dtype
    tot_s = tot_t = 0.0
    for i in range(0, len(x_s), batch):
        xb = np.asarray(x_s[i:i + batch], dtype=dt)
        tot_s += np.abs(F(G(xb)) - xb).astype(np.float64).sum()
    for i in range(0, len(x_t), batch):
        xb = np.asarray(x_t[i:i + batch], dtype=dt)
        tot_t += np.abs(G(F(xb)) - xb).astype(np.float64).sum()
    return float(0.5 * (tot_s / np.size(x_s) + tot_t / np.size(x_t)))


# -- fit ---------------------------------------------------------------------

def _epoch_rng(seed: int, epoch: int):
    return np.random.default_rng([int(seed), int(epoch)])


def _mean_breakdown(items: list[LossBreakdown]) -> LossBreakdown:
    cols = np.array([[b.adversarial, b.cycle_forward, b.cycle_backward, b.identity, b.total]
                     for b in items])
    m = cols.mean(axis=0)
    return LossBreakdown(*map(float, m))


@dataclass
class FitResult:
    models: CycleModels
    metrics: list[dict]
    last_checkpoint: Path | None = None


def fit(source: DomainDataset, target: DomainDataset, cfg: TrainConfig, gen_cfg=None,
        disc_cfg=None, out_dir=None, models: CycleModels | None = None, start_epoch: int = 0,
        heldout: tuple[DomainDataset, DomainDataset] | None = None, max_batches: int | None = None,
        progress=None) -> FitResult:
    """Train from scratch (or continue ``models`` after ``start_epoch`` epochs).

    Writes ``metrics.jsonl`` and periodic checkpoints under ``out_dir`` when
    given. Shuffling for epoch ``e`` depends only on ``(cfg.seed, e)``, so a
    resumed run replays the same batches as an uninterrupted one.
    """
    if source.spec != target.spec:
        raise ConfigError("source and target datasets use different window specs")
    spec = source.spec
    stats = {"source": source.channel_stats, "target": target.channel_stats}
    if models is None:
        models = CycleModels.build(spec, gen_cfg, disc_cfg, cfg.seed, cfg.generator_opt,
                                   cfg.discriminator_opt, stats)
    else:
        stats = models.stats or stats
        models.stats = stats
    xs_all = normalize(source.array, stats["source"]).astype(np.float32)
    xt_all = normalize(target.array, stats["target"]).astype(np.float32)
    if heldout is not None:
        hs = normalize(heldout[0].array, stats["source"]).astype(np.float32)
        ht = normalize(heldout[1].array, stats["target"]).astype(np.float32)

    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.jsonl"
    last_ckpt = None
    bs = cfg.batch_size
    n_batches = min(len(xs_all), len(xt_all)) // bs
    if max_batches is not None:
        n_batches = min(n_batches, max_batches)
    if n_batches < 1:
        raise ConfigError(f"datasets too small for batch_size={bs}")
    metrics = []
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        t0 = time.perf_counter()
        rng = _epoch_rng(cfg.seed, epoch)
        perm_s = rng.permutation(len(xs_all))
        perm_t = rng.permutation(len(xt_all))
        steps = []
        for b in range(n_batches):
            sl = slice(b * bs, (b + 1) * bs)
            try:
                steps.append(train_step(xs_all[perm_s[sl]], xt_all[perm_t[sl]], models, cfg.weights))
            except (DivergenceError, NumericError) as exc:
                raise DivergenceError(f"epoch {epoch}, batch {b}: {exc}", last_ckpt) from exc
        record = {
            "epoch": epoch,
            "steps": len(steps),
            "d_t": float(np.mean([s.d_t for s in steps])),
            "d_s": float(np.mean([s.d_s for s in steps])),
            "g_st": _mean_breakdown([s.g_st for s in steps]).to_dict(),
            "g_ts": _mean_breakdown([s.g_ts for s in steps]).to_dict(),
        }
        if heldout is not None:
            record["heldout_cycle"] = heldout_cycle_loss(models, hs, ht)
        record["wall_s"] = time.perf_counter() - t0
        metrics.append(record)
        if metrics_path is not None:
            with open(metrics_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        if out_dir is not None and (epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs):
            last_ckpt = out_dir / "checkpoints" / f"epoch_{epoch:04d}"
            save_checkpoint(models, epoch, last_ckpt, train_config=cfg)
        if progress is not None:
            progress(record)
        log.info("epoch %d: d_t=%.4f d_s=%.4f g_st=%.4f g_ts=%.4f", epoch, record["d_t"],
                 record["d_s"], record["g_st"]["total"], record["g_ts"]["total"])
    return FitResult(models, metrics, last_ckpt)


# -- checkpoints -------------------------------------------------------------

def _canonical_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _pack(entries):
    """Concatenate float32 tensors; return (blob, manifest entries)."""
    parts, table, offset = [], [], 0
    for name, arr in entries:
        a = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(a.tobytes())
        table.append({"name": name, "shape": list(a.shape), "dtype": "float32", "offset": offset})
        offset += a.nbytes
    return b"".join(parts), table


def save_checkpoint(models: CycleModels, epoch: int, path, train_config: TrainConfig | None = None) -> Path:
    """Write ``manifest.json``, ``params.bin`` and ``optim.bin`` into directory ``path``."""
    path = Path(path)
    param_entries, optim_entries = [], []
    optim_meta = {}
    for key in NET_KEYS:
        net, opt = models.nets[key], models.optimizers[key]
        opt.init_state(net.params)
        for name, v in net.params.items():
            param_entries.append((f"{key}/{name}", v))
            optim_entries.append((f"{key}/{name}/m", opt.m[name]))
            optim_entries.append((f"{key}/{name}/v", opt.v[name]))
        optim_meta[key] = {"step": opt.t, **opt.hyper()}
    params_blob, params_table = _pack(param_entries)
    optim_blob, optim_table = _pack(optim_entries)
    config = models.config_dict()
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "epoch": int(epoch),
        "config": config,
        "config_hash": _canonical_hash(config),
        "train_config": train_config.to_dict() if train_config is not None else None,
        "stats": {k: {"mean": list(map(float, v[0])), "std": list(map(float, v[1]))}
                  for k, v in sorted(models.stats.items())},
        "optimizers": optim_meta,
        "tensors": params_table,
        "optim_tensors": optim_table,
        "params_sha256": hashlib.sha256(params_blob).hexdigest(),
        "optim_sha256": hashlib.sha256(optim_blob).hexdigest(),
        "params_bytes": len(params_blob),
        "optim_bytes": len(optim_blob),
    }
    tmp = path.with_name(path.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    (tmp / "params.bin").write_bytes(params_blob)
    (tmp / "optim.bin").write_bytes(optim_blob)
    (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    if path.exists():
        shutil.rmtree(path)
    os.replace(tmp, path)
    return path


def _unpack(blob: bytes, table, expected_bytes, digest, label):
    if len(blob) != expected_bytes:
        raise IntegrityError(f"{label}: {len(blob)} bytes on disk, manifest declares {expected_bytes}")
    if hashlib.sha256(blob).hexdigest() != digest:
        raise IntegrityError(f"{label}: checksum mismatch")
    out = {}
    for e in table:
        shape = tuple(e["shape"])
        n = int(np.prod(shape)) * 4
        lo = e["offset"]
        if e.get("dtype") != "float32" or lo + n > len(blob):
            raise IntegrityError(f"{label}: tensor {e['name']!r} lies outside the blob")
        out[e["name"]] = np.frombuffer(blob, dtype="<f4", count=n // 4, offset=lo).reshape(shape).astype(np.float32)
    return out


def load_checkpoint(path):
    """Return ``(models, epoch, manifest)``; nothing is built unless every check passes."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise IntegrityError(f"{path}: missing manifest.json") from exc
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{path}: unreadable manifest ({exc})") from exc
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: checkpoint format version {version!r} is not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    if manifest.get("config_hash") != _canonical_hash(manifest.get("config")):
        raise IntegrityError(f"{path}: config hash does not match config")
    try:
        params_blob = (path / "params.bin").read_bytes()
        optim_blob = (path / "optim.bin").read_bytes()
    except FileNotFoundError as exc:
        raise IntegrityError(f"{path}: missing blob {exc.filename}") from exc
    params = _unpack(params_blob, manifest["tensors"], manifest["params_bytes"],
                     manifest["params_sha256"], "params.bin")
    optim = _unpack(optim_blob, manifest["optim_tensors"], manifest["optim_bytes"],
                    manifest["optim_sha256"], "optim.bin")

    cfg = manifest["config"]
    spec = WindowSpec.from_dict(cfg["window_spec"])
    gen_cfg = GeneratorConfig(**cfg["generator"])
    disc_cfg = DiscriminatorConfig(**cfg["discriminator"])
    stats = {k: (np.array(v["mean"]), np.array(v["std"])) for k, v in manifest["stats"].items()}
    models = CycleModels.build(spec, gen_cfg, disc_cfg, 0, stats=stats)
    for key in NET_KEYS:
        net = models.nets[key]
        prefix = key + "/"
        try:
            net.load_params({n[len(prefix):]: v for n, v in params.items() if n.startswith(prefix)})
        except KeyError as exc:
            raise IntegrityError(f"{path}: manifest lacks tensor {prefix}{exc.args[0]}") from exc
        meta = manifest["optimizers"][key]
        opt = Adam(meta["lr"], meta["beta1"], meta["beta2"], meta["eps"])
        opt.t = int(meta["step"])
        for name in net.params:
            try:
                opt.m[name] = optim[f"{prefix}{name}/m"].copy()
                opt.v[name] = optim[f"{prefix}{name}/v"].copy()
            except KeyError as exc:
                raise IntegrityError(f"{path}: manifest lacks optimizer tensor {exc.args[0]}") from exc
        models.optimizers[key] = opt
    return models, int(manifest["epoch"]), manifest
