"""Command-line entry point: ``mtscyclegan <subcommand>``.

Exit codes: 0 success, 2 configuration/validation error, 3 training
divergence, 4 gate or gradient-check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import paramrec
from .config import load_config
from .diffcore import LSTM, Conv1D, Dense, LastStep, check_layer, relu_margin
from .errors import ConfigError, DivergenceError, IntegrityError, MTSError, ParseError
from .nets import DIRECTIONS, DiscriminatorConfig, GeneratorConfig, build_discriminator, build_generator, check_network, translate
from .synthgen import WindowSpec, generate_dataset, load_dataset, save_dataset
from .training import fit, load_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_GATE = 0, 2, 3, 4
KINK_MARGIN = 1e-3

log = logging.getLogger("mtscyclegan")


def _seed_arg(p):
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out or cfg.output_dir)
    jobs = [("source", cfg.source, cfg.n_windows), ("target", cfg.target, cfg.n_windows)]
    if cfg.n_eval_windows:
        jobs += [("source_eval", cfg.eval_params("source"), cfg.n_eval_windows),
                 ("target_eval", cfg.eval_params("target"), cfg.n_eval_windows)]
    for name, params, n in jobs:
        ds = generate_dataset(params, cfg.spec, n)
        save_dataset(ds, out / f"{name}.csv")
        print(f"{name}: {len(ds)} windows x {cfg.spec.steps} samples -> {out / (name + '.csv')}")
    return EXIT_OK


def _load_required(path: Path):
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    return load_dataset(path)


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    train_cfg = cfg.train
    if args.epochs is not None:
        train_cfg = type(train_cfg).from_dict({**train_cfg.to_dict(), "epochs": args.epochs})
    data = Path(args.data)
    source = _load_required(data / "source.csv")
    target = _load_required(data / "target.csv")
    heldout = None
    if (data / "source_eval.csv").exists() and (data / "target_eval.csv").exists():
        heldout = (load_dataset(data / "source_eval.csv"), load_dataset(data / "target_eval.csv"))
    out = Path(args.out or cfg.output_dir)
    models, start = None, 0
    if args.resume:
        models, start, _ = load_checkpoint(args.resume)
        print(f"resuming from {args.resume} at epoch {start}")
    try:
        res = fit(source, target, train_cfg, cfg.generator, cfg.discriminator, out_dir=out,
                  models=models, start_epoch=start, heldout=heldout,
                  progress=lambda r: print(
                      f"epoch {r['epoch']}: d_t={r['d_t']:.4f} d_s={r['d_s']:.4f} "
                      f"g_st={r['g_st']['total']:.4f} g_ts={r['g_ts']['total']:.4f}", flush=True))
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}; last good checkpoint: {exc.last_checkpoint}",
              file=sys.stderr)
        return EXIT_DIVERGED
    print(f"wrote {len(res.metrics)} metrics records to {out / 'metrics.jsonl'}; "
          f"last checkpoint {res.last_checkpoint}")
    return EXIT_OK


class IdentityStub:
    """Stand-in generator returning its normalized input unchanged (test mode)."""

    def __call__(self, x):
        return x


def cmd_translate(args) -> int:
    direction = args.direction
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown direction {direction!r}")
    in_domain, out_domain = ("source", "target") if direction == "source_to_target" else ("target", "source")
    ds = _load_required(Path(args.dataset))
    if ds.domain_tag != in_domain:
        raise ConfigError(f"direction {direction} expects a {in_domain} dataset, got domain {ds.domain_tag!r}")
    if args.stub == "identity":
        g = IdentityStub()
        stats_in = ds.channel_stats
        stats_out = ds.channel_stats
    else:
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required unless --stub is given")
        models, _, _ = load_checkpoint(args.checkpoint)
        g = models.g_st if direction == "source_to_target" else models.g_ts
        stats_in, stats_out = models.stats[in_domain], models.stats[out_domain]
    windows = translate(g, list(ds.windows), direction, stats_in, stats_out, destination=out_domain)
    params = load_config(args.config, args.seed).domain(out_domain)
    out_ds = ds.with_windows(windows, direction=direction, translated_from=str(args.dataset),
                             checkpoint=str(args.checkpoint) if args.checkpoint else None)
    out_ds = out_ds.__class__(out_ds.windows, params, out_ds.spec, out_ds.channel_stats, out_ds.provenance)
    dest = Path(args.out)
    if dest.suffix.lower() != ".csv":
        dest = dest / f"{direction}.csv"
    save_dataset(out_ds, dest)
    print(f"translated {len(windows)} windows ({direction}) -> {dest}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.seed)
    groups = {}
    for path in args.inputs:
        ds = _load_required(Path(path))
        label = ds.provenance.get("direction") or f"raw_{ds.domain_tag}"
        if label in groups:
            label = f"{label}:{Path(path).stem}"
        recs = paramrec.recover_windows(ds.windows, ds.spec)
        groups[label] = (recs, cfg.domain(ds.domain_tag))
    report = paramrec.build_report(groups, cfg.spec, min_windows=args.min_windows)
    paths = report.save(args.out)
    print(report.table())
    print(f"report written to {paths['json']}")
    if args.gate:
        problems = []
        if report.below_threshold:
            problems.append(f"fewer than {args.min_windows} valid windows in some group")
        if not report.mean_amplitude_error <= args.max_amp_error:
            problems.append(f"mean amplitude error {report.mean_amplitude_error:.4f} > {args.max_amp_error}")
        if not report.max_gamma_error <= args.max_gamma_error:
            problems.append(f"gamma error {report.max_gamma_error} > {args.max_gamma_error} samples")
        if problems:
            for p in problems:
                print(f"GATE FAIL: {p}", file=sys.stderr)
            return EXIT_GATE
        print("GATE PASS")
    return EXIT_OK


def gradcheck_suite(seeds: int = 25, tolerance: float = 1e-4, corrupt: str | None = None,
                    first_seed: int = 0):
    """Finite-difference check over every layer kind and both reduced networks.

    Returns ``{tensor_name: max relative error over seeds}``. ``corrupt``
    names one tensor whose analytic gradient gets sign-flipped.
    """
    spec = WindowSpec(sample_period_s=300, window_duration_s=8 * 300, channels=4)
    gcfg = GeneratorConfig(conv_layers=2, conv_filters=4, kernel_size=5, lstm_layers=2, hidden=4)
    dcfg = DiscriminatorConfig(conv_layers=2, conv_filters=4, kernel_size=5, lstm_layers=2, hidden=4,
                               head_units=4)
    worst: dict[str, float] = {}

    def record(report):
        for k, v in report.errors.items():
            worst[k] = max(worst.get(k, 0.0), v)

    def draw(rng, params, scale, layers, x):
        # redraw until no ReLU sits within KINK_MARGIN of its kink
        for _ in range(100):
            for p in params:
                p[...] = rng.normal(0.0, scale, p.shape)
            if relu_margin(layers, x) > KINK_MARGIN:
                return
        raise RuntimeError("could not draw a kink-free configuration")

    for s in range(first_seed, first_seed + seeds):
        rng = np.random.default_rng(s)
        x = rng.normal(size=(2, 8, 3))
        layers = [
            Dense("dense", 3, 4, "relu", rng, np.float64),
            Conv1D("conv1d", 3, 4, 3, "relu", rng, np.float64),
            LSTM("lstm", 3, 4, rng, np.float64),
            LastStep("last_step"),
        ]
        for layer in layers:
            draw(rng, layer.params.values(), 0.5, [layer], x)
            name = corrupt.split(".", 1)[1] if corrupt and corrupt.startswith(layer.name + ".") else None
            record(check_layer(layer, x, tolerance, corrupt=name))
        xw = rng.normal(size=(2, spec.steps, spec.channels))
        for net in (build_generator(gcfg, spec, rng, dtype=np.float64),
                    build_discriminator(dcfg, spec, rng, dtype=np.float64)):
            draw(rng, net.params.values(), 0.3, net.layers, xw)
            name = None
            if corrupt and corrupt.startswith(net.role + "/"):
                name = corrupt.split("/", 1)[1]
            record(check_network(net, xw, tolerance, corrupt=name))
    return worst


def cmd_gradcheck(args) -> int:
    worst = gradcheck_suite(args.seeds, args.tolerance, corrupt=args.corrupt,
                            first_seed=args.seed or 0)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        tmp = out / "gradcheck.json.tmp"
        tmp.write_text(json.dumps({"tolerance": args.tolerance, "seeds": args.seeds, "errors": worst},
                                  indent=2, sort_keys=True) + "\n")
        tmp.replace(out / "gradcheck.json")
    failing = []
    for name, err in worst.items():
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"{name:<40} {err:.3e} {status}")
        if status == "FAIL":
            failing.append(name)
    if failing:
        print(f"gradient check failed for: {', '.join(failing)}", file=sys.stderr)
        return EXIT_GATE
    print(f"all {len(worst)} tensors within {args.tolerance:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtscyclegan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate source/target datasets")
    g.add_argument("--config")
    g.add_argument("--out")
    _seed_arg(g)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the four networks")
    t.add_argument("--config")
    t.add_argument("--data", required=True, help="directory holding source.csv and target.csv")
    t.add_argument("--out")
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", help="checkpoint directory to continue from")
    _seed_arg(t)
    t.set_defaults(func=cmd_train)

    tr = sub.add_parser("translate", help="map a dataset into the other domain")
    tr.add_argument("--checkpoint")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--direction", required=True, choices=sorted(DIRECTIONS))
    tr.add_argument("--out", required=True, help="output CSV, or a directory for <direction>.csv")
    tr.add_argument("--config", help="config supplying the destination domain parameters")
    _seed_arg(tr)
    tr.add_argument("--stub", choices=["identity"], help=argparse.SUPPRESS)
    tr.set_defaults(func=cmd_translate)

    e = sub.add_parser("evaluate", help="recover channel parameters and report errors")
    e.add_argument("--config")
    e.add_argument("--inputs", nargs="+", required=True, help="dataset CSVs (raw or translated)")
    e.add_argument("--out", required=True)
    e.add_argument("--gate", action="store_true", help="exit 4 when thresholds are violated")
    e.add_argument("--max-amp-error", type=float, default=0.2)
    e.add_argument("--max-gamma-error", type=float, default=0.0)
    e.add_argument("--min-windows", type=int, default=paramrec.MIN_REPORT_WINDOWS)
    _seed_arg(e)
    e.set_defaults(func=cmd_evaluate)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gc.add_argument("--seeds", type=int, default=25)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.add_argument("--config", help="accepted for uniformity; the suite has no settings")
    gc.add_argument("--out", help="directory for gradcheck.json")
    gc.add_argument("--corrupt", help=argparse.SUPPRESS)
    _seed_arg(gc)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError, IntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MTSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
