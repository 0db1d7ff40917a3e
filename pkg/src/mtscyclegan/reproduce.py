"""Desk-scale reproduction: train on default-size data, translate held-out
windows in both directions and score the recovered channel parameters.

One call of :func:`run_seed` is one independent trial; :func:`run_trials`
spreads trials over worker processes and stops as soon as the pass/fail
verdict for the whole batch is settled.
"""
from __future__ import annotations

import json
import multiprocessing
import os
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, config_from_dict
from .nets import normalize, translate
from .paramrec import build_report, recover_windows
from .synthgen import generate_dataset
from .training import CycleModels, fit, heldout_cycle_loss

MAX_AMPLITUDE_ERROR = 0.20
MAX_CYCLE_RATIO = 0.20


@dataclass
class TrialResult:
    seed: int
    epochs: int
    initial_cycle: float
    final_cycle: float
    mean_amplitude_error: float
    max_gamma_error: float
    min_valid_windows: int
    wall_s: float
    out_dir: str

    @property
    def cycle_ratio(self) -> float:
        return self.final_cycle / self.initial_cycle

    @property
    def gamma_ok(self) -> bool:
        return self.max_gamma_error == 0

    @property
    def amplitude_ok(self) -> bool:
        return self.mean_amplitude_error <= MAX_AMPLITUDE_ERROR

    @property
    def cycle_ok(self) -> bool:
        return self.cycle_ratio <= MAX_CYCLE_RATIO

    @property
    def passed(self) -> bool:
        return self.gamma_ok and self.amplitude_ok and self.cycle_ok

    def summary(self) -> str:
        return (f"seed {self.seed}: gamma err {self.max_gamma_error:g} samples, "
                f"amp err {self.mean_amplitude_error:.3f}, cycle ratio {self.cycle_ratio:.3f} "
                f"({self.epochs} epochs, {self.wall_s / 60:.1f} min) -> "
                f"{'pass' if self.passed else 'fail'}")


def run_seed(seed: int, out_dir, cfg: RunConfig | None = None, progress=None) -> TrialResult:
    """Train one seed end to end; artifacts land in ``out_dir``."""
    t0 = time.perf_counter()
    cfg = cfg or config_from_dict({}, seed)
    out_dir = Path(out_dir)
    spec = cfg.spec
    source = generate_dataset(cfg.source, spec, cfg.n_windows)
    target = generate_dataset(cfg.target, spec, cfg.n_windows)
    src_eval = generate_dataset(cfg.eval_params("source"), spec, cfg.n_eval_windows)
    tgt_eval = generate_dataset(cfg.eval_params("target"), spec, cfg.n_eval_windows)
    stats = {"source": source.channel_stats, "target": target.channel_stats}
    tc = cfg.train
    models = CycleModels.build(spec, cfg.generator, cfg.discriminator, tc.seed, tc.generator_opt,
                               tc.discriminator_opt, stats)
    hs = normalize(src_eval.array, stats["source"]).astype(np.float32)
    ht = normalize(tgt_eval.array, stats["target"]).astype(np.float32)
    initial = heldout_cycle_loss(models, hs, ht)
    res = fit(source, target, tc, out_dir=out_dir, models=models, heldout=(src_eval, tgt_eval),
              progress=progress)
    final = res.metrics[-1]["heldout_cycle"]

    s2t = translate(models.g_st, list(src_eval.windows), "source_to_target", stats["source"], stats["target"])
    t2s = translate(models.g_ts, list(tgt_eval.windows), "target_to_source", stats["target"], stats["source"])
    report = build_report({"source_to_target": (recover_windows(s2t, spec), cfg.target),
                           "target_to_source": (recover_windows(t2s, spec), cfg.source)}, spec)
    report.save(out_dir / "report")
    result = TrialResult(
        seed=seed, epochs=tc.epochs, initial_cycle=initial, final_cycle=final,
        mean_amplitude_error=report.mean_amplitude_error, max_gamma_error=report.max_gamma_error,
        min_valid_windows=min(c.n_valid for g in report.groups for c in g.channels),
        wall_s=time.perf_counter() - t0, out_dir=str(out_dir),
    )
    (out_dir / "trial.json").write_text(json.dumps(asdict(result), indent=2, sort_keys=True) + "\n")
    return result


def _worker(args):
    seed, out_dir, overrides = args
    return run_seed(seed, out_dir, config_from_dict(overrides, seed))


def run_trials(seeds, out_root, needed: int = 3, overrides: dict | None = None,
               workers: int | None = None, on_result=None) -> list[TrialResult]:
    """Run seeds until ``needed`` have passed or too many failed for that to happen."""
    seeds = list(seeds)
    out_root = Path(out_root)
    workers = workers or min(len(seeds), os.cpu_count() or 1)
    allowed_failures = len(seeds) - needed
    jobs = [(s, out_root / f"seed_{s}", overrides or {}) for s in seeds]
    results: list[TrialResult] = []
    pool = multiprocessing.get_context("spawn").Pool(workers)
    try:
        for res in pool.imap_unordered(_worker, jobs):
            results.append(res)
            if on_result is not None:
                on_result(res)
            passed = sum(r.passed for r in results)
            if passed >= needed or len(results) - passed > allowed_failures:
                break
    finally:
        pool.terminate()
        pool.join()
    return sorted(results, key=lambda r: r.seed)
