"""Recover per-channel gain, offset and lag from windows and summarize them.

For every derived channel the lag is found by exhaustive search over the
normalized cross-correlation with the driver channel, then gain and offset
come from ordinary least squares on the aligned overlap. Medians over many
windows are compared with the configured domain parameters.
"""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .synthgen import MAX_GAMMA_S, MEAN_STEP_MAGNITUDE, DomainParams, Window, WindowSpec

CORRELATION_THRESHOLD = 0.7
MIN_REPORT_WINDOWS = 200


class LagEstimate(NamedTuple):
    lag: int
    correlation: float
    valid: bool


class AffineFit(NamedTuple):
    alpha: float
    beta: float
    r2: float
    valid: bool


def _flat(x: np.ndarray) -> bool:
    sd = np.std(x)
    return not sd > 1e-9 * max(1.0, float(np.max(np.abs(x))))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if not den > 0:
        return 0.0
    return float(np.dot(a, b) / den)


def default_max_lag(spec: WindowSpec) -> int:
    return MAX_GAMMA_S // spec.sample_period_s


def estimate_lag(driver, derived, max_lag: int, threshold: float = CORRELATION_THRESHOLD) -> LagEstimate:
    """Lag ``k`` in ``[0, max_lag]`` maximizing ``|corr(driver[:T-k], derived[k:])|``.

    Ties go to the smallest lag. The estimate is flagged invalid when the
    driver is flat or the peak correlation magnitude is below ``threshold``.
    """
    a = np.asarray(driver, dtype=np.float64)
    d = np.asarray(derived, dtype=np.float64)
    T = a.size
    if d.size != T:
        raise ValueError(f"series lengths differ: {T} vs {d.size}")
    if not 0 <= max_lag < T / 2:
        raise ValueError(f"max_lag={max_lag} must lie in [0, T/2) with T={T}")
    if _flat(a):
        return LagEstimate(0, 0.0, False)
    best_k, best_r = 0, -1.0
    for k in range(max_lag + 1):
        r = abs(_pearson(a[:T - k], d[k:]))
        if r > best_r:
            best_k, best_r = k, r
    return LagEstimate(best_k, best_r, bool(best_r >= threshold))


def estimate_affine(driver_aligned, derived_aligned) -> AffineFit:
    """Least-squares fit ``derived = alpha * driver + beta``."""
    x = np.asarray(driver_aligned, dtype=np.float64)
    y = np.asarray(derived_aligned, dtype=np.float64)
    if x.size != y.size or x.size < 2 or _flat(x):
        return AffineFit(float("nan"), float("nan"), 0.0, False)
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    sxx = np.dot(dx, dx)
    alpha = np.dot(dx, dy) / sxx
    beta = my - alpha * mx
    syy = np.dot(dy, dy)
    r2 = float(np.clip(np.dot(dx, dy) ** 2 / (sxx * syy), 0.0, 1.0)) if syy > 0 else 0.0
    return AffineFit(float(alpha), float(beta), r2, True)


@dataclass(frozen=True)
class ChannelEstimate:
    channel: str
    alpha: float
    beta: float
    gamma_samples: int
    correlation: float
    r2: float
    valid: bool


@dataclass(frozen=True)
class RecoveredParams:
    window_index: int
    channels: tuple[ChannelEstimate, ...]

    def __getitem__(self, name: str) -> ChannelEstimate:
        for c in self.channels:
            if c.channel == name:
                return c
        raise KeyError(name)


def recover_window(w: Window, spec: WindowSpec, max_lag: int | None = None,
                   threshold: float = CORRELATION_THRESHOLD) -> RecoveredParams:
    """Estimate ``(alpha, beta, gamma)`` of every derived channel against channel A.

    Degenerate channels come back with ``valid=False``; nothing is raised.
    """
    max_lag = default_max_lag(spec) if max_lag is None else max_lag
    x = w.values
    T = x.shape[0]
    driver = x[:, 0]
    out = []
    for j, name in enumerate(spec.names[1:], start=1):
        lag = estimate_lag(driver, x[:, j], max_lag, threshold)
        fit = estimate_affine(driver[:T - lag.lag], x[lag.lag:, j])
        valid = lag.valid and fit.valid and (T - lag.lag) >= T / 2
        out.append(ChannelEstimate(name, fit.alpha, fit.beta, lag.lag, lag.correlation, fit.r2, valid))
    return RecoveredParams(w.window_index, tuple(out))


def recover_windows(windows, spec: WindowSpec, max_lag=None, threshold=CORRELATION_THRESHOLD):
    return [recover_window(w, spec, max_lag, threshold) for w in windows]


# -- report ------------------------------------------------------------------

def beta_error(estimate: float, configured: float) -> float:
    """Relative error for ``|beta| >= 1``, else absolute error over the mean step size."""
    if abs(configured) >= 1:
        return abs(estimate - configured) / abs(configured)
    return abs(estimate - configured) / MEAN_STEP_MAGNITUDE


@dataclass
class ChannelSummary:
    channel: str
    n_valid: int
    alpha: float
    beta: float
    gamma_samples: int
    median_alpha: float
    median_beta: float
    median_gamma_samples: float
    alpha_error: float
    beta_error: float
    gamma_error_samples: float


@dataclass
class GroupSummary:
    label: str
    domain: str
    n_windows: int
    n_rejected: int
    channels: list[ChannelSummary]
    below_threshold: bool


@dataclass
class RecoveryReport:
    groups: list[GroupSummary]
    min_windows: int = MIN_REPORT_WINDOWS
    estimates: dict = field(default_factory=dict, repr=False)

    @property
    def mean_amplitude_error(self) -> float:
        """Average of the alpha and beta median errors over all channels and groups."""
        errs = [e for g in self.groups for c in g.channels for e in (c.alpha_error, c.beta_error)]
        return float(np.mean(errs)) if errs else float("nan")

    @property
    def max_gamma_error(self) -> float:
        errs = [c.gamma_error_samples for g in self.groups for c in g.channels]
        return float(max(errs)) if errs else float("nan")

    @property
    def below_threshold(self) -> bool:
        return any(g.below_threshold for g in self.groups)

    def to_dict(self):
        return {
            "min_windows": self.min_windows,
            "mean_amplitude_error": self.mean_amplitude_error,
            "max_gamma_error_samples": self.max_gamma_error,
            "below_threshold": self.below_threshold,
            "groups": [asdict(g) for g in self.groups],
        }

    def table(self) -> str:
        lines = [f"{'group':<20} {'ch':<3} {'param':<6} {'configured':>11} {'median':>11} {'error':>9}"]
        for g in self.groups:
            for c in g.channels:
                for p, conf, med, err in (
                    ("alpha", c.alpha, c.median_alpha, c.alpha_error),
                    ("beta", c.beta, c.median_beta, c.beta_error),
                    ("gamma", c.gamma_samples, c.median_gamma_samples, c.gamma_error_samples),
                ):
                    lines.append(f"{g.label:<20} {c.channel:<3} {p:<6} {conf:>11.4f} {med:>11.4f} {err:>9.4f}")
            flag = "  BELOW THRESHOLD" if g.below_threshold else ""
            lines.append(f"{g.label:<20} windows={g.n_windows} rejected={g.n_rejected}{flag}")
        lines.append(f"mean alpha/beta median error: {self.mean_amplitude_error:.4f}")
        lines.append(f"max gamma median error (samples): {self.max_gamma_error:g}")
        return "\n".join(lines)

    def csv_rows(self):
        for g in self.groups:
            for c in g.channels:
                yield (g.label, g.domain, c.channel, "alpha", c.alpha, c.median_alpha, c.alpha_error)
                yield (g.label, g.domain, c.channel, "beta", c.beta, c.median_beta, c.beta_error)
                yield (g.label, g.domain, c.channel, "gamma_samples", c.gamma_samples,
                       c.median_gamma_samples, c.gamma_error_samples)

    def save(self, out_dir) -> dict[str, Path]:
        """Write ``report.json``, ``report.csv`` and ``estimates.csv`` into ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"json": out_dir / "report.json", "csv": out_dir / "report.csv",
                 "scatter": out_dir / "estimates.csv"}
        _atomic_write(paths["json"], json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["group", "domain", "channel", "parameter", "configured", "median_estimate", "error"])
        for row in self.csv_rows():
            wr.writerow([*row[:4], *(repr(float(v)) for v in row[4:])])
        _atomic_write(paths["csv"], buf.getvalue())
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["group", "window_index", "channel", "alpha", "beta", "gamma_samples",
                     "correlation", "r2", "valid"])
        for label, recs in self.estimates.items():
            for r in recs:
                for c in r.channels:
                    wr.writerow([label, r.window_index, c.channel, repr(c.alpha), repr(c.beta),
                                 c.gamma_samples, repr(c.correlation), repr(c.r2), int(c.valid)])
        _atomic_write(paths["scatter"], buf.getvalue())
        return paths


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def summarize_group(label: str, recovered: list[RecoveredParams], configured: DomainParams,
                    spec: WindowSpec, min_windows: int = MIN_REPORT_WINDOWS) -> GroupSummary:
    names = spec.names[1:]
    chans = []
    rejected = set()
    for j, (name, m) in enumerate(zip(names, configured.mappings)):
        valid = [r.channels[j] for r in recovered if r.channels[j].valid]
        rejected.update(r.window_index for r in recovered if not r.channels[j].valid)
        g_conf = m.gamma_s // spec.sample_period_s
        if valid:
            ma = float(np.median([c.alpha for c in valid]))
            mb = float(np.median([c.beta for c in valid]))
            mg = float(np.median([c.gamma_samples for c in valid]))
            ea = abs(ma - m.alpha) / abs(m.alpha)
            eb = beta_error(mb, m.beta)
            eg = abs(mg - g_conf)
        else:
            ma = mb = mg = ea = eb = eg = float("nan")
        chans.append(ChannelSummary(name, len(valid), m.alpha, m.beta, g_conf, ma, mb, mg, ea, eb, eg))
    below = any(not c.n_valid >= min_windows for c in chans)
    return GroupSummary(label, configured.name, len(recovered), len(rejected), chans, below)


def build_report(groups: dict[str, tuple[list[RecoveredParams], DomainParams]], spec: WindowSpec,
                 min_windows: int = MIN_REPORT_WINDOWS) -> RecoveryReport:
    """Aggregate per-window estimates into medians and errors.

    ``groups`` maps a label (e.g. ``"source_to_target"``) to the recovered
    windows and the domain parameters they should match.
    """
    summaries = [summarize_group(label, recs, conf, spec, min_windows)
                 for label, (recs, conf) in groups.items()]
    return RecoveryReport(summaries, min_windows, {k: v[0] for k, v in groups.items()})
