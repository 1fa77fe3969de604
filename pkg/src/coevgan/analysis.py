"""Comparative statistics over run results: improvement ratio, rank-sum test,
mean/std%/min tables and per-cell heatmaps."""
from __future__ import annotations

import math
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError

EXACT_MAX_TOTAL = 40  # pooled size up to which the permutation distribution is counted exactly


def improvement_delta(base_scores: Sequence[float], ensemble_scores: Sequence[float]) -> float:
    """Relative drop (in percent) of the mean score when switching to the ensemble."""
    if len(base_scores) == 0 or len(ensemble_scores) == 0:
        raise ConfigError("improvement_delta needs non-empty score lists")
    base = float(np.mean(base_scores))
    if base <= 0:
        raise ConfigError(f"base mean must be positive, got {base}")
    return (base - float(np.mean(ensemble_scores))) / base * 100.0


# --------------------------------------------------------------------------- rank-sum test


def rankdata(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    x = np.asarray(values, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class RankSumResult:
    statistic: float  # U of the first sample
    p_value: float
    method: str


def _exact_p(doubled_ranks: np.ndarray, n1: int, observed: int) -> float:
    """Two-sided permutation p-value of the first sample's (doubled) rank sum.

    Counts, for every subset size k <= n1 and every integer sum, how many
    subsets of the pooled ranks reach it -- a subset-sum DP, so ties are exact.
    """
    total = int(doubled_ranks.sum())
    ways = np.zeros((n1 + 1, total + 1), dtype=np.int64)
    ways[0, 0] = 1
    for r in doubled_ranks.astype(int):
        for k in range(n1, 0, -1):
            ways[k, r:] = ways[k, r:] + ways[k - 1, :total + 1 - r]
    dist = ways[n1]
    n = len(doubled_ranks)
    center = n1 * (n + 1)  # doubled expected rank sum
    dev = abs(observed - center)
    sums = np.arange(total + 1)
    hits = int(dist[np.abs(sums - center) >= dev].sum())
    return min(1.0, float(hits) / comb(n, n1))


def wilcoxon_rank_sum(a: Sequence[float], b: Sequence[float], method: str = "auto") -> RankSumResult:
    """Two-sided Wilcoxon rank-sum / Mann-Whitney U test.

    ``method="exact"`` counts the permutation distribution of rank sums (ties
    included); ``"asymptotic"`` uses the normal approximation with tie and
    continuity corrections. ``"auto"`` picks exact for pooled sizes up to 40.
    """
    a = list(map(float, a))
    b = list(map(float, b))
    n1, n2 = len(a), len(b)
    if n1 < 3 or n2 < 3:
        raise ConfigError("rank-sum test needs at least 3 values per sample")
    n = n1 + n2
    ranks = rankdata(a + b)
    r1 = ranks[:n1].sum()
    u1 = r1 - n1 * (n1 + 1) / 2.0
    if len(set(a + b)) == 1:
        return RankSumResult(u1, 1.0, "degenerate")
    if method == "auto":
        method = "exact" if n <= EXACT_MAX_TOTAL else "asymptotic"
    if method == "exact":
        doubled = np.rint(2 * ranks).astype(int)
        return RankSumResult(u1, _exact_p(doubled, n1, int(doubled[:n1].sum())), "exact")
    if method != "asymptotic":
        raise ConfigError(f"unknown method {method!r}")
    _, counts = np.unique(ranks, return_counts=True)
    tie = float(np.sum(counts ** 3 - counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    mu = n1 * n2 / 2.0
    dev = max(abs(u1 - mu) - 0.5, 0.0)
    p = 2.0 * float(ndtr(-dev / math.sqrt(var)))
    return RankSumResult(u1, min(1.0, p), "asymptotic")


# --------------------------------------------------------------------------- tables


@dataclass(frozen=True)
class SummaryRow:
    variant: str
    portion: float
    n: int
    mean: float
    std_pct: float  # sample std as a percentage of the mean
    min: float


def describe(values: Sequence[float]) -> tuple[float, float, float]:
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ConfigError("no values to summarize")
    mean = float(x.mean())
    std = float(x.std(ddof=1)) if x.size > 1 else 0.0
    std_pct = std / mean * 100.0 if mean != 0 else 0.0
    return mean, std_pct, float(x.min())


def summarize_runs(groups: Mapping[tuple[str, float], Sequence[float]]) -> list[SummaryRow]:
    """Mean, std% and min per (variant, portion) group."""
    rows = []
    for (variant, portion), values in sorted(groups.items()):
        mean, std_pct, lo = describe(values)
        rows.append(SummaryRow(variant, portion, len(values), mean, std_pct, lo))
    return rows


def format_summary(rows: Iterable[SummaryRow]) -> str:
    lines = [f"{'variant':<28} {'portion':>7} {'n':>3} {'mean':>12} {'std%':>8} {'min':>12}"]
    for r in rows:
        lines.append(f"{r.variant:<28} {r.portion:>7.2f} {r.n:>3d} {r.mean:>12.4f} "
                     f"{r.std_pct:>7.1f}% {r.min:>12.4f}")
    return "\n".join(lines)


# --------------------------------------------------------------------------- heatmap


def format_float(v: float) -> str:
    """Shortest round-tripping text; integral values drop the trailing '.0'."""
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def heatmap_pixels(scores: np.ndarray) -> np.ndarray:
    """Grey levels 0..255, lowest score -> 255 (lightest)."""
    scores = np.asarray(scores, dtype=np.float64)
    lo, hi = float(scores.min()), float(scores.max())
    if hi == lo:
        return np.full(scores.shape, 255, dtype=np.uint8)
    return np.rint(255.0 * (hi - scores) / (hi - lo)).astype(np.uint8)


def emit_heatmap(scores, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (score grid) and ``<path>.ppm`` (binary P6, one pixel per cell)."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if scores.ndim != 2 or not np.all(np.isfinite(scores)):
        raise ConfigError("heatmap needs a finite 2-D score grid")
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path, ppm_path = base.with_suffix(".csv"), base.with_suffix(".ppm")
    csv_path.write_text("\n".join(",".join(format_float(v) for v in row) for row in scores))
    grey = heatmap_pixels(scores)
    rows, cols = scores.shape
    header = f"P6\n{cols} {rows}\n255\n".encode("ascii")
    ppm_path.write_bytes(header + np.repeat(grey[..., None], 3, axis=2).tobytes())
    return csv_path, ppm_path


def read_ppm(path) -> np.ndarray:
    """Grey levels (rows x cols) from a P6 file written by :func:`emit_heatmap`."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ConfigError(f"{path}: not a P6 image")
    cols, rows = map(int, parts[1].split())
    rgb = np.frombuffer(parts[3], dtype=np.uint8).reshape(rows, cols, 3)
    return rgb[..., 0].copy()
