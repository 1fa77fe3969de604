"""Generator ensembles: weighted sampling and (1+1)-ES evolution of the weights."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .grid import CellId
from .nn_core import ModelParams, forward
from .scoring import GaussianSummary, frechet_distance, summarize

SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class MixtureEAConfig:
    generations: int = 5000
    mutation_scale: float = 0.01
    eval_sample_count: int = 1000

    def __post_init__(self):
        if self.generations < 0:
            raise ConfigError("mixture generations must be >= 0")
        if not self.mutation_scale > 0:
            raise ConfigError("mixture mutation scale must be positive")
        if self.eval_sample_count < 2:
            raise ConfigError("need at least two evaluation samples")


@dataclass(frozen=True)
class EnsembleScore:
    value: float
    eval_sample_count: int
    eval_seed: int


def normalized(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ConfigError(f"not a valid weight vector: {w}")
    return w / w.sum()


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def is_simplex(w, tol: float = SIMPLEX_TOL) -> bool:
    w = np.asarray(w)
    return bool(np.all(w >= 0) and abs(w.sum() - 1.0) <= tol)


def _pick(w: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF generator choice for uniforms ``u`` in [0, 1)."""
    cdf = np.cumsum(w) / np.sum(w)
    last = np.flatnonzero(w > 0)[-1]
    cdf[last:] = 1.0
    return np.searchsorted(cdf, u, side="right")


def _latent_dim(gens: Sequence[ModelParams]) -> int:
    dims = {g.input_size for g in gens}
    if len(dims) != 1:
        raise ConfigError(f"ensemble generators disagree on latent width: {sorted(dims)}")
    return dims.pop()


def sample_ensemble(gens: Sequence[ModelParams], w, n: int, rng: np.random.Generator) -> np.ndarray:
    """n samples; each picks generator i with probability w[i] and feeds it fresh N(0, I) noise.

    Latents are drawn before the choices, so a one-generator ensemble consumes
    the rng exactly like ``forward(g, rng.standard_normal(...))`` would.
    """
    w = np.asarray(w, dtype=np.float64)
    if len(gens) != len(w):
        raise ConfigError(f"{len(gens)} generators but {len(w)} weights")
    if n < 1:
        raise ConfigError("n must be >= 1")
    z = rng.standard_normal((n, _latent_dim(gens)))
    u = rng.random(n)
    choice = _pick(w, u)
    out = np.empty((n, gens[0].output_size))
    for i, g in enumerate(gens):
        mask = choice == i
        if mask.any():
            # full-batch forward keeps results independent of how rows were split
            out[mask] = forward(g, z)[mask]
    return out


class MixtureEvaluator:
    """Scores weight vectors against a reference with common random numbers.

    The latents, selection uniforms and every generator's output on every
    latent are fixed at construction, so ``score(w)`` is a deterministic
    function of ``w`` and agrees bit-for-bit with scoring
    ``sample_ensemble(gens, w, n, default_rng(eval_seed))``.
    """

    def __init__(self, gens: Sequence[ModelParams], reference: np.ndarray | GaussianSummary,
                 eval_sample_count: int, eval_seed: int):
        if len(gens) == 0:
            raise ConfigError("empty ensemble")
        self.gens = list(gens)
        self.eval_seed = int(eval_seed)
        self.n = int(eval_sample_count)
        self.reference = reference if isinstance(reference, GaussianSummary) else summarize(reference)
        if self.n < self.reference.dim + 1:
            raise ConfigError(f"eval_sample_count {self.n} too small for dimension {self.reference.dim}")
        rng = np.random.default_rng(self.eval_seed)
        z = rng.standard_normal((self.n, _latent_dim(self.gens)))
        self._u = rng.random(self.n)
        self._outputs = np.stack([forward(g, z) for g in self.gens])  # (s, n, dim)
        self._rows = np.arange(self.n)

    def samples(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if len(w) != len(self.gens):
            raise ConfigError(f"{len(self.gens)} generators but {len(w)} weights")
        return self._outputs[_pick(w, self._u), self._rows]

    def score(self, w) -> EnsembleScore:
        value = frechet_distance(summarize(self.samples(w)), self.reference).value
        return EnsembleScore(value, self.n, self.eval_seed)


def evaluate_mixture(gens: Sequence[ModelParams], w, reference: np.ndarray,
                     cfg: MixtureEAConfig, eval_seed: int) -> EnsembleScore:
    return MixtureEvaluator(gens, reference, cfg.eval_sample_count, eval_seed).score(w)


def mutate_weights(w, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Add N(0, scale^2) per entry, clamp at zero, renormalize.

    If every entry clamps to zero the input comes back unchanged.
    """
    w = np.asarray(w, dtype=np.float64)
    trial = np.clip(w + rng.normal(0.0, scale, size=w.shape), 0.0, None)
    total = trial.sum()
    if total <= 0.0:
        return w.copy()
    return trial / total


@dataclass
class EvolutionTrace:
    """Best-so-far score after each ES iteration (index 0 is the start point)."""

    best_scores: list[float]
    accepted: int = 0


def evolve_mixture(gens: Sequence[ModelParams], w0, reference, cfg: MixtureEAConfig,
                   rng: np.random.Generator, eval_seed: int,
                   trace: EvolutionTrace | None = None) -> tuple[np.ndarray, EnsembleScore]:
    """(1+1)-ES over mixture weights; a mutant replaces the incumbent only if strictly better."""
    evaluator = reference if isinstance(reference, MixtureEvaluator) else \
        MixtureEvaluator(gens, reference, cfg.eval_sample_count, eval_seed)
    w = normalized(w0)
    best = evaluator.score(w)
    if trace is not None:
        trace.best_scores.append(best.value)
    for _ in range(cfg.generations):
        candidate = mutate_weights(w, cfg.mutation_scale, rng)
        score = evaluator.score(candidate)
        if score.value < best.value:
            w, best = candidate, score
            if trace is not None:
                trace.accepted += 1
        if trace is not None:
            trace.best_scores.append(best.value)
    return w, best


def select_best_neighborhood(results) -> tuple[CellId, np.ndarray, EnsembleScore]:
    """Global minimum score; ties go to the first cell in row-major order.

    ``results`` maps CellId -> (weights, EnsembleScore).
    """
    if not results:
        raise ConfigError("no cells to choose from")
    cell = min(sorted(results), key=lambda c: results[c][1].value)
    w, score = results[cell]
    return CellId(*cell), w, score
