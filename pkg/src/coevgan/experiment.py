"""Run configuration, the dataset -> grid -> coevolution -> mixture pipeline,
result files, single-GAN bootstrap ensembles and the data-diet study."""
from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import emit_heatmap, format_float, improvement_delta
from .coev import CoevConfig, Mode, NetConfig, run
from .dataset import TargetSpec, generate_target, plan_budget, rng_for, sample_target, seed_for
from .errors import ConfigError
from .grid import CellId, GridConfig
from .mixture import (EnsembleScore, MixtureEAConfig, MixtureEvaluator, evolve_mixture, select_best_neighborhood,
                      uniform_weights)
from .nn_core import ModelParams, forward
from .scoring import frechet_distance, summarize

log = logging.getLogger(__name__)

SCORE_COLUMNS = ["variant", "portion", "repeat", "cell_row", "cell_col",
                 "best_score", "uniform_ensemble_score", "evolved_ensemble_score"]
WEIGHT_COLUMNS = ["cell_row", "cell_col", "evolved_ensemble_score", "weights"]
TELEMETRY_COLUMNS = ["cell_row", "cell_col", "generation", "gen_fitness", "disc_fitness", "gen_lr", "disc_lr"]


# --------------------------------------------------------------------------- configuration


@dataclass(frozen=True)
class EvalConfig:
    reference_samples: int = 10000
    reference_source: str = "heldout"  # or "partition": each cell scores against its own subset

    def __post_init__(self):
        if self.reference_source not in ("heldout", "partition"):
            raise ConfigError(f"reference_source must be heldout or partition, got {self.reference_source!r}")
        if self.reference_samples < 2:
            raise ConfigError("reference_samples must be >= 2")


@dataclass(frozen=True)
class TrainConfig:
    budget: int = 120000
    portion: float = 1.0

    def __post_init__(self):
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if not 0.0 < self.portion <= 1.0:
            raise ConfigError(f"portion must be in (0, 1], got {self.portion}")


@dataclass(frozen=True)
class SeedConfig:
    master: int = 0
    run: int = 0


@dataclass(frozen=True)
class RunSection:
    mode: Mode = Mode.SEQUENTIAL
    variant: str = ""
    repeat: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))


@dataclass(frozen=True)
class BootstrapConfig:
    pool_size: int = 30
    repeats: int = 30
    neighborhood_size: int = 5


@dataclass(frozen=True)
class NetSection:
    latent_dim: int = 64
    hidden_layers: int = 2
    hidden_size: int = 256


@dataclass(frozen=True)
class RunConfig:
    target: TargetSpec = field(default_factory=TargetSpec)
    grid: GridConfig = field(default_factory=lambda: GridConfig(1, 1))
    coev: CoevConfig = field(default_factory=CoevConfig)
    net: NetSection = field(default_factory=NetSection)
    mixture: MixtureEAConfig = field(default_factory=MixtureEAConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    run: RunSection = field(default_factory=RunSection)
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def net_config(self) -> NetConfig:
        return NetConfig(self.net.latent_dim, self.net.hidden_layers, self.net.hidden_size,
                         self.target.dimension)

    @property
    def variant(self) -> str:
        if self.run.variant:
            return self.run.variant
        return "SingleGAN" if self.grid.size == 1 else f"Grid-{self.grid}"

    def override(self, **sections) -> "RunConfig":
        """``cfg.override(train={"portion": 0.5}, grid=GridConfig(3, 3))``."""
        changes = {}
        for name, value in sections.items():
            if isinstance(value, dict):
                value = dataclasses.replace(getattr(self, name), **value)
            changes[name] = value
        return dataclasses.replace(self, **changes)


def _convert(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, enum.Enum):
            return type(default)(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}: {exc}") from exc
    return raw


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``section.key = value`` lines (``#`` starts a comment)."""
    cfg = base or RunConfig()
    updates: dict[str, dict] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} has no section")
        section, name = key.split(".", 1)
        updates.setdefault(section, {})[name] = value

    changes = {}
    for section, values in updates.items():
        if section == "grid":
            changes["grid"] = _parse_grid(values, cfg.grid)
            continue
        if section not in {f.name for f in dataclasses.fields(RunConfig)}:
            raise ConfigError(f"unknown config section {section!r}")
        current = getattr(cfg, section)
        known = {f.name for f in dataclasses.fields(current)}
        kwargs = {}
        for name, raw in values.items():
            if name not in known:
                raise ConfigError(f"unknown config key {section}.{name}")
            kwargs[name] = _convert(raw, getattr(current, name), f"{section}.{name}")
        changes[section] = dataclasses.replace(current, **kwargs)
    return dataclasses.replace(cfg, **changes)


def _parse_grid(values: dict, current: GridConfig) -> GridConfig:
    unknown = set(values) - {"size", "rows", "cols"}
    if unknown:
        raise ConfigError(f"unknown grid keys {sorted(unknown)}")
    grid = GridConfig.parse(values["size"]) if "size" in values else current
    rows = int(values.get("rows", grid.rows))
    cols = int(values.get("cols", grid.cols))
    return GridConfig(rows, cols)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        section = getattr(cfg, f.name)
        if f.name == "grid":
            lines.append(f"grid.size = {section}")
            continue
        for sf in dataclasses.fields(section):
            value = getattr(section, sf.name)
            if isinstance(value, enum.Enum):
                value = value.value
            elif isinstance(value, float):
                value = format_float(value)
            lines.append(f"{f.name}.{sf.name} = {value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


# --------------------------------------------------------------------------- results


@dataclass(frozen=True)
class CellResult:
    row: int
    col: int
    best_score: float
    uniform_score: float
    evolved_score: float
    weights: tuple[float, ...]


@dataclass(frozen=True)
class RunResult:
    variant: str
    portion: float
    repeat: int
    cells: tuple[CellResult, ...]
    telemetry_path: str = "telemetry.csv"

    @property
    def grid_best_score(self) -> float:
        return min(c.best_score for c in self.cells)

    @property
    def grid_mean_score(self) -> float:
        return float(np.mean([c.best_score for c in self.cells]))

    @property
    def grid_best_ensemble_score(self) -> float:
        return self.best_cell().evolved_score

    def best_cell(self) -> CellResult:
        by_cell = {CellId(c.row, c.col): c for c in self.cells}
        cell, _, _ = select_best_neighborhood(
            {k: (c.weights, EnsembleScore(c.evolved_score, 0, 0)) for k, c in by_cell.items()})
        return by_cell[cell]

    def score_grid(self, column: str = "best_score") -> np.ndarray:
        rows = 1 + max(c.row for c in self.cells)
        cols = 1 + max(c.col for c in self.cells)
        out = np.full((rows, cols), np.nan)
        attr = {"best_score": "best_score", "uniform_ensemble_score": "uniform_score",
                "evolved_ensemble_score": "evolved_score"}[column]
        for c in self.cells:
            out[c.row, c.col] = getattr(c, attr)
        return out

    def score_rows(self) -> list[dict]:
        return [dict(variant=self.variant, portion=self.portion, repeat=self.repeat, cell_row=c.row,
                     cell_col=c.col, best_score=c.best_score, uniform_ensemble_score=c.uniform_score,
                     evolved_ensemble_score=c.evolved_score) for c in self.cells]


def _fmt(v) -> str:
    return format_float(v) if isinstance(v, float) else str(v)


def write_csv(path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in columns])
    Path(path).write_text(buf.getvalue())


def read_scores(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append(dict(variant=r["variant"], portion=float(r["portion"]), repeat=int(r["repeat"]),
                        cell_row=int(r["cell_row"]), cell_col=int(r["cell_col"]),
                        best_score=float(r["best_score"]),
                        uniform_ensemble_score=float(r["uniform_ensemble_score"]),
                        evolved_ensemble_score=float(r["evolved_ensemble_score"])))
    return out


def write_results(result: RunResult, out_dir, cfg: RunConfig | None = None, telemetry=()) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "scores.csv", SCORE_COLUMNS, result.score_rows())
    write_csv(out / "weights.csv", WEIGHT_COLUMNS, [
        dict(cell_row=c.row, cell_col=c.col, evolved_ensemble_score=c.evolved_score,
             weights=";".join(format_float(w) for w in c.weights)) for c in result.cells])
    write_csv(out / result.telemetry_path, TELEMETRY_COLUMNS, [
        dict(cell_row=t.row, cell_col=t.col, generation=t.generation, gen_fitness=t.gen_fitness,
             disc_fitness=t.disc_fitness, gen_lr=t.gen_lr, disc_lr=t.disc_lr) for t in telemetry])
    if cfg is not None:
        manifest = [f"variant = {result.variant}", f"portion = {format_float(result.portion)}",
                    f"repeat = {result.repeat}", f"master_seed = {cfg.seeds.master}",
                    f"run_seed = {cfg.seeds.run}", f"config_sha256 = {config_hash(cfg)}", "", "[config]",
                    dump_config(cfg)]
        (out / "manifest.txt").write_text("\n".join(manifest))
    return out


def read_results(out_dir) -> RunResult:
    out = Path(out_dir)
    scores = read_scores(out / "scores.csv")
    with open(out / "weights.csv", newline="") as fh:
        weights = {(int(r["cell_row"]), int(r["cell_col"])): tuple(float(x) for x in r["weights"].split(";"))
                   for r in csv.DictReader(fh)}
    if not scores:
        raise ConfigError(f"{out}: empty scores file")
    cells = tuple(CellResult(s["cell_row"], s["cell_col"], s["best_score"], s["uniform_ensemble_score"],
                             s["evolved_ensemble_score"], weights[(s["cell_row"], s["cell_col"])])
                  for s in scores)
    return RunResult(scores[0]["variant"], scores[0]["portion"], scores[0]["repeat"], cells)


# --------------------------------------------------------------------------- pipeline


def generator_score(g: ModelParams, reference_summary, n: int, seed: int) -> float:
    z = np.random.default_rng(seed).standard_normal((n, g.input_size))
    return frechet_distance(summarize(forward(g, z)), reference_summary).value


def reference_set(cfg: RunConfig) -> np.ndarray:
    """Held-out samples from the target, independent of the training data."""
    return sample_target(cfg.target, cfg.eval.reference_samples, rng_for(cfg.seeds.master, "reference"))


@dataclass
class Experiment:
    """A finished run plus the in-memory models behind it."""

    result: RunResult
    state: object
    generators: dict[CellId, list[ModelParams]]


def run_experiment(cfg: RunConfig, out_dir=None) -> RunResult:
    return execute(cfg, out_dir).result


def execute(cfg: RunConfig, out_dir=None, master: np.ndarray | None = None,
            reference: np.ndarray | None = None) -> Experiment:
    if master is None:
        master = generate_target(cfg.target, cfg.seeds.master)
    if reference is None:
        reference = reference_set(cfg)
    plan = plan_budget(len(master), cfg.coev.batch_size, cfg.train.portion, cfg.train.budget)
    coev = dataclasses.replace(cfg.coev, generations=plan.generations)
    seed = cfg.seeds.run
    log.info("%s portion=%s: %d generations x %d batches", cfg.variant, cfg.train.portion,
             plan.generations, plan.batches_per_generation)
    state = run(cfg.grid, master, cfg.train.portion, plan, coev, cfg.net_config, seed, cfg.run.mode)

    shared_ref = summarize(reference)
    n_eval = cfg.mixture.eval_sample_count
    cells, gens_by_cell = [], {}
    for cell in cfg.grid.cells():
        gens = state.final_generators(cell)
        gens_by_cell[cell] = gens
        if cfg.eval.reference_source == "partition":
            ref = summarize(master[state.cells[cell].partition.indices])
        else:
            ref = shared_ref
        best = generator_score(gens[0], ref, n_eval, seed_for(seed, "best", *cell))
        eval_seed = seed_for(seed, "mixture-eval", *cell)
        evaluator = MixtureEvaluator(gens, ref, n_eval, eval_seed)
        w0 = uniform_weights(len(gens))
        uniform = evaluator.score(w0).value
        w, evolved = evolve_mixture(gens, w0, evaluator, cfg.mixture, rng_for(seed, "mixture-es", *cell),
                                    eval_seed)
        cells.append(CellResult(cell.row, cell.col, best, uniform, evolved.value, tuple(float(x) for x in w)))

    result = RunResult(cfg.variant, cfg.train.portion, cfg.run.repeat, tuple(cells))
    if out_dir is not None:
        write_results(result, out_dir, cfg, state.telemetry())
        emit_heatmap(result.score_grid("best_score"), Path(out_dir) / "heatmap_best")
        emit_heatmap(result.score_grid("evolved_ensemble_score"), Path(out_dir) / "heatmap_ensemble")
    return Experiment(result, state, gens_by_cell)


# --------------------------------------------------------------------------- bootstrap


@dataclass(frozen=True)
class BootstrapDraw:
    members: tuple[int, ...]
    uniform_score: float
    evolved_score: float
    weights: tuple[float, ...]


def bootstrap_ensembles(generators: Sequence[ModelParams], n_repeats: int, rng: np.random.Generator,
                        reference, cfg: MixtureEAConfig, neighborhood_size: int = 5) -> list[BootstrapDraw]:
    """Virtual neighborhoods drawn without replacement from independently trained generators."""
    if len(generators) < neighborhood_size:
        raise ConfigError(f"need at least {neighborhood_size} generators, got {len(generators)}")
    ref = summarize(reference) if not hasattr(reference, "covariance") else reference
    draws = []
    for _ in range(n_repeats):
        members = tuple(int(i) for i in rng.choice(len(generators), size=neighborhood_size, replace=False))
        gens = [generators[i] for i in members]
        eval_seed = int(rng.integers(2**63))
        es_rng = np.random.default_rng(int(rng.integers(2**63)))
        evaluator = MixtureEvaluator(gens, ref, cfg.eval_sample_count, eval_seed)
        w0 = uniform_weights(len(gens))
        uniform = evaluator.score(w0).value
        w, evolved = evolve_mixture(gens, w0, evaluator, cfg, es_rng, eval_seed)
        draws.append(BootstrapDraw(members, uniform, evolved.value, tuple(float(x) for x in w)))
    return draws


@dataclass
class SinglePool:
    results: list[RunResult]
    generators: list[ModelParams]

    @property
    def scores(self) -> list[float]:
        return [r.grid_best_score for r in self.results]


def train_single_pool(cfg: RunConfig, pool_size: int, master=None, reference=None, tag=()) -> SinglePool:
    """Independent 1x1 runs that differ only in their training seed."""
    single = cfg.override(grid=GridConfig(1, 1), run={"variant": "SingleGAN"})
    results, gens = [], []
    for k in range(pool_size):
        run_cfg = single.override(seeds={"run": seed_for(cfg.seeds.run, "pool", *tag, k)},
                                  run={"repeat": k})
        exp = execute(run_cfg, master=master, reference=reference)
        results.append(exp.result)
        gens.append(exp.generators[CellId(0, 0)][0])
    return SinglePool(results, gens)


def bootstrap_rows(pool: SinglePool, draws: Sequence[BootstrapDraw], portion: float) -> list[dict]:
    rows = []
    for r in pool.results:
        rows.extend(r.score_rows())
    for j, d in enumerate(draws):
        rows.append(dict(variant="SingleGAN-Ensemble", portion=portion, repeat=j, cell_row=0, cell_col=0,
                         best_score=min(pool.scores[i] for i in d.members),
                         uniform_ensemble_score=d.uniform_score, evolved_ensemble_score=d.evolved_score))
    return rows


def run_bootstrap(cfg: RunConfig, out_dir=None) -> tuple[SinglePool, list[BootstrapDraw]]:
    master = generate_target(cfg.target, cfg.seeds.master)
    reference = reference_set(cfg)
    pool = train_single_pool(cfg, cfg.bootstrap.pool_size, master, reference)
    draws = bootstrap_ensembles(pool.generators, cfg.bootstrap.repeats, rng_for(cfg.seeds.run, "bootstrap"),
                                reference, cfg.mixture, cfg.bootstrap.neighborhood_size)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_csv(Path(out_dir) / "scores.csv", SCORE_COLUMNS, bootstrap_rows(pool, draws, cfg.train.portion))
    return pool, draws


# --------------------------------------------------------------------------- data-diet study


@dataclass
class DietStudy:
    """Per-repeat values keyed by (variant, portion) plus the pooled scores behind each delta."""

    per_repeat: dict[tuple[str, float], list[float]] = field(default_factory=dict)
    pooled: dict[tuple[str, float], list[float]] = field(default_factory=dict)

    def add(self, key, repeat_value: float, pooled_values: Sequence[float]):
        self.per_repeat.setdefault(key, []).append(float(repeat_value))
        self.pooled.setdefault(key, []).extend(float(v) for v in pooled_values)

    def median(self, variant: str, portion: float) -> float:
        return float(np.median(self.per_repeat[(variant, portion)]))

    def delta(self, variant: str, portion: float) -> float:
        return improvement_delta(self.pooled[(variant, portion)], self.pooled[(f"{variant}-Ensemble", portion)])


def diet_study(cfg: RunConfig, portions=(0.25, 1.0), repeats: int = 5, pool_size: int = 5,
               bootstrap_repeats: int = 5, grid: GridConfig | None = GridConfig(3, 3),
               grid_portions=(0.25,)) -> DietStudy:
    """Single GANs, their bootstrap ensembles and grid runs under a shared batch budget."""
    master = generate_target(cfg.target, cfg.seeds.master)
    reference = reference_set(cfg)
    study = DietStudy()
    for r in range(repeats):
        for pi, portion in enumerate(portions):
            pcfg = cfg.override(train={"portion": portion})
            pool = train_single_pool(pcfg, pool_size, master, reference, tag=(r, pi))
            draws = bootstrap_ensembles(pool.generators, bootstrap_repeats,
                                        rng_for(cfg.seeds.run, "bootstrap", r, pi), reference,
                                        cfg.mixture, min(cfg.bootstrap.neighborhood_size, pool_size))
            evolved = [d.evolved_score for d in draws]
            study.add(("SingleGAN", portion), np.mean(pool.scores), pool.scores)
            study.add(("SingleGAN-Ensemble", portion), np.mean(evolved), evolved)
            log.info("repeat %d portion %s: single %.4f ensemble %.4f", r, portion,
                     np.mean(pool.scores), np.mean(evolved))
        if grid is None:
            continue
        for pi, portion in enumerate(grid_portions):
            gcfg = cfg.override(grid=grid, train={"portion": portion}, run={"variant": "", "repeat": r},
                                seeds={"run": seed_for(cfg.seeds.run, "grid", r, pi)})
            res = execute(gcfg, master=master, reference=reference).result
            name = f"Grid-{grid}"
            study.add((name, portion), res.grid_best_score, [res.grid_best_score])
            study.add((f"{name}-Ensemble", portion), res.grid_best_ensemble_score, [res.grid_best_ensemble_score])
            log.info("repeat %d grid portion %s: best %.4f ensemble %.4f", r, portion,
                     res.grid_best_score, res.grid_best_ensemble_score)
    return study
