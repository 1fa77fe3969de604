"""Spatial coevolutionary GAN training over a toroidal grid.

Each cell owns a partition of the data and, every generation, gathers the
published center pairs of its neighborhood, picks a new center by tournament,
trains every gathered model with SGD/Adam against random adversaries from the
neighborhood, replaces the worst model with the best and publishes the best
pair back to the board.
"""
from __future__ import annotations

import enum
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import BudgetPlan, DatasetPartition, minibatches, rng_for, sample_partition, seed_for
from .errors import CellTrainingError, ConfigError, TrainingError
from .grid import CellId, GridConfig, Neighborhood, SnapshotBoard, neighborhood_of
from .nn_core import (Activation, ModelParams, ModelSnapshot, Optimizer, Role, discriminator_grad,
                      discriminator_output, forward, generator_grad, init_params, mlp_layers)

log = logging.getLogger(__name__)

LR_MIN, LR_MAX = 1e-8, 1.0


class FitnessMode(str, enum.Enum):
    AVERAGE = "average"
    MIN = "min"


class Mode(str, enum.Enum):
    ASYNC = "async"
    SEQUENTIAL = "seq"
    SYNC = "sync"  # barrier per generation: everyone reads start-of-generation models


@dataclass(frozen=True)
class NetConfig:
    latent_dim: int = 64
    hidden_layers: int = 2
    hidden_size: int = 256
    data_dim: int = 2

    def generator_layers(self):
        sizes = [self.latent_dim] + [self.hidden_size] * self.hidden_layers + [self.data_dim]
        return mlp_layers(sizes, Activation.TANH, Activation.IDENTITY)

    def discriminator_layers(self):
        sizes = [self.data_dim] + [self.hidden_size] * self.hidden_layers + [1]
        return mlp_layers(sizes, Activation.TANH, Activation.SIGMOID)


@dataclass(frozen=True)
class CoevConfig:
    tournament_size: int = 2
    mutation_probability: float = 0.5
    mutation_rate: float = 0.0001
    generations: int = 1
    population_size_per_cell: int = 1
    initial_learning_rate: float = 0.0002
    batch_size: int = 100
    fitness_mode: FitnessMode = FitnessMode.AVERAGE
    optimizer: str = "adam"

    def __post_init__(self):
        object.__setattr__(self, "fitness_mode", FitnessMode(self.fitness_mode))
        if self.tournament_size < 1:
            raise ConfigError("tournament size must be >= 1")
        if not 0.0 <= self.mutation_probability <= 1.0:
            raise ConfigError("mutation probability must be in [0, 1]")
        if self.mutation_rate < 0:
            raise ConfigError("mutation rate must be non-negative")
        if self.population_size_per_cell != 1:
            raise ConfigError("only one individual per cell is supported")
        if not self.initial_learning_rate > 0:
            raise ConfigError("initial learning rate must be positive")
        if self.batch_size < 1 or self.generations < 0:
            raise ConfigError("batch size must be >= 1 and generations >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Subpopulation:
    snapshots: list[ModelSnapshot]
    fitness: list[float | None] = field(default_factory=list)

    def __len__(self):
        return len(self.snapshots)

    @property
    def params(self) -> list[ModelParams]:
        return [s.params for s in self.snapshots]


@dataclass(frozen=True, eq=False)
class FitnessRecord:
    """Pairwise losses: ``loss_matrix[i, j]`` is generator i's loss against discriminator j,
    ``disc_loss_matrix[i, j]`` is discriminator j's own BCE against generator i's fakes."""

    loss_matrix: np.ndarray
    disc_loss_matrix: np.ndarray


@dataclass(frozen=True)
class TelemetryRecord:
    row: int
    col: int
    generation: int
    gen_fitness: float
    disc_fitness: float
    gen_lr: float
    disc_lr: float


# --------------------------------------------------------------------------- operators


def evaluate_all_pairs(gens: Sequence[ModelParams], discs: Sequence[ModelParams],
                       real_batch: np.ndarray, z: np.ndarray) -> FitnessRecord:
    """Score every (generator, discriminator) pair on one real batch and one latent batch."""
    fakes = np.concatenate([forward(g, z) for g in gens])
    n, s = len(z), len(gens)
    gl = np.empty((s, len(discs)))
    dl = np.empty_like(gl)
    for j, d in enumerate(discs):
        real_term = np.mean(np.log(discriminator_output(d, real_batch)))
        # one pass over every generator's fakes, then split per generator
        log_not = np.log(1.0 - discriminator_output(d, fakes)).reshape(s, n).mean(axis=1)
        gl[:, j] = 0.5 * log_not
        dl[:, j] = -(real_term + log_not)
    if not (np.all(np.isfinite(gl)) and np.all(np.isfinite(dl))):
        raise TrainingError("non-finite loss in pairwise evaluation")
    return FitnessRecord(gl, dl)


def fitness_from_record(rec: FitnessRecord, mode: FitnessMode | str = FitnessMode.AVERAGE
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Per-model fitness (lower is better) aggregated over all adversaries."""
    agg = np.mean if FitnessMode(mode) is FitnessMode.AVERAGE else np.min
    return agg(rec.loss_matrix, axis=1), agg(rec.disc_loss_matrix, axis=0)


def tournament_select(fitness, tournament_size: int, rng: np.random.Generator) -> int:
    """Index of the fittest of ``tournament_size`` distinct uniform picks (ties -> lowest index)."""
    fitness = np.asarray(fitness, dtype=np.float64)
    k = min(max(1, tournament_size), len(fitness))
    picks = np.sort(rng.choice(len(fitness), size=k, replace=False))
    return int(picks[np.argmin(fitness[picks])])


def mutate_learning_rate(lr: float, probability: float, rate: float, rng: np.random.Generator) -> float:
    """With ``probability``, multiply by exp(N(0,1) * rate); always clamp to [1e-8, 1]."""
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if rng.random() < probability:
        lr = lr * math.exp(rng.standard_normal() * rate)
    return min(max(lr, LR_MIN), LR_MAX)


# --------------------------------------------------------------------------- cells


class CellState:
    """Everything a single cell owns across generations."""

    def __init__(self, cell: CellId, grid: GridConfig, partition: DatasetPartition,
                 master: np.ndarray, net: NetConfig, coev: CoevConfig, plan: BudgetPlan, seed: int):
        self.cell = CellId(*cell)
        self.neighborhood: Neighborhood = neighborhood_of(grid, self.cell)
        self.partition = partition
        self.master = master
        self.net = net
        self.coev = coev
        self.plan = plan
        self.seed = seed
        self.rng = rng_for(seed, "train", *self.cell)
        self.version = 0
        self.generation = 0
        self.gen_opt: Optimizer | None = None
        self.disc_opt: Optimizer | None = None
        self.sgd_steps = {Role.GENERATOR: 0, Role.DISCRIMINATOR: 0}
        self.generators: Subpopulation | None = None
        self.discriminators: Subpopulation | None = None
        self.telemetry: list[TelemetryRecord] = []

    def initial_pair(self) -> tuple[ModelSnapshot, ModelSnapshot]:
        rng = rng_for(self.seed, "init", *self.cell)
        g = init_params(self.net.generator_layers(), rng)
        d = init_params(self.net.discriminator_layers(), rng)
        lr = self.coev.initial_learning_rate
        return (ModelSnapshot(g, Role.GENERATOR, lr, self.cell, 0),
                ModelSnapshot(d, Role.DISCRIMINATOR, lr, self.cell, 0))

    def _optimizer(self) -> Optimizer:
        return Optimizer(self.coev.optimizer)


def _best_and_worst(fitness: np.ndarray) -> tuple[int, int]:
    best = int(np.argmin(fitness))
    worst = len(fitness) - 1 - int(np.argmax(fitness[::-1]))
    return best, worst


def _replace_and_center(params: list, opts: list, fitness: np.ndarray):
    """Copy the best over the worst, then swap the best into slot 0."""
    best, worst = _best_and_worst(fitness)
    fitness = fitness.copy()
    if worst != best:
        params[worst] = params[best]
        opts[worst] = None
        fitness[worst] = fitness[best]
    params[0], params[best] = params[best], params[0]
    opts[0], opts[best] = opts[best], opts[0]
    fitness[0], fitness[best] = fitness[best], fitness[0]
    return best, fitness


def train_cell_generation(state: CellState, board: SnapshotBoard,
                          read_board: SnapshotBoard | None = None) -> tuple[ModelSnapshot, ModelSnapshot]:
    """One generation of one cell; publishes and returns the new center pair."""
    try:
        return _train_generation(state, board, read_board or board)
    except (TrainingError, FloatingPointError) as exc:
        if isinstance(exc, CellTrainingError):
            raise
        raise CellTrainingError(state.cell, state.generation, exc) from exc


def _train_generation(state: CellState, board: SnapshotBoard, read_board: SnapshotBoard):
    coev, rng = state.coev, state.rng
    gen_snaps, disc_snaps = read_board.gather(state.neighborhood)
    g = [s.params for s in gen_snaps]
    d = [s.params for s in disc_snaps]
    s = len(g)

    batches = minibatches(state.partition, coev.batch_size, int(rng.integers(2**63)))
    batches = batches[:state.plan.batches_per_generation]
    if not batches:
        raise ConfigError(f"cell {tuple(state.cell)}: partition smaller than one batch")

    eval_real = state.master[batches[int(rng.integers(len(batches)))]]
    eval_z = rng.standard_normal((coev.batch_size, state.net.latent_dim))
    gfit, dfit = fitness_from_record(evaluate_all_pairs(g, d, eval_real, eval_z), coev.fitness_mode)

    # tournament picks the center; a foreign winner gets fresh optimizer state
    gi = tournament_select(gfit, coev.tournament_size, rng)
    di = tournament_select(dfit, coev.tournament_size, rng)
    g_opts = [state.gen_opt if gi == 0 and state.gen_opt else state._optimizer()] + \
        [state._optimizer() for _ in range(s - 1)]
    d_opts = [state.disc_opt if di == 0 and state.disc_opt else state._optimizer()] + \
        [state._optimizer() for _ in range(s - 1)]
    g[0], d[0] = g[gi], d[di]
    lr_g, lr_d = gen_snaps[gi].learning_rate, disc_snaps[di].learning_rate

    for batch in batches:
        lr_g = mutate_learning_rate(lr_g, coev.mutation_probability, coev.mutation_rate, rng)
        lr_d = mutate_learning_rate(lr_d, coev.mutation_probability, coev.mutation_rate, rng)
        real = state.master[batch]
        z = rng.standard_normal((len(batch), state.net.latent_dim))

        adversary = d[int(rng.integers(s))]
        for i in range(s):
            _, grad = generator_grad(g[i], adversary, z)
            g[i] = g_opts[i].step(g[i], grad, lr_g)
        fake = forward(g[int(rng.integers(s))], z)
        for j in range(s):
            _, grad = discriminator_grad(d[j], real, fake)
            d[j] = d_opts[j].step(d[j], grad, lr_d)
        state.sgd_steps[Role.GENERATOR] += s
        state.sgd_steps[Role.DISCRIMINATOR] += s

    gfit, dfit = fitness_from_record(evaluate_all_pairs(g, d, eval_real, eval_z), coev.fitness_mode)
    g_best, gfit = _replace_and_center(g, g_opts, gfit)
    d_best, dfit = _replace_and_center(d, d_opts, dfit)
    state.gen_opt = g_opts[0] if g_best == 0 else None
    state.disc_opt = d_opts[0] if d_best == 0 else None

    state.version += 1
    state.generation += 1
    gen_out = [ModelSnapshot(p, Role.GENERATOR, lr_g, state.cell, state.version) for p in g]
    disc_out = [ModelSnapshot(p, Role.DISCRIMINATOR, lr_d, state.cell, state.version) for p in d]
    state.generators = Subpopulation(gen_out, [float(f) for f in gfit])
    state.discriminators = Subpopulation(disc_out, [float(f) for f in dfit])
    state.telemetry.append(TelemetryRecord(state.cell.row, state.cell.col, state.generation,
                                           float(gfit[0]), float(dfit[0]), lr_g, lr_d))
    board.publish(state.cell, gen_out[0], disc_out[0])
    return gen_out[0], disc_out[0]


# --------------------------------------------------------------------------- whole grid


@dataclass
class RunState:
    grid: GridConfig
    board: SnapshotBoard
    cells: dict[CellId, CellState]
    plan: BudgetPlan

    def final_generators(self, cell: CellId) -> list[ModelParams]:
        sub = self.cells[CellId(*cell)].generators
        if sub is None:  # zero generations: fall back to the gathered neighborhood
            return [s.params for s in self.board.gather(self.cells[CellId(*cell)].neighborhood)[0]]
        return sub.params

    def telemetry(self) -> list[TelemetryRecord]:
        records = [r for c in self.cells.values() for r in c.telemetry]
        return sorted(records, key=lambda r: (r.generation, r.row, r.col))


def make_cells(grid: GridConfig, master: np.ndarray, portion: float, plan: BudgetPlan,
               coev: CoevConfig, net: NetConfig, seed: int) -> dict[CellId, CellState]:
    cells = {}
    for cell in grid.cells():
        part = sample_partition(len(master), portion, seed_for(seed, "partition", *cell), cell)
        cells[cell] = CellState(cell, grid, part, master, net, coev, plan, seed)
    return cells


def run(grid: GridConfig, master: np.ndarray, portion: float, plan: BudgetPlan, coev: CoevConfig,
        net: NetConfig, seed: int, mode: Mode | str = Mode.SEQUENTIAL,
        cells: dict[CellId, CellState] | None = None) -> RunState:
    """Train every cell for ``plan.generations`` generations."""
    mode = Mode(mode)
    if net.data_dim != master.shape[1]:
        raise ConfigError(f"network data_dim {net.data_dim} != dataset width {master.shape[1]}")
    cells = cells or make_cells(grid, master, portion, plan, coev, net, seed)
    board = SnapshotBoard(grid)
    for cell, state in cells.items():
        board.publish(cell, *state.initial_pair())

    if mode is Mode.SEQUENTIAL:
        for _ in range(plan.generations):
            for cell in grid.cells():
                train_cell_generation(cells[cell], board)
    elif mode is Mode.SYNC:
        for _ in range(plan.generations):
            view = board.frozen()
            for cell in grid.cells():
                train_cell_generation(cells[cell], board, view)
    else:
        _run_async(grid, cells, board, plan.generations)
    log.info("finished %d generations on %s grid", plan.generations, grid)
    return RunState(grid, board, cells, plan)


def _run_async(grid: GridConfig, cells: dict[CellId, CellState], board: SnapshotBoard, generations: int):
    abort = threading.Event()

    def worker(cell: CellId):
        for _ in range(generations):
            if abort.is_set():
                return
            try:
                train_cell_generation(cells[cell], board)
            except BaseException:
                abort.set()
                raise

    with ThreadPoolExecutor(max_workers=grid.size) as pool:
        futures = [pool.submit(worker, cell) for cell in grid.cells()]
        errors = [f.exception() for f in futures if f.exception() is not None]
    if errors:
        raise errors[0]
