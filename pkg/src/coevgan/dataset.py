"""Synthetic Gaussian-mixture targets, per-cell partitions and batch budgets."""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grid import CellId

MAGIC = b"GCDS"
_HEADER = struct.Struct("<4sII")


class TargetKind(str, enum.Enum):
    RING = "ring"
    GRID = "grid"


@dataclass(frozen=True)
class TargetSpec:
    kind: TargetKind = TargetKind.RING
    modes: int = 8
    dimension: int = 2
    mode_std: float = 0.05
    radius: float = 2.0  # ring radius, or pitch between grid modes
    total_samples: int = 60000

    def __post_init__(self):
        object.__setattr__(self, "kind", TargetKind(self.kind))
        if self.modes < 1:
            raise ConfigError("target needs at least one mode")
        if not 1 <= self.dimension <= 8:
            raise ConfigError(f"dimension must be in 1..8, got {self.dimension}")
        if self.total_samples < 1:
            raise ConfigError("total_samples must be >= 1")
        if not self.mode_std > 0:
            raise ConfigError("mode_std must be positive")
        if self.radius < 0:
            raise ConfigError("radius must be non-negative")

    def centers(self) -> np.ndarray:
        """Mode centers, shape (modes, dimension). Layout lives in the first two axes."""
        c = np.zeros((self.modes, self.dimension))
        if self.kind is TargetKind.RING:
            angles = 2.0 * np.pi * np.arange(self.modes) / self.modes
            c[:, 0] = self.radius * np.cos(angles)
            if self.dimension > 1:
                c[:, 1] = self.radius * np.sin(angles)
        else:
            side = math.ceil(math.sqrt(self.modes))
            idx = np.arange(self.modes)
            offset = (side - 1) / 2.0
            if self.dimension > 1:
                c[:, 0] = (idx % side - offset) * self.radius
                c[:, 1] = (idx // side - offset) * self.radius
            else:
                c[:, 0] = (idx - (self.modes - 1) / 2.0) * self.radius
        return c


def seed_for(seed: int, *keys) -> int:
    """Derive an independent 63-bit seed from a base seed and integer/str keys."""
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            words.extend(k.encode())
        else:
            words.append(int(k))
    return int(np.random.SeedSequence(words).generate_state(2, np.uint64)[0] >> np.uint64(1))


def rng_for(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(seed_for(seed, *keys))


def sample_target(spec: TargetSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    centers = spec.centers()
    which = rng.integers(spec.modes, size=n)
    noise = rng.standard_normal((n, spec.dimension)) * spec.mode_std
    return centers[which] + noise


def generate_target(spec: TargetSpec, seed: int) -> np.ndarray:
    """Master dataset of ``spec.total_samples`` rows, uniform over modes."""
    return sample_target(spec, spec.total_samples, np.random.default_rng(seed))


# --------------------------------------------------------------------------- partitions


@dataclass(frozen=True, eq=False)
class DatasetPartition:
    indices: np.ndarray
    portion: float
    owner: CellId
    rng_seed: int

    def __len__(self):
        return len(self.indices)


def partition_size(master_size: int, portion: float) -> int:
    return int(math.floor(portion * master_size + 0.5))


def _check_portion(portion: float):
    if not 0.0 < portion <= 1.0:
        raise ConfigError(f"portion must be in (0, 1], got {portion}")


def sample_partition(master_size: int, portion: float, seed: int,
                     owner: CellId = CellId(0, 0)) -> DatasetPartition:
    """Draw ``round(portion * master_size)`` indices uniformly *with* replacement."""
    _check_portion(portion)
    rng = np.random.default_rng(seed)
    idx = rng.integers(master_size, size=partition_size(master_size, portion))
    idx.flags.writeable = False
    return DatasetPartition(idx, portion, CellId(*owner), seed)


def minibatches(partition: DatasetPartition, batch_size: int, epoch_seed: int) -> list[np.ndarray]:
    """Shuffle the partition, cut into full batches; the short tail is dropped."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = np.random.default_rng(epoch_seed).permutation(partition.indices)
    n_batches = len(order) // batch_size
    return [order[i * batch_size:(i + 1) * batch_size] for i in range(n_batches)]


# --------------------------------------------------------------------------- budget


@dataclass(frozen=True)
class BudgetPlan:
    dataset_size: int
    batch_size: int
    portion: float
    generations: int
    total_batches: int

    @property
    def batches_per_generation(self) -> int:
        return self.total_batches // self.generations


def batches_per_generation(dataset_size: int, batch_size: int, portion: float) -> int:
    # small epsilon keeps e.g. 60000*0.1/100 from flooring to 59
    return int(math.floor(dataset_size * portion / batch_size + 1e-9))


def plan_budget(dataset_size: int, batch_size: int, portion: float, total_batch_budget: int) -> BudgetPlan:
    """Generations needed so every data portion spends the same number of mini-batches.

    Generations are rounded up, so the budget is met or exceeded by less than
    one generation's worth of batches.
    """
    _check_portion(portion)
    if dataset_size < 1 or batch_size < 1 or total_batch_budget < 1:
        raise ConfigError("dataset size, batch size and budget must be positive")
    per_gen = batches_per_generation(dataset_size, batch_size, portion)
    if per_gen < 1:
        raise ConfigError(
            f"batch size {batch_size} exceeds the {portion:g} portion of {dataset_size} samples")
    generations = -(-total_batch_budget // per_gen)
    return BudgetPlan(dataset_size, batch_size, portion, generations, per_gen * generations)


# --------------------------------------------------------------------------- binary I/O


def save_matrix(path, data: np.ndarray) -> None:
    data = np.ascontiguousarray(data, dtype="<f8")
    if data.ndim != 2:
        raise ConfigError("only 2-D matrices can be saved")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, data.shape[0], data.shape[1]))
        fh.write(data.tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ConfigError(f"{path}: truncated header")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ConfigError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != rows * cols * 8:
        raise ConfigError(f"{path}: expected {rows}x{cols} doubles, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)
