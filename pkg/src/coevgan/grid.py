"""Toroidal grid addressing, five-cell neighborhoods and the shared snapshot board."""
from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator, NamedTuple

from .errors import ConfigError

if TYPE_CHECKING:
    from .nn_core import ModelSnapshot


class CellId(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True)
class GridConfig:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")

    @classmethod
    def parse(cls, text: str) -> "GridConfig":
        m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
        if not m:
            raise ConfigError(f"grid must look like KxK, got {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self):
        return f"{self.rows}x{self.cols}"

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def cells(self) -> Iterator[CellId]:
        """Row-major iteration order."""
        for r in range(self.rows):
            for c in range(self.cols):
                yield CellId(r, c)

    def contains(self, cell: CellId) -> bool:
        return 0 <= cell.row < self.rows and 0 <= cell.col < self.cols


@dataclass(frozen=True)
class Neighborhood:
    center: CellId
    members: tuple[CellId, ...]

    def __len__(self):
        return len(self.members)


def neighborhood_of(grid: GridConfig, cell: CellId) -> Neighborhood:
    """Center, then north, south, west, east with wraparound; duplicates dropped."""
    if not grid.contains(cell):
        raise ConfigError(f"cell {tuple(cell)} outside {grid}")
    r, c = cell
    candidates = [
        CellId(r, c),
        CellId((r - 1) % grid.rows, c),
        CellId((r + 1) % grid.rows, c),
        CellId(r, (c - 1) % grid.cols),
        CellId(r, (c + 1) % grid.cols),
    ]
    members = tuple(dict.fromkeys(candidates))
    return Neighborhood(CellId(r, c), members)


def all_neighborhoods(grid: GridConfig) -> list[Neighborhood]:
    return [neighborhood_of(grid, cell) for cell in grid.cells()]


class SnapshotBoard:
    """Latest published (generator, discriminator) pair per cell.

    Each slot has a single writer (its own cell). A publish swaps in a new
    tuple under a lock, so readers see either the old pair or the new pair,
    never half of each. Snapshots are immutable, which makes handing out the
    stored objects equivalent to handing out copies.
    """

    def __init__(self, grid: GridConfig):
        self.grid = grid
        self._slots: dict[CellId, tuple[ModelSnapshot, ModelSnapshot]] = {}
        self._lock = threading.Lock()

    def publish(self, cell: CellId, gen: "ModelSnapshot", disc: "ModelSnapshot") -> None:
        cell = CellId(*cell)
        if gen.origin != cell or disc.origin != cell:
            raise ConfigError(f"cell {tuple(cell)} may only publish its own snapshots")
        with self._lock:
            prev = self._slots.get(cell)
            if prev is not None and (gen.version <= prev[0].version or disc.version <= prev[1].version):
                raise ConfigError(
                    f"cell {tuple(cell)} published stale version {gen.version} over {prev[0].version}")
            self._slots[cell] = (gen, disc)

    def read(self, cell: CellId) -> tuple["ModelSnapshot", "ModelSnapshot"]:
        with self._lock:
            return self._slots[CellId(*cell)]

    def gather(self, nb: Neighborhood) -> tuple[list["ModelSnapshot"], list["ModelSnapshot"]]:
        """Generators and discriminators of every member, in ``nb.members`` order."""
        with self._lock:
            pairs = [self._slots[m] for m in nb.members]
        return [p[0] for p in pairs], [p[1] for p in pairs]

    def frozen(self) -> "SnapshotBoard":
        """A copy of the current state, used as the read side of a synchronous generation."""
        view = SnapshotBoard(self.grid)
        with self._lock:
            view._slots = dict(self._slots)
        return view

    def version(self, cell: CellId) -> int:
        return self.read(cell)[0].version

    def __contains__(self, cell) -> bool:
        return CellId(*cell) in self._slots
