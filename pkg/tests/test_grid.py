import threading
from collections import Counter

import numpy as np
import pytest

from coevgan.errors import ConfigError
from coevgan.grid import CellId, GridConfig, SnapshotBoard, all_neighborhoods, neighborhood_of
from coevgan.nn_core import ModelSnapshot, Role

from conftest import make_discriminator, make_generator

GRIDS = [GridConfig(r, c) for r in range(1, 7) for c in range(1, 7)]


def test_parse_and_format():
    g = GridConfig.parse("4x4")
    assert (g.rows, g.cols, g.size, str(g)) == (4, 4, 16, "4x4")
    assert GridConfig.parse(" 2X3 ") == GridConfig(2, 3)
    for bad in ("4", "4x", "0x3", "axb"):
        with pytest.raises(ConfigError):
            GridConfig.parse(bad)


def test_cells_are_row_major():
    assert list(GridConfig(2, 2).cells()) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_interior_neighborhood():
    nb = neighborhood_of(GridConfig(4, 4), CellId(1, 1))
    assert nb.members == ((1, 1), (0, 1), (2, 1), (1, 0), (1, 2))


def test_corner_neighborhood_wraps():
    nb = neighborhood_of(GridConfig(4, 4), CellId(0, 0))
    assert nb.members == ((0, 0), (3, 0), (1, 0), (0, 3), (0, 1))


def test_single_cell_grid():
    assert neighborhood_of(GridConfig(1, 1), CellId(0, 0)).members == ((0, 0),)


def test_two_by_two_collapses_duplicates():
    assert neighborhood_of(GridConfig(2, 2), CellId(0, 0)).members == ((0, 0), (1, 0), (0, 1))


def test_outside_cell_rejected():
    with pytest.raises(ConfigError):
        neighborhood_of(GridConfig(3, 3), CellId(3, 0))


@pytest.mark.parametrize("grid", GRIDS, ids=str)
def test_topology_invariants(grid):
    hoods = {nb.center: nb for nb in all_neighborhoods(grid)}
    assert len(hoods) == grid.size
    appearances = Counter(m for nb in hoods.values() for m in nb.members)
    for cell, nb in hoods.items():
        assert nb.members[0] == cell
        assert 1 <= len(nb) <= 5
        assert len(set(nb.members)) == len(nb)
        for other in nb.members:
            assert cell in hoods[other].members  # symmetric adjacency
        # every cell is gathered by exactly as many neighborhoods as it has members
        assert appearances[cell] == len(nb)
        if grid.rows >= 3 and grid.cols >= 3:
            assert len(nb) == 5 and appearances[cell] == 5


# -- board


def _pair(cell, version, seed=0):
    r = np.random.default_rng(seed)
    return (ModelSnapshot(make_generator(r), Role.GENERATOR, 1e-3, CellId(*cell), version),
            ModelSnapshot(make_discriminator(r), Role.DISCRIMINATOR, 1e-3, CellId(*cell), version))


def _filled_board(grid):
    board = SnapshotBoard(grid)
    for cell in grid.cells():
        board.publish(cell, *_pair(cell, 0))
    return board


def test_last_write_wins():
    board = SnapshotBoard(GridConfig(1, 1))
    board.publish((0, 0), *_pair((0, 0), 1))
    board.publish((0, 0), *_pair((0, 0), 2))
    assert board.version((0, 0)) == 2
    assert (0, 0) in board


def test_stale_or_foreign_publish_rejected():
    board = SnapshotBoard(GridConfig(2, 2))
    board.publish((0, 0), *_pair((0, 0), 3))
    with pytest.raises(ConfigError):
        board.publish((0, 0), *_pair((0, 0), 3))
    with pytest.raises(ConfigError):
        board.publish((0, 1), *_pair((0, 0), 4))


def test_gather_sizes_and_order():
    grid = GridConfig(4, 4)
    board = _filled_board(grid)
    nb = neighborhood_of(grid, CellId(2, 3))
    gens, discs = board.gather(nb)
    assert len(gens) == len(discs) == 5
    assert [g.origin for g in gens] == list(nb.members)
    small = GridConfig(2, 2)
    assert len(_filled_board(small).gather(neighborhood_of(small, CellId(0, 0)))[0]) == 3


def test_gathered_snapshots_cannot_corrupt_the_board():
    grid = GridConfig(3, 3)
    board = _filled_board(grid)
    gens, _ = board.gather(neighborhood_of(grid, CellId(1, 1)))
    before = board.read((1, 1))[0].params.weights.copy()
    with pytest.raises(ValueError):
        gens[0].params.weights[0] = 99.0
    gens.clear()
    assert np.array_equal(board.read((1, 1))[0].params.weights, before)
    assert len(board.gather(neighborhood_of(grid, CellId(1, 1)))[0]) == 5


def test_frozen_view_ignores_later_publishes():
    grid = GridConfig(1, 2)
    board = _filled_board(grid)
    view = board.frozen()
    board.publish((0, 1), *_pair((0, 1), 1))
    assert view.version((0, 1)) == 0 and board.version((0, 1)) == 1


def test_concurrent_reads_never_see_torn_pairs():
    grid = GridConfig(1, 1)
    board = _filled_board(grid)
    nb = neighborhood_of(grid, CellId(0, 0))
    pairs = [_pair((0, 0), v, seed=v) for v in range(1, 301)]
    torn = []

    def writer():
        for g, d in pairs:
            board.publish((0, 0), g, d)

    def reader():
        last = -1
        for _ in range(2000):
            (g,), (d,) = board.gather(nb)
            if g.version != d.version:
                torn.append((g.version, d.version))
            if g.version < last:
                torn.append(("went back", last, g.version))
            last = g.version

    threads = [threading.Thread(target=writer)] + [threading.Thread(target=reader) for _ in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert torn == []
    assert board.version((0, 0)) == 300
