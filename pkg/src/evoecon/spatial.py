"""Agent placement on the unit torus and radius-bounded neighbour queries."""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np


def place_agents(count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` independent uniform positions on the unit torus, shape (count, 2)."""
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    return np.mod(rng.random((count, 2)), 1.0)


def wrap(pos) -> tuple[float, float]:
    return float(pos[0]) % 1.0, float(pos[1]) % 1.0


def torus_distance(a, b) -> float:
    dx = abs(a[0] - b[0])
    dy = abs(a[1] - b[1])
    dx = min(dx, 1.0 - dx)
    dy = min(dy, 1.0 - dy)
    return math.hypot(dx, dy)


def radius_for(neighbors: float, population: int) -> float:
    """Radius whose disc holds ``neighbors`` agents on average out of ``population``."""
    return min(0.5, math.sqrt(neighbors / (math.pi * population)))


class NeighborhoodIndex:
    """Uniform hash grid over the unit torus.

    Cells are at least ``cell_size`` wide, so any query with
    ``radius <= cell_size`` only needs the 3x3 block around the centre cell.
    """

    def __init__(self, cell_size: float):
        if not 0 < cell_size <= 1:
            raise ValueError("cell_size must lie in (0, 1]")
        self.cell_size = cell_size
        self.cells_per_axis = max(1, int(1.0 / cell_size))
        self.grid: dict[tuple[int, int], list[int]] = defaultdict(list)
        self.positions: dict[int, tuple[float, float]] = {}

    def _cell(self, pos) -> tuple[int, int]:
        m = self.cells_per_axis
        return min(int(pos[0] * m), m - 1), min(int(pos[1] * m), m - 1)

    def insert(self, agent: int, pos) -> None:
        if agent in self.positions:
            raise KeyError(f"agent {agent} already indexed")
        p = wrap(pos)
        self.positions[agent] = p
        self.grid[self._cell(p)].append(agent)

    def remove(self, agent: int) -> None:
        p = self.positions.pop(agent)
        cell = self._cell(p)
        self.grid[cell].remove(agent)
        if not self.grid[cell]:
            del self.grid[cell]

    def __len__(self) -> int:
        return len(self.positions)

    def __contains__(self, agent: int) -> bool:
        return agent in self.positions

    def query(self, pos, radius: float, exclude: int | None = None) -> list[int]:
        if not 0 < radius <= self.cell_size:
            raise ValueError(f"radius {radius} outside (0, cell_size={self.cell_size}]")
        m = self.cells_per_axis
        cx, cy = self._cell(pos)
        seen = {((cx + dx) % m, (cy + dy) % m) for dx in (-1, 0, 1) for dy in (-1, 0, 1)}
        found = []
        for cell in seen:
            for agent in self.grid.get(cell, ()):
                if agent != exclude and torus_distance(pos, self.positions[agent]) <= radius:
                    found.append(agent)
        found.sort()
        return found

    @classmethod
    def build(cls, positions: np.ndarray, cell_size: float) -> "NeighborhoodIndex":
        index = cls(cell_size)
        for i, p in enumerate(positions):
            index.insert(i, p)
        return index


def neighbors_within(index: NeighborhoodIndex, center: int, radius: float) -> list[int]:
    """Agents other than ``center`` within torus distance ``radius``, ascending id."""
    try:
        pos = index.positions[center]
    except KeyError:
        raise KeyError(f"agent {center} is not indexed") from None
    return index.query(pos, radius, exclude=center)


def brute_force_neighbors(positions: np.ndarray, center: int, radius: float) -> list[int]:
    """O(n) reference scan; the index must agree with it exactly."""
    d = np.abs(positions - positions[center])
    d = np.minimum(d, 1.0 - d)
    dist = np.hypot(d[:, 0], d[:, 1])
    hits = np.flatnonzero(dist <= radius)
    return [int(i) for i in hits if i != center]


def neighbor_csr(index: NeighborhoodIndex, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Neighbour lists for agents 0..n-1 packed as (indptr, indices)."""
    n = len(index)
    indptr = np.zeros(n + 1, dtype=np.int64)
    chunks = []
    for i in range(n):
        nb = neighbors_within(index, i, radius)
        chunks.append(nb)
        indptr[i + 1] = indptr[i] + len(nb)
    indices = np.fromiter((j for nb in chunks for j in nb), dtype=np.int64, count=int(indptr[-1]))
    return indptr, indices
