"""Storage occupancy tracking with a per-SKU nearest-neighbor index."""

from __future__ import annotations

import random

import numpy as np

from .grid import STORAGE, Cell, GridMap
from .kdtree import KdTree

SkuId = int


class InventoryError(RuntimeError):
    """Illegal placement or removal."""


class Inventory:
    """Which storage endpoint holds which SKU.

    Every occupied cell is mirrored into that SKU's KD-tree so the
    distribution-aware cost terms can run nearest-neighbor queries; the two
    views are kept in lockstep by place/remove being the only mutators.
    """

    def __init__(self, grid: GridMap, num_skus: int):
        self.grid = grid
        self.num_skus = num_skus
        self.occupancy: dict[Cell, SkuId] = {}
        self.trees: dict[SkuId, KdTree] = {k: KdTree() for k in range(num_skus)}
        self._storage_set = set(grid.storage_endpoints)

    @property
    def density(self) -> float:
        total = len(self.grid.storage_endpoints)
        return len(self.occupancy) / total if total else 0.0

    def sku_at(self, cell: Cell) -> SkuId | None:
        return self.occupancy.get(cell)

    def place(self, cell: Cell, sku: SkuId) -> None:
        if cell not in self._storage_set:
            raise InventoryError(f"{cell} is not a storage endpoint")
        if cell in self.occupancy:
            raise InventoryError(f"{cell} already holds an item")
        self.occupancy[cell] = sku
        self.trees[sku].insert(cell)

    def remove(self, cell: Cell) -> SkuId:
        sku = self.occupancy.pop(cell, None)
        if sku is None:
            raise InventoryError(f"{cell} holds no item")
        self.trees[sku].remove(cell)
        return sku

    def nearest_neighbor(
        self, sku: SkuId, query: Cell, exclude: Cell | None = None
    ) -> int | None:
        """L1 distance from query to the nearest item of sku, or None.

        exclude skips one cell (the queried item itself when costing its own
        removal, so the result measures proximity to *other* items).
        """
        hit = self.trees[sku].nearest(query, exclude=exclude)
        return None if hit is None else hit[1]

    def cells_of(self, sku: SkuId) -> list[Cell]:
        """Occupied cells of one SKU, sorted row-major."""
        return sorted(self.trees[sku].cells(), key=lambda c: (c[1], c[0]))

    def empty_storage_cells(self) -> list[Cell]:
        """Unoccupied storage endpoints, sorted row-major."""
        occ = self.occupancy
        return [c for c in self.grid.storage_endpoints if c not in occ]

    def stocked_skus(self) -> list[SkuId]:
        return [k for k in range(self.num_skus) if len(self.trees[k]) > 0]

    def nn_distances(self, sku: SkuId, queries: list[Cell]) -> np.ndarray:
        """Vectorized L1 nearest-item distances for many query cells.

        Equals nearest_neighbor() per query (no exclusion); cells with no
        item of the SKU anywhere get 0, matching the cost function's
        convention that an absent neighbor contributes nothing.
        """
        items = self.trees[sku].cells()
        if not items:
            return np.zeros(len(queries))
        ix = np.array([c[0] for c in items])
        iy = np.array([c[1] for c in items])
        qx = np.array([c[0] for c in queries])[:, None]
        qy = np.array([c[1] for c in queries])[:, None]
        return np.abs(qx - ix).__iadd__(np.abs(qy - iy)).min(axis=1).astype(float)

    def snapshot_csv(self) -> str:
        lines = ["cell_x,cell_y,sku"]
        for cell in sorted(self.occupancy, key=lambda c: (c[1], c[0])):
            lines.append(f"{cell[0]},{cell[1]},{self.occupancy[cell]}")
        return "\n".join(lines) + "\n"


def initialize_inventory(
    grid: GridMap, density: float, num_skus: int, rng: random.Random
) -> Inventory:
    """Seed floor(density * storage endpoints) cells with uniform random SKUs."""
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density {density} outside [0, 1]")
    inv = Inventory(grid, num_skus)
    count = int(density * len(grid.storage_endpoints))
    cells = rng.sample(grid.storage_endpoints, count)
    for cell in cells:
        inv.place(cell, rng.randrange(num_skus))
    return inv
