"""2-d KD-tree over grid cells with L1 nearest-neighbor queries.

Supports insertion and deletion; deletion is lazy (tombstones) with a full
rebuild once tombstones exceed half the nodes, which keeps searches exact
while amortizing the cost of removals.
"""

from __future__ import annotations

from .grid import Cell


class _Node:
    __slots__ = ("cell", "axis", "left", "right", "dead")

    def __init__(self, cell: Cell, axis: int):
        self.cell = cell
        self.axis = axis
        self.left: _Node | None = None
        self.right: _Node | None = None
        self.dead = False


def _build(cells: list[Cell], axis: int) -> _Node | None:
    if not cells:
        return None
    cells.sort(key=lambda c: c[axis])
    mid = len(cells) // 2
    # descent sends equal axis values right, so the split must too
    while mid > 0 and cells[mid - 1][axis] == cells[mid][axis]:
        mid -= 1
    node = _Node(cells[mid], axis)
    node.left = _build(cells[:mid], 1 - axis)
    node.right = _build(cells[mid + 1 :], 1 - axis)
    return node


class KdTree:
    """Exact L1 nearest-neighbor index over distinct cells."""

    def __init__(self, cells: list[Cell] | None = None):
        self._root = _build(list(cells), 0) if cells else None
        self._size = len(cells) if cells else 0
        self._tombstones = 0

    def __len__(self) -> int:
        return self._size

    def insert(self, cell: Cell) -> None:
        if self._root is None:
            self._root = _Node(cell, 0)
            self._size = 1
            return
        node = self._root
        while True:
            if node.cell == cell:
                if not node.dead:
                    raise ValueError(f"cell {cell} already in tree")
                node.dead = False
                self._tombstones -= 1
                self._size += 1
                return
            axis = node.axis
            branch = "left" if cell[axis] < node.cell[axis] else "right"
            child = getattr(node, branch)
            if child is None:
                setattr(node, branch, _Node(cell, 1 - axis))
                self._size += 1
                return
            node = child

    def remove(self, cell: Cell) -> None:
        node = self._root
        while node is not None:
            if node.cell == cell and not node.dead:
                node.dead = True
                self._size -= 1
                self._tombstones += 1
                if self._tombstones > self._size:
                    self._rebuild()
                return
            node = node.left if cell[node.axis] < node.cell[node.axis] else node.right
        raise KeyError(f"cell {cell} not in tree")

    def _rebuild(self) -> None:
        self._root = _build(self.cells(), 0)
        self._tombstones = 0

    def cells(self) -> list[Cell]:
        out: list[Cell] = []
        stack = [self._root] if self._root else []
        while stack:
            node = stack.pop()
            if not node.dead:
                out.append(node.cell)
            if node.left:
                stack.append(node.left)
            if node.right:
                stack.append(node.right)
        return out

    def nearest(self, query: Cell, exclude: Cell | None = None) -> tuple[Cell, int] | None:
        """Closest live cell to query by L1 distance, skipping exclude.

        Returns (cell, distance) or None when no eligible cell exists. Ties
        are broken toward the lexicographically smallest (x, y) cell so
        queries are deterministic.
        """
        best: tuple[int, Cell] | None = None
        stack = [self._root] if self._root else []
        qx, qy = query
        while stack:
            node = stack.pop()
            if node is None:
                continue
            cx, cy = node.cell
            if not node.dead and node.cell != exclude:
                d = abs(qx - cx) + abs(qy - cy)
                cand = (d, node.cell)
                if best is None or cand < best:
                    best = cand
            axis = node.axis
            diff = query[axis] - node.cell[axis]
            near, far = (node.left, node.right) if diff < 0 else (node.right, node.left)
            # the far side can only win while |diff| <= best distance
            if far is not None and (best is None or abs(diff) <= best[0]):
                stack.append(far)
            if near is not None:
                stack.append(near)
        if best is None:
            return None
        return best[1], best[0]
