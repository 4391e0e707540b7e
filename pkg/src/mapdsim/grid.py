"""Warehouse grid world: ASCII map parsing and shortest-path distance tables.

Cells are addressed as (x, y) tuples with x the column and y the row.
Agents move 4-connected with unit cost per step; waiting in place is free
of distance but costs a timestep.
"""

from __future__ import annotations

from collections import deque

import numpy as np

Cell = tuple[int, int]

FREE = 0
OBSTACLE = 1
STORAGE = 2
LOADING = 3

_CHAR_TO_KIND = {".": FREE, "@": OBSTACLE, "E": STORAGE, "L": LOADING}
_KIND_TO_CHAR = {v: k for k, v in _CHAR_TO_KIND.items()}

# Fixed neighbor order keeps every search in the package deterministic.
NEIGHBOR_STEPS = ((0, -1), (-1, 0), (1, 0), (0, 1))


class MapError(ValueError):
    """Base class for map parsing and validation failures."""


class MapHeaderError(MapError):
    """Missing or malformed height/width/map header lines."""


class MapCharError(MapError):
    """A cell character outside the . @ E L alphabet."""


class MapDisconnectedError(MapError):
    """The non-obstacle cells do not form a single connected component."""


class MapNoEndpointsError(MapError):
    """The map declares no storage or no loading endpoints."""


class GridMap:
    """A validated warehouse grid.

    kinds is a (height, width) uint8 array of cell kinds; endpoint lists are
    sorted row-major so that every iteration over them is deterministic.
    """

    def __init__(self, width: int, height: int, kinds: np.ndarray):
        self.width = width
        self.height = height
        self.kinds = kinds
        self.storage_endpoints: list[Cell] = []
        self.loading_endpoints: list[Cell] = []
        for y in range(height):
            for x in range(width):
                k = kinds[y, x]
                if k == STORAGE:
                    self.storage_endpoints.append((x, y))
                elif k == LOADING:
                    self.loading_endpoints.append((x, y))
        self._passable = kinds != OBSTACLE
        self._nbrs: dict[Cell, list[Cell]] = {}
        for y in range(height):
            for x in range(width):
                if self._passable[y, x]:
                    out = []
                    for dx, dy in NEIGHBOR_STEPS:
                        nx, ny = x + dx, y + dy
                        if 0 <= nx < width and 0 <= ny < height and self._passable[ny, nx]:
                            out.append((nx, ny))
                    self._nbrs[(x, y)] = out

    @property
    def endpoints(self) -> list[Cell]:
        return self.storage_endpoints + self.loading_endpoints

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def passable(self, cell: Cell) -> bool:
        x, y = cell
        return self.in_bounds(x, y) and bool(self._passable[y, x])

    def kind(self, cell: Cell) -> int:
        x, y = cell
        return int(self.kinds[y, x])

    def neighbors(self, cell: Cell) -> list[Cell]:
        return self._nbrs.get(cell, [])

    def free_cells(self) -> list[Cell]:
        """All non-obstacle cells in row-major order."""
        ys, xs = np.nonzero(self._passable)
        return [(int(x), int(y)) for y, x in zip(ys, xs)]

    def to_text(self) -> str:
        lines = [f"height {self.height}", f"width {self.width}", "map"]
        for y in range(self.height):
            lines.append("".join(_KIND_TO_CHAR[int(k)] for k in self.kinds[y]))
        return "\n".join(lines) + "\n"

    def __repr__(self) -> str:
        return (
            f"GridMap({self.width}x{self.height}, "
            f"{len(self.storage_endpoints)} storage, "
            f"{len(self.loading_endpoints)} loading)"
        )


def parse_map(text: str, require_endpoints: bool = False) -> GridMap:
    """Parse the ASCII map format.

    Line 1 is ``height <H>``, line 2 ``width <W>``, line 3 ``map``, followed
    by H rows of W characters ('.' free, '@' obstacle, 'E' storage endpoint,
    'L' loading endpoint). Raises a distinct MapError subclass for a bad
    header, an unknown character, disconnected free space, or (when
    require_endpoints is set) a map without both endpoint kinds.
    """
    lines = text.splitlines()
    if len(lines) < 3:
        raise MapHeaderError("map file needs height, width and map header lines")
    try:
        h_key, h_val = lines[0].split()
        w_key, w_val = lines[1].split()
        height, width = int(h_val), int(w_val)
    except ValueError as exc:
        raise MapHeaderError(f"bad header lines: {lines[:2]!r}") from exc
    if h_key != "height" or w_key != "width" or lines[2].strip() != "map":
        raise MapHeaderError(f"bad header lines: {lines[:3]!r}")
    if height <= 0 or width <= 0:
        raise MapHeaderError(f"non-positive dimensions {width}x{height}")

    rows = lines[3 : 3 + height]
    if len(rows) != height or any(len(r) != width for r in rows):
        raise MapHeaderError(
            f"grid body does not match declared {width}x{height} dimensions"
        )

    kinds = np.zeros((height, width), dtype=np.uint8)
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            try:
                kinds[y, x] = _CHAR_TO_KIND[ch]
            except KeyError:
                raise MapCharError(f"unknown cell character {ch!r} at ({x},{y})") from None

    grid = GridMap(width, height, kinds)
    _check_connected(grid)
    if require_endpoints and (not grid.storage_endpoints or not grid.loading_endpoints):
        raise MapNoEndpointsError(
            f"map has {len(grid.storage_endpoints)} storage and "
            f"{len(grid.loading_endpoints)} loading endpoints"
        )
    return grid


def _check_connected(grid: GridMap) -> None:
    free = grid.free_cells()
    if not free:
        raise MapDisconnectedError("map has no traversable cells")
    seen = {free[0]}
    queue = deque([free[0]])
    while queue:
        cell = queue.popleft()
        for nb in grid.neighbors(cell):
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    if len(seen) != len(free):
        missing = len(free) - len(seen)
        raise MapDisconnectedError(f"{missing} traversable cells unreachable")


def bfs_distances(grid: GridMap, source: Cell) -> np.ndarray:
    """Exact shortest-path lengths from source to every cell (-1 unreachable)."""
    dist = np.full((grid.height, grid.width), -1, dtype=np.int32)
    sx, sy = source
    dist[sy, sx] = 0
    queue = deque([source])
    passable = grid._passable
    width, height = grid.width, grid.height
    while queue:
        x, y = queue.popleft()
        d = dist[y, x] + 1
        for dx, dy in NEIGHBOR_STEPS:
            nx, ny = x + dx, y + dy
            if 0 <= nx < width and 0 <= ny < height and passable[ny, nx] and dist[ny, nx] < 0:
                dist[ny, nx] = d
                queue.append((nx, ny))
    return dist


class DistanceOracle:
    """Precomputed true shortest-path distances rooted at every endpoint.

    Grid distances lower-bound any collision-free travel time between the
    same cells, so they double as admissible search heuristics. Lookups for
    arbitrary (non-endpoint) roots are computed on demand and cached, which
    the path planner uses for parking goals.
    """

    def __init__(self, grid: GridMap):
        self.grid = grid
        self.endpoints: list[Cell] = sorted(grid.endpoints, key=lambda c: (c[1], c[0]))
        self.endpoint_index: dict[Cell, int] = {c: i for i, c in enumerate(self.endpoints)}
        n = len(self.endpoints)
        self.tables = np.empty((n, grid.height, grid.width), dtype=np.int32)
        for i, cell in enumerate(self.endpoints):
            self.tables[i] = bfs_distances(grid, cell)
        if n:
            exs = np.array([c[0] for c in self.endpoints])
            eys = np.array([c[1] for c in self.endpoints])
            self.endpoint_matrix = self.tables[:, eys, exs].astype(np.float64)
        else:
            self.endpoint_matrix = np.zeros((0, 0))
        self._extra_tables: dict[Cell, np.ndarray] = {}

    def table_for(self, cell: Cell) -> np.ndarray:
        """Distance table rooted at cell; BFS on demand for non-endpoints."""
        idx = self.endpoint_index.get(cell)
        if idx is not None:
            return self.tables[idx]
        table = self._extra_tables.get(cell)
        if table is None:
            if not self.grid.passable(cell):
                raise ValueError(f"distance root {cell} is not traversable")
            table = bfs_distances(self.grid, cell)
            self._extra_tables[cell] = table
        return table

    def distance(self, a: Cell, b: Cell) -> int:
        """Shortest-path timesteps between a and b (either may be any cell)."""
        idx = self.endpoint_index.get(a)
        if idx is not None:
            d = int(self.tables[idx][b[1], b[0]])
        else:
            d = int(self.table_for(b)[a[1], a[0]])
        if d < 0:
            raise RuntimeError(f"no route between {a} and {b}; oracle corrupt")
        return d
