"""Collision-free multi-agent path planning.

Single-agent paths come from space-time A* over (cell, timestep) with wait
moves; sets of paths are made mutually collision-free by a depth-first
search over partial priority orderings that replans lower-priority agents
around higher-priority ones. A finished path parks its agent on the last
cell forever, so parked agents act as hard obstacles for everyone planned
against them.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .grid import Cell, DistanceOracle, GridMap, STORAGE, LOADING, bfs_distances


@dataclass
class TimedPath:
    """Positions from a shared time origin; index i is the cell at origin+i.

    Agents hold their final cell after the path ends, so position lookups
    past the end return the terminal cell.
    """

    cells: list[Cell]

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def end(self) -> Cell:
        return self.cells[-1]

    def at(self, t: int) -> Cell:
        return self.cells[t] if t < len(self.cells) else self.cells[-1]

    def is_valid_on(self, grid: GridMap) -> bool:
        for a, b in zip(self.cells, self.cells[1:]):
            if a != b and (abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1):
                return False
            if not grid.passable(b):
                return False
        return bool(self.cells) and grid.passable(self.cells[0])


@dataclass
class Conflict:
    t: int
    kind: str  # "vertex" | "edge"
    a: int
    b: int


def detect_collision(p1: TimedPath, p2: TimedPath, a: int = 0, b: int = 1) -> Conflict | None:
    """Earliest vertex or edge conflict between two co-originated paths.

    The shorter path is padded by waiting on its terminal cell. An edge
    conflict (a swap across consecutive timesteps) reports the departure
    timestep.
    """
    horizon = max(len(p1), len(p2)) - 1
    prev1, prev2 = p1.at(0), p2.at(0)
    if prev1 == prev2:
        return Conflict(0, "vertex", a, b)
    for t in range(1, horizon + 1):
        c1, c2 = p1.at(t), p2.at(t)
        if c1 == prev2 and c2 == prev1:
            return Conflict(t - 1, "edge", a, b)
        if c1 == c2:
            return Conflict(t, "vertex", a, b)
        prev1, prev2 = c1, c2
    return None


class ConstraintTable:
    """Occupancy of a set of higher-priority paths, parking included."""

    def __init__(self, paths: list[TimedPath]):
        self.vertex: set[tuple[Cell, int]] = set()
        self.edge: set[tuple[Cell, Cell, int]] = set()
        self.parked: dict[Cell, int] = {}
        self.horizon_hint = 0
        for path in paths:
            cells = path.cells
            for t, cell in enumerate(cells):
                self.vertex.add((cell, t))
            for t in range(len(cells) - 1):
                # moving u -> v arriving t+1
                self.edge.add((cells[t], cells[t + 1], t + 1))
            end_t = len(cells) - 1
            park = self.parked.get(path.end)
            if park is None or end_t < park:
                self.parked[path.end] = end_t
            self.horizon_hint = max(self.horizon_hint, len(cells))

    def blocked(self, cell: Cell, t: int) -> bool:
        if (cell, t) in self.vertex:
            return True
        park = self.parked.get(cell)
        return park is not None and t >= park

    def swap(self, frm: Cell, to: Cell, arrive_t: int) -> bool:
        return (to, frm, arrive_t) in self.edge

    def earliest_goal_time(self, goal: Cell) -> int | None:
        """First timestep from which goal stays free forever; None if never."""
        if goal in self.parked:
            return None
        last = -1
        for cell, t in self.vertex:
            if cell == goal and t > last:
                last = t
        return last + 1


def low_level_plan(
    grid: GridMap,
    oracle: DistanceOracle,
    start: Cell,
    goal: Cell,
    constraints: ConstraintTable,
    horizon: int,
    max_expansions: int = 6000,
) -> TimedPath | None:
    """Space-time A* around the constraint paths; optimal in arrival time.

    Returns None when the goal cannot be held conflict-free within the
    horizon (including a higher-priority agent parked on it), or when the
    search exceeds its expansion cap (a hopeless sweep would otherwise scan
    the whole time-expanded grid).
    """
    goal_free_from = constraints.earliest_goal_time(goal)
    if goal_free_from is None:
        return None
    h_table = oracle.table_for(goal)
    if constraints.blocked(start, 0):
        return None
    vertex = constraints.vertex
    parked = constraints.parked
    edges = constraints.edge
    nbrs = grid._nbrs
    counter = 0
    open_heap = [(int(h_table[start[1], start[0]]), 0, 0, start, 0)]
    parents: dict[tuple[Cell, int], tuple[Cell, int] | None] = {(start, 0): None}
    expansions = 0
    while open_heap:
        f, neg_g, _, cell, t = heapq.heappop(open_heap)
        if cell == goal and t >= goal_free_from:
            cells = []
            node = (cell, t)
            while node is not None:
                cells.append(node[0])
                node = parents[node]
            cells.reverse()
            return TimedPath(cells)
        if t >= horizon:
            continue
        expansions += 1
        if expansions > max_expansions:
            return None
        nt = t + 1
        for nxt in [cell] + nbrs[cell]:
            key = (nxt, nt)
            if key in parents:
                continue
            if key in vertex:
                continue
            park = parked.get(nxt)
            if park is not None and nt >= park:
                continue
            if nxt != cell and (nxt, cell, nt) in edges:
                continue
            parents[key] = (cell, t)
            counter += 1
            heapq.heappush(
                open_heap, (nt + int(h_table[nxt[1], nxt[0]]), -nt, counter, nxt, nt)
            )
    return None


@dataclass
class PlanRequest:
    agent_id: int
    start: Cell
    goal: Cell
    committed: TimedPath | None = None  # kept as the root plan when present


@dataclass
class PbsResult:
    paths: dict[int, TimedPath]
    expansions: int
    solved: bool


@dataclass
class _PbsNode:
    order: frozenset[tuple[int, int]]  # (high, low) priority pairs
    paths: dict[int, TimedPath]
    cost: int


def _first_collision(paths: dict[int, TimedPath]) -> Conflict | None:
    """Earliest conflict over all pairs via a time-major sweep.

    Precedence matches detect_collision: a vertex conflict at t precedes an
    edge conflict departing t, which precedes a vertex conflict at t+1.
    """
    ids = sorted(paths)
    if len(ids) < 2:
        return None
    horizon = max(len(paths[i]) for i in ids)
    prev_pos = {i: paths[i].at(0) for i in ids}
    seen: dict[Cell, int] = {}
    for i in ids:
        c = prev_pos[i]
        if c in seen:
            return Conflict(0, "vertex", seen[c], i)
        seen[c] = i
    for t in range(1, horizon):
        cur_pos = {i: paths[i].at(t) for i in ids}
        # positions at t-1 are unique here, so this reverse map is total
        at_prev = {c: i for i, c in prev_pos.items()}
        edge_hit = None
        for i in ids:
            if cur_pos[i] == prev_pos[i]:
                continue
            j = at_prev.get(cur_pos[i])
            if j is not None and j != i and cur_pos[j] == prev_pos[i]:
                a, b = (i, j) if i < j else (j, i)
                if edge_hit is None or (a, b) < (edge_hit.a, edge_hit.b):
                    edge_hit = Conflict(t - 1, "edge", a, b)
        if edge_hit is not None:
            return edge_hit
        seen = {}
        for i in ids:
            c = cur_pos[i]
            if c in seen:
                return Conflict(t, "vertex", seen[c], i)
            seen[c] = i
        prev_pos = cur_pos
    return None


def _higher_set(order: frozenset[tuple[int, int]], agent: int) -> set[int]:
    """Transitive predecessors (strictly higher priority) of agent."""
    higher = set()
    frontier = [agent]
    while frontier:
        a = frontier.pop()
        for hi, lo in order:
            if lo == a and hi not in higher:
                higher.add(hi)
                frontier.append(hi)
    return higher


def _lower_closure_topo(order: frozenset[tuple[int, int]], agent: int) -> list[int]:
    """agent plus its transitive successors in priority-respecting order."""
    succ: dict[int, set[int]] = {}
    for hi, lo in order:
        succ.setdefault(hi, set()).add(lo)
    reach = {agent}
    frontier = [agent]
    while frontier:
        a = frontier.pop()
        for b in succ.get(a, ()):
            if b not in reach:
                reach.add(b)
                frontier.append(b)
    # Kahn over the induced subgraph
    indeg = {a: 0 for a in reach}
    for hi, lo in order:
        if hi in reach and lo in reach:
            indeg[lo] += 1
    ready = sorted(a for a in reach if indeg[a] == 0)
    out = []
    while ready:
        a = ready.pop(0)
        out.append(a)
        for b in sorted(succ.get(a, ())):
            if b in reach:
                indeg[b] -= 1
                if indeg[b] == 0:
                    ready.append(b)
        ready.sort()
    return out


def pbs_solve(
    requests: list[PlanRequest],
    grid: GridMap,
    oracle: DistanceOracle,
    horizon: int | None = None,
    max_expansions: int = 5000,
    ll_max_expansions: int = 6000,
) -> PbsResult:
    """Plan mutually collision-free paths for all requests.

    Root plans honor committed paths where given and plan the rest
    unconstrained; collisions are then resolved by branching on the two
    priority orders of the colliding pair and replanning the lower agent
    (and its transitively invalidated successors). Depth-first, cheaper
    child first, expansion-capped.
    """
    if horizon is None:
        horizon = 4 * (grid.width + grid.height)
    by_id = {r.agent_id: r for r in requests}
    root_paths: dict[int, TimedPath] = {}
    for r in sorted(by_id):
        req = by_id[r]
        if req.committed is not None and len(req.committed) > 0:
            root_paths[r] = req.committed
        else:
            empty = ConstraintTable([])
            path = low_level_plan(grid, oracle, req.start, req.goal, empty, horizon,
                                  ll_max_expansions)
            if path is None:
                return PbsResult({}, 0, False)
            root_paths[r] = path

    def replan_from(order, paths, seed_agent) -> dict[int, TimedPath] | None:
        new_paths = dict(paths)
        for a in _lower_closure_topo(order, seed_agent):
            higher = _higher_set(order, a)
            table = ConstraintTable([new_paths[h] for h in sorted(higher)])
            needs = a == seed_agent
            if not needs:
                for h in higher:
                    if detect_collision(new_paths[a], new_paths[h]) is not None:
                        needs = True
                        break
            if not needs:
                continue
            req = by_id[a]
            path = low_level_plan(grid, oracle, req.start, req.goal, table, horizon,
                                  ll_max_expansions)
            if path is None:
                return None
            new_paths[a] = path
        return new_paths

    root = _PbsNode(frozenset(), root_paths, sum(len(p) for p in root_paths.values()))
    stack = [root]
    expansions = 0
    while stack:
        node = stack.pop()
        conflict = _first_collision(node.paths)
        if conflict is None:
            return PbsResult(node.paths, expansions, True)
        expansions += 1
        if expansions > max_expansions:
            return PbsResult({}, expansions, False)
        children = []
        for hi, lo in ((conflict.a, conflict.b), (conflict.b, conflict.a)):
            pair = (hi, lo)
            if pair in node.order:
                continue
            # adding hi over lo must not cycle: lo cannot already sit above hi
            if lo in _higher_set(node.order, hi):
                continue
            order = frozenset(node.order | {pair})
            paths = replan_from(order, node.paths, lo)
            if paths is None:
                continue
            children.append(_PbsNode(order, paths, sum(len(p) for p in paths.values())))
        # push the costlier child first so the cheaper one pops next
        children.sort(key=lambda n: -n.cost)
        stack.extend(children)
    return PbsResult({}, expansions, False)


def segment_goals(
    agent_specs: list[tuple[int, Cell, Cell | None]],
    claimed: set[Cell],
    grid: GridMap,
    oracle: DistanceOracle | None = None,
) -> dict[int, Cell]:
    """Resolve each agent's next navigation goal.

    agent_specs rows are (agent_id, current cell, active segment goal or
    None for a free agent). Two active agents may want the same cell (an
    outbound delivery and an inbound pickup at one loading endpoint); only
    the closer one targets it now, the other holds off this tick and
    re-acquires it once the cell frees up. Free agents normally hold their
    cell, but a free agent parked on a claimed cell or on another agent's
    goal retreats to the nearest non-endpoint cell that nobody needs, so it
    cannot deadlock the task it is sitting on.
    """
    goals: dict[int, Cell] = {}
    deferred: list[tuple[int, Cell]] = []
    taken = set(claimed)
    goal_winner: dict[Cell, tuple] = {}
    for agent_id, cell, active_goal in agent_specs:
        if active_goal is None:
            continue
        if oracle is not None:
            key = (oracle.distance(active_goal, cell), agent_id)
        else:
            key = (abs(active_goal[0] - cell[0]) + abs(active_goal[1] - cell[1]), agent_id)
        prev = goal_winner.get(active_goal)
        if prev is None or key < prev[0]:
            if prev is not None:
                deferred.append((prev[1], prev[2]))
            goal_winner[active_goal] = (key, agent_id, cell)
        else:
            deferred.append((agent_id, cell))
        taken.add(active_goal)
    for goal, (_, agent_id, _) in goal_winner.items():
        goals[agent_id] = goal
    free_specs = [(a, c) for a, c, g in agent_specs if g is None] + deferred
    for agent_id, cell in sorted(free_specs):
        if cell not in taken:
            goals[agent_id] = cell
            taken.add(cell)
            continue
        goals[agent_id] = _retreat_cell(grid, cell, taken)
        taken.add(goals[agent_id])
    return goals


def _retreat_cell(grid: GridMap, origin: Cell, taken: set[Cell]) -> Cell:
    dist = bfs_distances(grid, origin)
    best = None
    for y in range(grid.height):
        for x in range(grid.width):
            d = dist[y, x]
            if d < 0:
                continue
            cell = (x, y)
            if cell in taken:
                continue
            kind = grid.kind(cell)
            if kind in (STORAGE, LOADING):
                continue
            key = (int(d), y, x)
            if best is None or key < best:
                best = key
    if best is None:
        return origin  # nowhere better; stay and let planning sort it out
    return (best[2], best[1])


def paths_dump_csv(executed: dict[int, list[Cell]]) -> str:
    lines = ["agent,t,x,y"]
    for agent_id in sorted(executed):
        for t, (x, y) in enumerate(executed[agent_id]):
            lines.append(f"{agent_id},{t},{x},{y}")
    return "\n".join(lines) + "\n"


def validate_executed(executed: dict[int, list[Cell]], grid: GridMap | None = None) -> list[str]:
    """Replay-check executed trajectories; returns a list of violations."""
    problems = []
    ids = sorted(executed)
    if not ids:
        return problems
    horizon = max(len(executed[i]) for i in ids)

    def pos(i, t):
        cells = executed[i]
        return cells[t] if t < len(cells) else cells[-1]

    for i in ids:
        cells = executed[i]
        for t in range(len(cells) - 1):
            a, b = cells[t], cells[t + 1]
            if a != b and abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
                problems.append(f"agent {i} jump {a}->{b} at t={t}")
        if grid is not None:
            for t, c in enumerate(cells):
                if not grid.passable(c):
                    problems.append(f"agent {i} on blocked cell {c} at t={t}")
    prev_pos = {i: pos(i, 0) for i in ids}
    seen: dict[Cell, int] = {}
    for i in ids:
        c = prev_pos[i]
        if c in seen:
            problems.append(f"vertex conflict agents {seen[c]},{i} at {c} t=0")
        seen[c] = i
    for t in range(1, horizon):
        cur_pos = {i: pos(i, t) for i in ids}
        at_prev: dict[Cell, int] = {}
        for i in ids:
            at_prev.setdefault(prev_pos[i], i)
        for i in ids:
            if cur_pos[i] == prev_pos[i]:
                continue
            j = at_prev.get(cur_pos[i])
            if j is not None and j != i and cur_pos[j] == prev_pos[i]:
                if i < j:
                    problems.append(f"edge conflict agents {i},{j} at t={t-1}")
        seen = {}
        for i in ids:
            c = cur_pos[i]
            if c in seen:
                problems.append(f"vertex conflict agents {seen[c]},{i} at {c} t={t}")
            else:
                seen[c] = i
        prev_pos = cur_pos
    return problems
