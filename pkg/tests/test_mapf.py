import heapq
import random

import pytest

from mapdsim.grid import DistanceOracle, parse_map
from mapdsim.mapf import (
    ConstraintTable,
    PlanRequest,
    TimedPath,
    detect_collision,
    low_level_plan,
    pbs_solve,
    segment_goals,
    validate_executed,
)


def make(rows):
    return parse_map(f"height {len(rows)}\nwidth {len(rows[0])}\nmap\n" + "\n".join(rows) + "\n")


def naive_conflict(p1, p2):
    """Brute-force earliest-conflict checker used as the oracle."""
    horizon = max(len(p1), len(p2))
    for t in range(horizon):
        if t + 1 < horizon or True:
            pass
        if p1.at(t) == p2.at(t):
            return (t, "vertex")
        if t + 1 < horizon and p1.at(t) == p2.at(t + 1) and p1.at(t + 1) == p2.at(t) \
                and p1.at(t) != p1.at(t + 1):
            return (t, "edge")
    return None


def test_detect_disjoint_paths():
    p1 = TimedPath([(0, 0), (1, 0), (2, 0)])
    p2 = TimedPath([(0, 2), (1, 2), (2, 2)])
    assert detect_collision(p1, p2) is None


def test_detect_swap_is_edge_conflict():
    p1 = TimedPath([(0, 0), (1, 0)])
    p2 = TimedPath([(1, 0), (0, 0)])
    got = detect_collision(p1, p2)
    assert got.kind == "edge" and got.t == 0


def test_detect_padding_parked_agent():
    parked = TimedPath([(3, 0)])
    mover = TimedPath([(0, 0), (1, 0), (2, 0), (3, 0)])
    got = detect_collision(parked, mover)
    assert got.kind == "vertex" and got.t == 3


def test_detect_matches_bruteforce_on_random_paths():
    rng = random.Random(0)
    grid = make(["." * 8] * 8)
    for _ in range(1000):
        def wander():
            cell = (rng.randrange(8), rng.randrange(8))
            cells = [cell]
            for _ in range(rng.randrange(1, 12)):
                opts = [cell] + grid.neighbors(cell)
                cell = rng.choice(opts)
                cells.append(cell)
            return TimedPath(cells)

        p1, p2 = wander(), wander()
        got = detect_collision(p1, p2)
        want = naive_conflict(p1, p2)
        if want is None:
            assert got is None
        else:
            assert (got.t, got.kind) == want


def space_time_dijkstra(grid, start, goal, constraints, horizon):
    """Independent uniform-cost search over (cell, t)."""
    if constraints.blocked(start, 0):
        return None
    free_from = constraints.earliest_goal_time(goal)
    if free_from is None:
        return None
    heap = [(0, start)]
    dist = {(start, 0): 0}
    heap = [(0, 0, start, 0)]
    n = 0
    while heap:
        g, _, cell, t = heapq.heappop(heap)
        if g > dist.get((cell, t), 1 << 30):
            continue
        if cell == goal and t >= free_from:
            return g
        if t >= horizon:
            continue
        for nxt in [cell] + grid.neighbors(cell):
            if constraints.blocked(nxt, t + 1):
                continue
            if nxt != cell and constraints.swap(cell, nxt, t + 1):
                continue
            key = (nxt, t + 1)
            if g + 1 < dist.get(key, 1 << 30):
                dist[key] = g + 1
                n += 1
                heapq.heappush(heap, (g + 1, n, nxt, t + 1))
    return None


def test_low_level_unconstrained_equals_oracle_distance():
    grid = make([
        "........",
        ".@@@@@..",
        "........",
    ])
    oracle = DistanceOracle(grid)
    path = low_level_plan(grid, oracle, (0, 0), (7, 2), ConstraintTable([]), 100)
    assert len(path) - 1 == oracle.distance((7, 2), (0, 0))
    assert path.is_valid_on(grid)


def test_low_level_blocked_corridor_returns_none():
    grid = make([
        "...",
        "@.@",
        "...",
    ])
    oracle = DistanceOracle(grid)
    blocker = TimedPath([(1, 1)])  # parked on the only passage
    path = low_level_plan(grid, oracle, (1, 0), (1, 2), ConstraintTable([blocker]), 60)
    assert path is None


def test_low_level_matches_space_time_dijkstra():
    rng = random.Random(3)
    grid = make([
        "..........",
        ".@@..@@@..",
        "..........",
        ".@..@...@.",
        "..........",
    ])
    oracle = DistanceOracle(grid)
    free = grid.free_cells()
    for trial in range(40):
        start, goal = rng.sample(free, 2)
        n_blockers = rng.randrange(0, 3)
        blockers = []
        for _ in range(n_blockers):
            cell = rng.choice(free)
            cells = [cell]
            for _ in range(rng.randrange(0, 8)):
                cell = rng.choice([cell] + grid.neighbors(cell))
                cells.append(cell)
            blockers.append(TimedPath(cells))
        table = ConstraintTable(blockers)
        horizon = 80
        got = low_level_plan(grid, oracle, start, goal, table, horizon)
        want = space_time_dijkstra(grid, start, goal, table, horizon)
        if want is None:
            assert got is None
        else:
            assert len(got) - 1 == want
            # returned path truly avoids the constraints
            for blocker in blockers:
                assert detect_collision(got, blocker) is None


def test_pbs_non_interacting_agents_get_optimal_paths():
    grid = make([
        ".....",
        ".....",
        ".....",
    ])
    oracle = DistanceOracle(grid)
    reqs = [
        PlanRequest(0, (0, 0), (4, 0)),
        PlanRequest(1, (0, 2), (4, 2)),
    ]
    res = pbs_solve(reqs, grid, oracle)
    assert res.solved
    assert len(res.paths[0]) - 1 == 4
    assert len(res.paths[1]) - 1 == 4


def test_pbs_head_on_corridor_with_passing_bay():
    # head-on traffic in a 1-wide corridor; the bay at (2,1) lets the
    # later-arriving agent duck aside while the other passes
    grid = make([
        ".....",
        "@@.@@",
        "@@.@@",
    ])
    oracle = DistanceOracle(grid)
    reqs = [
        PlanRequest(0, (0, 0), (4, 0)),
        PlanRequest(1, (3, 0), (0, 0)),
    ]
    res = pbs_solve(reqs, grid, oracle)
    assert res.solved
    assert res.paths[0].end == (4, 0)
    assert res.paths[1].end == (0, 0)
    assert (2, 1) in res.paths[0].cells or (2, 1) in res.paths[1].cells
    assert validate_executed({i: p.cells for i, p in res.paths.items()}, grid) == []


def test_pbs_pushes_parked_agent_out_of_the_way():
    grid = make([
        ".....",
        "@@.@@",
    ])
    oracle = DistanceOracle(grid)
    # agent 1 parked mid-corridor with goal = own cell; agent 0 must pass
    reqs = [
        PlanRequest(0, (0, 0), (4, 0)),
        PlanRequest(1, (2, 0), (2, 0)),
    ]
    res = pbs_solve(reqs, grid, oracle)
    assert res.solved
    assert res.paths[0].end == (4, 0)
    assert res.paths[1].end == (2, 0)
    assert validate_executed({i: p.cells for i, p in res.paths.items()}, grid) == []


def test_pbs_forty_agents_random_goals_zero_collisions():
    grid = make(["." * 12] * 10)
    oracle = DistanceOracle(grid)
    rng = random.Random(11)
    free = grid.free_cells()
    for seed in range(20):
        rng = random.Random(seed)
        starts = rng.sample(free, 20)
        goals = rng.sample(free, 20)
        reqs = [PlanRequest(i, s, g) for i, (s, g) in enumerate(zip(starts, goals))]
        res = pbs_solve(reqs, grid, oracle)
        assert res.solved, f"seed {seed}"
        assert validate_executed({i: p.cells for i, p in res.paths.items()}, grid) == []


def test_pbs_respects_committed_paths_when_clean():
    grid = make(["....."])
    oracle = DistanceOracle(grid)
    committed = TimedPath([(0, 0), (1, 0), (2, 0)])
    reqs = [
        PlanRequest(0, (0, 0), (2, 0), committed=committed),
        PlanRequest(1, (4, 0), (4, 0)),
    ]
    res = pbs_solve(reqs, grid, oracle)
    assert res.solved
    assert res.paths[0].cells == committed.cells


def test_segment_goals_active_and_free():
    grid = make([
        "EE...",
        ".....",
        "L....",
    ])
    specs = [
        (0, (3, 1), (0, 0)),   # heading to a pickup
        (1, (4, 2), None),     # free, parked somewhere harmless
    ]
    goals = segment_goals(specs, {(0, 0)}, grid)
    assert goals[0] == (0, 0)
    assert goals[1] == (4, 2)


def test_segment_goals_free_agent_retreats_from_claimed_cell():
    grid = make([
        "EE...",
        ".....",
        "L....",
    ])
    specs = [(0, (1, 0), None)]
    goals = segment_goals(specs, {(1, 0)}, grid)
    # nearest non-endpoint unclaimed cell, row-major tie-break
    assert goals[0] == (2, 0)


def test_segment_goals_duplicate_goal_defers_farther_agent():
    grid = make([
        ".....",
        ".....",
        "L....",
    ])
    specs = [
        (0, (0, 0), (0, 2)),
        (1, (4, 2), (0, 2)),
    ]
    goals = segment_goals(specs, {(0, 2)}, grid)
    assert goals[0] == (0, 2)  # distance 2 beats distance 4
    assert goals[1] == (4, 2)  # defers in place this tick


def test_validate_executed_flags_problems():
    ok = {0: [(0, 0), (1, 0)], 1: [(3, 0), (2, 0)]}
    assert validate_executed(ok) == []
    vertex = {0: [(0, 0), (1, 0)], 1: [(2, 0), (1, 0)]}
    assert any("vertex" in p for p in validate_executed(vertex))
    edge = {0: [(0, 0), (1, 0)], 1: [(1, 0), (0, 0)]}
    assert any("edge" in p for p in validate_executed(edge))
    jump = {0: [(0, 0), (5, 5)]}
    assert any("jump" in p for p in validate_executed(jump))
