import random

import numpy as np
import pytest

from mapdsim.allocation import (
    AgentContext,
    AllocMode,
    CostMatrices,
    CostParams,
    GreedyEngine,
    RoundTask,
    Triple,
    build_matrices,
    convert_one_to_one,
    greedy_allocate,
    tuple_cost,
)
from mapdsim.grid import DistanceOracle, parse_map
from mapdsim.inventory import Inventory
from mapdsim.tasks import Task, TaskKind


# --- synthetic instances -------------------------------------------------

def synth_matrices(rng, M, N, P, Q, adj=False, partition=False):
    """Random round instance over abstract integer travel durations."""
    c_as = rng.integers(0, 10, size=(M, P)).astype(float)
    c_sd = rng.integers(0, 10, size=(P, Q)).astype(float)
    starts = [(100 + p, 0) for p in range(P)]
    dests = [(200 + q, 0) for q in range(Q)]
    rows = []
    c_ts = np.zeros((N, P), dtype=np.uint8)
    c_td = np.zeros((N, Q), dtype=np.uint8)
    if partition:
        # split the start space into disjoint chunks; tasks sharing a chunk
        # share the whole group signature so groups partition the starts
        perm = list(rng.permutation(P))
        chunks = []
        while perm:
            k = int(rng.integers(1, max(2, P // 2 + 1)))
            kd = int(rng.integers(1, Q + 1))
            d_idx = np.array(sorted(rng.choice(Q, size=kd, replace=False)), dtype=np.int64)
            s_idx = np.array(sorted(perm[:k]), dtype=np.int64)
            if adj:
                s_adj = (rng.integers(-8, 9, size=len(s_idx)) * 0.25).astype(float)
                d_adj = (rng.integers(-8, 9, size=len(d_idx)) * 0.25).astype(float)
            else:
                s_adj = np.zeros(len(s_idx))
                d_adj = np.zeros(len(d_idx))
            chunks.append((s_idx, d_idx, s_adj, d_adj))
            perm = perm[k:]
    for n in range(N):
        if partition:
            s_idx, d_idx, s_adj, d_adj = chunks[int(rng.integers(len(chunks)))]
        else:
            k = int(rng.integers(1, P + 1))
            s_idx = np.array(sorted(rng.choice(P, size=k, replace=False)), dtype=np.int64)
            k = int(rng.integers(1, Q + 1))
            d_idx = np.array(sorted(rng.choice(Q, size=k, replace=False)), dtype=np.int64)
            if adj:
                s_adj = (rng.integers(-8, 9, size=len(s_idx)) * 0.25).astype(float)
                d_adj = (rng.integers(-8, 9, size=len(d_idx)) * 0.25).astype(float)
            else:
                s_adj = np.zeros(len(s_idx))
                d_adj = np.zeros(len(d_idx))
        rows.append(RoundTask(n, 1000 + n, s_idx, d_idx, s_adj, d_adj))
        c_ts[n, s_idx] = 1
        c_td[n, d_idx] = 1
    return CostMatrices(
        starts, dests,
        {c: i for i, c in enumerate(starts)},
        {c: i for i, c in enumerate(dests)},
        list(range(M)), c_as, c_sd, c_ts, c_td, rows,
    )


def synth_agents(rng, mats, beta):
    """Agents, a few of which already hold in-progress triples."""
    agents = []
    M = len(mats.agent_ids)
    for m in range(M):
        kept = []
        if rng.random() < 0.3:
            # an in-progress triple whose cells may or may not claim space
            if rng.random() < 0.5 and mats.starts:
                s = mats.starts[int(rng.integers(len(mats.starts)))]
                d = mats.dests[int(rng.integers(len(mats.dests)))]
            else:
                s, d = (900 + m, 9), (950 + m, 9)
            kept.append(Triple(5000 + m, s, d, 1.0, 1.0, 2.0))
        agents.append(AgentContext(m, (m, 0), kept))
    return agents


def clone_instance(mats):
    return CostMatrices(
        mats.starts, mats.dests, mats.start_index, mats.dest_index,
        list(mats.agent_ids), mats.c_as.copy(), mats.c_sd.copy(),
        mats.c_ts.copy(), mats.c_td.copy(), mats.task_rows,
    )


# --- independent oracles --------------------------------------------------

def brute_force_tensor(mats, agents, params):
    """Literal rule: materialize the full (M,N,P,Q) tensor every commit."""
    M, P = mats.c_as.shape
    Q = mats.c_sd.shape[1]
    N = len(mats.task_rows)
    w_b = params.w_b if params.mode is AllocMode.WSKU else 1.0
    c_as = mats.c_as.copy()
    seq_len = np.array([len(a.kept) for a in agents])
    claimed_p = np.zeros(P, dtype=bool)
    claimed_q = np.zeros(Q, dtype=bool)
    for a in agents:
        for t in a.kept:
            if t.start in mats.start_index:
                claimed_p[mats.start_index[t.start]] = True
            if t.dest in mats.dest_index:
                claimed_q[mats.dest_index[t.dest]] = True
    free = [True] * N
    commits = []
    while True:
        C = np.full((M, N, P, Q), np.inf)
        for n, row in enumerate(mats.task_rows):
            if not free[n]:
                continue
            for i, p in enumerate(row.start_idx):
                if claimed_p[p]:
                    continue
                for j, q in enumerate(row.dest_idx):
                    if claimed_q[q]:
                        continue
                    C[:, n, p, q] = (
                        w_b * (c_as[:, p] + mats.c_sd[p, q])
                        + row.start_adj[i]
                        + row.dest_adj[j]
                    )
        C[seq_len >= params.beta] = np.inf
        flat = int(np.argmin(C))
        m, n, p, q = np.unravel_index(flat, C.shape)
        if not np.isfinite(C[m, n, p, q]):
            break
        commits.append((int(m), int(n), int(p), int(q), float(C[m, n, p, q])))
        free[n] = False
        claimed_p[p] = True
        claimed_q[q] = True
        seq_len[m] += 1
        c_as[m] = mats.c_sd[:, q]
        if not any(free):
            break
    return commits


def naive_rescan(mats, agents, params):
    """Per-task rescanning reference, no tensor, same tie-break."""
    M, P = mats.c_as.shape
    N = len(mats.task_rows)
    w_b = params.w_b if params.mode is AllocMode.WSKU else 1.0
    c_as = mats.c_as.copy()
    seq_len = np.array([len(a.kept) for a in agents])
    claimed_p = set()
    claimed_q = set()
    for a in agents:
        for t in a.kept:
            if t.start in mats.start_index:
                claimed_p.add(mats.start_index[t.start])
            if t.dest in mats.dest_index:
                claimed_q.add(mats.dest_index[t.dest])
    free = set(range(N))
    commits = []
    while free:
        best = None
        for n in sorted(free):
            row = mats.task_rows[n]
            for m in range(M):
                if seq_len[m] >= params.beta:
                    continue
                for i, p in enumerate(row.start_idx):
                    if p in claimed_p:
                        continue
                    for j, q in enumerate(row.dest_idx):
                        if q in claimed_q:
                            continue
                        cost = (
                            w_b * (c_as[m, p] + mats.c_sd[p, q])
                            + row.start_adj[i]
                            + row.dest_adj[j]
                        )
                        key = (cost, m, n, int(p), int(q))
                        if best is None or key < best:
                            best = key
        if best is None:
            break
        cost, m, n, p, q = best
        commits.append((m, n, p, q, cost))
        free.discard(n)
        claimed_p.add(p)
        claimed_q.add(q)
        seq_len[m] += 1
        c_as[m] = mats.c_sd[:, q]
    return commits


def run_engine(mats, agents, params):
    engine = GreedyEngine(mats, agents, params)
    return [
        (m, n, p, q, cost) for (m, n, p, q, cost) in engine.run()
    ], engine


# --- equivalence tests -----------------------------------------------------

def test_trivial_single_tuple():
    rng = np.random.default_rng(0)
    mats = synth_matrices(rng, 1, 1, 1, 1)
    agents = [AgentContext(0, (0, 0))]
    commits, _ = run_engine(mats, agents, CostParams())
    assert len(commits) == 1
    m, n, p, q, cost = commits[0]
    assert (m, n, p, q) == (0, 0, 0, 0)
    assert cost == mats.c_as[0, 0] + mats.c_sd[0, 0]


def test_beta_cap_limits_sequence():
    rng = np.random.default_rng(1)
    mats = synth_matrices(rng, 1, 3, 3, 3)
    agents = [AgentContext(0, (0, 0))]
    commits, engine = run_engine(mats, agents, CostParams(beta=1))
    assert len(commits) == 1
    assert engine.seq_len[0] == 1


def test_greedy_matches_tensor_oracle_small():
    rng = np.random.default_rng(2024)
    for trial in range(200):
        M = int(rng.integers(1, 4))
        N = int(rng.integers(1, 4))
        P = int(rng.integers(1, 5))
        Q = int(rng.integers(1, 5))
        mats = synth_matrices(rng, M, N, P, Q, partition=bool(rng.integers(2)))
        agents = synth_agents(rng, mats, 3)
        params = CostParams(beta=int(rng.integers(1, 4)))
        expected = brute_force_tensor(clone_instance(mats), agents, params)
        got, _ = run_engine(clone_instance(mats), agents, params)
        assert got == expected, f"trial {trial}"


def test_greedy_matches_naive_medium():
    rng = np.random.default_rng(77)
    for trial in range(60):
        M = int(rng.integers(1, 8))
        N = int(rng.integers(1, 14))
        P = int(rng.integers(1, 12))
        Q = int(rng.integers(1, 12))
        adj = bool(rng.integers(2))
        mats = synth_matrices(rng, M, N, P, Q, adj=adj, partition=bool(rng.integers(2)))
        agents = synth_agents(rng, mats, 3)
        mode = AllocMode.WSKU if adj else AllocMode.BASE
        params = CostParams(mode=mode, w_b=1.0, beta=int(rng.integers(1, 4)))
        expected = naive_rescan(clone_instance(mats), agents, params)
        got, engine = run_engine(clone_instance(mats), agents, params)
        assert got == expected, f"trial {trial}"
        assert engine.recompute_f() == pytest.approx(engine.f)


def test_flat_and_grouped_paths_agree():
    rng = np.random.default_rng(5)
    for trial in range(40):
        mats = synth_matrices(rng, 4, 8, 8, 8, partition=True)
        agents = synth_agents(rng, mats, 3)
        params = CostParams()
        flat_engine = GreedyEngine(clone_instance(mats), agents, params)
        assert flat_engine.flat_ok
        grouped_engine = GreedyEngine(clone_instance(mats), agents, params)
        grouped_engine.flat_ok = False
        assert flat_engine.run() == grouped_engine.run()


def test_scaling_invariance():
    rng = np.random.default_rng(9)
    mats = synth_matrices(rng, 3, 5, 6, 6)
    agents = synth_agents(rng, mats, 3)
    base, _ = run_engine(clone_instance(mats), agents, CostParams())
    scaled = clone_instance(mats)
    scaled.c_as *= 2.5
    scaled.c_sd *= 2.5
    got, _ = run_engine(scaled, agents, CostParams())
    assert [(m, n, p, q) for m, n, p, q, _ in got] == [
        (m, n, p, q) for m, n, p, q, _ in base
    ]


def test_no_double_claims_and_zeroed_validity():
    rng = np.random.default_rng(13)
    mats = synth_matrices(rng, 4, 10, 8, 8)
    agents = [AgentContext(m, (m, 0)) for m in range(4)]
    commits, engine = run_engine(mats, agents, CostParams())
    ps = [p for _, _, p, _, _ in commits]
    qs = [q for _, _, _, q, _ in commits]
    assert len(ps) == len(set(ps))
    assert len(qs) == len(set(qs))
    for m, n, p, q, _ in commits:
        assert not engine.mats.c_ts[n].any()
        assert not engine.mats.c_td[n].any()
        assert not engine.mats.c_ts[:, p].any()
        assert not engine.mats.c_td[:, q].any()


def test_remove_suffixes_restores_state():
    rng = np.random.default_rng(21)
    mats = synth_matrices(rng, 3, 8, 8, 8)
    agents = [AgentContext(m, (m, 0)) for m in range(3)]
    params = CostParams()
    engine = GreedyEngine(mats, agents, params)
    engine.run()
    before = engine.snapshot()
    donor = next(a for a, seq in engine.sequences.items() if len(seq) >= 2)
    freed = engine.remove_suffixes({(donor, 1)})
    assert freed
    assert engine.recompute_f() == pytest.approx(engine.f)
    for tid in freed:
        n = engine.row_of_task[tid]
        assert engine.is_free[n]
        row = engine.mats.task_rows[n]
        # every unclaimed candidate cell is valid again
        for p in row.start_idx:
            assert engine.mats.c_ts[n, p] == (0 if engine.claimed_p[p] else 1)
        for q in row.dest_idx:
            assert engine.mats.c_td[n, q] == (0 if engine.claimed_q[q] else 1)
    engine.restore(before)
    after = engine.snapshot()
    for key in before:
        if key in ("sequences", "heaps", "rowmin", "rowargmin"):
            continue
        assert np.array_equal(before[key], after[key]), key
    assert before["sequences"] == after["sequences"]


def test_remove_then_rerun_equals_fresh_greedy():
    # removing freshly inserted suffix triples and repairing must reproduce
    # the greedy result when the same tuples are still the cheapest
    rng = np.random.default_rng(33)
    mats = synth_matrices(rng, 3, 6, 8, 8)
    agents = [AgentContext(m, (m, 0)) for m in range(3)]
    engine = GreedyEngine(mats, agents, CostParams())
    commits = engine.run()
    f_before = engine.f
    seeds = set()
    for agent_id, seq in engine.sequences.items():
        if len(seq) >= 2:
            seeds.add((agent_id, len(seq) - 1))
    if seeds:
        engine.remove_suffixes(seeds)
        engine.run()
        assert engine.f <= f_before + 1e-9


# --- production path (map-backed) -----------------------------------------

@pytest.fixture
def world():
    rows = [
        "EEEE....",
        "........",
        "EEEE...L",
        "L.......",
    ]
    grid = parse_map("height 4\nwidth 8\nmap\n" + "\n".join(rows) + "\n")
    oracle = DistanceOracle(grid)
    inv = Inventory(grid, 3)
    return grid, oracle, inv


def test_build_matrices_dedup_and_validity(world):
    grid, oracle, inv = world
    inv.place((0, 0), 1)
    inv.place((2, 2), 1)
    t1 = Task(0, TaskKind.OUTBOUND, 1, 0, starts=inv.cells_of(1), dests=list(grid.loading_endpoints))
    t2 = Task(1, TaskKind.OUTBOUND, 1, 0, starts=inv.cells_of(1), dests=list(grid.loading_endpoints))
    agents = [AgentContext(0, (4, 1))]
    mats = build_matrices(agents, [t1, t2], oracle, CostParams())
    # shared candidate cells appear exactly once in the index
    assert len(mats.starts) == 2
    assert len(mats.dests) == 2
    for n, task in enumerate([t1, t2]):
        for p, cell in enumerate(mats.starts):
            assert mats.c_ts[n, p] == (1 if cell in task.starts else 0)
    # every c_as entry equals the oracle distance
    for p, cell in enumerate(mats.starts):
        assert mats.c_as[0, p] == oracle.distance((4, 1), cell)


def test_tuple_cost_k_cases_exhaustive(world):
    grid, oracle, inv = world
    inv.place((0, 0), 1)
    task = Task(0, TaskKind.OUTBOUND, 1, 0, starts=[(0, 0)], dests=list(grid.loading_endpoints))
    agents = [AgentContext(0, (4, 1))]
    params = CostParams(beta=1)
    mats = build_matrices(agents, [task], oracle, params)
    seq_len = np.zeros(1, dtype=int)
    base = tuple_cost(mats, 0, 0, 0, 0, seq_len, params)
    assert base == oracle.distance((4, 1), (0, 0)) + oracle.distance((0, 0), mats.dests[0])
    # claimed start / claimed dest / cap each force infeasibility
    assert tuple_cost(mats, 0, 0, 0, 0, seq_len, params, claimed_starts={0}) is None
    assert tuple_cost(mats, 0, 0, 0, 0, seq_len, params, claimed_dests={0}) is None
    assert tuple_cost(mats, 0, 0, 0, 0, np.array([1]), params) is None
    # candidate-set violations come from the validity matrices
    mats.c_ts[0, 0] = 0
    assert tuple_cost(mats, 0, 0, 0, 0, seq_len, params) is None


def test_wsku_outbound_discount(world):
    grid, oracle, inv = world
    inv.place((0, 0), 1)
    inv.place((0, 2), 1)  # L1 distance 2 from (0,0)
    task = Task(0, TaskKind.OUTBOUND, 1, 0, starts=[(0, 0)], dests=[(7, 2)])
    agents = [AgentContext(0, (0, 1))]
    params = CostParams(mode=AllocMode.WSKU, w_b=1.0, w_s=0.25)
    mats = build_matrices(agents, [task], oracle, params, inv)
    got = tuple_cost(mats, 0, 0, 0, 0, np.zeros(1, dtype=int), params, inv=inv)
    base = oracle.distance((0, 1), (0, 0)) + oracle.distance((0, 0), (7, 2))
    assert got == pytest.approx(1.0 * base - 0.25 * 2)
    # engine sees the same number through the precomputed adjustments
    commits, _ = run_engine(mats, agents, params)
    assert commits[0][4] == pytest.approx(got)


def test_wsku_inbound_penalty(world):
    grid, oracle, inv = world
    inv.place((1, 0), 2)
    task = Task(0, TaskKind.INBOUND, 2, 0, starts=[(7, 2)], dests=[(0, 0), (3, 2)])
    agents = [AgentContext(0, (6, 2))]
    params = CostParams(mode=AllocMode.WSKU)
    mats = build_matrices(agents, [task], oracle, params, inv)
    for q, cell in enumerate(mats.dests):
        got = tuple_cost(mats, 0, 0, 0, q, np.zeros(1, dtype=int), params, inv=inv)
        nn = abs(cell[0] - 1) + abs(cell[1] - 0)
        base = oracle.distance((6, 2), (7, 2)) + oracle.distance((7, 2), cell)
        assert got == pytest.approx(base + 0.25 * nn)


def test_paper_worked_example():
    # outbound tuple: base travel 10, nearest same-SKU item 4 away, weights
    # (1.0, 0.25) -> 10 - 1 = 9
    rows = ["E" + "." * 9 + "EL"]
    grid = parse_map("height 1\nwidth 12\nmap\n" + rows[0] + "\n")
    oracle = DistanceOracle(grid)
    inv = Inventory(grid, 1)
    inv.place((0, 0), 0)
    inv.place((10, 0), 0)  # other item: wait, adjust below
    task = Task(0, TaskKind.OUTBOUND, 0, 0, starts=[(0, 0)], dests=[(11, 0)])
    agents = [AgentContext(0, (1, 0))]
    params = CostParams(mode=AllocMode.WSKU, w_b=1.0, w_s=0.25)
    mats = build_matrices(agents, [task], oracle, params, inv)
    got = tuple_cost(mats, 0, 0, 0, 0, np.zeros(1, dtype=int), params, inv=inv)
    base = 1 + 11  # agent->start + start->dest
    nn = 10
    assert got == pytest.approx(1.0 * base - 0.25 * nn)


def test_one_to_one_conversion(world):
    grid, oracle, inv = world
    # singleton candidates stay unchanged
    t0 = Task(0, TaskKind.OUTBOUND, 0, 0, starts=[(0, 0)], dests=[(7, 2)])
    convert_one_to_one([t0], oracle)
    assert t0.starts == [(0, 0)] and t0.dests == [(7, 2)]
    # picks the closer start
    t1 = Task(1, TaskKind.OUTBOUND, 0, 0, starts=[(0, 2), (3, 2)], dests=[(7, 2)])
    convert_one_to_one([t1], oracle)
    assert t1.starts == [(3, 2)]
    # conflicting argmins resolve in task-id order
    t2 = Task(2, TaskKind.OUTBOUND, 0, 0, starts=[(3, 2), (0, 2)], dests=[(7, 2), (0, 3)])
    t3 = Task(3, TaskKind.OUTBOUND, 0, 0, starts=[(3, 2), (0, 2)], dests=[(7, 2), (0, 3)])
    convert_one_to_one([t2, t3], oracle)
    assert t2.starts == [(0, 2)] and t2.dests == [(0, 3)]  # distance 1 pair
    assert t3.starts == [(3, 2)] and t3.dests == [(7, 2)]
    # a task whose cells are all claimed is deferred
    t4 = Task(4, TaskKind.OUTBOUND, 0, 0, starts=[(3, 2)], dests=[(0, 3)])
    convert_one_to_one([t4], oracle, claimed_starts={(3, 2)})
    assert not t4.bound


def test_one_to_one_replay_oracle(world):
    grid, oracle, inv = world
    rng = random.Random(4)
    storage = list(grid.storage_endpoints)
    tasks = []
    for i in range(20):
        starts = rng.sample(storage, rng.randint(1, 4))
        dests = rng.sample(grid.loading_endpoints + storage, rng.randint(1, 4))
        tasks.append(Task(i, TaskKind.OUTBOUND, 0, 0, starts=starts, dests=dests))
    originals = {t.id: (sorted(t.starts), sorted(t.dests)) for t in tasks}
    convert_one_to_one(tasks, oracle)
    used_s, used_d = set(), set()
    for t in sorted(tasks, key=lambda t: t.id):
        os, od = originals[t.id]
        avail = [
            (oracle.distance(s, d), s, d)
            for s in os
            if s not in used_s
            for d in od
            if d not in used_d
        ]
        if not avail:
            assert not t.bound
            continue
        best = min(avail)
        assert oracle.distance(t.starts[0], t.dests[0]) == best[0]
        used_s.add(t.starts[0])
        used_d.add(t.dests[0])
