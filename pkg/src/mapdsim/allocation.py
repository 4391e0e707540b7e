"""Many-to-many task allocation.

The 4-D (agent, task, start, destination) cost tensor is never materialized.
It is factored into the agent-to-start and start-to-destination duration
matrices plus per-task candidate index sets (the binary validity matrices),
and the greedy construction repeatedly commits the cheapest feasible tuple
under a strict (cost, agent, task, start, dest) lexicographic order.

Tasks whose candidate sets and cost adjustments are identical are
interchangeable, so the scan works on groups of such tasks; within a group
only the lowest task row can ever be chosen. When the groups' start sets
partition the start space (always true for warehouse-shaped rounds in the
plain duration mode) the per-commit scan collapses to one argmin over an
(agents x starts) matrix.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .grid import Cell, DistanceOracle
from .inventory import Inventory
from .tasks import Task, TaskKind

INF = float("inf")


class AllocMode(Enum):
    BASE = "m2m"
    WSKU = "wsku"
    ONE_TO_ONE = "o2o"


@dataclass
class CostParams:
    mode: AllocMode = AllocMode.BASE
    w_b: float = 1.0
    w_s: float = 0.25
    beta: int = 3

    def __post_init__(self):
        if self.w_b <= 0 or self.w_s < 0 or self.beta < 1:
            raise ValueError("need w_b > 0, w_s >= 0, beta >= 1")


@dataclass
class Triple:
    """One committed (task, start, dest) choice in an agent's sequence."""

    task_id: int
    start: Cell
    dest: Cell
    # raw travel durations: previous destination -> start -> dest
    approach: float = 0.0
    carry: float = 0.0
    cost: float = 0.0  # mode cost charged when committed


@dataclass
class Allocation:
    """Per-agent ordered triple sequences plus the claimed-cell sets."""

    sequences: dict[int, list[Triple]] = field(default_factory=dict)

    def all_triples(self) -> list[tuple[int, int, Triple]]:
        out = []
        for agent_id in sorted(self.sequences):
            for pos, trip in enumerate(self.sequences[agent_id]):
                out.append((agent_id, pos, trip))
        return out

    def claimed_starts(self) -> set[Cell]:
        return {t.start for seq in self.sequences.values() for t in seq}

    def claimed_dests(self) -> set[Cell]:
        return {t.dest for seq in self.sequences.values() for t in seq}

    def task_ids(self) -> set[int]:
        return {t.task_id for seq in self.sequences.values() for t in seq}


@dataclass
class RoundTask:
    """A task's allocation-round view: candidate indices and cost tweaks."""

    row: int
    task_id: int
    start_idx: np.ndarray  # ascending indices into the start space
    dest_idx: np.ndarray   # ascending indices into the dest space
    start_adj: np.ndarray  # added to the tuple cost per candidate start
    dest_adj: np.ndarray   # added per candidate dest
    kind: TaskKind | None = None
    sku: int | None = None

    def group_key(self) -> bytes:
        return b"|".join(
            (
                self.start_idx.tobytes(),
                self.dest_idx.tobytes(),
                self.start_adj.tobytes(),
                self.dest_adj.tobytes(),
            )
        )


@dataclass
class CostMatrices:
    """The four factored matrices plus the id <-> index bookkeeping."""

    starts: list[Cell]
    dests: list[Cell]
    start_index: dict[Cell, int]
    dest_index: dict[Cell, int]
    agent_ids: list[int]
    c_as: np.ndarray   # (M, P) duration agent row -> start
    c_sd: np.ndarray   # (P, Q) duration start -> dest
    c_ts: np.ndarray   # (N, P) uint8 validity
    c_td: np.ndarray   # (N, Q) uint8 validity
    task_rows: list[RoundTask]


@dataclass
class AgentContext:
    """What the allocator needs to know about one agent for a round."""

    agent_id: int
    origin: Cell
    kept: list[Triple] = field(default_factory=list)


def _gather_distances(oracle: DistanceOracle, source: Cell, cells_xy: np.ndarray) -> np.ndarray:
    table = oracle.table_for(source)
    return table[cells_xy[:, 1], cells_xy[:, 0]].astype(np.float64)


def build_matrices(
    agents: list[AgentContext],
    tasks: list[Task],
    oracle: DistanceOracle,
    params: CostParams,
    inv: Inventory | None = None,
) -> CostMatrices:
    """Assemble the factored matrices for one allocation round.

    The start/dest spaces are the deduplicated unions of the tasks'
    candidate cells in first-seen order; validity rows mark each task's own
    candidates (claims are applied later by the engine). In the
    SKU-weighted mode the nearest-neighbor adjustments are baked into the
    per-task adjustment vectors from the current inventory.
    """
    if params.mode is AllocMode.WSKU and inv is None:
        raise ValueError("WSKU mode needs the inventory for NN terms")
    starts: list[Cell] = []
    dests: list[Cell] = []
    start_index: dict[Cell, int] = {}
    dest_index: dict[Cell, int] = {}
    # candidate lists are often shared between tasks; index each list once
    s_idx_cache: dict[int, np.ndarray] = {}
    d_idx_cache: dict[int, np.ndarray] = {}

    def index_cells(cells, index, order):
        for c in cells:
            if c not in index:
                index[c] = len(order)
                order.append(c)
        return np.array(sorted(index[c] for c in cells), dtype=np.int64)

    rows: list[RoundTask] = []
    adj_cache: dict[tuple, np.ndarray] = {}
    for row, task in enumerate(tasks):
        s_idx = s_idx_cache.get(id(task.starts))
        if s_idx is None:
            s_idx = s_idx_cache[id(task.starts)] = index_cells(
                task.starts, start_index, starts
            )
        d_idx = d_idx_cache.get(id(task.dests))
        if d_idx is None:
            d_idx = d_idx_cache[id(task.dests)] = index_cells(
                task.dests, dest_index, dests
            )
        s_adj = np.zeros(len(s_idx))
        d_adj = np.zeros(len(d_idx))
        if params.mode is AllocMode.WSKU:
            key = (task.kind, task.sku, id(task.starts), id(task.dests))
            cached = adj_cache.get(key)
            if cached is not None:
                s_adj, d_adj = cached
            elif task.kind is TaskKind.OUTBOUND:
                for i, p in enumerate(s_idx):
                    cell = starts[p]
                    nn = inv.nearest_neighbor(task.sku, cell, exclude=cell)
                    s_adj[i] = -params.w_s * (nn or 0)
                adj_cache[key] = (s_adj, d_adj)
            else:
                d_cells = [dests[q] for q in d_idx]
                d_adj = params.w_s * inv.nn_distances(task.sku, d_cells)
                adj_cache[key] = (s_adj, d_adj)
        rows.append(
            RoundTask(row, task.id, s_idx, d_idx, s_adj, d_adj, task.kind, task.sku)
        )

    n_tasks = len(tasks)
    c_ts = np.zeros((n_tasks, len(starts)), dtype=np.uint8)
    c_td = np.zeros((n_tasks, len(dests)), dtype=np.uint8)
    for row in rows:
        c_ts[row.row, row.start_idx] = 1
        c_td[row.row, row.dest_idx] = 1

    start_xy = np.array(starts, dtype=np.int64).reshape(-1, 2)
    dest_xy = np.array(dests, dtype=np.int64).reshape(-1, 2)
    c_as = np.zeros((len(agents), len(starts)))
    for m, ag in enumerate(agents):
        source = ag.kept[-1].dest if ag.kept else ag.origin
        if len(starts):
            c_as[m] = _gather_distances(oracle, source, start_xy)
    # all candidate cells are endpoints in warehouse rounds, so the
    # precomputed endpoint-to-endpoint matrix covers c_sd in one shot
    ep = oracle.endpoint_index
    s_ep = [ep.get(c, -1) for c in starts]
    d_ep = [ep.get(c, -1) for c in dests]
    if len(starts) and len(dests) and min(s_ep) >= 0 and min(d_ep) >= 0:
        c_sd = oracle.endpoint_matrix[np.ix_(s_ep, d_ep)].copy()
    else:
        c_sd = np.zeros((len(starts), len(dests)))
        for p, cell in enumerate(starts):
            if len(dests):
                c_sd[p] = _gather_distances(oracle, cell, dest_xy)

    return CostMatrices(
        starts,
        dests,
        start_index,
        dest_index,
        [a.agent_id for a in agents],
        c_as,
        c_sd,
        c_ts,
        c_td,
        rows,
    )


def tuple_cost(
    mats: CostMatrices,
    m: int,
    n: int,
    p: int,
    q: int,
    seq_len: np.ndarray,
    params: CostParams,
    claimed_starts: set[int] = frozenset(),
    claimed_dests: set[int] = frozenset(),
    inv: Inventory | None = None,
) -> float | None:
    """Cost of allocating task row n to agent row m via start p and dest q.

    Returns None for any of the infeasibility cases: start not a candidate,
    dest not a candidate, start or dest already claimed, or the agent's
    sequence at the cap. Infeasibility is an explicit marker, never a large
    sentinel cost.
    """
    row = mats.task_rows[n]
    if not mats.c_ts[n, p] or not mats.c_td[n, q]:
        return None
    if p in claimed_starts or q in claimed_dests:
        return None
    if seq_len[m] >= params.beta:
        return None
    base = mats.c_as[m, p] + mats.c_sd[p, q]
    if params.mode is not AllocMode.WSKU:
        return float(base)
    cost = params.w_b * base
    if row.kind is TaskKind.OUTBOUND:
        cell = mats.starts[p]
        nn = inv.nearest_neighbor(row.sku, cell, exclude=cell)
        cost -= params.w_s * (nn or 0)
    else:
        cell = mats.dests[q]
        nn = inv.nearest_neighbor(row.sku, cell)
        cost += params.w_s * (nn or 0)
    return float(cost)


class _Group:
    """Tasks sharing identical candidate sets and cost adjustments."""

    __slots__ = (
        "sidx", "didx", "s_adj", "B", "rowmin", "rowargmin", "free_heap", "gid",
    )

    def __init__(self, gid: int, sidx, didx, s_adj, B):
        self.gid = gid
        self.sidx = sidx
        self.didx = didx
        self.s_adj = s_adj
        self.B = B  # (|S|, |D|) weighted start->dest cost incl. dest adj
        self.rowmin = np.empty(0)
        self.rowargmin = np.empty(0, dtype=np.int64)
        self.free_heap: list[int] = []


class GreedyEngine:
    """Incremental greedy 4-D assignment over one allocation round.

    Owns the mutable round state (claims, sequences, chained agent-to-start
    rows) so that the neighborhood-search operators can remove and re-insert
    triples without rebuilding the matrices. All mutations keep the validity
    matrices in CostMatrices consistent for outside inspection.
    """

    def __init__(
        self,
        mats: CostMatrices,
        agents: list[AgentContext],
        params: CostParams,
        oracle: DistanceOracle | None = None,
    ):
        self.mats = mats
        self.params = params
        self.agents = agents
        self.oracle = oracle
        M, P = mats.c_as.shape
        Q = mats.c_sd.shape[1]
        self.w_b = params.w_b if params.mode is AllocMode.WSKU else 1.0
        self.c_as = mats.c_as.copy()
        self.c_as0 = mats.c_as.copy()
        self.claimed_p = np.zeros(P, dtype=bool)
        self.claimed_q = np.zeros(Q, dtype=bool)
        self.seq_len = np.zeros(M, dtype=np.int64)
        self.is_free = np.ones(len(mats.task_rows), dtype=bool)
        self.sequences: dict[int, list[Triple]] = {a.agent_id: list(a.kept) for a in agents}
        self.row_of_task = {r.task_id: r.row for r in mats.task_rows}
        self.agent_row = {a.agent_id: m for m, a in enumerate(agents)}
        self.groups: list[_Group] = []
        self.colterm: np.ndarray | None = None
        self.f = 0.0
        # lazily-built per-column membership (which task rows hold the cell
        # as a candidate), needed only when neighborhood moves release cells
        self._ts0 = mats.c_ts.copy()
        self._td0 = mats.c_td.copy()
        self._p_rows: dict[int, np.ndarray] = {}
        self._q_rows: dict[int, np.ndarray] = {}
        # filled after the groups exist; empty is correct before that since
        # rowmins are initialized against the claims afterwards
        self._p_groups: dict[int, list[tuple[_Group, int]]] = {}
        self._q_groups: dict[int, list[tuple[_Group, int]]] = {}

        for m, ag in enumerate(agents):
            self.seq_len[m] = len(ag.kept)
            for trip in ag.kept:
                self.f += trip.approach + trip.carry
                p = mats.start_index.get(trip.start)
                if p is not None:
                    self._claim_p(p)
                q = mats.dest_index.get(trip.dest)
                if q is not None:
                    self._claim_q(q)

        # group interchangeable tasks
        by_key: dict[bytes, _Group] = {}
        self.group_of_row: list[_Group] = []
        for row in mats.task_rows:
            key = row.group_key()
            g = by_key.get(key)
            if g is None:
                B = self.w_b * mats.c_sd[np.ix_(row.start_idx, row.dest_idx)]
                B += row.dest_adj[None, :]
                g = _Group(len(self.groups), row.start_idx, row.dest_idx, row.start_adj, B)
                by_key[key] = g
                self.groups.append(g)
            heapq.heappush(g.free_heap, row.row)
            self.group_of_row.append(g)
        # membership maps: which (group, local index) hold each column
        for g in self.groups:
            for i, p in enumerate(g.sidx):
                self._p_groups.setdefault(int(p), []).append((g, i))
            for j, q in enumerate(g.didx):
                self._q_groups.setdefault(int(q), []).append((g, j))
        for g in self.groups:
            self._refresh_rowmin(g)

        # flat scan is exact only when each start column belongs to at most
        # one group (the groups partition the start space)
        owner = np.full(P, -1, dtype=np.int64)
        self.flat_ok = True
        for g in self.groups:
            if (owner[g.sidx] != -1).any():
                self.flat_ok = False
                break
            owner[g.sidx] = g.gid
        self.col_group = owner if self.flat_ok else None
        self.col_local: np.ndarray | None = None
        self.colterm: np.ndarray | None = None
        if self.flat_ok:
            self.col_local = np.zeros(P, dtype=np.int64)
            for g in self.groups:
                self.col_local[g.sidx] = np.arange(len(g.sidx))
            self.colterm = np.full(P, INF)
            for g in self.groups:
                self._refresh_colterm(g)

    # -- low-level state maintenance ------------------------------------

    def _claim_p(self, p: int):
        self.claimed_p[p] = True
        self.mats.c_ts[:, p] = 0
        if self.colterm is not None:
            self.colterm[p] = INF

    def _claim_q(self, q: int):
        self.claimed_q[q] = True
        self.mats.c_td[:, q] = 0
        for g, loc in self._q_groups.get(q, ()):
            hit = g.rowargmin == loc
            if hit.any():
                masked = np.where(self.claimed_q[g.didx], INF, g.B[hit])
                g.rowmin[hit] = masked.min(axis=1)
                g.rowargmin[hit] = masked.argmin(axis=1)
                if self.colterm is not None:
                    self._refresh_colterm(g, rows=np.flatnonzero(hit))

    def _unclaim_q(self, q: int):
        self.claimed_q[q] = False
        rows = self._q_rows.get(q)
        if rows is None:
            rows = self._q_rows[q] = np.flatnonzero(self._td0[:, q])
        if len(rows):
            self.mats.c_td[rows, q] = self.is_free[rows]
        for g, loc in self._q_groups.get(q, ()):
            col = g.B[:, loc]
            # ties resolve to the lowest destination index
            better = (col < g.rowmin) | ((col == g.rowmin) & (loc < g.rowargmin))
            if better.any():
                g.rowmin[better] = col[better]
                g.rowargmin[better] = loc
                if self.colterm is not None:
                    self._refresh_colterm(g, rows=np.flatnonzero(better))

    def _unclaim_p(self, p: int):
        self.claimed_p[p] = False
        rows = self._p_rows.get(p)
        if rows is None:
            rows = self._p_rows[p] = np.flatnonzero(self._ts0[:, p])
        if len(rows):
            self.mats.c_ts[rows, p] = self.is_free[rows]
        if self.colterm is not None and self.col_group[p] >= 0:
            g = self.groups[self.col_group[p]]
            if self._peek_free(g) is not None:
                i = int(self.col_local[p])
                self.colterm[p] = g.s_adj[i] + g.rowmin[i]

    def _refresh_rowmin(self, g: _Group):
        if len(g.didx) == 0:
            g.rowmin = np.full(len(g.sidx), INF)
            g.rowargmin = np.zeros(len(g.sidx), dtype=np.int64)
            return
        masked = np.where(self.claimed_q[g.didx], INF, g.B)
        g.rowmin = masked.min(axis=1)
        g.rowargmin = masked.argmin(axis=1)

    def _refresh_colterm(self, g: _Group, rows: np.ndarray | None = None):
        live = self._peek_free(g) is not None
        idx = g.sidx if rows is None else g.sidx[rows]
        loc = np.arange(len(g.sidx)) if rows is None else rows
        if not live:
            self.colterm[idx] = INF
            return
        vals = g.s_adj[loc] + g.rowmin[loc]
        vals = np.where(self.claimed_p[idx], INF, vals)
        self.colterm[idx] = vals

    def _peek_free(self, g: _Group) -> int | None:
        heap = g.free_heap
        while heap and not self.is_free[heap[0]]:
            heapq.heappop(heap)
        return heap[0] if heap else None

    # -- candidate scanning ----------------------------------------------

    def _group_best(self, g: _Group):
        """Cheapest feasible (m, i, j) in group g, (cost, m, p, q) lex order."""
        col_ok = ~self.claimed_p[g.sidx] & np.isfinite(g.rowmin)
        if not col_ok.any():
            return None
        total = self.w_b * self.c_as[:, g.sidx] + (g.s_adj + g.rowmin)[None, :]
        total[:, ~col_ok] = INF
        total[self.seq_len >= self.params.beta, :] = INF
        flat = int(np.argmin(total))
        m, i = divmod(flat, len(g.sidx))
        cost = total[m, i]
        if not np.isfinite(cost):
            return None
        return cost, m, i, int(g.rowargmin[i])

    def _scan_grouped(self):
        best = None
        for g in self.groups:
            n = self._peek_free(g)
            if n is None:
                continue
            cand = self._group_best(g)
            if cand is None:
                continue
            cost, m, i, j = cand
            key = (cost, m, n, int(g.sidx[i]), int(g.didx[j]))
            if best is None or key < best[0]:
                best = (key, g, i, j)
        return best

    def _scan_flat(self):
        capped = self.seq_len >= self.params.beta
        if capped.all():
            return None
        total = self.w_b * self.c_as + self.colterm[None, :]
        total[capped, :] = INF
        flat = int(np.argmin(total))
        m, p = divmod(flat, total.shape[1])
        cost = total[m, p]
        if not np.isfinite(cost):
            return None
        # ties between groups resolve on task row before start index, so
        # inspect every column this agent achieves the minimum on
        cols = np.flatnonzero(total[m] == cost)
        best = None
        for p in cols:
            g = self.groups[self.col_group[p]]
            n = self._peek_free(g)
            i = int(self.col_local[p])
            j = int(g.rowargmin[i])
            key = (cost, m, n, int(p), int(g.didx[j]))
            if best is None or key < best[0]:
                best = (key, g, i, j)
        return best

    # -- public operations -------------------------------------------------

    def commit_next(self) -> tuple | None:
        """Find and commit the cheapest feasible tuple; None when exhausted."""
        best = self._scan_flat() if self.flat_ok else self._scan_grouped()
        if best is None:
            return None
        (cost, m, n, p, q), g, i, j = best
        row = self.mats.task_rows[n]
        approach = float(self.c_as[m, p])
        carry = float(self.mats.c_sd[p, q])
        trip = Triple(row.task_id, self.mats.starts[p], self.mats.dests[q],
                      approach, carry, float(cost))
        agent_id = self.mats.agent_ids[m]
        self.sequences[agent_id].append(trip)
        self.seq_len[m] += 1
        self.is_free[n] = False
        self.mats.c_ts[n, :] = 0
        self.mats.c_td[n, :] = 0
        self._peek_free(g)  # pop the committed row from the heap top
        self._claim_p(p)
        self._claim_q(q)
        self.c_as[m] = self.mats.c_sd[:, q]
        if self.colterm is not None and self._peek_free(g) is None:
            self._refresh_colterm(g)  # the group just went dead
        self.f += approach + carry if self.params.mode is not AllocMode.WSKU else cost
        return (m, n, p, q, cost)

    def run(self) -> list[tuple]:
        """Greedy construction: commit until nothing feasible remains."""
        commits = []
        while True:
            c = self.commit_next()
            if c is None:
                return commits
            commits.append(c)

    def remove_suffixes(self, seeds: set[tuple[int, int]]) -> list[int]:
        """Free the seed triples and every later triple in their sequences.

        seeds are (agent_id, position) pairs; returns the freed task ids.
        Position 0 (the in-progress task) is never removable.
        """
        freed: list[int] = []
        for agent_id in sorted({a for a, _ in seeds}):
            cut = min(pos for a, pos in seeds if a == agent_id)
            if cut == 0:
                raise ValueError("cannot remove an agent's in-progress task")
            seq = self.sequences[agent_id]
            m = self.agent_row[agent_id]
            removed = seq[cut:]
            del seq[cut:]
            self.seq_len[m] = len(seq)
            for trip in removed:
                freed.append(trip.task_id)
                n = self.row_of_task[trip.task_id]
                self.is_free[n] = True
                row = self.mats.task_rows[n]
                self.mats.c_ts[n, row.start_idx] = np.where(
                    self.claimed_p[row.start_idx], 0, 1
                ).astype(np.uint8)
                self.mats.c_td[n, row.dest_idx] = np.where(
                    self.claimed_q[row.dest_idx], 0, 1
                ).astype(np.uint8)
                g = self.group_of_row[n]
                heapq.heappush(g.free_heap, n)
                self.f -= (
                    trip.approach + trip.carry
                    if self.params.mode is not AllocMode.WSKU
                    else trip.cost
                )
            # unclaim after re-freeing rows so validity rows regain the cells
            for trip in removed:
                p = self.mats.start_index.get(trip.start)
                if p is not None:
                    self._unclaim_p(p)
                q = self.mats.dest_index.get(trip.dest)
                if q is not None:
                    self._unclaim_q(q)
            # restore the chained agent-to-start row from the new last dest
            if seq:
                last = seq[-1]
                q = self.mats.dest_index.get(last.dest)
                if q is not None:
                    self.c_as[m] = self.mats.c_sd[:, q]
                else:
                    xy = np.array(self.mats.starts, dtype=np.int64).reshape(-1, 2)
                    self.c_as[m] = _gather_distances(self.oracle, last.dest, xy)
            else:
                self.c_as[m] = self.c_as0[m]
            if self.colterm is not None:
                # freed groups may have become live again
                for trip in removed:
                    g = self.group_of_row[self.row_of_task[trip.task_id]]
                    self._refresh_colterm(g)
        return freed

    def snapshot(self) -> dict:
        state = {
            "c_as": self.c_as.copy(),
            "claimed_p": self.claimed_p.copy(),
            "claimed_q": self.claimed_q.copy(),
            "seq_len": self.seq_len.copy(),
            "is_free": self.is_free.copy(),
            "sequences": {a: list(s) for a, s in self.sequences.items()},
            "heaps": [list(g.free_heap) for g in self.groups],
            "rowmin": [g.rowmin.copy() for g in self.groups],
            "rowargmin": [g.rowargmin.copy() for g in self.groups],
            "c_ts": self.mats.c_ts.copy(),
            "c_td": self.mats.c_td.copy(),
            "f": self.f,
        }
        if self.colterm is not None:
            state["colterm"] = self.colterm.copy()
        return state

    def restore(self, state: dict):
        self.c_as[:] = state["c_as"]
        self.claimed_p[:] = state["claimed_p"]
        self.claimed_q[:] = state["claimed_q"]
        self.seq_len[:] = state["seq_len"]
        self.is_free[:] = state["is_free"]
        self.sequences = {a: list(s) for a, s in state["sequences"].items()}
        for g, heap, rmin, rarg in zip(
            self.groups, state["heaps"], state["rowmin"], state["rowargmin"]
        ):
            g.free_heap = list(heap)
            g.rowmin = rmin.copy()
            g.rowargmin = rarg.copy()
        self.mats.c_ts[:] = state["c_ts"]
        self.mats.c_td[:] = state["c_td"]
        self.f = state["f"]
        if self.colterm is not None:
            self.colterm[:] = state["colterm"]

    def allocation(self) -> Allocation:
        return Allocation({a: list(s) for a, s in self.sequences.items()})

    def recompute_f(self) -> float:
        """Score from scratch; must equal the incrementally-tracked f."""
        total = 0.0
        for agent_id, seq in self.sequences.items():
            for trip in seq:
                total += (
                    trip.approach + trip.carry
                    if self.params.mode is not AllocMode.WSKU
                    else trip.cost
                )
        return total


def greedy_allocate(
    mats: CostMatrices,
    agents: list[AgentContext],
    params: CostParams,
    oracle: DistanceOracle | None = None,
) -> tuple[Allocation, GreedyEngine]:
    """Build the initial allocation by iterated cheapest-tuple commits."""
    engine = GreedyEngine(mats, agents, params, oracle)
    engine.run()
    return engine.allocation(), engine


def convert_one_to_one(
    tasks: list[Task],
    oracle: DistanceOracle,
    claimed_starts: set[Cell] = frozenset(),
    claimed_dests: set[Cell] = frozenset(),
) -> None:
    """Collapse each task's candidate sets to its closest (start, dest) pair.

    Pairs minimize the start-to-dest duration; cells already chosen by an
    earlier task (in task-id order) or already claimed by the running
    allocation are excluded, and ties break on the lexicographically
    smallest (start, dest) cells. Tasks left without an eligible pair are
    deferred (their candidate sets are emptied).
    """
    used_s = set(claimed_starts)
    used_d = set(claimed_dests)
    for task in sorted(tasks, key=lambda t: t.id):
        if not task.bound:
            continue
        cand_s = [c for c in sorted(task.starts) if c not in used_s]
        cand_d = [c for c in sorted(task.dests) if c not in used_d]
        if not cand_s or not cand_d:
            task.starts = []
            task.dests = []
            continue
        s_ids = np.array([oracle.endpoint_index[c] for c in cand_s])
        d_ids = np.array([oracle.endpoint_index[c] for c in cand_d])
        sub = oracle.endpoint_matrix[np.ix_(s_ids, d_ids)]
        # first flat argmin = lexicographically smallest (start, dest) cells
        si, di = divmod(int(np.argmin(sub)), len(cand_d))
        s, d = cand_s[si], cand_d[di]
        task.starts = [s]
        task.dests = [d]
        used_s.add(s)
        used_d.add(d)


def allocation_dump_csv(alloc: Allocation) -> str:
    lines = ["agent,seq_pos,task_id,start_x,start_y,dest_x,dest_y,est_cost"]
    for agent_id, pos, trip in alloc.all_triples():
        lines.append(
            f"{agent_id},{pos},{trip.task_id},{trip.start[0]},{trip.start[1]},"
            f"{trip.dest[0]},{trip.dest[1]},{trip.approach + trip.carry:.1f}"
        )
    return "\n".join(lines) + "\n"
