"""The lifelong discrete-time warehouse loop.

Each tick: release tasks, (re)allocate while unassigned tasks exist, plan
collision-free paths for changed goals, advance every agent one step, fire
pickup/delivery events, record metrics. The world is fully deterministic
under a fixed seed when the allocation budget uses the iteration clock.
"""

from __future__ import annotations

import csv
import hashlib
import json
import random
from collections import deque
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .allocation import (
    AgentContext,
    Allocation,
    AllocMode,
    CostParams,
    GreedyEngine,
    Triple,
    allocation_dump_csv,
    build_matrices,
    convert_one_to_one,
)
from .grid import Cell, DistanceOracle, GridMap, parse_map
from .inventory import Inventory, initialize_inventory
from .lns import IterationClock, LnsParams, WallClock, lns_improve
from .mapf import (
    PlanRequest,
    TimedPath,
    paths_dump_csv,
    pbs_solve,
    segment_goals,
    validate_executed,
)
from .maps import map_text
from .tasks import Task, TaskKind, TaskPool, TaskState, bind_all


class CollisionError(RuntimeError):
    """Two agents about to collide; a planner bug, never tolerated."""


@dataclass
class SimConfig:
    map_name: str = "restricted"
    num_agents: int = 40
    num_skus: int = 30
    density: float = 0.3
    release_rate: int = 4
    active_cap: int = 120
    mode: str = "m2m"            # m2m | wsku | o2o
    w_b: float = 1.0
    w_s: float = 0.25
    beta: int = 3
    omega1: float = 9.0
    omega2: float = 3.0
    n_remove: int = 3
    t0: float = 1.0
    alpha: float = 0.99
    alloc_budget_s: float = 1.0
    lns_clock: str = "wall"      # wall | iteration (iteration is deterministic)
    lns_iterations: int = 100
    horizon: int = 3000
    seconds_per_step: float = 1.0
    throughput_window_s: float = 600.0
    seed: int = 0
    pbs_max_expansions: int = 5000
    mapf_horizon_factor: int = 4
    dump_paths: bool = False
    dump_allocations: bool = False
    lns_trace: bool = False

    def alloc_mode(self) -> AllocMode:
        return AllocMode(self.mode)

    def cost_params(self) -> CostParams:
        mode = self.alloc_mode()
        return CostParams(
            mode=AllocMode.WSKU if mode is AllocMode.WSKU else AllocMode.BASE,
            w_b=self.w_b,
            w_s=self.w_s,
            beta=self.beta,
        )

    def lns_params(self) -> LnsParams:
        return LnsParams(
            omega1=self.omega1,
            omega2=self.omega2,
            n_remove=self.n_remove,
            t0=self.t0,
            alpha=self.alpha,
            budget_s=self.alloc_budget_s,
        )

    def config_hash(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k != "seed"}
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:10]

    def run_name(self) -> str:
        return f"{self.map_name}-{self.mode}-{self.config_hash()}-seed{self.seed}"


@dataclass
class AgentState:
    id: int
    cell: Cell
    carrying: tuple[int, int] | None = None  # (sku, task_id)


@dataclass
class MetricsRecord:
    rows: list[tuple[int, int, float, float]] = field(default_factory=list)
    cumulative: int = 0
    densities: list[float] = field(default_factory=list)
    pbs_fallbacks: int = 0
    alloc_overshoot_ms: float = 0.0

    def final_throughput(self, seconds_per_step: float) -> float:
        if not self.rows:
            return 0.0
        minutes = len(self.rows) * seconds_per_step / 60.0
        return self.cumulative / minutes if minutes else 0.0


class World:
    """One seeded simulation instance."""

    def __init__(self, config: SimConfig, grid: GridMap | None = None,
                 oracle: DistanceOracle | None = None):
        self.config = config
        self.grid = grid if grid is not None else parse_map(
            map_text(config.map_name), require_endpoints=True
        )
        self.oracle = oracle if oracle is not None else DistanceOracle(self.grid)
        seed_rng = random.Random(config.seed)
        self.init_rng = random.Random(seed_rng.randrange(2**62))
        self.task_rng = random.Random(seed_rng.randrange(2**62))
        self.lns_rng = random.Random(seed_rng.randrange(2**62))
        self.inv = initialize_inventory(
            self.grid, config.density, config.num_skus, self.init_rng
        )
        self.pool = TaskPool(config.release_rate, config.active_cap, config.density)
        cells = [c for c in self.grid.free_cells()]
        spawn = self.init_rng.sample(cells, config.num_agents)
        self.agents = {i: AgentState(i, cell) for i, cell in enumerate(spawn)}
        self.alloc = Allocation({i: [] for i in self.agents})
        self.plans: dict[int, list[Cell]] = {i: [a.cell] for i, a in self.agents.items()}
        self.plan_goal: dict[int, Cell | None] = {i: None for i in self.agents}
        self.t = 0
        self.metrics = MetricsRecord()
        self._window: deque[int] = deque(
            maxlen=max(1, int(config.throughput_window_s / config.seconds_per_step))
        )
        self.events: list[tuple[int, int, str, int, str]] = []
        self.executed: dict[int, list[Cell]] = {
            i: [a.cell] for i, a in self.agents.items()
        }
        self.alloc_rows: list[str] = []
        self.lns_trace_rows: list[tuple] = []
        # one-to-one baseline: tasks are converted once, when they first get
        # a feasible pair, and keep that pair until done; the used-cell sets
        # persist so no later conversion can invalidate an earlier pair
        self._sticky_pairs: dict[int, tuple[Cell, Cell]] = {}
        self._sticky_used_s: set[Cell] = set()
        self._sticky_used_d: set[Cell] = set()

    # -- allocation round -------------------------------------------------

    def _make_clock(self):
        if self.config.lns_clock == "iteration":
            return IterationClock(self.config.lns_iterations)
        return WallClock(self.config.alloc_budget_s)

    def _allocation_round(self) -> float:
        clock = self._make_clock()
        before_ids = self.alloc.task_ids()

        # return every non-first task to the free pool
        kept: dict[int, list[Triple]] = {}
        for agent_id, seq in self.alloc.sequences.items():
            kept[agent_id] = seq[:1]
            for trip in seq[1:]:
                task = self.pool.tasks.get(trip.task_id)
                if task is not None and task.state is TaskState.ALLOCATED:
                    task.state = TaskState.FREE

        free = sorted(self.pool.free_tasks(), key=lambda t: t.id)
        params = self.config.cost_params()
        if self.config.alloc_mode() is AllocMode.ONE_TO_ONE:
            round_tasks = self._convert_sticky(free)
        else:
            round_tasks = bind_all(free, self.inv, self.grid)
        contexts = []
        for agent_id in sorted(self.agents):
            agent = self.agents[agent_id]
            refreshed = []
            for trip in kept[agent_id]:
                approach = float(self.oracle.distance(agent.cell, trip.start))
                refreshed.append(
                    Triple(trip.task_id, trip.start, trip.dest, approach, trip.carry, trip.cost)
                )
            contexts.append(AgentContext(agent_id, agent.cell, refreshed))

        mats = build_matrices(contexts, round_tasks, self.oracle, params, self.inv)
        engine = GreedyEngine(mats, contexts, params, self.oracle)
        engine.run()
        trace = [] if self.config.lns_trace else None
        alloc, _ = lns_improve(engine, self.config.lns_params(), self.lns_rng, clock, trace)
        if trace:
            self.lns_trace_rows.extend(trace)
        self.alloc = alloc

        after_ids = alloc.task_ids()
        for tid in sorted(before_ids - after_ids):
            task = self.pool.tasks.get(tid)
            if task is not None and task.state is TaskState.ALLOCATED:
                task.state = TaskState.FREE
                self._event(tid, "freed")
        for tid in sorted(after_ids - before_ids):
            task = self.pool.tasks[tid]
            task.state = TaskState.ALLOCATED
            self._event(tid, "allocated")
        for tid in sorted(after_ids & before_ids):
            task = self.pool.tasks[tid]
            if task.state is TaskState.FREE:  # freed by reset, re-allocated
                task.state = TaskState.ALLOCATED
        if self.config.dump_allocations:
            self.alloc_rows.append(allocation_dump_csv(alloc))
        charge = clock.charge_ms()
        if self.config.lns_clock == "wall":
            overshoot = charge - self.config.alloc_budget_s * 1000.0
            self.metrics.alloc_overshoot_ms = max(self.metrics.alloc_overshoot_ms, overshoot)
        return charge

    def _convert_sticky(self, free: list[Task]) -> list[Task]:
        """One-to-one baseline binding: convert each task once, keep the pair.

        Unconverted tasks get fresh candidates and are collapsed against
        every cell still owned by an allocation claim or an earlier sticky
        pair; tasks without an eligible pair stay deferred and retry next
        round.
        """
        converted: list[Task] = []
        fresh: list[Task] = []
        for task in free:
            pair = self._sticky_pairs.get(task.id)
            if pair is not None:
                task.starts = [pair[0]]
                task.dests = [pair[1]]
                converted.append(task)
            else:
                fresh.append(task)
        fresh = bind_all(fresh, self.inv, self.grid)
        claimed_s = self.alloc.claimed_starts() | self._sticky_used_s
        claimed_d = self.alloc.claimed_dests() | self._sticky_used_d
        convert_one_to_one(fresh, self.oracle, claimed_s, claimed_d)
        for task in fresh:
            if task.bound:
                pair = (task.starts[0], task.dests[0])
                self._sticky_pairs[task.id] = pair
                self._sticky_used_s.add(pair[0])
                self._sticky_used_d.add(pair[1])
                converted.append(task)
        return converted

    def _release_sticky(self, task: Task, event: str) -> None:
        pair = self._sticky_pairs.get(task.id)
        if pair is None:
            return
        if event == "pickup":
            self._sticky_used_s.discard(pair[0])
        elif event == "completed":
            self._sticky_used_d.discard(pair[1])
            del self._sticky_pairs[task.id]

    # -- planning and motion ----------------------------------------------

    def _segment_goal_specs(self) -> list[tuple[int, Cell, Cell | None]]:
        specs = []
        for agent_id in sorted(self.agents):
            agent = self.agents[agent_id]
            seq = self.alloc.sequences.get(agent_id, [])
            if agent.carrying is not None:
                specs.append((agent_id, agent.cell, seq[0].dest))
            elif seq:
                specs.append((agent_id, agent.cell, seq[0].start))
            else:
                specs.append((agent_id, agent.cell, None))
        return specs

    def _replan(self) -> None:
        claimed = self.alloc.claimed_starts() | self.alloc.claimed_dests()
        goals = segment_goals(self._segment_goal_specs(), claimed, self.grid, self.oracle)
        stale = []
        for agent_id in sorted(self.agents):
            plan = self.plans[agent_id]
            goal = goals[agent_id]
            if self.plan_goal[agent_id] != goal:
                stale.append(agent_id)
            elif len(plan) == 1 and plan[0] != goal:
                stale.append(agent_id)
        if not stale:
            return
        requests = []
        for agent_id in sorted(self.agents):
            agent = self.agents[agent_id]
            committed = None
            if agent_id not in stale:
                committed = TimedPath(list(self.plans[agent_id]))
            requests.append(PlanRequest(agent_id, agent.cell, goals[agent_id], committed))
        res = pbs_solve(
            requests,
            self.grid,
            self.oracle,
            horizon=self.config.mapf_horizon_factor * (self.grid.width + self.grid.height),
            max_expansions=self.config.pbs_max_expansions,
        )
        if res.solved:
            for agent_id, path in res.paths.items():
                self.plans[agent_id] = list(path.cells)
                self.plan_goal[agent_id] = goals[agent_id]
        else:
            # hold one tick and retry next tick
            self.metrics.pbs_fallbacks += 1
            for agent_id, agent in self.agents.items():
                self.plans[agent_id] = [agent.cell]
                self.plan_goal[agent_id] = None

    def _advance(self) -> dict[int, Cell]:
        moved_from = {}
        next_cells = {}
        for agent_id in sorted(self.agents):
            plan = self.plans[agent_id]
            agent = self.agents[agent_id]
            moved_from[agent_id] = agent.cell
            next_cells[agent_id] = plan[1] if len(plan) > 1 else agent.cell
        # step-safety: no two agents on one cell, no swaps
        occupied: dict[Cell, int] = {}
        for agent_id, cell in next_cells.items():
            if cell in occupied:
                raise CollisionError(
                    f"t={self.t}: agents {occupied[cell]} and {agent_id} both enter {cell}"
                )
            occupied[cell] = agent_id
        for agent_id, cell in next_cells.items():
            other = occupied.get(moved_from[agent_id])
            if (
                other is not None
                and other != agent_id
                and next_cells[other] == moved_from[agent_id]
                and moved_from[other] == cell
            ):
                raise CollisionError(
                    f"t={self.t}: agents {agent_id} and {other} swap cells"
                )
        for agent_id in sorted(self.agents):
            plan = self.plans[agent_id]
            if len(plan) > 1:
                plan.pop(0)
            self.agents[agent_id].cell = next_cells[agent_id]
            self.executed[agent_id].append(next_cells[agent_id])
        return moved_from

    def _fire_events(self, moved_from: dict[int, Cell]) -> int:
        completions = 0
        for agent_id in sorted(self.agents):
            agent = self.agents[agent_id]
            seq = self.alloc.sequences.get(agent_id, [])
            if not seq:
                continue
            trip = seq[0]
            task = self.pool.tasks.get(trip.task_id)
            if task is None:
                raise RuntimeError(f"agent {agent_id} holds unknown task {trip.task_id}")
            if agent.carrying is None:
                if agent.cell == trip.start and task.state is TaskState.ALLOCATED:
                    if task.kind is TaskKind.OUTBOUND:
                        sku = self.inv.remove(trip.start)
                        if sku != task.sku:
                            raise RuntimeError(
                                f"task {task.id} picked sku {sku}, expected {task.sku}"
                            )
                    task.state = TaskState.PICKED_UP
                    agent.carrying = (task.sku, task.id)
                    self._release_sticky(task, "pickup")
                    self._event(task.id, "pickup")
            else:
                # delivery needs a full tick at the destination
                if (
                    agent.carrying[1] == task.id
                    and agent.cell == trip.dest
                    and moved_from[agent_id] == agent.cell
                ):
                    if task.kind is TaskKind.INBOUND:
                        self.inv.place(trip.dest, task.sku)
                    self.pool.complete(task)
                    agent.carrying = None
                    seq.pop(0)
                    self._release_sticky(task, "completed")
                    self._event(task.id, "completed", task)
                    completions += 1
        return completions

    def _event(self, task_id: int, name: str, task: Task | None = None) -> None:
        task = task if task is not None else self.pool.tasks.get(task_id)
        kind = task.kind.value if task else "?"
        sku = task.sku if task else -1
        self.events.append((self.t, task_id, kind, sku, name))

    # -- main loop ----------------------------------------------------------

    def step(self) -> None:
        released = self.pool.release(self.inv, self.grid, self.t, self.task_rng)
        for task in released:
            self._event(task.id, "released")
        alloc_ms = 0.0
        if self.pool.free_tasks():
            alloc_ms = self._allocation_round()
        self._replan()
        moved_from = self._advance()
        completions = self._fire_events(moved_from)
        self._window.append(completions)
        self.metrics.cumulative += completions
        window_sum = sum(self._window)
        minutes = len(self._window) * self.config.seconds_per_step / 60.0
        throughput = window_sum / minutes if minutes else 0.0
        self.metrics.rows.append((self.t, window_sum, throughput, alloc_ms))
        self.metrics.densities.append(self.inv.density)
        self.t += 1

    def run(self) -> MetricsRecord:
        for _ in range(self.config.horizon):
            self.step()
        return self.metrics

    # -- outputs -------------------------------------------------------------

    def metrics_csv(self) -> str:
        lines = ["t,window_completions,throughput,alloc_wall_ms"]
        for t, wc, tp, ms in self.metrics.rows:
            lines.append(f"{t},{wc},{tp:.4f},{ms:.3f}")
        return "\n".join(lines) + "\n"

    def events_csv(self) -> str:
        lines = ["t,task_id,kind,sku,event"]
        for t, tid, kind, sku, name in self.events:
            lines.append(f"{t},{tid},{kind},{sku},{name}")
        return "\n".join(lines) + "\n"

    def write_outputs(self, out_root: str | Path) -> Path:
        out_dir = Path(out_root) / self.config.run_name()
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.csv").write_text(self.metrics_csv())
        (out_dir / "events.csv").write_text(self.events_csv())
        (out_dir / "config.json").write_text(
            json.dumps(asdict(self.config), indent=2, sort_keys=True) + "\n"
        )
        if self.config.dump_paths:
            (out_dir / "paths.csv").write_text(paths_dump_csv(self.executed))
        if self.config.dump_allocations and self.alloc_rows:
            (out_dir / "allocations.csv").write_text("".join(self.alloc_rows))
        if self.config.lns_trace and self.lns_trace_rows:
            lines = ["iter,f_curr,f_new,T,accepted"]
            for i, f_curr, f_new, temp, ok in self.lns_trace_rows:
                lines.append(f"{i},{f_curr:.3f},{f_new:.3f},{temp:.6f},{ok}")
            (out_dir / "lns_trace.csv").write_text("\n".join(lines) + "\n")
        (out_dir / "inventory.csv").write_text(self.inv.snapshot_csv())
        return out_dir

    def validate_trajectories(self) -> list[str]:
        return validate_executed(self.executed, self.grid)


def run_simulation(config: SimConfig, out_root: str | Path | None = None) -> tuple[MetricsRecord, World]:
    world = World(config)
    world.run()
    if out_root is not None:
        world.write_outputs(out_root)
    return world.metrics, world
