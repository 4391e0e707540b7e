"""Task stream generation, candidate binding, and lifecycle management."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .grid import Cell, GridMap
from .inventory import Inventory, SkuId


class TaskKind(Enum):
    INBOUND = "inbound"
    OUTBOUND = "outbound"


class TaskState(Enum):
    FREE = "free"
    ALLOCATED = "allocated"
    PICKED_UP = "picked_up"
    COMPLETED = "completed"


# Bias gain steering the inbound/outbound mix toward the density target.
DENSITY_GAIN = 2.0


@dataclass
class Task:
    """One unit of one SKU moving in or out of the warehouse.

    starts/dests are the live candidate sets; they are rebound against the
    current inventory at every allocation round until the task is picked up.
    """

    id: int
    kind: TaskKind
    sku: SkuId
    release_time: int
    starts: list[Cell] = field(default_factory=list)
    dests: list[Cell] = field(default_factory=list)
    state: TaskState = TaskState.FREE

    @property
    def bound(self) -> bool:
        return bool(self.starts) and bool(self.dests)


class LifecycleError(RuntimeError):
    """A task state transition the state machine forbids."""


class TaskPool:
    """Active task bookkeeping with a release-rate and active-count cap."""

    def __init__(
        self,
        release_rate: int = 4,
        active_cap: int = 120,
        density_target: float = 0.3,
    ):
        self.release_rate = release_rate
        self.active_cap = active_cap
        self.density_target = density_target
        self.tasks: dict[int, Task] = {}
        self.completed_count = 0
        self._next_id = 0

    def active_tasks(self) -> list[Task]:
        return [t for t in self.tasks.values() if t.state is not TaskState.COMPLETED]

    def free_tasks(self) -> list[Task]:
        return [t for t in self.tasks.values() if t.state is TaskState.FREE]

    def release(
        self, inv: Inventory, grid: GridMap, t: int, rng: random.Random
    ) -> list[Task]:
        """Release up to release_rate new tasks without exceeding the cap.

        The inbound probability is a proportional controller around the
        density target; a kind that is infeasible right now (nothing stored /
        nowhere to store) falls back to the other, or the slot is skipped.
        """
        released = []
        budget = min(self.release_rate, self.active_cap - len(self.active_tasks()))
        for _ in range(max(0, budget)):
            p_in = 0.5 + DENSITY_GAIN * (self.density_target - inv.density)
            p_in = min(0.95, max(0.05, p_in))
            kind = TaskKind.INBOUND if rng.random() < p_in else TaskKind.OUTBOUND
            stocked = inv.stocked_skus()
            can_out = bool(stocked)
            can_in = len(inv.occupancy) < len(grid.storage_endpoints)
            if kind is TaskKind.OUTBOUND and not can_out:
                kind = TaskKind.INBOUND
            if kind is TaskKind.INBOUND and not can_in:
                if not can_out:
                    continue
                kind = TaskKind.OUTBOUND
            if kind is TaskKind.OUTBOUND:
                sku = stocked[rng.randrange(len(stocked))]
            else:
                sku = rng.randrange(inv.num_skus)
            task = Task(self._next_id, kind, sku, t)
            self._next_id += 1
            self.tasks[task.id] = task
            released.append(task)
        return released

    def complete(self, task: Task) -> None:
        if task.state is not TaskState.PICKED_UP:
            raise LifecycleError(f"task {task.id} completed from {task.state}")
        task.state = TaskState.COMPLETED
        self.completed_count += 1
        del self.tasks[task.id]


def bind_candidates(task: Task, inv: Inventory, grid: GridMap) -> bool:
    """Refresh the candidate sets against live inventory.

    Outbound: starts are every cell currently holding the SKU, destinations
    every loading endpoint. Inbound: starts are the loading endpoints,
    destinations every currently-empty storage endpoint. Returns False (task
    deferred, sets emptied) when either side is empty.
    """
    if task.kind is TaskKind.OUTBOUND:
        starts = inv.cells_of(task.sku)
        dests = list(grid.loading_endpoints)
    else:
        starts = list(grid.loading_endpoints)
        dests = inv.empty_storage_cells()
    if not starts or not dests:
        task.starts = []
        task.dests = []
        return False
    task.starts = starts
    task.dests = dests
    return True


def bind_all(tasks: list[Task], inv: Inventory, grid: GridMap) -> list[Task]:
    """Bind many tasks at once, sharing candidate lists between tasks.

    Same semantics as bind_candidates per task, but tasks of one SKU share
    one cells list and every inbound task shares the empty-cell and
    loading-endpoint lists, which downstream matrix assembly exploits.
    Returns the successfully bound tasks.
    """
    loading = list(grid.loading_endpoints)
    empties = inv.empty_storage_cells()
    sku_cells: dict[int, list[Cell]] = {}
    bound = []
    for task in tasks:
        if task.kind is TaskKind.OUTBOUND:
            starts = sku_cells.get(task.sku)
            if starts is None:
                starts = sku_cells[task.sku] = inv.cells_of(task.sku)
            dests = loading
        else:
            starts = loading
            dests = empties
        if not starts or not dests:
            task.starts = []
            task.dests = []
            continue
        task.starts = starts
        task.dests = dests
        bound.append(task)
    return bound
