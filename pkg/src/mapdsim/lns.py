"""Anytime allocation improvement: related-task removal, greedy repair,
and metropolis acceptance with geometric cooling, under a budget clock."""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass

import numpy as np

from .allocation import Allocation, GreedyEngine, Triple


@dataclass
class LnsParams:
    omega1: float = 9.0      # spatial relatedness weight
    omega2: float = 3.0      # temporal relatedness weight
    n_remove: int = 3
    t0: float = 1.0
    alpha: float = 0.99
    budget_s: float = 1.0    # shared by construction and improvement

    def __post_init__(self):
        if not (self.omega1 >= 0 and self.omega2 >= 0 and self.n_remove >= 1):
            raise ValueError("bad relatedness/removal parameters")
        if not (0 < self.alpha < 1 and self.t0 > 0):
            raise ValueError("need 0 < alpha < 1 and t0 > 0")


class WallClock:
    """Real elapsed-time budget; the production default."""

    def __init__(self, budget_s: float):
        self.budget_s = budget_s
        self._start = time.perf_counter()

    def expired(self) -> bool:
        return time.perf_counter() - self._start >= self.budget_s

    def note_iteration(self) -> None:
        pass

    def charge_ms(self) -> float:
        return (time.perf_counter() - self._start) * 1000.0


class IterationClock:
    """Deterministic budget: a fixed number of improvement iterations.

    charge_ms reports the nominal per-iteration cost so recorded metrics are
    reproducible byte-for-byte under a fixed seed.
    """

    def __init__(self, iterations: int, per_iteration_ms: float = 1.0):
        self.iterations = iterations
        self.per_iteration_ms = per_iteration_ms
        self.count = 0

    def expired(self) -> bool:
        return self.count >= self.iterations

    def note_iteration(self) -> None:
        self.count += 1

    def charge_ms(self) -> float:
        return self.count * self.per_iteration_ms


@dataclass
class ScheduledTriple:
    agent_id: int
    pos: int
    triple: Triple
    t_start: float  # estimated arrival at the pickup
    t_dest: float   # estimated arrival at the destination


def schedule_times(engine: GreedyEngine) -> list[ScheduledTriple]:
    """Chain estimated arrival times through every agent's sequence."""
    out = []
    for agent_id in sorted(engine.sequences):
        t = 0.0
        for pos, trip in enumerate(engine.sequences[agent_id]):
            t_start = t + trip.approach
            t_dest = t_start + trip.carry
            out.append(ScheduledTriple(agent_id, pos, trip, t_start, t_dest))
            t = t_dest
    return out


def relatedness(a: ScheduledTriple, b: ScheduledTriple, params: LnsParams) -> float:
    """Weighted spatial (L1) plus temporal proximity of two allocated tasks."""
    sa, sb = a.triple.start, b.triple.start
    da, db = a.triple.dest, b.triple.dest
    spatial = (
        abs(da[0] - db[0]) + abs(da[1] - db[1])
        + abs(sa[0] - sb[0]) + abs(sa[1] - sb[1])
    )
    temporal = abs(a.t_start - b.t_start) + abs(a.t_dest - b.t_dest)
    return params.omega1 * spatial + params.omega2 * temporal


def shaw_remove(
    engine: GreedyEngine, params: LnsParams, rng: random.Random
) -> list[int]:
    """Remove a random seed task plus its most related peers.

    Only tasks past the first position of a sequence are removable (the
    first is in progress); every task after an removed position in the same
    sequence is freed too. Returns the freed task ids, empty when nothing is
    removable.
    """
    owners: list[tuple[int, int]] = []
    coords: list[tuple[float, float, float, float, float, float]] = []
    for agent_id in sorted(engine.sequences):
        t = 0.0
        for pos, trip in enumerate(engine.sequences[agent_id]):
            t_start = t + trip.approach
            t_dest = t_start + trip.carry
            if pos >= 1:
                owners.append((agent_id, pos))
                coords.append(
                    (trip.start[0], trip.start[1], trip.dest[0], trip.dest[1],
                     t_start, t_dest)
                )
            t = t_dest
    if not owners:
        return []
    pick = rng.randrange(len(owners))
    arr = np.array(coords)
    seed_row = arr[pick]
    scores = params.omega1 * (
        np.abs(arr[:, 2] - seed_row[2]) + np.abs(arr[:, 3] - seed_row[3])
        + np.abs(arr[:, 0] - seed_row[0]) + np.abs(arr[:, 1] - seed_row[1])
    ) + params.omega2 * (
        np.abs(arr[:, 4] - seed_row[4]) + np.abs(arr[:, 5] - seed_row[5])
    )
    ranked = sorted(
        (float(scores[k]), owners[k]) for k in range(len(owners)) if k != pick
    )
    seeds = {owners[pick]} | {owner for _, owner in ranked[: params.n_remove - 1]}
    return engine.remove_suffixes(seeds)


def accept(f_new: float, f_curr: float, temperature: float, rng: random.Random) -> bool:
    """Metropolis rule for a minimized score: always keep improvements,
    keep worsenings with probability exp(-(f_new - f_curr) / T)."""
    if f_new < f_curr:
        return True
    return rng.random() < math.exp(-(f_new - f_curr) / temperature)


def score(alloc: Allocation) -> float:
    """Total estimated duration chained along every sequence."""
    return sum(
        trip.approach + trip.carry
        for seq in alloc.sequences.values()
        for trip in seq
    )


def lns_improve(
    engine: GreedyEngine,
    params: LnsParams,
    rng: random.Random,
    clock,
    trace: list | None = None,
) -> tuple[Allocation, float]:
    """Destroy/repair loop on the engine until the clock expires.

    The engine is left at the last accepted state; the returned allocation
    is the best one seen (best-tracking makes the final answer monotone in
    the initial score).
    """
    best_f = engine.f
    best_seqs = {a: list(s) for a, s in engine.sequences.items()}
    temperature = params.t0
    while not clock.expired():
        state = engine.snapshot()
        f_curr = engine.f
        freed = shaw_remove(engine, params, rng)
        if not freed:
            break  # nothing removable; no move can change the allocation
        engine.run()
        f_new = engine.f
        ok = accept(f_new, f_curr, temperature, rng)
        if ok:
            if f_new < best_f:
                best_f = f_new
                best_seqs = {a: list(s) for a, s in engine.sequences.items()}
        else:
            engine.restore(state)
        if trace is not None:
            trace.append((len(trace), f_curr, f_new, temperature, int(ok)))
        temperature *= params.alpha
        clock.note_iteration()
    return Allocation(best_seqs), best_f
