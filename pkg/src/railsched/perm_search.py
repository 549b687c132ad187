"""Prioritised re-planning over speed-grouped random permutations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .overlap import OverlapPolicy
from .rail_network import RailNetwork
from .schedule import (BETTER, Assignment, MoveIntervalIndex, OccupancyTable, Path, Score,
                       compare, score)
from .simulation import Agent, AgentState, SimState, Status
from .te_planner import plan_path


@dataclass(frozen=True)
class SearchParams:
    max_runs: int = 4
    num_threads: int = 3
    num_permutations: int = 20
    exponent: float = 1.0
    policy: OverlapPolicy = OverlapPolicy.NO_NESTED
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.max_runs, self.num_threads, self.num_permutations) < 1:
            raise ValueError("search counts must all be >= 1")


@dataclass
class SearchContext:
    net: RailNetwork
    agents: Sequence[Agent]
    state: SimState
    policy: OverlapPolicy
    horizon: int
    exponent: float = 1.0

    @property
    def now(self) -> int:
        return self.state.tick


@dataclass
class SearchStats:
    runs: int = 0
    permutations: int = 0
    nodes_expanded: int = 0
    plan_calls: int = 0
    improvements: int = 0

    def absorb(self, other: "SearchStats") -> None:
        self.runs += other.runs
        self.permutations += other.permutations
        self.nodes_expanded += other.nodes_expanded
        self.plan_calls += other.plan_calls
        self.improvements += other.improvements

    def to_json(self) -> dict:
        return dict(self.__dict__)


def generate_permutation(agents: Sequence[Agent], rng: np.random.Generator) -> List[int]:
    """Fastest agents first; uniform shuffle within each speed class."""
    groups: Dict[int, List[int]] = {}
    for ag in agents:
        groups.setdefault(ag.speed_den, []).append(ag.id)
    perm: List[int] = []
    for den in sorted(groups):
        ids = groups[den]
        perm.extend(ids[i] for i in rng.permutation(len(ids)))
    return perm


def _planned_entry(path: Path, runtime: AgentState) -> Optional[int]:
    k = len(runtime.history)
    if len(path.visits) > k and path.visits[k].cell == runtime.move.target:
        return path.visits[k].enter
    return None


def _ongoing_consistent(table: OccupancyTable, paths: Sequence[Path], state: SimState,
                        movers: Sequence[int], skip: int) -> bool:
    """Committed movers must still be blocked exactly until their planned entry."""
    now = state.tick
    for m in movers:
        if m == skip:
            continue
        rt = state.agents[m]
        entry = _planned_entry(paths[m], rt)
        if entry is None:
            continue
        phys = now + rt.malfunction + max(rt.move.remaining, 1)
        if entry > phys and not table.is_covered(rt.move.target, phys, entry):
            return False
    return True


def reassign(base: Assignment, perm: Sequence[int], ctx: SearchContext,
             stats: Optional[SearchStats] = None,
             cache: Optional[Dict[int, Path]] = None) -> Assignment:
    """Re-plan each agent in ``perm`` order against everyone else's current path.

    ``cache`` maps agent -> re-planned path against ``base`` itself.  While no
    path has changed yet the table still equals ``base``, so those answers are
    reused verbatim.
    """
    net = ctx.net
    table = OccupancyTable.from_assignment(net.num_cells, base)
    intervals = MoveIntervalIndex.from_assignment(base)
    paths = list(base.paths)
    movers = [i for i, st in enumerate(ctx.state.agents)
              if st.status == Status.ACTIVE and st.move is not None]
    counters: Dict[str, int] = {}
    pristine = cache is not None
    for a in perm:
        runtime = ctx.state.agents[a]
        if runtime.status == Status.ARRIVED:
            continue
        agent = ctx.agents[a]
        old = paths[a]
        if pristine and a in cache:
            new = cache[a]
            if new != old:
                table.remove_path(a, old)
                intervals.remove_path(a, old)
                table.insert_path(a, new)
                intervals.insert_path(a, new)
                paths[a] = new
                pristine = False
            continue
        table.remove_path(a, old)
        intervals.remove_path(a, old)
        new = plan_path(net, table, net.heuristic(agent.target_cell), agent, runtime, intervals,
                        ctx.policy, ctx.horizon, ctx.now, counters)
        if new is not None:
            table.insert_path(a, new)
            if movers and not _ongoing_consistent(table, paths, ctx.state, movers, a):
                table.remove_path(a, new)
                new = None
            else:
                intervals.insert_path(a, new)
        if new is None:
            table.insert_path(a, old)
            intervals.insert_path(a, old)
            new = old
        paths[a] = new
        if pristine:
            cache[a] = new
            pristine = new == old
    if stats is not None:
        stats.nodes_expanded += counters.get("nodes_expanded", 0)
        stats.plan_calls += counters.get("plan_calls", 0)
    return Assignment(tuple(paths), base.horizon)


def worker_seed(rng_seed: int, run: int, worker: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([rng_seed & (2**64 - 1), run, worker])


def _run_worker(incumbent: Assignment, params: SearchParams, ctx: SearchContext,
                run: int, worker: int, cache: Optional[Dict[int, Path]] = None
                ) -> Tuple[Score, int, Assignment, SearchStats]:
    rng = np.random.default_rng(worker_seed(params.rng_seed, run, worker))
    stats = SearchStats()
    cache = {} if cache is None else cache
    best: Optional[Tuple[Score, int, Assignment]] = None
    for p in range(params.num_permutations):
        perm = generate_permutation(ctx.agents, rng)
        cand = reassign(incumbent, perm, ctx, stats, cache)
        stats.permutations += 1
        sc = score(cand, params.exponent)
        if best is None or compare(sc, best[0]) == BETTER:
            best = (sc, p, cand)
    return best[0], best[1], best[2], stats


def search(base: Assignment, params: SearchParams, ctx: SearchContext,
           stats: Optional[SearchStats] = None, executor=None) -> Assignment:
    """Best of ``num_threads x num_permutations`` reassignments per run.

    A run that fails to improve on its incumbent ends the search.  Workers
    draw from independent streams seeded by (rng_seed, run, worker), so the
    result does not depend on how (or whether) they execute in parallel.
    """
    stats = stats if stats is not None else SearchStats()
    incumbent = base
    inc_score = score(base, params.exponent)
    for run in range(params.max_runs):
        stats.runs += 1
        if executor is None:
            cache: Dict[int, Path] = {}
            results = [_run_worker(incumbent, params, ctx, run, w, cache)
                       for w in range(params.num_threads)]
        else:
            futures = [executor.submit(_run_worker, incumbent, params, ctx, run, w)
                       for w in range(params.num_threads)]
            results = [f.result() for f in futures]
        best = None
        for w, (sc, p, cand, wstats) in enumerate(results):
            stats.absorb(wstats)
            if best is None or compare(sc, best[0]) == BETTER:
                best = (sc, cand)
        if compare(best[0], inc_score) == BETTER:
            incumbent, inc_score = best[1], best[0]
            stats.improvements += 1
        else:
            break
    return incumbent
