"""Re-timing a plan after malfunctions while keeping every cell's visit order.

The plan-step graph lists, for each cell, the agents that enter it in planned
order, and for each agent the cells it enters.  Repair walks the pending
visits breadth-first: a visit gets a time once the agent's previous visit has
one and the previous visitor of the cell has moved on.  Visits that can never
be timed mark their agents as deadlocked.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .overlap import OverlapPolicy
from .schedule import Assignment, Path, Visit
from .simulation import Agent, SimState, Status

log = logging.getLogger(__name__)

VisitRef = Tuple[int, int]  # (cell, index into that cell's visit list)


@dataclass
class PlanStepGraph:
    assignment: Assignment
    cell_agents: Dict[int, List[int]] = field(default_factory=dict)
    cell_times: Dict[int, List[int]] = field(default_factory=dict)
    cell_to_agent_visit: Dict[int, List[int]] = field(default_factory=dict)
    agent_cells: List[List[int]] = field(default_factory=list)
    agent_times: List[List[int]] = field(default_factory=list)
    agent_to_cell_visit: List[List[int]] = field(default_factory=list)

    def is_terminal(self, cell: int, j: int) -> bool:
        """Is visit j of ``cell`` the final arrival of a complete path?"""
        agent = self.cell_agents[cell][j]
        path = self.assignment.paths[agent]
        return path.complete and self.cell_to_agent_visit[cell][j] == len(path.visits) - 1


def build_graph(assignment: Assignment) -> PlanStepGraph:
    g = PlanStepGraph(assignment)
    entries: Dict[int, List[Tuple[int, int, int]]] = {}
    for a, path in enumerate(assignment.paths):
        g.agent_cells.append([v.cell for v in path.visits])
        g.agent_times.append([v.enter for v in path.visits])
        g.agent_to_cell_visit.append([0] * len(path.visits))
        for i, v in enumerate(path.visits):
            entries.setdefault(v.cell, []).append((v.enter, a, i))
    for cell in sorted(entries):
        rows = sorted(entries[cell])
        g.cell_agents[cell] = [a for _, a, _ in rows]
        g.cell_times[cell] = [t for t, _, _ in rows]
        g.cell_to_agent_visit[cell] = [i for _, _, i in rows]
        for j, (_, a, i) in enumerate(rows):
            g.agent_to_cell_visit[a][i] = j
    return g


def precedence_arcs(graph: PlanStepGraph) -> List[Tuple[VisitRef, VisitRef]]:
    """Arcs (C1, i1) -> (C2, i2): the source must happen before the target."""
    arcs = []
    for c2, agents in graph.cell_agents.items():
        for i2 in range(1, len(agents)):
            prev_agent = agents[i2 - 1]
            k = graph.cell_to_agent_visit[c2][i2 - 1]
            if graph.is_terminal(c2, i2 - 1):
                arcs.append(((c2, i2 - 1), (c2, i2)))
            elif k + 1 < len(graph.agent_cells[prev_agent]):
                c1 = graph.agent_cells[prev_agent][k + 1]
                i1 = graph.agent_to_cell_visit[prev_agent][k + 1]
                arcs.append(((c1, i1), (c2, i2)))
    return arcs


@dataclass
class RepairOutcome:
    assignment: Assignment
    inversions_detected: int = 0
    swaps_attempted: int = 0
    deadlocked: Set[int] = field(default_factory=set)
    unperformed_visits: int = 0

    def to_json(self) -> dict:
        return {
            "inversions": self.inversions_detected,
            "swaps": self.swaps_attempted,
            "deadlocked": sorted(self.deadlocked),
            "unperformed_visits": self.unperformed_visits,
        }


class DeadlockAssertion(AssertionError):
    pass


@dataclass
class _Pending:
    cell: int
    orientation: int
    planned: Optional[int]  # None for a visit invented from runtime state
    kind: str  # "enter" | "move" | "ongoing"
    terminal: bool


def _anchor(path: Path, agent: Agent, runtime) -> Tuple[List[_Pending], bool]:
    """Pending visits of one agent and whether its plan reaches the target."""
    if runtime.status == Status.ARRIVED:
        return [], True
    hist = runtime.history
    n = len(hist)
    visits = path.visits
    matched = len(visits) >= n and all(
        visits[i][:3] == hist[i][:3] for i in range(n))
    mv = runtime.move
    if matched and mv is not None:
        matched = len(visits) > n and visits[n].cell == mv.target
    if matched:
        rest = visits[n:]
        pending = []
        for i, v in enumerate(rest):
            if i == 0 and runtime.status == Status.OUTSIDE:
                kind = "enter"
            elif i == 0 and mv is not None:
                kind = "ongoing"
            else:
                kind = "move"
            last = path.complete and i == len(rest) - 1
            pending.append(_Pending(v.cell, v.orientation, v.enter, kind, last))
        return pending, path.complete
    if mv is not None:
        done = mv.target == agent.target_cell
        return [_Pending(mv.target, mv.direction, None, "ongoing", done)], done
    return [], False


def _covered(spans: List[List[Optional[int]]], a: int, b: int) -> bool:
    t = a
    for s, e in spans:
        if t >= b:
            break
        if s <= t and (e is None or e > t):
            t = b if e is None else e
    return t >= b


def _first_gap(spans: List[List[Optional[int]]], a: int) -> int:
    t = a
    for s, e in spans:
        if s <= t and (e is None or e > t):
            if e is None:
                return 1 << 60
            t = e
    return t


def repair(graph: PlanStepGraph, runtime: SimState, agents: Sequence[Agent],
           policy: OverlapPolicy, horizon: int, assert_strict: bool = True) -> RepairOutcome:
    """Re-time every pending visit of ``graph.assignment`` from ``runtime`` on.

    Visits are only ever delayed: a visit enters no earlier than planned, no
    earlier than its agent can get there, and no earlier than the previous
    visitor of the cell allows.  Ongoing moves follow physics instead; when a
    gap would let one overtake its cell predecessor the two are swapped once
    and everything is recomputed.
    """
    assignment = graph.assignment
    now = runtime.tick
    n = len(agents)
    pending: List[List[_Pending]] = []
    complete: List[bool] = []
    for a in range(n):
        p, c = _anchor(assignment.paths[a], agents[a], runtime.agents[a])
        pending.append(p)
        complete.append(c)

    orders: Dict[int, List[Tuple[int, int]]] = {}
    for a in range(n):
        for k, pv in enumerate(pending[a]):
            orders.setdefault(pv.cell, []).append(
                (-1 if pv.planned is None else pv.planned, a, k))
    orders = {c: [(a, k) for _, a, k in sorted(rows)] for c, rows in orders.items()}

    outcome = RepairOutcome(assignment)
    fixed: Dict[Tuple[int, int], Tuple[int, Optional[int]]] = {}
    swapped = False
    while True:
        fixed, inversion, stuck = _bfs(pending, orders, runtime, agents, policy, horizon,
                                       allow_swap=not swapped)
        outcome.inversions_detected += stuck
        if inversion is None:
            break
        outcome.inversions_detected += 1
        cell, moved, before = inversion
        order = orders[cell]
        order.remove(moved)
        order.insert(order.index(before), moved)
        outcome.swaps_attempted += 1
        swapped = True
        log.info("repair: swapped %s ahead of %s on cell %d", moved, before, cell)

    paths = []
    for a in range(n):
        rt = runtime.agents[a]
        if rt.status == Status.ARRIVED:
            paths.append(assignment.paths[a])
            continue
        visits = list(rt.history)
        ok = True
        for k, pv in enumerate(pending[a]):
            if (a, k) not in fixed:
                ok = False
                outcome.unperformed_visits += len(pending[a]) - k
                break
            t, ms = fixed[(a, k)]
            visits.append(Visit(pv.cell, pv.orientation, t, ms))
        if not ok:
            outcome.deadlocked.add(a)
        paths.append(Path(tuple(visits), complete[a] and ok))
    outcome.assignment = Assignment(tuple(paths), horizon)
    if outcome.deadlocked:
        log.warning("repair at tick %d: agents %s deadlocked", now, sorted(outcome.deadlocked))
        if assert_strict and policy is OverlapPolicy.STRICT:
            raise DeadlockAssertion(
                f"deadlock under strict policy at tick {now}: {sorted(outcome.deadlocked)}")
    return outcome


def _bfs(pending, orders, runtime: SimState, agents, policy: OverlapPolicy, horizon: int,
         allow_swap: bool):
    now = runtime.tick
    ptr = {c: 0 for c in orders}
    release: Dict[int, Optional[int]] = {}
    spans: Dict[int, List[List[Optional[int]]]] = {}
    last_ms: Dict[int, int] = {}
    last_enter: Dict[int, int] = {}
    for a, rt in enumerate(runtime.agents):
        if rt.status == Status.ACTIVE:
            release[rt.cell] = None
            spans[rt.cell] = [[rt.history[-1].enter, None]]
    next_k = [0] * len(agents)
    fixed: Dict[Tuple[int, int], Tuple[int, Optional[int]]] = {}
    heap: List[Tuple[int, int, int]] = []
    queued = set()
    stuck = 0

    def try_push(a: int, k: int) -> None:
        if k >= len(pending[a]) or next_k[a] != k or (a, k) in queued:
            return
        cell = pending[a][k].cell
        order = orders[cell]
        if ptr[cell] >= len(order) or order[ptr[cell]] != (a, k):
            return
        rel = release.get(cell, 0)
        if rel is None:
            return
        tmin = rel
        if pending[a][k].kind == "move" and cell in last_ms:
            tmin = max(tmin, policy.earliest_entry_after(
                last_ms[cell], last_enter[cell], agents[a].speed_den))
        queued.add((a, k))
        heapq.heappush(heap, (tmin, a, k))

    for a in range(len(agents)):
        try_push(a, 0)

    while heap:
        tmin, a, k = heapq.heappop(heap)
        pv = pending[a][k]
        rt = runtime.agents[a]
        T = agents[a].speed_den
        cell = pv.cell
        if pv.kind == "ongoing":
            phys = now + rt.malfunction + max(rt.move.remaining, 1)
            if tmin <= phys:
                t = phys
            elif _covered(spans.get(cell, []), phys, tmin):
                t = tmin
            else:
                # the cell falls free before the predecessor releases it
                gap = _first_gap(spans.get(cell, []), phys)
                order = orders[cell]
                here = order.index((a, k))
                if not allow_swap:
                    stuck += 1
                    continue
                before = next(ref for ref in order[:here] if fixed[ref][0] >= gap)
                return fixed, (cell, (a, k), before), stuck
            ms = rt.move.started
        elif pv.kind == "enter":
            t = max(now + rt.malfunction + 1, tmin)
            if pv.planned is not None:
                t = max(t, pv.planned)
            ms = None
        else:
            if k == 0:
                earliest = now + rt.malfunction + T
            else:
                earliest = fixed[(a, k - 1)][0] + T
            t = max(earliest, tmin)
            if pv.planned is not None:
                t = max(t, pv.planned)
            ms = t - T
        fixed[(a, k)] = (t, ms)
        next_k[a] = k + 1
        ptr[cell] += 1
        spans.setdefault(cell, []).append([t, t + 1 if pv.terminal else None])
        release[cell] = t + 1 if pv.terminal else None
        if ms is not None:
            last_ms[cell] = max(last_ms.get(cell, ms), ms)
            last_enter[cell] = max(last_enter.get(cell, t), t)
        prev = pending[a][k - 1].cell if k > 0 else (rt.cell if rt.status == Status.ACTIVE else None)
        if prev is not None:
            release[prev] = t
            spans[prev][-1][1] = t
        try_push(a, k + 1)
        if pv.terminal:
            _push_next_visitor(cell, orders, ptr, try_push)
        if prev is not None:
            _push_next_visitor(prev, orders, ptr, try_push)
    return fixed, None, stuck


def _push_next_visitor(cell, orders, ptr, try_push) -> None:
    order = orders.get(cell)
    if order and ptr[cell] < len(order):
        a, k = order[ptr[cell]]
        try_push(a, k)


def mark_deadlocked(assignment: Assignment, agents: Set[int], runtime: SimState,
                    horizon: int) -> Assignment:
    """Freeze the given agents where they physically are until the horizon."""
    paths = list(assignment.paths)
    for a in sorted(agents):
        rt = runtime.agents[a]
        if rt.status == Status.ARRIVED:
            continue
        paths[a] = Path(rt.history, False)
    return Assignment(tuple(paths), horizon)
