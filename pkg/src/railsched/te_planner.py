"""Single-agent A* over the time-expanded (cell, orientation, tick) graph."""
from __future__ import annotations

import heapq
import itertools
import logging
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

from .overlap import OverlapPolicy
from .rail_network import UNREACHABLE, HeuristicTable, RailNetwork
from .schedule import MoveInterval, MoveIntervalIndex, OccupancyTable, Path, Visit
from .simulation import Agent, AgentState, Status

log = logging.getLogger(__name__)

OUTSIDE = -1


class TENode(NamedTuple):
    cell: int
    orientation: int
    tick: int


class PriorityQueue:
    """Min-queue on (key, insertion serial); equal keys pop first-in first-out."""

    def __init__(self):
        self._heap: List[Tuple[Any, int, Any]] = []
        self._serial = itertools.count()

    def push(self, key, item=None) -> None:
        heapq.heappush(self._heap, (key, next(self._serial), item))

    def pop(self):
        key, _, item = heapq.heappop(self._heap)
        return key, item

    def __len__(self) -> int:
        return len(self._heap)


def move_feasible(table: OccupancyTable, intervals: MoveIntervalIndex, agent: Agent,
                  from_node: TENode, to_cell: int, policy: OverlapPolicy) -> Tuple[bool, MoveInterval]:
    """Can ``agent`` leave ``from_node`` for ``to_cell`` right away?

    The agent keeps its origin for the whole move, needs the destination free
    on arrival (a chain of same-tick vacates is fine, a closed rotation is
    not) and the move interval must pass the overlap policy.
    """
    t = from_node.tick
    arrive = t + agent.speed_den
    move = MoveInterval(to_cell, t, arrive)
    if not table.is_free(from_node.cell, t + 1, arrive):
        return False, move
    if not table.is_free(to_cell, arrive, arrive + 1):
        return False, move
    if table.creates_cycle(from_node.cell, to_cell, arrive):
        return False, move
    if policy is not OverlapPolicy.OFF:
        for o1, o2, _ in intervals.overlapping(to_cell, t, arrive):
            if not policy.admits(t, arrive, o1, o2):
                return False, move
    return True, move


def forced_start(table: OccupancyTable, agent: Agent, runtime: AgentState, now: int,
                 horizon: int) -> Optional[Tuple[Tuple[Visit, ...], TENode]]:
    """Visits fixed by physics and the first free decision node.

    Returns None when the agent cannot reach a decision point in time.  For
    an ongoing move into the target the node is returned with cell == target.
    """
    if runtime.status != Status.ACTIVE:
        raise ValueError("forced_start needs an agent on the grid")
    cell, m = runtime.cell, runtime.malfunction
    if runtime.move is None:
        t0 = now + m
        if t0 >= horizon or not table.is_free(cell, now, t0 + 1):
            return None
        return (), TENode(cell, runtime.orientation, t0)
    mv = runtime.move
    t = now + m + max(mv.remaining, 1)
    while t < horizon:
        t = table.first_free(mv.target, t)
        if t is None:
            return None
        if not table.creates_cycle(cell, mv.target, t):
            break
        t += 1
    else:
        return None
    if not table.is_free(cell, now, t):
        return None
    visit = Visit(mv.target, mv.direction, t, mv.started)
    return (visit,), TENode(mv.target, mv.direction, t)


def plan_path(net: RailNetwork, table: OccupancyTable, heur: HeuristicTable, agent: Agent,
              runtime: AgentState, intervals: MoveIntervalIndex, policy: OverlapPolicy,
              horizon: int, now: int = 0, stats: Optional[Dict[str, int]] = None) -> Optional[Path]:
    """Earliest-arrival path for one agent, or None (NO_PATH).

    ``table`` and ``intervals`` must not contain the agent itself.  Among
    equally early arrivals the latest entry into the grid wins.  Nodes are
    decision points only: waits are one-tick self edges and a move jumps
    ``speed_den`` ticks.
    """
    if runtime.status == Status.ARRIVED:
        return Path(runtime.history, True)
    T = agent.speed_den
    H = horizon
    target = agent.target_cell
    hflat = heur.flat
    trans = net._trans
    # entries are ((f, -entry), node id); node ids grow with insertion so equal
    # keys pop first-in first-out, exactly like PriorityQueue
    heap: List[Tuple[Tuple[int, int], int]] = []
    heappush, heappop = heapq.heappush, heapq.heappop
    # node record: (cell, orientation, tick, entry, parent, move_start)
    nodes: List[Tuple[int, int, int, int, int, Optional[int]]] = []
    prefix: Tuple[Visit, ...] = ()
    GOAL = -2

    def push(cell, o, t, entry, parent, ms, f):
        heappush(heap, ((f, -entry), len(nodes)))
        nodes.append((cell, o, t, entry, parent, ms))

    if runtime.status == Status.OUTSIDE:
        s, so = agent.start_cell, agent.start_orientation
        hs = hflat[s * 4 + so]
        if hs >= UNREACHABLE:
            return None
        t_out = now + runtime.malfunction
        f = t_out + 1 + hs * T
        if f >= H:
            return None
        push(OUTSIDE, so, t_out, t_out + 1, -1, None, f)
    else:
        start = forced_start(table, agent, runtime, now, H)
        if start is None:
            return None
        forced, node = start
        prefix = runtime.history + forced
        entry = prefix[0].enter
        if node.cell == target:
            return Path(prefix, True)
        h0 = hflat[node.cell * 4 + node.orientation]
        if h0 >= UNREACHABLE or node.tick + h0 * T >= H:
            return None
        push(node.cell, node.orientation, node.tick, entry, -1, None, node.tick + h0 * T)

    # the same rules as move_feasible, with the origin check hoisted out of
    # the neighbour loop since it does not depend on the destination
    is_free = table.is_free
    creates_cycle = table.creates_cycle
    overlapping = intervals.overlapping
    admits = policy.admits
    check_policy = policy is not OverlapPolicy.OFF

    def dest_ok(origin, t, dest, arrive):
        if not is_free(dest, arrive, arrive + 1) or creates_cycle(origin, dest, arrive):
            return False
        if check_policy:
            for o1, o2, _ in overlapping(dest, t, arrive):
                if not admits(t, arrive, o1, o2):
                    return False
        return True

    closed = set()
    expanded = 0
    goal = None
    while heap:
        _, nid = heappop(heap)
        cell, o, t, entry, _, _ = nodes[nid]
        if cell == GOAL:
            goal = nid
            break
        code = (t, cell, o)
        if code in closed:
            continue
        closed.add(code)
        expanded += 1
        if cell == OUTSIDE:
            s, so = agent.start_cell, agent.start_orientation
            hs = hflat[s * 4 + so] * T
            e = t + 1
            if table.is_free(s, e, e + 1):
                push(s, so, e, e, nid, None, e + hs)
            if e + 1 + hs < H:
                push(OUTSIDE, so, e, e + 1, nid, None, e + 1 + hs)
            continue
        h_here = hflat[cell * 4 + o] * T
        if t + 1 + h_here < H and is_free(cell, t + 1, t + 2):
            push(cell, o, t + 1, entry, nid, None, t + 1 + h_here)
        arrive = t + T
        if arrive >= H or (T > 1 and not is_free(cell, t + 1, arrive)):
            continue
        for nb, d in trans[cell * 4 + o]:
            if nb == target:
                if dest_ok(cell, t, nb, arrive):
                    push(GOAL, d, arrive, entry, nid, t, arrive)
                continue
            hn = hflat[nb * 4 + d]
            if hn >= UNREACHABLE or arrive + hn * T >= H:
                continue
            if dest_ok(cell, t, nb, arrive):
                push(nb, d, arrive, entry, nid, t, arrive + hn * T)

    if stats is not None:
        stats["nodes_expanded"] = stats.get("nodes_expanded", 0) + expanded
        stats["plan_calls"] = stats.get("plan_calls", 0) + 1
    log.debug("plan_path agent=%d expanded=%d found=%s", agent.id, expanded, goal is not None)
    if goal is None:
        return None

    chain = []
    nid = goal
    while nid != -1:
        chain.append(nodes[nid])
        nid = nodes[nid][4]
    chain.reverse()
    visits = list(prefix)
    for cell, o, t, _, parent, ms in chain:
        if cell == OUTSIDE:
            continue
        if cell == GOAL:
            visits.append(Visit(target, o, t, ms))
        elif ms is not None:
            visits.append(Visit(cell, o, t, ms))
        elif parent != -1 and nodes[parent][0] == OUTSIDE:
            visits.append(Visit(cell, o, t, None))
    return Path(tuple(visits), True)
