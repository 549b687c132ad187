"""Timed paths, the (cell, tick) occupancy table, validation and scoring."""
from __future__ import annotations

import math
from bisect import bisect_left, bisect_right, insort
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

from .rail_network import RailNetwork

if TYPE_CHECKING:
    from .simulation import Agent

MAX_HORIZON = 2800


def planning_horizon(episode_len: int) -> int:
    return min(math.ceil(1.5 * episode_len), MAX_HORIZON)


class Visit(NamedTuple):
    cell: int
    orientation: int
    enter: int
    # tick the move into this cell began; None for the entry visit
    move_start: Optional[int] = None


class Footprint(NamedTuple):
    cell: int
    start: int
    end: int
    next_cell: Optional[int]


@dataclass(frozen=True)
class Path:
    """Where an agent is at every tick.

    Visit k holds its cell over [enter_k, enter_{k+1}).  A complete path ends
    with the target visit, which only locks the cell for its arrival tick; an
    incomplete non-empty path holds its last cell until the horizon.
    """
    visits: Tuple[Visit, ...] = ()
    complete: bool = False

    @classmethod
    def never(cls) -> "Path":
        return cls((), False)

    @property
    def is_never(self) -> bool:
        return not self.visits

    @property
    def entry_tick(self) -> Optional[int]:
        return self.visits[0].enter if self.visits else None

    @property
    def arrival(self) -> Optional[int]:
        return self.visits[-1].enter if self.complete else None

    def footprint(self, horizon: int) -> Iterator[Footprint]:
        v = self.visits
        for a, b in zip(v, v[1:]):
            yield Footprint(a.cell, a.enter, b.enter, b.cell)
        if v:
            last = v[-1]
            end = last.enter + 1 if self.complete else horizon
            if end > last.enter:
                yield Footprint(last.cell, last.enter, end, None)

    def move_intervals(self) -> Iterator["MoveInterval"]:
        for v in self.visits[1:]:
            yield MoveInterval(v.cell, v.move_start, v.enter)

    def visit_index_at(self, tick: int) -> int:
        """Index of the visit holding the agent at ``tick`` (-1 before entry)."""
        enters = [v.enter for v in self.visits]
        return bisect_right(enters, tick) - 1

    def to_json(self) -> dict:
        return {
            "entry_tick": self.entry_tick,
            "complete": self.complete,
            "visits": [list(v) for v in self.visits],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Path":
        visits = tuple(Visit(v[0], v[1], v[2], v[3] if len(v) > 3 else None)
                       for v in data.get("visits", []))
        return cls(visits, bool(data.get("complete", False)))


class MoveInterval(NamedTuple):
    dest_cell: int
    t1: int
    t2: int


@dataclass(frozen=True)
class Assignment:
    paths: Tuple[Path, ...]
    horizon: int

    @classmethod
    def all_never(cls, n_agents: int, horizon: int) -> "Assignment":
        return cls(tuple(Path.never() for _ in range(n_agents)), horizon)

    def replace(self, agent: int, path: Path) -> "Assignment":
        paths = list(self.paths)
        paths[agent] = path
        return Assignment(tuple(paths), self.horizon)

    def to_json(self) -> dict:
        return {"horizon": self.horizon, "paths": [p.to_json() for p in self.paths]}

    @classmethod
    def from_json(cls, data: dict) -> "Assignment":
        return cls(tuple(Path.from_json(p) for p in data["paths"]), data["horizon"])


class OccupancyConflict(ValueError):
    def __init__(self, cell: int, tick: int, other: int, agent: int):
        super().__init__(f"agent {agent} clashes with agent {other} on cell {cell} at tick {tick}")
        self.cell = cell
        self.tick = tick
        self.other = other
        self.agent = agent


class OccupancyIntegrityError(ValueError):
    pass


class OccupancyTable:
    """(cell, tick) -> occupant, stored per cell as sorted disjoint intervals."""

    def __init__(self, num_cells: int, horizon: int):
        self.num_cells = num_cells
        self.horizon = horizon
        self._starts: List[List[int]] = [[] for _ in range(num_cells)]
        # parallel to _starts: (end, agent, next_cell)
        self._recs: List[List[Tuple[int, int, Optional[int]]]] = [[] for _ in range(num_cells)]

    @classmethod
    def from_assignment(cls, num_cells: int, assignment: Assignment,
                        skip: Sequence[int] = ()) -> "OccupancyTable":
        table = cls(num_cells, assignment.horizon)
        for agent, path in enumerate(assignment.paths):
            if agent not in skip:
                table.insert_path(agent, path)
        return table

    def clone(self) -> "OccupancyTable":
        other = OccupancyTable.__new__(OccupancyTable)
        other.num_cells = self.num_cells
        other.horizon = self.horizon
        other._starts = [list(s) for s in self._starts]
        other._recs = [list(r) for r in self._recs]
        return other

    def __eq__(self, other) -> bool:
        return (isinstance(other, OccupancyTable) and self.horizon == other.horizon
                and self._starts == other._starts and self._recs == other._recs)

    def is_empty(self) -> bool:
        return not any(self._starts)

    def intervals(self, cell: int) -> List[Tuple[int, int, int]]:
        return [(s, e, a) for s, (e, a, _) in zip(self._starts[cell], self._recs[cell])]

    def occupant(self, cell: int, tick: int) -> Optional[int]:
        starts = self._starts[cell]
        i = bisect_right(starts, tick) - 1
        if i >= 0:
            end, agent, _ = self._recs[cell][i]
            if end > tick:
                return agent
        return None

    def clash(self, cell: int, a: int, b: int) -> Optional[Tuple[int, int]]:
        """First (tick, agent) occupying ``cell`` within [a, b), or None."""
        starts = self._starts[cell]
        i = bisect_right(starts, a) - 1
        recs = self._recs[cell]
        if i >= 0 and recs[i][0] > a:
            return a, recs[i][1]
        i += 1
        if i < len(starts) and starts[i] < b:
            return starts[i], recs[i][1]
        return None

    def is_free(self, cell: int, a: int, b: int) -> bool:
        if b <= a:
            return True
        starts = self._starts[cell]
        i = bisect_left(starts, b) - 1
        return i < 0 or self._recs[cell][i][0] <= a

    def vacating(self, cell: int, tick: int) -> Optional[Tuple[int, Optional[int]]]:
        """(agent, next_cell) for the interval on ``cell`` ending exactly at ``tick``."""
        starts = self._starts[cell]
        i = bisect_left(starts, tick) - 1
        if i >= 0:
            end, agent, nxt = self._recs[cell][i]
            if end == tick:
                return agent, nxt
        return None

    def next_start(self, cell: int, tick: int) -> Optional[int]:
        """Start of the first interval on ``cell`` beginning at or after ``tick``."""
        starts = self._starts[cell]
        i = bisect_left(starts, tick)
        return starts[i] if i < len(starts) else None

    def free_until(self, cell: int, tick: int) -> int:
        """End of the free run of ``cell`` starting at ``tick`` (== tick if busy)."""
        if not self.is_free(cell, tick, tick + 1):
            return tick
        nxt = self.next_start(cell, tick)
        return self.horizon if nxt is None else min(nxt, self.horizon)

    def first_free(self, cell: int, tick: int) -> Optional[int]:
        """Earliest tick >= ``tick`` at which ``cell`` is unoccupied."""
        starts = self._starts[cell]
        recs = self._recs[cell]
        i = bisect_right(starts, tick) - 1
        t = tick
        if i < 0:
            i = 0
        while i < len(starts):
            if starts[i] > t:
                break
            if recs[i][0] > t:
                t = recs[i][0]
            i += 1
        return t if t < self.horizon else None

    def is_covered(self, cell: int, a: int, b: int) -> bool:
        """True when every tick of [a, b) is occupied."""
        t = a
        while t < b:
            i = bisect_right(self._starts[cell], t) - 1
            if i < 0:
                return False
            end = self._recs[cell][i][0]
            if end <= t:
                return False
            t = end
        return True

    def insert_path(self, agent: int, path: Path) -> None:
        prints = list(path.footprint(self.horizon))
        for fp in prints:
            hit = self.clash(fp.cell, fp.start, fp.end)
            if hit is not None:
                raise OccupancyConflict(fp.cell, hit[0], hit[1], agent)
        for fp in prints:
            starts = self._starts[fp.cell]
            i = bisect_left(starts, fp.start)
            starts.insert(i, fp.start)
            self._recs[fp.cell].insert(i, (fp.end, agent, fp.next_cell))

    def remove_path(self, agent: int, path: Path) -> None:
        prints = list(path.footprint(self.horizon))
        found = []
        for fp in prints:
            starts = self._starts[fp.cell]
            i = bisect_left(starts, fp.start)
            if (i >= len(starts) or starts[i] != fp.start
                    or self._recs[fp.cell][i] != (fp.end, agent, fp.next_cell)):
                raise OccupancyIntegrityError(
                    f"cell {fp.cell} over [{fp.start}, {fp.end}) is not held by agent {agent}")
            found.append(fp)
        for fp in found:
            starts = self._starts[fp.cell]
            i = bisect_left(starts, fp.start)
            del starts[i]
            del self._recs[fp.cell][i]

    def creates_cycle(self, origin: int, dest: int, tick: int) -> bool:
        """Would a move origin -> dest completing at ``tick`` close a rotation?

        Follows the chain of agents vacating cells at ``tick``; the moving agent
        itself must not be in the table.
        """
        cell = dest
        for _ in range(self.num_cells + 1):
            hit = self.vacating(cell, tick)
            if hit is None:
                return False
            nxt = hit[1]
            if nxt is None:
                return False
            if nxt == origin:
                return True
            cell = nxt
        return True


class MoveIntervalIndex:
    """Move intervals grouped by destination cell."""

    def __init__(self):
        self._by_dest: Dict[int, List[Tuple[int, int, int]]] = {}
        # longest interval ever stored per destination; bounds overlap scans
        self._span: Dict[int, int] = {}

    @classmethod
    def from_assignment(cls, assignment: Assignment, skip: Sequence[int] = ()) -> "MoveIntervalIndex":
        index = cls()
        for agent, path in enumerate(assignment.paths):
            if agent not in skip:
                index.insert_path(agent, path)
        return index

    def clone(self) -> "MoveIntervalIndex":
        other = MoveIntervalIndex()
        other._by_dest = {k: list(v) for k, v in self._by_dest.items()}
        other._span = dict(self._span)
        return other

    def insert_path(self, agent: int, path: Path) -> None:
        for mi in path.move_intervals():
            insort(self._by_dest.setdefault(mi.dest_cell, []), (mi.t1, mi.t2, agent))
            if mi.t2 - mi.t1 > self._span.get(mi.dest_cell, 0):
                self._span[mi.dest_cell] = mi.t2 - mi.t1

    def remove_path(self, agent: int, path: Path) -> None:
        for mi in path.move_intervals():
            self._by_dest[mi.dest_cell].remove((mi.t1, mi.t2, agent))

    def toward(self, cell: int) -> List[Tuple[int, int, int]]:
        return self._by_dest.get(cell, [])

    def overlapping(self, cell: int, t1: int, t2: int) -> List[Tuple[int, int, int]]:
        """Intervals toward ``cell`` sharing at least one tick with [t1, t2)."""
        rows = self._by_dest.get(cell)
        if not rows:
            return []
        i = bisect_left(rows, (t2,))
        lo = t1 - self._span[cell]
        out = []
        while i > 0:
            i -= 1
            row = rows[i]
            if row[0] < lo:
                break
            if row[1] > t1:
                out.append(row)
        return out

    def is_empty(self) -> bool:
        return not any(self._by_dest.values())


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Score:
    finished: int
    cost: float
    exponent: float = 1.0

    def key(self):
        return (-self.finished, self.cost)

    def to_json(self) -> dict:
        return {"finished": self.finished, "cost": self.cost, "exponent": self.exponent}


BETTER, EQUAL, WORSE = 1, 0, -1


def score_arrivals(arrivals: Sequence[Optional[int]], exponent: float = 1.0,
                   horizon: Optional[int] = None) -> Score:
    done = [t for t in arrivals if t is not None and (horizon is None or t <= horizon)]
    if exponent == 1:
        cost = sum(done)
    else:
        cost = math.fsum(float(t) ** exponent for t in done)
    return Score(len(done), cost, exponent)


def score(assignment: Assignment, exponent: float = 1.0, horizon: Optional[int] = None) -> Score:
    horizon = assignment.horizon if horizon is None else horizon
    return score_arrivals([p.arrival for p in assignment.paths], exponent, horizon)


def compare(a: Score, b: Score) -> int:
    """BETTER if ``a`` beats ``b``: more finished agents, then lower cost."""
    ka, kb = a.key(), b.key()
    if ka < kb:
        return BETTER
    if ka > kb:
        return WORSE
    return EQUAL


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_path(net: RailNetwork, agent: "Agent", path: Path, horizon: int) -> List[str]:
    out = []
    a = agent.id
    v = path.visits
    if not v:
        if path.complete:
            out.append(f"agent {a}: empty path marked complete")
        return out
    first = v[0]
    if first.cell != agent.start_cell or first.orientation != agent.start_orientation:
        out.append(f"agent {a}: path does not start at its start cell/orientation")
    if first.move_start is not None:
        out.append(f"agent {a}: entry visit carries a move start")
    if first.enter < 1:
        out.append(f"agent {a}: enters at tick {first.enter} < 1")
    for i, (p, q) in enumerate(zip(v, v[1:]), start=1):
        if (q.cell, q.orientation) not in net.transitions(p.cell, p.orientation):
            out.append(f"agent {a}: illegal transition {p.cell}->{q.cell} at visit {i}")
        if q.move_start is None or q.move_start < p.enter:
            out.append(f"agent {a}: visit {i} starts moving before entering the previous cell")
        elif q.enter - q.move_start < agent.speed_den:
            out.append(f"agent {a}: visit {i} moves faster than speed 1/{agent.speed_den}")
        if p.cell == agent.target_cell:
            out.append(f"agent {a}: passes its target at visit {i - 1}")
    if path.complete and v[-1].cell != agent.target_cell:
        out.append(f"agent {a}: complete path ends off target")
    if not path.complete and v[-1].cell == agent.target_cell:
        out.append(f"agent {a}: reaches target but is not marked complete")
    if v[-1].enter >= horizon:
        out.append(f"agent {a}: visit at tick {v[-1].enter} beyond horizon {horizon}")
    return out


def rotation_cycles(assignment: Assignment) -> List[Tuple[int, List[int]]]:
    """Ticks at which a closed chain of simultaneous moves occurs."""
    moves: Dict[int, Dict[int, int]] = {}
    for path in assignment.paths:
        for p, q in zip(path.visits, path.visits[1:]):
            moves.setdefault(q.enter, {})[p.cell] = q.cell
    found = []
    for tick in sorted(moves):
        step = moves[tick]
        seen = set()
        for start in step:
            if start in seen:
                continue
            trail = []
            cell = start
            while cell in step and cell not in seen and cell not in trail:
                trail.append(cell)
                cell = step[cell]
            if cell in trail:
                found.append((tick, trail[trail.index(cell):]))
            seen.update(trail)
    return found


def validate_assignment(net: RailNetwork, agents: Sequence["Agent"], assignment: Assignment) -> List[str]:
    """Empty list iff the assignment is executable as planned."""
    out = []
    if len(assignment.paths) != len(agents):
        return [f"{len(assignment.paths)} paths for {len(agents)} agents"]
    for agent, path in zip(agents, assignment.paths):
        out.extend(validate_path(net, agent, path, assignment.horizon))
    table = OccupancyTable(net.num_cells, assignment.horizon)
    for agent, path in enumerate(assignment.paths):
        for fp in path.footprint(assignment.horizon):
            hit = table.clash(fp.cell, fp.start, fp.end)
            if hit is not None:
                out.append(f"agents {hit[1]} and {agent} both hold cell {fp.cell} at tick {hit[0]}")
        try:
            table.insert_path(agent, path)
        except OccupancyConflict:
            pass
    for tick, cells in rotation_cycles(assignment):
        out.append(f"rotation through cells {cells} at tick {tick}")
    return out
