"""Ground-truth episode engine.

Tick 0 is the initial observation.  ``step`` turns tick t into t+1:

1. agents with a malfunction countdown are frozen for this step;
2. new moves start (MOVE) and ongoing moves count down;
3. moves whose countdown is exhausted try to enter their destination.  A move
   into a cell being vacated in the same step succeeds when the vacating move
   succeeds; closed chains (swaps, rotations) all fail; of several moves into
   one cell only the lowest agent id proceeds;
4. ENTER succeeds when the start cell is still empty after all moves;
5. frozen agents count down; malfunctions starting at t+1 switch on, so the
   controller sees them before choosing the actions for the next step.

An agent entering its target is removed at once and never occupies it.
"""
from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .rail_network import DIRECTION_NAMES, UNREACHABLE, RailNetwork
from .schedule import Visit


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Agent:
    id: int
    start_cell: int
    start_orientation: int
    target_cell: int
    speed_den: int = 1

    @property
    def speed(self) -> float:
        return 1.0 / self.speed_den


@dataclass(frozen=True)
class MalfunctionEvent:
    agent: int
    start_tick: int
    duration: int


class Status(enum.IntEnum):
    OUTSIDE = 0
    ACTIVE = 1
    ARRIVED = 2


class Move(NamedTuple):
    target: int
    direction: int
    remaining: int
    started: int


@dataclass
class AgentState:
    status: Status = Status.OUTSIDE
    cell: Optional[int] = None
    orientation: Optional[int] = None
    move: Optional[Move] = None
    malfunction: int = 0
    arrival_tick: Optional[int] = None
    history: Tuple[Visit, ...] = ()

    @property
    def entered_tick(self) -> Optional[int]:
        return self.history[-1].enter if self.history else None

    def at_decision_point(self) -> bool:
        return self.status == Status.ACTIVE and self.move is None and self.malfunction == 0

    def describe(self) -> str:
        if self.status == Status.OUTSIDE:
            return f"O m{self.malfunction}" if self.malfunction else "O"
        if self.status == Status.ARRIVED:
            return f"D {self.arrival_tick}"
        text = f"A {self.cell} {DIRECTION_NAMES[self.orientation]}"
        if self.move is not None:
            text += f" >{self.move.target} r{self.move.remaining}"
        if self.malfunction:
            text += f" m{self.malfunction}"
        return text


@dataclass
class SimState:
    tick: int
    agents: List[AgentState]
    episode_len: int

    def copy(self) -> "SimState":
        return SimState(self.tick, [copy.copy(a) for a in self.agents], self.episode_len)

    def occupant_map(self) -> Dict[int, int]:
        return {a.cell: i for i, a in enumerate(self.agents) if a.status == Status.ACTIVE}

    @property
    def done(self) -> bool:
        return self.tick >= self.episode_len or all(
            a.status == Status.ARRIVED for a in self.agents)

    def describe(self) -> List[str]:
        return [a.describe() for a in self.agents]


class Action(NamedTuple):
    kind: str  # "WAIT" | "ENTER" | "MOVE"
    direction: Optional[int] = None

    def encode(self) -> str:
        if self.kind == "MOVE":
            return "M" + DIRECTION_NAMES[self.direction]
        return self.kind[0]

    @classmethod
    def decode(cls, text: str) -> "Action":
        if text == "W":
            return WAIT
        if text == "E":
            return ENTER
        if len(text) == 2 and text[0] == "M" and text[1] in DIRECTION_NAMES:
            return cls("MOVE", DIRECTION_NAMES.index(text[1]))
        raise ValueError(f"bad action {text!r}")


WAIT = Action("WAIT")
ENTER = Action("ENTER")


def MOVE(direction: int) -> Action:
    return Action("MOVE", direction)


@dataclass
class StepResult:
    state: SimState
    arrivals: List[Tuple[int, int]] = field(default_factory=list)
    malfunction_starts: List[MalfunctionEvent] = field(default_factory=list)
    rejected_actions: List[Tuple[int, Action, str]] = field(default_factory=list)
    blocked: List[int] = field(default_factory=list)


class Episode:
    """Static episode data: network, agents and the malfunction schedule."""

    def __init__(self, net: RailNetwork, agents: Sequence[Agent],
                 schedule: Sequence[MalfunctionEvent], episode_len: int):
        self.net = net
        self.agents = list(agents)
        self.schedule = sorted(schedule, key=lambda e: (e.start_tick, e.agent))
        self.episode_len = episode_len
        self._by_tick: Dict[int, List[MalfunctionEvent]] = {}
        for ev in self.schedule:
            self._by_tick.setdefault(ev.start_tick, []).append(ev)

    def events_at(self, tick: int) -> List[MalfunctionEvent]:
        return self._by_tick.get(tick, [])


def init_episode(net: RailNetwork, agents: Sequence[Agent], schedule: Sequence[MalfunctionEvent],
                 episode_len: int) -> Tuple[Episode, SimState]:
    problems = []
    for i, ag in enumerate(agents):
        if ag.id != i:
            problems.append(f"agent at position {i} has id {ag.id}")
        if ag.speed_den < 1:
            problems.append(f"agent {i}: speed_den must be >= 1")
        if not (0 <= ag.start_cell < net.num_cells and 0 <= ag.target_cell < net.num_cells):
            problems.append(f"agent {i}: start or target is not a rail cell")
            continue
        if ag.start_cell == ag.target_cell:
            problems.append(f"agent {i}: start equals target")
            continue
        if net.heuristic(ag.target_cell)(ag.start_cell, ag.start_orientation) >= UNREACHABLE:
            problems.append(f"agent {i}: target {net.coords(ag.target_cell)} unreachable from "
                            f"{net.coords(ag.start_cell)} facing {DIRECTION_NAMES[ag.start_orientation]}")
    last_end: Dict[int, int] = {}
    for ev in sorted(schedule, key=lambda e: (e.agent, e.start_tick)):
        if not 0 <= ev.agent < len(agents):
            problems.append(f"malfunction for unknown agent {ev.agent}")
        elif ev.duration < 1 or ev.start_tick < 1:
            problems.append(f"malfunction {ev} needs start_tick >= 1 and duration >= 1")
        elif ev.start_tick < last_end.get(ev.agent, 0):
            problems.append(f"overlapping malfunctions for agent {ev.agent}")
        else:
            last_end[ev.agent] = ev.start_tick + ev.duration
    if problems:
        raise ScenarioError("; ".join(problems))
    episode = Episode(net, agents, schedule, episode_len)
    state = SimState(0, [AgentState() for _ in agents], episode_len)
    return episode, state


def step(episode: Episode, state: SimState, actions: Sequence[Action]) -> StepResult:
    net = episode.net
    new = state.copy()
    t1 = state.tick + 1
    result = StepResult(new)
    agents = new.agents

    frozen = [a.status != Status.ARRIVED and a.malfunction > 0 for a in agents]
    enters: List[int] = []
    for i, (ag, st) in enumerate(zip(episode.agents, agents)):
        if st.status == Status.ARRIVED:
            continue
        action = actions[i] if i < len(actions) else WAIT
        if frozen[i] or action.kind == "WAIT":
            continue
        if action.kind == "ENTER":
            if st.status != Status.OUTSIDE:
                result.rejected_actions.append((i, action, "already entered"))
            else:
                enters.append(i)
        elif action.kind == "MOVE":
            if st.status != Status.ACTIVE:
                result.rejected_actions.append((i, action, "not on the grid"))
            elif st.move is not None:
                result.rejected_actions.append((i, action, "already moving"))
            else:
                dest = [nb for nb, d in net.transitions(st.cell, st.orientation)
                        if d == action.direction]
                if not dest:
                    result.rejected_actions.append((i, action, "illegal direction"))
                else:
                    st.move = Move(dest[0], action.direction, ag.speed_den, state.tick)
        else:
            result.rejected_actions.append((i, action, "unknown action"))

    completing: Dict[int, int] = {}
    for i, st in enumerate(agents):
        if st.move is not None and not frozen[i]:
            rem = max(st.move.remaining - 1, 0)
            st.move = st.move._replace(remaining=rem)
            if rem == 0:
                completing[i] = st.move.target

    occupant = state.occupant_map()
    contenders: Dict[int, List[int]] = {}
    for i, dest in completing.items():
        contenders.setdefault(dest, []).append(i)
    candidate = {dest: min(ids) for dest, ids in contenders.items()}

    outcome: Dict[int, bool] = {}

    def resolve(i: int) -> bool:
        # iterative walk along the vacate chain
        chain = []
        cur = i
        while True:
            if cur in outcome:
                ok = outcome[cur]
                break
            if cur in chain:
                ok = False
                for j in chain[chain.index(cur):]:
                    outcome[j] = False
                break
            chain.append(cur)
            dest = completing[cur]
            if candidate[dest] != cur:
                outcome[cur] = False
                ok = False
                break
            holder = occupant.get(dest)
            if holder is None:
                outcome[cur] = True
                ok = True
                break
            if holder not in completing:
                outcome[cur] = False
                ok = False
                break
            cur = holder
        for j in reversed(chain):
            if j not in outcome:
                outcome[j] = ok
        return outcome[i]

    for i in sorted(completing):
        resolve(i)

    vacated = set()
    filled = set()
    for i in sorted(completing):
        st = agents[i]
        if not outcome[i]:
            result.blocked.append(i)
            continue
        vacated.add(st.cell)
        mv = st.move
        st.move = None
        if mv.target == episode.agents[i].target_cell:
            st.status = Status.ARRIVED
            st.arrival_tick = t1
            st.cell = st.orientation = None
            st.malfunction = 0
            result.arrivals.append((i, t1))
        else:
            st.cell = mv.target
            st.orientation = mv.direction
            filled.add(mv.target)
        st.history = st.history + (Visit(mv.target, mv.direction, t1, mv.started),)

    taken = {c for c in occupant if c not in vacated} | filled
    for i in sorted(enters):
        ag = episode.agents[i]
        st = agents[i]
        if ag.start_cell in taken:
            result.blocked.append(i)
            continue
        taken.add(ag.start_cell)
        st.status = Status.ACTIVE
        st.cell = ag.start_cell
        st.orientation = ag.start_orientation
        st.history = (Visit(ag.start_cell, ag.start_orientation, t1, None),)

    for i, st in enumerate(agents):
        if frozen[i]:
            st.malfunction -= 1
    new.tick = t1
    for ev in episode.events_at(t1):
        st = agents[ev.agent]
        if st.status != Status.ARRIVED:
            st.malfunction = ev.duration
            result.malfunction_starts.append(ev)
    result.blocked.sort()
    return result


FreeFn = Callable[[int, int], bool]


def roll_forward_forced(episode: Episode, state: SimState, agent: int, horizon: int,
                        is_free: Optional[FreeFn] = None) -> Union[Tuple[int, int, int], None]:
    """Earliest (cell, orientation, tick) at which ``agent`` can decide freely.

    Completes any ongoing move and waits out the malfunction.  ``is_free(cell,
    tick)`` says whether the destination can be entered at ``tick``; by
    default other agents are assumed to stay where they are.  Returns None
    (blocked) when the move cannot complete before ``horizon``.
    """
    st = state.agents[agent]
    if st.status != Status.ACTIVE:
        raise ValueError(f"agent {agent} is not on the grid")
    now = state.tick
    if st.move is None:
        t = now + st.malfunction
        return (st.cell, st.orientation, t) if t < horizon else None
    if is_free is None:
        occupied = {a.cell for i, a in enumerate(state.agents)
                    if i != agent and a.status == Status.ACTIVE}
        is_free = lambda cell, tick: cell not in occupied  # noqa: E731
    t = now + st.malfunction + max(st.move.remaining, 1)
    while t < horizon:
        if is_free(st.move.target, t):
            return st.move.target, st.move.direction, t
        t += 1
    return None


def draw_malfunctions(n_agents: int, episode_len: int, p: float, dmin: int, dmax: int,
                      seed: int) -> List[MalfunctionEvent]:
    """Per-agent, per-tick Bernoulli(p) malfunctions with uniform durations."""
    if p <= 0:
        return []
    if dmin < 1 or dmax < dmin:
        raise ValueError("malfunction durations need 1 <= dmin <= dmax")
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0xBAD]))
    events = []
    for a in range(n_agents):
        t = 1
        while t < episode_len:
            if rng.random() < p:
                d = int(rng.integers(dmin, dmax + 1))
                events.append(MalfunctionEvent(a, t, d))
                t += d
            else:
                t += 1
    return events
