"""Episode driver: plan at tick 0, follow the plan, repair and re-search after malfunctions."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace
from typing import IO, Dict, List, Optional

import numpy as np

from .overlap import OverlapPolicy
from .perm_search import SearchContext, SearchParams, SearchStats, search
from .plan_repair import build_graph, repair
from .scenario import Scenario
from .schedule import Assignment, planning_horizon, score_arrivals, validate_assignment
from .simulation import ENTER, MOVE, WAIT, Action, SimState, Status, init_episode, step

log = logging.getLogger(__name__)


class ControllerAssertion(AssertionError):
    """The simulator refused an action derived from a validated plan."""


@dataclass(frozen=True)
class ModeConfig:
    initial: SearchParams = SearchParams(max_runs=4, num_threads=3, num_permutations=20)
    full: SearchParams = SearchParams(max_runs=4, num_threads=3, num_permutations=10)
    restricted: SearchParams = SearchParams(max_runs=2, num_threads=3, num_permutations=2)
    counter_threshold: int = 3

    def __post_init__(self):
        if self.counter_threshold < 1:
            raise ValueError("counter_threshold must be positive")


@dataclass
class RunReport:
    arrivals: List[Optional[int]]
    completion: float
    score: dict
    repairs: List[dict]
    counters: Dict[str, int]
    wall_time: float
    episode_len: int
    horizon: int
    policy: str
    seed: int

    def to_json(self, include_time: bool = True) -> dict:
        data = {
            "policy": self.policy,
            "seed": self.seed,
            "episode_len": self.episode_len,
            "horizon": self.horizon,
            "arrivals": self.arrivals,
            "completion": self.completion,
            "score": self.score,
            "counters": self.counters,
            "repairs": self.repairs,
        }
        if include_time:
            data["wall_time"] = round(self.wall_time, 3)
        return data

    def dumps(self, include_time: bool = True) -> str:
        return json.dumps(self.to_json(include_time), indent=2, sort_keys=True) + "\n"


def actions_from_assignment(assignment: Assignment, state: SimState) -> List[Action]:
    """Actions that make the simulator follow ``assignment`` during the next step."""
    tick = state.tick
    actions = []
    for path, st in zip(assignment.paths, state.agents):
        if st.status == Status.OUTSIDE:
            actions.append(ENTER if path.visits and path.entry_tick == tick + 1 else WAIT)
        elif st.status == Status.ACTIVE and st.move is None and st.malfunction == 0:
            k = len(st.history)
            if k < len(path.visits) and path.visits[k].move_start == tick:
                actions.append(MOVE(path.visits[k].orientation))
            else:
                actions.append(WAIT)
        else:
            actions.append(WAIT)
    return actions


def diverged(assignment: Assignment, state: SimState) -> List[int]:
    """Agents whose runtime position disagrees with the plan."""
    tick = state.tick
    bad = []
    for a, (path, st) in enumerate(zip(assignment.paths, state.agents)):
        n = len(st.history)
        if path.visits[:n] != st.history:
            bad.append(a)
        elif st.status == Status.OUTSIDE:
            if path.visits and path.entry_tick <= tick:
                bad.append(a)
        elif st.status == Status.ACTIVE:
            if n < len(path.visits) and path.visits[n].enter <= tick:
                bad.append(a)
    return bad


def _finished(assignment: Assignment):
    arr = [p.arrival for p in assignment.paths if p.arrival is not None]
    return len(arr), max(arr) if arr else None


def _search_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed & (2**64 - 1), index]).generate_state(1, np.uint64)[0])


def run_episode(scenario: Scenario, config: ModeConfig = ModeConfig(),
                policy: OverlapPolicy = OverlapPolicy.NO_NESTED, seed: int = 0,
                exponent: float = 1.0, time_budget: Optional[float] = None,
                replay: Optional[IO[str]] = None, executor=None,
                check_plans: bool = False) -> RunReport:
    """Drive one episode to the end and report what happened."""
    started = time.perf_counter()
    episode, state = init_episode(scenario.net, scenario.agents, scenario.malfunctions,
                                  scenario.episode_len)
    net, agents = scenario.net, scenario.agents
    H = planning_horizon(scenario.episode_len)
    stats = SearchStats()
    counters = {"searches_initial": 0, "searches_full": 0, "searches_restricted": 0,
                "repairs": 0, "divergence_repairs": 0, "deadlocked": 0}
    searches = 0

    def run_search(base: Assignment, mode: str, params: SearchParams) -> Assignment:
        nonlocal searches
        params = replace(params, policy=policy, exponent=exponent,
                         rng_seed=_search_seed(seed, searches))
        searches += 1
        counters[f"searches_{mode}"] += 1
        ctx = SearchContext(net, agents, state, policy, H, exponent)
        result = search(base, params, ctx, stats, executor)
        if check_plans:
            _check(result)
        return result

    def _check(assignment: Assignment) -> None:
        problems = validate_assignment(net, agents, assignment)
        if problems:
            raise ControllerAssertion(f"tick {state.tick}: invalid plan: {problems[:3]}")

    if replay is not None:
        replay.write(json.dumps({"tick": 0, "status": state.describe()}) + "\n")
    assignment = run_search(Assignment.all_never(len(agents), H), "initial", config.initial)
    counter = 0
    events: List[dict] = []
    while not state.done:
        actions = actions_from_assignment(assignment, state)
        result = step(episode, state, actions)
        if result.rejected_actions:
            raise ControllerAssertion(
                f"tick {state.tick}: simulator rejected {result.rejected_actions}")
        state = result.state
        if replay is not None:
            replay.write(json.dumps({"tick": state.tick,
                                     "actions": [a.encode() for a in actions],
                                     "status": state.describe()}) + "\n")
        if state.done:
            break
        reason = None
        if result.malfunction_starts:
            reason = "malfunction"
        elif diverged(assignment, state):
            reason = "divergence"
        if reason is None:
            continue
        before = _finished(assignment)
        outcome = repair(build_graph(assignment), state, agents, policy, H)
        assignment = outcome.assignment
        after = _finished(assignment)
        degraded = after[0] < before[0] or (
            after[1] is not None and (before[1] is None or after[1] > before[1]))
        if reason == "malfunction":
            counters["repairs"] += 1
        else:
            counters["divergence_repairs"] += 1
        counters["deadlocked"] += len(outcome.deadlocked)
        if degraded:
            counter += 1
        mode = "restricted"
        if counter > config.counter_threshold:
            mode = "full"
            counter = 0
            if time_budget is not None and time.perf_counter() - started > time_budget:
                mode = "restricted"
        event = {
            "tick": state.tick,
            "reason": reason,
            "agents": sorted({e.agent for e in result.malfunction_starts}),
            "degraded": degraded,
            "counter": counter,
            "mode": mode,
            **outcome.to_json(),
        }
        assignment = run_search(assignment, mode, config.full if mode == "full" else config.restricted)
        event["score_after_search"] = _finished(assignment)[0]
        events.append(event)
        log.debug("repair event %s", event)

    arrivals = [st.arrival_tick for st in state.agents]
    n = len(agents)
    on_time = sum(1 for t in arrivals if t is not None and t <= scenario.episode_len)
    completion = on_time / n if n else 1.0
    counters.update(stats.to_json())
    counters["searches"] = searches
    final = score_arrivals(arrivals, exponent, H)
    return RunReport(arrivals, completion, final.to_json(), events, counters,
                     time.perf_counter() - started, scenario.episode_len, H, policy.value, seed)
