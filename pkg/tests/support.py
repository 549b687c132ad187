"""Random instance builders shared by the test modules."""
from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np

from railsched.controller import actions_from_assignment
from railsched.rail_network import (DELTAS, UNREACHABLE, E, W, mask_from_connections,
                                    network_from_grid, opposite)
from railsched.schedule import Assignment, Path, Visit, validate_assignment
from railsched.simulation import Agent, step


def line_network(n: int):
    """1 x n corridor with buffer stops at both ends."""
    row = [mask_from_connections([E])] + [mask_from_connections([E, W])] * (n - 2) + \
        [mask_from_connections([W])]
    return network_from_grid([row])


def random_network(rng: np.random.Generator, width: int, height: int, extra: float = 0.25):
    """Random spanning tree over a random connected patch plus a few extra links."""
    cells = [(int(rng.integers(height)), int(rng.integers(width)))]
    target_size = int(rng.integers(max(2, width * height // 3), width * height + 1))
    in_tree = {cells[0]}
    sides = {cells[0]: set()}
    frontier = []

    def add_frontier(rc):
        for d, (dr, dc) in enumerate(DELTAS):
            nr, nc = rc[0] + dr, rc[1] + dc
            if 0 <= nr < height and 0 <= nc < width:
                frontier.append((rc, d, (nr, nc)))

    add_frontier(cells[0])
    while frontier and len(in_tree) < target_size:
        i = int(rng.integers(len(frontier)))
        src, d, dst = frontier.pop(i)
        if dst in in_tree:
            if rng.random() < extra * 0.2:
                sides[src].add(d)
                sides[dst].add(opposite(d))
            continue
        in_tree.add(dst)
        sides[src].add(d)
        sides.setdefault(dst, set()).add(opposite(d))
        add_frontier(dst)
    grid = [[0] * width for _ in range(height)]
    for (r, c), s in sides.items():
        if s:
            grid[r][c] = mask_from_connections(s)
    return network_from_grid(grid)


def random_start_target(rng, net, speed_choices=(1,)) -> Optional[Tuple[int, int, int, int]]:
    for _ in range(50):
        s = int(rng.integers(net.num_cells))
        g = int(rng.integers(net.num_cells))
        if s == g:
            continue
        heur = net.heuristic(g)
        dirs = [o for o in range(4) if heur(s, o) < UNREACHABLE and net.transitions(s, o)]
        if dirs:
            return s, int(rng.choice(dirs)), g, int(rng.choice(speed_choices))
    return None


def random_walk_path(rng, net, speed: int, horizon: int) -> Tuple[Agent, Path]:
    """A legal timed path wandering from a random start; may or may not finish."""
    while True:
        s = int(rng.integers(net.num_cells))
        dirs = [o for o in range(4) if net.transitions(s, o)]
        if dirs:
            break
    o = int(rng.choice(dirs))
    t = int(rng.integers(1, max(2, horizon // 3)))
    visits = [Visit(s, o, t, None)]
    cell = s
    steps = int(rng.integers(0, 12))
    for _ in range(steps):
        if rng.random() < 0.3:
            t += int(rng.integers(1, 4))
        moves = net.transitions(cell, o)
        if not moves:
            break
        nb, d = moves[int(rng.integers(len(moves)))]
        if t + speed >= horizon - 1:
            break
        visits.append(Visit(nb, d, t + speed, t))
        t += speed
        cell, o = nb, d
    cells = [v.cell for v in visits]
    finish = rng.random() < 0.5 and len(visits) > 1 and cells[-1] not in cells[:-1]
    target = cells[-1] if finish else next(
        (c for c in range(net.num_cells) if c not in cells), cells[-1])
    return Agent(-1, s, visits[0].orientation, target, speed), Path(tuple(visits), finish)


def random_fixed_agents(rng, net, count: int, horizon: int, speeds=(1, 2, 3)):
    """``count`` mutually consistent random paths (ids 0..count-1)."""
    agents: List[Agent] = []
    paths: List[Path] = []
    tries = 0
    while len(agents) < count and tries < 200:
        tries += 1
        ag, path = random_walk_path(rng, net, int(rng.choice(speeds)), horizon)
        ag = Agent(len(agents), ag.start_cell, ag.start_orientation, ag.target_cell, ag.speed_den)
        if path.complete is False and ag.target_cell == path.visits[-1].cell:
            continue
        trial = Assignment(tuple(paths + [path]), horizon)
        if not validate_assignment(net, agents + [ag], trial):
            agents.append(ag)
            paths.append(path)
    return agents, paths


def follow_plan(episode, state, assignment, until_tick: int):
    """Step the simulator along ``assignment`` up to ``until_tick``."""
    while state.tick < until_tick and not state.done:
        result = step(episode, state, actions_from_assignment(assignment, state))
        assert not result.rejected_actions, result.rejected_actions
        state = result.state
    return state
