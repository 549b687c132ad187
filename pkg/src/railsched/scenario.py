"""Scenario files: a map, agents, a malfunction schedule and the episode length."""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .rail_network import (DIRECTION_NAMES, UNREACHABLE, GenerationError, GeneratorParams,
                           RailNetwork, generate_random_network, load_map, parse_direction)
from .simulation import Agent, MalfunctionEvent, ScenarioError, draw_malfunctions


@dataclass
class MalfunctionGenerator:
    p: float
    dmin: int
    dmax: int
    seed: int

    def draw(self, n_agents: int, episode_len: int) -> List[MalfunctionEvent]:
        return draw_malfunctions(n_agents, episode_len, self.p, self.dmin, self.dmax, self.seed)


@dataclass
class Scenario:
    net: RailNetwork
    agents: List[Agent]
    malfunctions: List[MalfunctionEvent]
    episode_len: int
    generator: Optional[MalfunctionGenerator] = None
    map_ref: Optional[str] = None  # relative map path when the map is not inline
    meta: Dict = field(default_factory=dict)

    def to_json(self, map_ref: Optional[str] = None) -> dict:
        data = {
            "map": map_ref or self.map_ref or self.net.to_text(),
            "agents": [agent_to_json(self.net, a) for a in self.agents],
            "episode_len": self.episode_len,
        }
        if self.generator is not None:
            data["malfunctions"] = {"generator": dict(vars(self.generator))}
        else:
            data["malfunctions"] = [
                {"agent": e.agent, "start_tick": e.start_tick, "duration": e.duration}
                for e in self.malfunctions]
        if self.meta:
            data["meta"] = self.meta
        return data


def agent_to_json(net: RailNetwork, agent: Agent) -> dict:
    return {
        "start": list(net.coords(agent.start_cell)),
        "dir": DIRECTION_NAMES[agent.start_orientation],
        "target": list(net.coords(agent.target_cell)),
        "speed_den": agent.speed_den,
    }


def default_episode_len(width: int, height: int, n_agents: int, n_cities: int) -> int:
    return int(8 * (width + height + n_agents / max(n_cities, 1)))


def _cell(net: RailNetwork, value, what: str) -> int:
    try:
        r, c = int(value[0]), int(value[1])
    except (TypeError, ValueError, IndexError):
        raise ScenarioError(f"{what}: expected [row, col], got {value!r}") from None
    idx = net.cell_index.get((r, c))
    if idx is None:
        raise ScenarioError(f"{what}: ({r},{c}) is not a rail cell")
    return idx


def scenario_from_json(data: dict, base_dir: Union[str, os.PathLike, None] = None) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    for key in ("map", "agents", "episode_len"):
        if key not in data:
            raise ScenarioError(f"scenario is missing {key!r}")
    map_field = data["map"]
    map_ref = None
    if not isinstance(map_field, str):
        raise ScenarioError("'map' must be a path or inline map text")
    if map_field.lstrip().startswith("RAIL"):
        text = map_field
    else:
        map_ref = map_field
        path = FsPath(base_dir or ".") / map_field
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read map {path}: {exc.strerror}") from None
    net = load_map(text)
    episode_len = data["episode_len"]
    if not isinstance(episode_len, int) or episode_len < 1:
        raise ScenarioError("episode_len must be a positive integer")
    agents = []
    for i, row in enumerate(data["agents"]):
        try:
            orientation = parse_direction(row["dir"])
            speed = int(row.get("speed_den", 1))
            agents.append(Agent(i, _cell(net, row["start"], f"agent {i} start"), orientation,
                                _cell(net, row["target"], f"agent {i} target"), speed))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"agent {i}: {exc}") from None
    malf = data.get("malfunctions", [])
    generator = None
    if isinstance(malf, dict):
        g = malf.get("generator")
        if not isinstance(g, dict):
            raise ScenarioError("'malfunctions' object needs a 'generator' entry")
        try:
            generator = MalfunctionGenerator(float(g["p"]), int(g["dmin"]), int(g["dmax"]),
                                             int(g.get("seed", 0)))
            events = generator.draw(len(agents), episode_len)
        except (KeyError, ValueError) as exc:
            raise ScenarioError(f"bad malfunction generator: {exc}") from None
    else:
        try:
            events = [MalfunctionEvent(int(e["agent"]), int(e["start_tick"]), int(e["duration"]))
                      for e in malf]
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"bad malfunction entry: {exc}") from None
    return Scenario(net, agents, events, episode_len, generator, map_ref, data.get("meta", {}))


def load_scenario(path: Union[str, os.PathLike]) -> Scenario:
    path = FsPath(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None
    return scenario_from_json(data, path.parent)


def atomic_write(path: Union[str, os.PathLike], text: str) -> None:
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def place_agents(net: RailNetwork, cities, n_agents: int, seed: int,
                 speed_mix: Optional[Dict[int, float]] = None) -> List[Agent]:
    """Distinct start cells in one station, targets in another, reachable by construction."""
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0xA6E7]))
    mix = speed_mix or {1: 1.0}
    dens = sorted(mix)
    probs = np.array([mix[d] for d in dens], dtype=float)
    probs /= probs.sum()
    station = [[net.cell_index[rc] for rc in city.track_cells() if rc in net.cell_index]
               for city in cities]
    free = {c for cells in station for c in cells}
    if n_agents > len(free):
        raise GenerationError(
            f"{n_agents} agents but only {len(free)} distinct start cells on station tracks")
    agents: List[Agent] = []
    for i in range(n_agents):
        for _attempt in range(200):
            a, b = (int(x) for x in rng.choice(len(cities), size=2, replace=False))
            starts = sorted(c for c in station[a] if c in free)
            if not starts or not station[b]:
                continue
            start = starts[int(rng.integers(len(starts)))]
            target = station[b][int(rng.integers(len(station[b])))]
            heur = net.heuristic(target)
            dirs = [o for o in range(4) if net.transitions(start, o) and heur(start, o) < UNREACHABLE]
            if not dirs:
                continue
            o = dirs[int(rng.integers(len(dirs)))]
            den = int(dens[int(rng.choice(len(dens), p=probs))])
            agents.append(Agent(i, start, o, target, den))
            free.discard(start)
            break
        else:
            raise GenerationError(f"could not place agent {i} with a reachable target")
    return agents


def generate_scenario(width: int, height: int, n_cities: int, n_agents: int, seed: int,
                      malf_p: float = 0.0, malf_dur: Tuple[int, int] = (3, 20),
                      speed_mix: Optional[Dict[int, float]] = None,
                      episode_len: Optional[int] = None,
                      rails_per_city: Optional[int] = None) -> Scenario:
    if rails_per_city is None:
        # roughly 1.5 station cells per agent, between 2 and 4 parallel tracks
        per_track = n_cities * (2 * GeneratorParams.city_half_length + 1)
        rails_per_city = min(4, max(2, math.ceil(1.5 * n_agents / per_track)))
    params = GeneratorParams(width, height, n_cities, rails_per_city=rails_per_city)
    net, cities = generate_random_network(params, seed)
    agents = place_agents(net, cities, n_agents, seed, speed_mix)
    length = episode_len or default_episode_len(width, height, n_agents, n_cities)
    events: List[MalfunctionEvent] = []
    meta = {"seed": seed, "size": [width, height], "cities": n_cities}
    if malf_p > 0:
        gen = MalfunctionGenerator(malf_p, malf_dur[0], malf_dur[1], seed)
        events = gen.draw(n_agents, length)
        meta["malfunction_generator"] = dict(vars(gen))
    return Scenario(net, agents, events, length, None, None, meta)
