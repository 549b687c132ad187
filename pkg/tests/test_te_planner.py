import numpy as np
import pytest

from railsched.overlap import OverlapPolicy
from railsched.rail_network import E
from railsched.schedule import (MoveIntervalIndex, OccupancyTable, Path, Visit,
                                validate_assignment, Assignment)
from railsched.simulation import (ENTER, MOVE, WAIT, Agent, AgentState, MalfunctionEvent, Status,
                                  init_episode, roll_forward_forced, step)
from railsched.te_planner import PriorityQueue, TENode, forced_start, move_feasible, plan_path

from oracles import DenseWorld, earliest_arrival, latest_entry
from support import line_network, random_fixed_agents, random_network, random_start_target

STRICT, NO_NESTED, OFF = OverlapPolicy.STRICT, OverlapPolicy.NO_NESTED, OverlapPolicy.OFF


def plan(net, agent, paths=(), H=40, policy=NO_NESTED, runtime=None, now=0, stats=None):
    table = OccupancyTable(net.num_cells, H)
    intervals = MoveIntervalIndex()
    for i, p in enumerate(paths):
        table.insert_path(100 + i, p)
        intervals.insert_path(100 + i, p)
    return plan_path(net, table, net.heuristic(agent.target_cell), agent,
                     runtime or AgentState(), intervals, policy, H, now, stats)


def test_empty_line():
    net = line_network(5)
    p = plan(net, Agent(0, 0, E, 4))
    assert p.complete and p.entry_tick == 1 and p.arrival == 5
    assert [v.cell for v in p.visits] == [0, 1, 2, 3, 4]
    assert [v.enter for v in p.visits] == [1, 2, 3, 4, 5]


def test_reserved_cell_delays_entry_rather_than_waiting():
    net = line_network(5)
    blocker = Path((Visit(2, E, 3, None),), False)
    # cell 2 is held from tick 3 to the horizon: no way through
    assert plan(net, Agent(0, 0, E, 4), [blocker]) is None
    passing = Path((Visit(2, E, 3, None), Visit(3, E, 4, 3)), True)
    p = plan(net, Agent(0, 0, E, 4), [passing])
    assert p.arrival == 6
    # the wait happens outside the grid: entry is pushed to 2
    assert p.entry_tick == 2
    assert [v.enter for v in p.visits] == [2, 3, 4, 5, 6]


def test_slow_agent():
    net = line_network(4)
    p = plan(net, Agent(0, 0, E, 3, 3))
    assert p.arrival == 10 and [v.move_start for v in p.visits[1:]] == [1, 4, 7]


def test_arrived_agent_returns_its_history():
    net = line_network(3)
    hist = (Visit(1, E, 1, None), Visit(2, E, 2, 1))
    rt = AgentState(Status.ARRIVED, arrival_tick=2, history=hist)
    p = plan(net, Agent(0, 1, E, 2), runtime=rt, now=5)
    assert p == Path(hist, True)


def test_horizon_too_short():
    net = line_network(5)
    assert plan(net, Agent(0, 0, E, 4), H=5) is None
    assert plan(net, Agent(0, 0, E, 4), H=6).arrival == 5


def test_stats_are_counted():
    stats = {}
    plan(line_network(5), Agent(0, 0, E, 4), stats=stats)
    assert stats["plan_calls"] == 1 and stats["nodes_expanded"] >= 5


class TestMoveFeasible:
    def setup_method(self):
        self.net = line_network(4)
        self.agent = Agent(0, 1, E, 3, 2)
        self.node = TENode(1, E, 4)

    def check(self, other_ms, other_enter, policy):
        table = OccupancyTable(self.net.num_cells, 40)
        idx = MoveIntervalIndex()
        # only the interval index matters here, the table stays empty
        other = Path((Visit(0, E, 1, None), Visit(2, E, other_enter, other_ms),
                      Visit(3, E, other_enter + 1, other_enter)), True)
        idx.insert_path(1, other)
        return move_feasible(table, idx, self.agent, self.node, 2, policy)[0]

    def test_strict_rejects_overlap(self):
        # candidate [4, 6) against [3, 5)
        assert not self.check(3, 5, STRICT)

    def test_no_nested(self):
        agent = Agent(0, 1, E, 3, 2)
        table = OccupancyTable(self.net.num_cells, 40)
        idx = MoveIntervalIndex()
        idx.insert_path(1, Path((Visit(0, E, 1, None), Visit(2, E, 7, 3)), True))
        # candidate [4, 6) lies inside [3, 7)
        assert not move_feasible(table, idx, agent, TENode(1, E, 4), 2, NO_NESTED)[0]
        # candidate [4, 8) crosses [3, 7); the cell itself is only locked at tick 7
        slow = Agent(0, 1, E, 3, 4)
        assert move_feasible(table, idx, slow, TENode(1, E, 4), 2, NO_NESTED)[0]
        assert move_feasible(table, idx, agent, TENode(1, E, 4), 2, OFF)[0]

    def test_off_ignores_intervals(self):
        assert self.check(3, 5, OFF)

    def test_occupied_destination(self):
        table = OccupancyTable(self.net.num_cells, 40)
        table.insert_path(1, Path((Visit(2, E, 6, None),), False))
        ok, interval = move_feasible(table, MoveIntervalIndex(), self.agent, self.node, 2, OFF)
        assert not ok and (interval.t1, interval.t2) == (4, 6)


def test_forced_start_matches_roll_forward():
    rng = np.random.default_rng(8)
    checked = 0
    for _ in range(60):
        net = line_network(int(rng.integers(4, 8)))
        T = int(rng.integers(1, 4))
        m_start = int(rng.integers(2, 5))
        dur = int(rng.integers(1, 4))
        agent = Agent(0, 0, E, net.num_cells - 1, T)
        ep, st = init_episode(net, [agent], [MalfunctionEvent(0, m_start, dur)], 60)
        st = step(ep, st, [ENTER]).state
        st = step(ep, st, [MOVE(E)]).state
        for _ in range(int(rng.integers(0, 4))):
            st = step(ep, st, [WAIT]).state
        rt = st.agents[0]
        if rt.status != Status.ACTIVE:
            continue
        table = OccupancyTable(net.num_cells, 60)
        prefix, node = forced_start(table, agent, rt, st.tick, 60)
        expect = roll_forward_forced(ep, st, 0, 60, lambda c, t: table.is_free(c, t, t + 1))
        assert (node.cell, node.orientation, node.tick) == expect
        checked += 1
    assert checked > 30


@pytest.mark.parametrize("policy", ["strict", "no-nested", "off"])
def test_matches_exhaustive_search(policy):
    rng = np.random.default_rng({"strict": 1, "no-nested": 2, "off": 3}[policy])
    pol = OverlapPolicy.parse(policy)
    for _ in range(25):
        net = random_network(rng, int(rng.integers(3, 7)), int(rng.integers(3, 7)))
        H = 30
        others, paths = random_fixed_agents(rng, net, int(rng.integers(0, 4)), H)
        pick = random_start_target(rng, net, (1, 2))
        if pick is None:
            continue
        s, o, g, T = pick
        agent = Agent(len(others), s, o, g, T)
        world = DenseWorld(paths, net.num_cells, H)
        want = earliest_arrival(net, world, s, o, g, T, policy, H)
        got = plan(net, agent, paths, H, pol)
        if want is None:
            assert got is None
            continue
        assert got is not None and got.arrival == want
        assert got.entry_tick == latest_entry(net, world, s, o, g, T, policy, H, want)
        assert not validate_assignment(net, others + [agent],
                                       Assignment(tuple(paths) + (got,), H))


def test_priority_queue_is_fifo_on_ties():
    q = PriorityQueue()
    q.push((1, 0), "a")
    q.push((0, 5), "b")
    q.push((1, 0), "c")
    assert len(q) == 3
    assert [q.pop()[1] for _ in range(3)] == ["b", "a", "c"]
