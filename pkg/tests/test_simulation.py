import numpy as np
import pytest

from railsched.rail_network import E, W, mask_from_connections, network_from_grid
from railsched.simulation import (ENTER, MOVE, WAIT, Action, Agent, MalfunctionEvent, Move,
                                  ScenarioError, Status, draw_malfunctions, init_episode,
                                  roll_forward_forced, step)

from support import line_network, random_network, random_start_target


def run(episode, state, *action_rows):
    results = []
    for row in action_rows:
        res = step(episode, state, row)
        results.append(res)
        state = res.state
    return state, results


def test_single_agent_on_line_arrives():
    net = line_network(5)
    ep, st = init_episode(net, [Agent(0, 0, E, 4)], [], 20)
    st, res = run(ep, st, [ENTER], [MOVE(E)], [MOVE(E)], [MOVE(E)], [MOVE(E)])
    assert res[-1].arrivals == [(0, 5)]
    ep, st = init_episode(net, [Agent(0, 1, E, 4)], [], 20)
    st, res = run(ep, st, [ENTER], [MOVE(E)], [MOVE(E)], [MOVE(E)])
    assert st.agents[0].status == Status.ARRIVED and st.agents[0].arrival_tick == 4


def test_arrived_agent_leaves_the_grid():
    net = line_network(3)
    ep, st = init_episode(net, [Agent(0, 1, E, 2)], [], 10)
    st, _ = run(ep, st, [ENTER], [MOVE(E)])
    assert st.agents[0].cell is None and st.describe() == ["D 2"]
    assert st.done


def test_slow_agent_needs_speed_den_ticks():
    net = line_network(4)
    ep, st = init_episode(net, [Agent(0, 0, E, 3, 3)], [], 20)
    st, _ = run(ep, st, [ENTER], [MOVE(E)], [WAIT], [WAIT])
    assert st.agents[0].cell == 1 and st.agents[0].move is None
    assert st.agents[0].history[-1].move_start == 1 and st.agents[0].history[-1].enter == 4


def test_chain_moves_succeed_in_one_tick():
    net = line_network(5)
    agents = [Agent(0, 1, E, 4), Agent(1, 2, E, 4)]
    ep, st = init_episode(net, agents, [], 20)
    st, res = run(ep, st, [ENTER, ENTER], [MOVE(E), MOVE(E)])
    assert not res[-1].blocked
    assert [a.cell for a in st.agents] == [2, 3]


def test_head_on_swap_is_blocked():
    net = line_network(4)
    agents = [Agent(0, 1, E, 3), Agent(1, 2, W, 0)]
    ep, st = init_episode(net, agents, [], 20)
    st, res = run(ep, st, [ENTER, ENTER], [MOVE(E), MOVE(W)])
    assert res[-1].blocked == [0, 1]
    assert [a.cell for a in st.agents] == [1, 2]
    # the moves stay pending and keep failing
    assert all(a.move is not None and a.move.remaining == 0 for a in st.agents)


def test_lower_id_wins_a_contested_cell():
    net = line_network(4)
    agents = [Agent(0, 0, E, 3), Agent(1, 0, E, 3)]
    ep, st = init_episode(net, agents, [], 20)
    st, res = run(ep, st, [ENTER, ENTER])
    assert res[0].blocked == [1]
    assert st.agents[0].status == Status.ACTIVE and st.agents[1].status == Status.OUTSIDE


def test_zero_agents():
    ep, st = init_episode(line_network(3), [], [], 10)
    assert st.done
    assert step(ep, st, []).state.tick == 1


def test_unreachable_target_is_rejected():
    net = line_network(3)
    # facing W at the west buffer stop forces a reversal, so this one is fine
    init_episode(net, [Agent(0, 0, W, 2)], [], 10)
    split = network_from_grid([[mask_from_connections([E]), mask_from_connections([W]), 0,
                                mask_from_connections([E]), mask_from_connections([W])]])
    with pytest.raises(ScenarioError, match="unreachable"):
        init_episode(split, [Agent(0, 0, E, 3)], [], 10)


def test_bad_malfunction_schedule():
    net = line_network(3)
    with pytest.raises(ScenarioError):
        init_episode(net, [Agent(0, 0, E, 2)], [MalfunctionEvent(0, 0, 3)], 10)
    with pytest.raises(ScenarioError):
        init_episode(net, [Agent(0, 0, E, 2)],
                     [MalfunctionEvent(0, 2, 3), MalfunctionEvent(0, 3, 1)], 10)


def test_malfunction_freezes_agent():
    net = line_network(5)
    ep, st = init_episode(net, [Agent(0, 0, E, 4)], [MalfunctionEvent(0, 2, 3)], 30)
    st, res = run(ep, st, [ENTER], [WAIT])
    assert res[-1].malfunction_starts == [MalfunctionEvent(0, 2, 3)]
    assert st.agents[0].malfunction == 3 and st.describe() == ["A 0 E m3"]
    st, res = run(ep, st, [MOVE(E)], [MOVE(E)], [MOVE(E)])
    assert st.tick == 5 and st.agents[0].cell == 0 and st.agents[0].malfunction == 0
    st, _ = run(ep, st, [MOVE(E)])
    assert st.agents[0].cell == 1


def test_malfunction_pauses_a_move():
    net = line_network(4)
    ep, st = init_episode(net, [Agent(0, 0, E, 3, 3)], [MalfunctionEvent(0, 3, 2)], 30)
    st, _ = run(ep, st, [ENTER], [MOVE(E)], [WAIT])
    assert st.agents[0].move.remaining == 1 and st.agents[0].malfunction == 2
    st, _ = run(ep, st, [WAIT], [WAIT])
    assert st.agents[0].move is not None
    st, _ = run(ep, st, [WAIT])
    assert st.agents[0].cell == 1 and st.tick == 6


def test_rejected_actions_are_reported():
    net = line_network(3)
    ep, st = init_episode(net, [Agent(0, 1, E, 2)], [], 10)
    res = step(ep, st, [MOVE(E)])
    assert res.rejected_actions and res.rejected_actions[0][2] == "not on the grid"
    st = step(ep, st, [ENTER]).state
    assert step(ep, st, [MOVE(W)]).rejected_actions[0][2] == "illegal direction"
    assert step(ep, st, [ENTER]).rejected_actions[0][2] == "already entered"


def test_action_encoding_round_trips():
    for a in (WAIT, ENTER, MOVE(0), MOVE(3)):
        assert Action.decode(a.encode()) == a
    with pytest.raises(ValueError):
        Action.decode("JUMP")


def test_roll_forward_stationary_and_moving():
    net = line_network(5)
    ep, st = init_episode(net, [Agent(0, 0, E, 4, 2)], [MalfunctionEvent(0, 2, 2)], 30)
    st, _ = run(ep, st, [ENTER])
    assert roll_forward_forced(ep, st, 0, 100) == (0, E, 1)
    st, _ = run(ep, st, [MOVE(E)])
    # tick 2, one tick of the move left, frozen for 2
    assert st.agents[0].move.remaining == 1 and st.agents[0].malfunction == 2
    assert roll_forward_forced(ep, st, 0, 100) == (1, E, 5)
    assert roll_forward_forced(ep, st, 0, 100, lambda c, t: t >= 9) == (1, E, 9)
    assert roll_forward_forced(ep, st, 0, 5) is None
    st, _ = run(ep, st, [WAIT], [WAIT], [WAIT])
    assert st.tick == 5 and st.agents[0].cell == 1 and st.agents[0].move is None


def test_draw_malfunctions_is_seeded_and_disjoint():
    a = draw_malfunctions(4, 200, 0.05, 2, 6, 11)
    assert a == draw_malfunctions(4, 200, 0.05, 2, 6, 11)
    assert a != draw_malfunctions(4, 200, 0.05, 2, 6, 12)
    assert draw_malfunctions(4, 200, 0.0, 2, 6, 11) == []
    for agent in range(4):
        evs = [e for e in a if e.agent == agent]
        for x, y in zip(evs, evs[1:]):
            assert x.start_tick + x.duration <= y.start_tick


def test_random_play_keeps_cells_exclusive():
    rng = np.random.default_rng(17)
    for _ in range(25):
        net = random_network(rng, 7, 7)
        agents = []
        for i in range(int(rng.integers(1, 6))):
            st_ = random_start_target(rng, net, (1, 2, 3))
            if st_ is not None:
                s, o, g, T = st_
                agents.append(Agent(len(agents), s, o, g, T))
        malf = draw_malfunctions(len(agents), 60, 0.05, 1, 4, int(rng.integers(1000)))
        ep, state = init_episode(net, agents, malf, 60)
        while not state.done:
            acts = []
            for ag, a in zip(agents, state.agents):
                if a.status == Status.OUTSIDE:
                    acts.append(ENTER if rng.random() < 0.3 else WAIT)
                elif a.status == Status.ACTIVE and a.move is None:
                    dirs = [d for _, d in net.transitions(a.cell, a.orientation)]
                    acts.append(MOVE(int(rng.choice(dirs))) if dirs and rng.random() < 0.7
                                else WAIT)
                else:
                    acts.append(WAIT)
            res = step(ep, state, acts)
            assert not res.rejected_actions
            state = res.state
            cells = [a.cell for a in state.agents if a.status == Status.ACTIVE]
            assert len(cells) == len(set(cells))
        for ag, a in zip(agents, state.agents):
            hist = a.history
            for prev, nxt in zip(hist, hist[1:]):
                assert (nxt.cell, nxt.orientation) in net.transitions(prev.cell, prev.orientation)
                assert nxt.enter - nxt.move_start >= ag.speed_den
                assert nxt.move_start >= prev.enter


def test_move_tuple_fields():
    m = Move(3, E, 2, 7)
    assert (m.target, m.direction, m.remaining, m.started) == (3, E, 2, 7)
