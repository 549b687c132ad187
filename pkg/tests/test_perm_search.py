import itertools
from collections import Counter
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from railsched.overlap import OverlapPolicy
from railsched.perm_search import (SearchContext, SearchParams, SearchStats,
                                   generate_permutation, reassign, search)
from railsched.rail_network import E, W
from railsched.scenario import generate_scenario
from railsched.schedule import (EQUAL, WORSE, Assignment, MoveIntervalIndex,
                                OccupancyTable, compare, planning_horizon, score,
                                validate_assignment)
from railsched.simulation import Agent, AgentState, init_episode
from railsched.te_planner import plan_path

from support import line_network


def context(scenario, policy=OverlapPolicy.NO_NESTED):
    H = planning_horizon(scenario.episode_len)
    _, state = init_episode(scenario.net, scenario.agents, [], scenario.episode_len)
    return SearchContext(scenario.net, scenario.agents, state, policy, H), H


def test_params_validate():
    assert SearchParams().num_permutations == 20
    with pytest.raises(ValueError):
        SearchParams(max_runs=0)


def test_slow_agent_always_last():
    agents = [Agent(0, 0, E, 1, 2), Agent(1, 0, E, 1, 1), Agent(2, 0, E, 1, 1)]
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert generate_permutation(agents, rng)[-1] == 0


def test_same_speed_orders_are_uniform():
    agents = [Agent(i, 0, E, 1) for i in range(3)]
    rng = np.random.default_rng(1234)
    draws = 10_000
    counts = Counter(tuple(generate_permutation(agents, rng)) for _ in range(draws))
    assert set(counts) == set(itertools.permutations(range(3)))
    for c in counts.values():
        assert abs(c / draws - 1 / 6) <= 0.02
    chi2 = sum((c - draws / 6) ** 2 / (draws / 6) for c in counts.values())
    assert chi2 < 20.5  # 5 degrees of freedom, p = 0.001


def test_single_agent_reassign_equals_plan_path():
    net = line_network(6)
    agent = Agent(0, 0, E, 5, 2)
    _, state = init_episode(net, [agent], [], 20)
    ctx = SearchContext(net, [agent], state, OverlapPolicy.NO_NESTED, 30)
    got = reassign(Assignment.all_never(1, 30), [0], ctx)
    want = plan_path(net, OccupancyTable(net.num_cells, 30), net.heuristic(5), agent,
                     AgentState(), MoveIntervalIndex(), OverlapPolicy.NO_NESTED, 30)
    assert got.paths[0] == want


def test_corridor_order_decides_priority():
    net = line_network(7)
    agents = [Agent(0, 0, E, 6), Agent(1, 6, W, 0)]
    _, state = init_episode(net, agents, [], 40)
    ctx = SearchContext(net, agents, state, OverlapPolicy.STRICT, 60)
    results = {}
    for perm in ([0, 1], [1, 0]):
        a = reassign(Assignment.all_never(2, 60), perm, ctx)
        assert validate_assignment(net, agents, a) == []
        results[tuple(perm)] = [p.arrival for p in a.paths]
    # whoever goes first runs unimpeded
    assert results[(0, 1)][0] == 7 and results[(1, 0)][1] == 7
    assert results[(0, 1)][1] > 7 and results[(1, 0)][0] > 7


def test_single_agent_search_with_unit_params():
    sc = generate_scenario(12, 12, 2, 1, 5)
    ctx, H = context(sc)
    base = Assignment.all_never(1, H)
    assert search(base, SearchParams(1, 1, 1), ctx) == reassign(base, [0], ctx)


@pytest.mark.parametrize("seed", range(6))
def test_solvable_instances_finish_everyone(seed):
    sc = generate_scenario(20, 20, 2, 6, 40 + seed)
    ctx, H = context(sc)
    got = search(Assignment.all_never(6, H), SearchParams(2, 2, 3, rng_seed=seed), ctx)
    assert score(got).finished == 6
    assert validate_assignment(sc.net, sc.agents, got) == []


@pytest.mark.parametrize("seed", range(8))
def test_enumeration_optimum_is_not_improved(seed):
    n = 2 + seed % 3
    sc = generate_scenario(12, 12, 2, n, 300 + seed)
    ctx, H = context(sc, OverlapPolicy.STRICT)
    cands = [reassign(Assignment.all_never(n, H), list(p), ctx)
             for p in itertools.permutations(range(n))]
    best = max(cands, key=lambda a: score(a).key())
    got = search(best, SearchParams(4, 3, 20, rng_seed=seed), ctx)
    assert compare(score(got), score(best)) == EQUAL


def test_never_worse_and_deterministic():
    for seed in range(10):
        sc = generate_scenario(16, 16, 2, 6, 700 + seed)
        ctx, H = context(sc, OverlapPolicy.STRICT)
        base = reassign(Assignment.all_never(6, H), [5, 4, 3, 2, 1, 0], ctx)
        params = SearchParams(3, 2, 4, rng_seed=seed)
        a = search(base, params, ctx)
        assert compare(score(a), score(base)) != WORSE
        assert search(base, params, ctx) == a


def test_early_stop_when_first_run_does_not_improve():
    sc = generate_scenario(12, 12, 2, 1, 5)
    ctx, H = context(sc)
    best = reassign(Assignment.all_never(1, H), [0], ctx)
    stats = SearchStats()
    search(best, SearchParams(4, 3, 5), ctx, stats)
    assert stats.runs == 1 and stats.permutations == 15 and stats.improvements == 0


def test_improving_run_continues():
    sc = generate_scenario(16, 16, 2, 5, 11)
    ctx, H = context(sc)
    stats = SearchStats()
    search(Assignment.all_never(5, H), SearchParams(4, 2, 2), ctx, stats)
    assert stats.improvements >= 1
    assert stats.runs == min(4, stats.improvements + 1)


def test_cache_does_not_change_results():
    sc = generate_scenario(18, 18, 2, 8, 21)
    ctx, H = context(sc)
    base = reassign(Assignment.all_never(8, H), list(range(8)), ctx)
    rng = np.random.default_rng(3)
    cache = {}
    for _ in range(12):
        perm = list(rng.permutation(8))
        assert reassign(base, perm, ctx, cache=cache) == reassign(base, perm, ctx)


def test_executor_gives_the_same_answer():
    sc = generate_scenario(16, 16, 2, 6, 31)
    ctx, H = context(sc)
    base = Assignment.all_never(6, H)
    params = SearchParams(3, 3, 3, rng_seed=9)
    serial_stats, pool_stats = SearchStats(), SearchStats()
    serial = search(base, params, ctx, serial_stats)
    with ThreadPoolExecutor(3) as pool:
        parallel = search(base, params, ctx, pool_stats, executor=pool)
    assert serial == parallel
    assert serial_stats.permutations == pool_stats.permutations
