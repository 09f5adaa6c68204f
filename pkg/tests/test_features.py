import numpy as np
import pytest

import config
from adg import advance_clock, build_adg, record_event
from executor import ObstacleEvent, ScenarioConfig, run_scenario, sample_obstacle
from features import (FEATURE_COUNT, FEATURE_NAMES, ProgressState, extract_features,
                      progress_state, window_sets)
from grids import open_grid, solved
from mapf_core import cost_summary, generate_instance
from oracles import replay_features
from planner import solve_1robust


def as_dict(vector):
    return dict(zip(FEATURE_NAMES, vector))


def apply_events(adg, events):
    for node_id, kind, time in events:
        record_event(adg, node_id, kind, time)
    return adg


def test_feature_names():
    assert FEATURE_COUNT == 42
    assert len(set(FEATURE_NAMES)) == 42
    assert FEATURE_NAMES[:3] == ['map_height', 'map_width', 'agents_count']
    assert FEATURE_NAMES[12] == 'highest_action_delay_n1'
    assert FEATURE_NAMES[-2:] == ['highest_slack_increase', 'waiting_agents']


def test_fresh_plan(lab_grid):
    instance = generate_instance(lab_grid, 5, 2)
    sol = solve_1robust(instance)
    values = as_dict(extract_features(build_adg(sol), instance, sol, 0.0))
    assert values['map_height'] == 13.0
    assert values['map_width'] == 14.0
    assert values['agents_count'] == 5.0
    assert values['planned_soc'] == cost_summary(sol).soc
    assert values['unfinished_agents'] == 5.0
    assert values['progress_gap'] == 0.0
    assert values['waiting_agents'] == 5.0
    delays = [value for name, value in values.items() if 'delay' in name or 'slack' in name]
    assert delays == [0.0] * len(delays)


def test_single_agent_delayed_action():
    instance, sol = solved(open_grid(4, 1), [[(0, 0), (1, 0), (2, 0), (3, 0)]])
    adg = apply_events(build_adg(sol), [((0, 1), 'started', 0.0), ((0, 1), 'completed', 3.0),
                                        ((0, 2), 'started', 3.0)])
    advance_clock(adg, 3.5)
    values = as_dict(extract_features(adg, instance, sol, 3.5))
    assert values['highest_plan_delay'] == 2.0
    assert values['highest_exp_plan_delay'] == 2.0
    for n in config.FEATURE_WINDOWS:
        assert values[f'highest_action_delay_n{n}'] == 2.0
        assert values[f'total_action_delay_n{n}'] == 2.0
    assert values['highest_exp_action_delay_n1'] == 0.0
    assert values['highest_exp_action_delay_n3'] == 2.0
    assert values['waiting_agents'] == 0.0
    assert values['unfinished_agents'] == 1.0


def test_three_delayed_agents():
    paths = [[(x, k) for x in range(4)] for k in range(3)]
    instance, sol = solved(open_grid(4, 3), paths)
    events = [
        ((0, 1), 'started', 0.0), ((1, 1), 'started', 0.0), ((2, 1), 'started', 0.0),
        ((0, 1), 'completed', 1.5), ((0, 2), 'started', 1.5),
        ((1, 1), 'completed', 2.0), ((1, 2), 'started', 2.0),
        ((0, 2), 'completed', 3.0), ((2, 1), 'completed', 3.0), ((2, 2), 'started', 3.0),
        ((1, 2), 'completed', 5.0),
        ((2, 2), 'completed', 7.0),
    ]
    adg = apply_events(build_adg(sol), events)
    values = as_dict(extract_features(adg, instance, sol, 7.0))
    assert values['total_plan_delay'] == 9.0
    assert values['highest_plan_delay'] == 5.0
    assert values['total_action_delay_n1'] == 5.5
    assert values['highest_action_delay_n1'] == 3.0
    assert values['total_action_delay_n3'] == 9.0
    assert values['highest_action_delay_n3'] == 5.0
    assert values['total_exp_plan_delay'] == 9.0
    assert values['waiting_agents'] == 3.0
    assert values['progress_gap'] == 0.0
    assert values['highest_slack_increase'] == 0.0


def test_blocked_leader_snapshot(corridor_pair):
    instance, sol = corridor_pair
    result = run_scenario(ScenarioConfig(solution=sol, instance=instance, runtime_clock='work',
                                         obstacle=ObstacleEvent((3, 0), 0.0, 3.0), replan_time=2.0))
    values = as_dict(extract_features(result.snapshot, instance, sol, 2.0))
    assert [values[name] for name in FEATURE_NAMES[:8]] == [1.0, 4.0, 2.0, 3.0, 2.0, 2.0, 2.0, 1.0]
    assert values['highest_plan_delay'] == 0.0
    assert values['total_plan_delay'] == 0.0
    assert values['highest_exp_plan_delay'] == pytest.approx(1.1)
    assert values['total_exp_plan_delay'] == pytest.approx(1.1)
    for n in config.FEATURE_WINDOWS:
        assert values[f'highest_action_delay_n{n}'] == 0.0
        assert values[f'highest_exp_action_delay_n{n}'] == pytest.approx(1.1)
        assert values[f'total_exp_action_delay_n{n}'] == pytest.approx(1.1)
    assert values['highest_slack_increase'] == pytest.approx(1.1)
    assert values['waiting_agents'] == 1.0


@pytest.mark.parametrize('p, n, expected', [
    (0, 3, []),
    (2, 5, [1, 2]),
    (10, 3, [8, 9, 10]),
    (4, 1, [4]),
])
def test_window_sets(p, n, expected):
    state = ProgressState((p,), (p,), (10,))
    finished, assigned = window_sets(state, 0, 0.0, n)
    assert finished == expected
    assert assigned == expected


def test_window_sets_rejects_empty_window():
    with pytest.raises(ValueError):
        window_sets(ProgressState((1,), (1,), (3,)), 0, 0.0, 0)


def test_progress_state_validation():
    with pytest.raises(ValueError):
        ProgressState((2,), (1,), (3,))
    with pytest.raises(ValueError):
        ProgressState((0,), (2,), (3,))


def test_progress_state_counts(corridor_pair):
    _, sol = corridor_pair
    adg = apply_events(build_adg(sol), [((0, 1), 'started', 0.0), ((1, 1), 'started', 0.0),
                                        ((1, 1), 'completed', 1.0)])
    state = progress_state(adg)
    assert state.finished == (0, 1)
    assert state.assigned == (1, 1)
    assert state.plan_lengths == (1, 2)


def replay_cases(lab_grid, count):
    seed = 0
    cases = 0
    while cases < count:
        instance = generate_instance(lab_grid, 6, seed)
        sol = solve_1robust(instance)
        seed += 1
        if cost_summary(sol).makespan < 6:
            continue
        obstacle = sample_obstacle(sol, seed)
        for offset in (-1.0, 0.5, 2.3):
            t = max(0.0, round(obstacle.appear + offset, 1))
            yield instance, sol, obstacle, t
        cases += 1


def check_against_replay(instance, sol, obstacle, t):
    result = run_scenario(ScenarioConfig(solution=sol, instance=instance, obstacle=obstacle,
                                         replan_time=t, runtime_clock='work'))
    assert result.snapshot_time == t
    ours = extract_features(result.snapshot, instance, sol, t)
    expected = replay_features(sol.paths, (instance.grid.height, instance.grid.width), result.trace, t)
    np.testing.assert_allclose(ours, expected, rtol=0, atol=1e-9)


def test_features_match_trace_replay(lab_grid):
    for case in replay_cases(lab_grid, 4):
        check_against_replay(*case)


@pytest.mark.slow
def test_features_match_trace_replay_sweep(lab_grid):
    for case in replay_cases(lab_grid, 20):
        check_against_replay(*case)
