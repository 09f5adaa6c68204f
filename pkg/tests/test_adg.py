import pytest

from adg import (COMPLETED, PENDING, RUNNING, AdgConstructionError, AdgStateError, MonotonicityError,
                 advance_clock, build_adg, dump_adg, edge_slacks, executable_actions, next_node,
                 propagate, record_event)
from mapf_core import Solution


def run_on_schedule(adg, until=None):
    """Start every executable action and complete it one second later."""
    t = 0.0
    while not adg.is_finished() and (until is None or t < until):
        ready = sorted(executable_actions(adg))
        for node_id in ready:
            record_event(adg, node_id, 'started', t)
        t += 1.0
        for node_id in ready:
            record_event(adg, node_id, 'completed', t)
    return adg


def estimates(adg):
    return {key: (node.est_start, node.est_completion) for key, node in adg.nodes.items()}


CROSSING_FIRST = [[(0, 1), (1, 1), (2, 1)], [(1, 0), (1, 0), (1, 0), (1, 1), (1, 2)]]
CROSSING_SECOND = [[(0, 1), (0, 1), (0, 1), (1, 1), (2, 1)], [(1, 0), (1, 1), (1, 2)]]


def test_corridor_pair_edges(corridor_pair):
    _, sol = corridor_pair
    adg = build_adg(sol)
    assert adg.type2_edges == [((0, 1), (1, 2))]
    assert [(e.kind, e.source, e.target) for e in adg.edges] == [
        ('type2', (0, 1), (1, 2)), ('type1', (1, 1), (1, 2))]


def test_single_agent_has_only_type1():
    adg = build_adg(Solution([[(0, 0), (1, 0), (1, 1), (1, 2)]]))
    assert adg.type2_edges == []
    assert len(adg.edges) == 2


@pytest.mark.parametrize('paths, edge', [
    (CROSSING_FIRST, ((0, 2), (1, 3))),
    (CROSSING_SECOND, ((1, 2), (0, 3))),
])
def test_crossing_edge_follows_plan_order(paths, edge):
    adg = build_adg(Solution(paths))
    assert adg.type2_edges == [edge]
    run_on_schedule(adg)
    for node in adg.nodes.values():
        assert node.actual_start == node.planned_start
        assert node.actual_completion == node.planned_completion


def test_dominated_edges_are_pruned():
    # agent 1 enters (1,0) after agent 0 leaves it, then (0,0); the (0,0) dependency is implied
    paths = [[(0, 0), (1, 0), (2, 0)], [(1, 2), (1, 1), (1, 0), (0, 0)]]
    adg = build_adg(Solution(paths))
    assert adg.type2_edges == [((0, 2), (1, 2))]


def test_independent_edges_are_kept():
    paths = [[(0, 0), (1, 0), (2, 0), (3, 0)], [(0, 1), (0, 0), (0, 0), (1, 0), (2, 0)]]
    adg = build_adg(Solution(paths))
    assert adg.type2_edges == [((0, 1), (1, 1)), ((0, 2), (1, 3)), ((0, 3), (1, 4))]


def test_swap_plan_is_cyclic():
    with pytest.raises(AdgConstructionError):
        build_adg(Solution([[(0, 0), (1, 0)], [(1, 0), (0, 0)]]))


def test_shared_resting_vertex_rejected():
    with pytest.raises(AdgConstructionError):
        build_adg(Solution([[(0, 0)], [(0, 0)]]))


def test_initial_frontier(corridor_pair):
    _, sol = corridor_pair
    adg = build_adg(sol)
    assert executable_actions(adg) == {(0, 1), (1, 1)}
    for node in adg.nodes.values():
        assert node.status == PENDING
        assert node.actual_start is None and node.actual_completion is None
        assert (node.est_start, node.est_completion) == (node.planned_start, node.planned_completion)


def test_gated_until_source_completes(corridor_pair):
    _, sol = corridor_pair
    adg = build_adg(sol)
    record_event(adg, (0, 1), 'started', 0.0)
    record_event(adg, (1, 1), 'started', 0.0)
    record_event(adg, (1, 1), 'completed', 1.0)
    assert executable_actions(adg) == set()
    assert next_node(adg, 1) == (1, 2)
    record_event(adg, (0, 1), 'completed', 1.5)
    assert executable_actions(adg) == {(1, 2)}
    assert adg.satisfied_type2 == {((0, 1), (1, 2))}


def test_all_completed_has_no_frontier(corridor_pair):
    _, sol = corridor_pair
    adg = run_on_schedule(build_adg(sol))
    assert adg.is_finished()
    assert executable_actions(adg) == set()
    assert next_node(adg, 0) is None


def test_on_schedule_keeps_planned_estimates(lab_grid):
    from mapf_core import generate_instance
    from planner import solve_1robust
    sol = solve_1robust(generate_instance(lab_grid, 5, 4))
    adg = build_adg(sol)
    planned = estimates(adg)
    run_on_schedule(adg)
    assert estimates(adg) == planned


def test_delay_shifts_chain():
    adg = build_adg(Solution([[(0, 0), (1, 0), (2, 0), (3, 0), (4, 0)]]))
    record_event(adg, (0, 1), 'started', 0.0)
    record_event(adg, (0, 1), 'completed', 6.0)
    for i in (2, 3, 4):
        assert adg.nodes[(0, i)].est_completion == adg.nodes[(0, i)].planned_completion + 5.0


def test_leader_delay_reaches_follower_through_type2(corridor_pair):
    _, sol = corridor_pair
    adg = build_adg(sol)
    planned_start = adg.nodes[(1, 2)].est_start
    record_event(adg, (0, 1), 'started', 0.0)
    record_event(adg, (0, 1), 'completed', 3.0)
    assert adg.nodes[(1, 2)].est_start == planned_start + 2.0


def test_corridor_pair_slack(corridor_pair):
    _, sol = corridor_pair
    adg = build_adg(sol)
    slacks = edge_slacks(adg)
    assert slacks == {((0, 1), (1, 2)): (0.0, 0.0)}


def test_source_delay_increases_slack():
    adg = build_adg(Solution(CROSSING_FIRST))
    record_event(adg, (0, 1), 'started', 0.0)
    record_event(adg, (1, 1), 'started', 0.0)
    record_event(adg, (1, 1), 'completed', 1.0)
    record_event(adg, (1, 2), 'started', 1.0)
    record_event(adg, (1, 2), 'completed', 2.0)
    record_event(adg, (0, 1), 'completed', 4.0)
    planned, expected = edge_slacks(adg)[((0, 2), (1, 3))]
    assert expected - planned == 3.0


def test_first_action_slack_uses_start_time():
    # agent 1 enters the vacated cell with its very first action
    adg = build_adg(Solution([[(1, 0), (2, 0)], [(0, 0), (1, 0)]]), start_time=4.0)
    assert adg.type2_edges == [((0, 1), (1, 1))]
    assert edge_slacks(adg)[((0, 1), (1, 1))] == (1.0, 1.0)


def test_event_errors(corridor_pair):
    _, sol = corridor_pair
    adg = build_adg(sol)
    with pytest.raises(AdgStateError):
        record_event(adg, (1, 2), 'started', 0.0)
    with pytest.raises(AdgStateError):
        record_event(adg, (0, 1), 'completed', 0.0)
    with pytest.raises(AdgStateError):
        record_event(adg, (0, 1), 'paused', 0.0)
    record_event(adg, (0, 1), 'started', 2.0)
    with pytest.raises(MonotonicityError):
        record_event(adg, (1, 1), 'started', 1.0)
    with pytest.raises(AdgStateError):
        record_event(adg, (0, 1), 'started', 2.0)


def test_status_transitions(corridor_pair):
    _, sol = corridor_pair
    adg = build_adg(sol)
    record_event(adg, (0, 1), 'started', 0.0)
    node = adg.nodes[(0, 1)]
    assert node.status == RUNNING
    assert (node.actual_start, node.actual_completion) == (0.0, None)
    assert node.est_completion == 1.0
    record_event(adg, (0, 1), 'completed', 1.25)
    assert node.status == COMPLETED
    assert node.est_completion == node.actual_completion == 1.25


def test_overdue_running_estimate(corridor_pair):
    _, sol = corridor_pair
    adg = build_adg(sol)
    record_event(adg, (0, 1), 'started', 0.0)
    record_event(adg, (1, 1), 'started', 0.0)
    record_event(adg, (1, 1), 'completed', 2.0)
    assert adg.nodes[(0, 1)].est_completion == pytest.approx(2.1)
    assert adg.nodes[(1, 2)].est_start == pytest.approx(2.1)
    advance_clock(adg, 5.0)
    assert adg.nodes[(0, 1)].est_completion == pytest.approx(5.1)
    assert adg.nodes[(1, 2)].est_completion == pytest.approx(6.1)
    with pytest.raises(MonotonicityError):
        advance_clock(adg, 1.0)


def test_propagation_is_idempotent(lab_grid):
    from mapf_core import generate_instance
    from planner import solve_1robust
    adg = build_adg(solve_1robust(generate_instance(lab_grid, 6, 9)))
    t = 0.0
    for _ in range(3):
        ready = sorted(executable_actions(adg))
        for node_id in ready:
            record_event(adg, node_id, 'started', t)
        t += 1.7
        for node_id in ready[::2]:
            record_event(adg, node_id, 'completed', t)
        for node_id in ready[1::2]:
            record_event(adg, node_id, 'completed', t + 0.4)
        t += 0.4
    before = estimates(adg)
    assert estimates(propagate(adg)) == before
    for node_id, node in adg.nodes.items():
        if node.status == PENDING:
            preds = adg.predecessors(node_id)
            bound = max((adg.nodes[p].est_completion for p in preds), default=adg.start_time)
            assert node.est_start == bound


def test_copy_is_independent(corridor_pair):
    _, sol = corridor_pair
    adg = build_adg(sol)
    record_event(adg, (0, 1), 'started', 0.0)
    snapshot = adg.copy()
    record_event(adg, (0, 1), 'completed', 1.0)
    assert snapshot.nodes[(0, 1)].status == RUNNING
    assert snapshot.running == {(0, 1)}
    assert adg.running == set()


def test_dump_format(corridor_pair):
    _, sol = corridor_pair
    adg = build_adg(sol)
    record_event(adg, (0, 1), 'started', 0.0)
    assert dump_adg(adg).splitlines() == [
        '0 1 2,0 3,0 running 0 1 0 1 0 -',
        '1 1 0,0 1,0 pending 0 1 0 1 - -',
        '1 2 1,0 2,0 pending 1 2 1 2 - -',
        'type2 0:1 1:2',
        'type1 1:1 1:2',
    ]


def test_start_time_offsets_plan():
    adg = build_adg(Solution([[(0, 0), (1, 0), (2, 0)]]), start_time=7.0)
    node = adg.nodes[(0, 2)]
    assert (node.planned_start, node.planned_completion) == (8.0, 9.0)
    assert adg.last_event_time == 7.0
