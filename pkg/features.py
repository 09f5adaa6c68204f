"""
Replanning features: a fixed 42-value description of an execution at time t.

Values are read from an ADG snapshot taken at t. The vector mixes static
instance/plan properties with execution progress, plan delays, windowed
action delays and the largest slack increase over unmet dependencies.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

import config
from adg import COMPLETED, PENDING, Adg, NodeId, edge_slacks
from mapf_core import MapfInstance, Solution, cost_summary

logger = logging.getLogger(__name__)

STATIC_FEATURES = [
    'map_height', 'map_width', 'agents_count', 'planned_soc', 'planned_makespan',
    'replan_time', 'unfinished_agents', 'progress_gap',
    'highest_plan_delay', 'highest_exp_plan_delay', 'total_plan_delay', 'total_exp_plan_delay',
]
WINDOW_FEATURES = [
    'highest_action_delay', 'highest_exp_action_delay', 'total_action_delay', 'total_exp_action_delay',
]
FEATURE_NAMES = (
    STATIC_FEATURES
    + [f"{name}_n{n}" for name in WINDOW_FEATURES for n in config.FEATURE_WINDOWS]
    + ['highest_slack_increase', 'waiting_agents']
)
FEATURE_COUNT = len(FEATURE_NAMES)


@dataclass(frozen=True)
class ProgressState:
    """Per agent: p^k finished actions and e^k assigned actions (1-based indices of the last)."""
    finished: Tuple[int, ...]
    assigned: Tuple[int, ...]
    plan_lengths: Tuple[int, ...]

    def __post_init__(self):
        for p, e, length in zip(self.finished, self.assigned, self.plan_lengths):
            if not 0 <= p <= e <= length or e - p > 1:
                raise ValueError(f"inconsistent progress p={p}, e={e}, |plan|={length}")


def progress_state(adg: Adg) -> ProgressState:
    finished, assigned = [], []
    for ids in adg.agent_nodes:
        statuses = [adg.nodes[node_id].status for node_id in ids]
        finished.append(sum(1 for status in statuses if status == COMPLETED))
        assigned.append(sum(1 for status in statuses if status != PENDING))
    return ProgressState(tuple(finished), tuple(assigned),
                         tuple(len(ids) for ids in adg.agent_nodes))


def window_sets(state: ProgressState, k: int, t: float, n: int) -> Tuple[List[int], List[int]]:
    """
    Action indices of P(k, t, n) and E(k, t, n).

    ``t`` is implied by ``state``; it is kept for symmetry with the feature
    definitions.
    """
    if n < 1:
        raise ValueError(f"window size must be >= 1, got {n}")
    p, e = state.finished[k], state.assigned[k]
    finished = list(range(max(1, p - n + 1), p + 1))
    assigned = list(range(max(1, e - n + 1), e + 1))
    return finished, assigned


def _max_or_zero(values):
    return max(values) if values else 0.0


def extract_features(adg: Adg, instance: MapfInstance, sol: Solution, t: float) -> np.ndarray:
    """
    Compute the feature vector at time ``t``.

    Args:
        adg: Snapshot of the executing ADG with all events up to ``t`` applied
        instance: MAPF instance being executed
        sol: Solution the ADG was built from
        t: Query time in seconds

    Returns:
        Array of FEATURE_COUNT floats in FEATURE_NAMES order
    """
    state = progress_state(adg)
    agents = range(len(adg.agent_nodes))
    costs = cost_summary(sol)

    def node(k: int, index: int):
        return adg.nodes[(k, index)]

    values = {
        'map_height': instance.grid.height,
        'map_width': instance.grid.width,
        'agents_count': len(instance),
        'planned_soc': costs.soc,
        'planned_makespan': costs.makespan,
        'replan_time': t,
        'unfinished_agents': sum(1 for k in agents if state.finished[k] != state.plan_lengths[k]),
        'progress_gap': max(state.finished, default=0) - min(state.finished, default=0),
    }

    # Agents with nothing finished (assigned) are skipped in maxima and add 0 to sums
    plan_delays = [node(k, state.finished[k]).actual_completion - node(k, state.finished[k]).planned_completion
                   for k in agents if state.finished[k] > 0]
    exp_plan_delays = [node(k, state.assigned[k]).est_completion - node(k, state.assigned[k]).planned_completion
                       for k in agents if state.assigned[k] > 0]
    values['highest_plan_delay'] = _max_or_zero(plan_delays)
    values['highest_exp_plan_delay'] = _max_or_zero(exp_plan_delays)
    values['total_plan_delay'] = sum(plan_delays)
    values['total_exp_plan_delay'] = sum(exp_plan_delays)

    for n in config.FEATURE_WINDOWS:
        delays, exp_delays = [], []
        for k in agents:
            finished, assigned = window_sets(state, k, t, n)
            if finished:
                delays.append(sum(
                    (node(k, i).actual_completion - node(k, i).actual_start) - node(k, i).duration
                    for i in finished))
            if assigned:
                exp_delays.append(sum(
                    (node(k, i).est_completion - node(k, i).est_start) - node(k, i).duration
                    for i in assigned))
        values[f'highest_action_delay_n{n}'] = _max_or_zero(delays)
        values[f'highest_exp_action_delay_n{n}'] = _max_or_zero(exp_delays)
        values[f'total_action_delay_n{n}'] = sum(delays)
        values[f'total_exp_action_delay_n{n}'] = sum(exp_delays)

    satisfied = adg.satisfied_type2
    increases = [expected - planned for edge, (planned, expected) in edge_slacks(adg).items()
                 if edge not in satisfied]
    values['highest_slack_increase'] = _max_or_zero(increases)
    values['waiting_agents'] = sum(1 for k in agents if state.assigned[k] == state.finished[k])

    return np.array([float(values[name]) for name in FEATURE_NAMES], dtype=np.float64)
