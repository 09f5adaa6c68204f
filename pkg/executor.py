"""
Deterministic discrete-event simulation of ADG-gated plan execution.

Agents take on an action as soon as the ADG allows it. When the action's
destination currently holds the dynamic obstacle, the agent waits in place
until the obstacle disappears. Optionally, execution is replanned once: after the
replan instant no new action starts, running actions finish, and a new plan
from the current positions takes over.
"""

import heapq
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

import config
from adg import (Adg, NodeId, advance_clock, build_adg, executable_actions, next_node,
                 record_event)
from mapf_core import MapfError, MapfInstance, Solution, Vertex, cost_summary, format_vertex
from planner import CBSPlanner, PlannerConfig, PlannerError

logger = logging.getLogger(__name__)

# Processing order of events sharing one timestamp
COMPLETE, OBSTACLE_DISAPPEAR, OBSTACLE_APPEAR, REPLAN, TICK = range(5)

TIME_DECIMALS = 9


class ObstacleSamplingError(MapfError):
    """No (time, vertex) pair satisfies the obstacle placement rule."""


class ScenarioFailure(MapfError):
    """A scenario could not be executed to completion."""

    def __init__(self, reason: str, message: str, trace=None):
        super().__init__(f"{reason}: {message}")
        self.reason = reason
        self.trace = trace or []


class DeadlockError(ScenarioFailure):
    def __init__(self, message: str, trace=None):
        super().__init__('deadlock', message, trace)


@dataclass(frozen=True)
class ObstacleEvent:
    vertex: Vertex
    appear: float
    disappear: float

    def __post_init__(self):
        if self.disappear < self.appear + config.OBSTACLE_BUFFER:
            raise ValueError(f"obstacle must stay at least {config.OBSTACLE_BUFFER}s "
                             f"(appear {self.appear}, disappear {self.disappear})")


@dataclass
class ScenarioConfig:
    solution: Solution
    instance: MapfInstance
    obstacle: Optional[ObstacleEvent] = None
    replan_time: Optional[float] = None
    planner_cfg: PlannerConfig = field(default_factory=PlannerConfig)
    action_duration: float = config.ACTION_DURATION
    runtime_clock: str = config.RUNTIME_CLOCK
    seconds_per_expansion: float = config.SECONDS_PER_EXPANSION
    # Test hook: extra seconds for action (agent, index)
    jitter: Optional[Callable[[int, int], float]] = None

    def __post_init__(self):
        if self.action_duration <= 0:
            raise ValueError(f"action duration must be positive, got {self.action_duration}")
        if self.runtime_clock not in ('wall', 'work'):
            raise ValueError(f"runtime clock must be 'wall' or 'work', got {self.runtime_clock!r}")


@dataclass(frozen=True)
class TraceEvent:
    time: float
    kind: str  # start, complete, blocked, obstacle_appear, obstacle_disappear, replan
    agent: Optional[int]
    action_index: Optional[int]
    source: Optional[Vertex]
    target: Optional[Vertex]

    def format(self) -> str:
        def opt(value, fmt=str):
            return '-' if value is None else fmt(value)
        return ' '.join([f"{self.time:g}", self.kind, opt(self.agent), opt(self.action_index),
                         opt(self.source, format_vertex), opt(self.target, format_vertex)])


@dataclass
class ScenarioResult:
    executed_soc: float
    finish_times: List[float]
    trace: List[TraceEvent]
    replan_runtime: float = 0.0
    replan_wall_time: float = 0.0
    unfinished_at_replan: int = 0
    replanned: bool = False
    handover_time: Optional[float] = None
    snapshot: Optional[Adg] = None
    snapshot_time: Optional[float] = None
    replan_solution: Optional[Solution] = None
    violations: List[Tuple[float, int, int, Vertex]] = field(default_factory=list)

    @property
    def makespan(self) -> float:
        return max(self.finish_times, default=0.0)


def format_trace(trace: List[TraceEvent]) -> str:
    return ''.join(event.format() + '\n' for event in trace)


def _clock(value: float) -> float:
    return round(value, TIME_DECIMALS)


def sample_obstacle(sol: Solution, seed: int, buffer: float = config.OBSTACLE_BUFFER) -> ObstacleEvent:
    """
    Place the dynamic obstacle for one randomization seed.

    The obstacle appears at an integer time ``appear`` in [one step, makespan - buffer]
    on a vertex no agent holds at ``appear`` but some agent is planned to enter
    at ``appear + buffer``; it disappears uniformly in [appear + buffer, makespan].
    """
    makespan = cost_summary(sol).makespan
    if makespan < 2 * buffer:
        raise ObstacleSamplingError(f"makespan {makespan:g}s leaves no room for the "
                                    f"{buffer:g}s obstacle buffers")
    step_buffer = int(round(buffer / sol.step_duration))
    last_step = int(np.floor((makespan - buffer) / sol.step_duration))
    candidates = {}
    # appear > 0: one replan time must fall strictly before it
    for step in range(1, last_step + 1):
        occupied = {sol.position(k, step) for k in range(len(sol))}
        visited = {sol.position(k, step + step_buffer) for k in range(len(sol))
                   if sol.position(k, step + step_buffer) != sol.position(k, step + step_buffer - 1)}
        vertices = sorted(visited - occupied)
        if vertices:
            candidates[step] = vertices
    if not candidates:
        raise ObstacleSamplingError(f"no vertex qualifies for any appearance time (seed {seed})")

    rng = np.random.default_rng(seed)
    steps = sorted(candidates)
    step = steps[int(rng.integers(len(steps)))]
    vertex = candidates[step][int(rng.integers(len(candidates[step])))]
    appear = step * sol.step_duration
    disappear = round(float(rng.uniform(appear + buffer, makespan)), 1)
    disappear = min(max(disappear, appear + buffer), makespan)
    return ObstacleEvent(vertex, appear, disappear)


class ScenarioExecutor:
    """
    Runs one scenario; single logical thread of control.

    An action is assigned (ADG ``started``) as soon as the ADG allows it. If
    its destination holds the obstacle, the agent keeps the assignment but
    stays put until the obstacle disappears, so the wait shows up as a longer
    actual duration.
    """

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.instance = cfg.instance
        solution = cfg.solution
        if solution.step_duration != cfg.action_duration:
            solution = Solution(solution.paths, cfg.action_duration)
        self.adg = build_adg(solution, 0.0)
        self.clock = 0.0
        self.events = []
        self.seq = 0
        n = len(cfg.instance)
        self.positions: List[Vertex] = [cfg.solution.position(k, 0) for k in range(n)]
        # agent -> (node, source, target) for every assigned, uncompleted action
        self.running: Dict[int, Tuple[NodeId, Vertex, Vertex]] = {}
        self.held = set()  # assigned agents waiting for the obstacle to clear
        self.last_completion = [0.0] * n
        self.trace: List[TraceEvent] = []
        self.violations = []

        self.obstacle_active = False
        self.obstacle_waiting = False
        self.frozen = False
        self.result = ScenarioResult(0.0, [], self.trace, violations=self.violations)

    def push(self, when: float, priority: int, payload=None):
        self.seq += 1
        heapq.heappush(self.events, (_clock(when), priority, self.seq, payload))

    def log(self, kind, agent=None, index=None, source=None, target=None):
        self.trace.append(TraceEvent(self.clock, kind, agent, index, source, target))

    def _occupied(self, vertex: Vertex, ignore: Optional[int] = None) -> Optional[int]:
        """Agent holding ``vertex`` (resting, leaving or moving in), if any."""
        for k, position in enumerate(self.positions):
            if k == ignore:
                continue
            if position == vertex:
                return k
            if k in self.running and k not in self.held and self.running[k][2] == vertex:
                return k
        return None

    def run(self) -> ScenarioResult:
        obstacle = self.cfg.obstacle
        if obstacle is not None:
            self.push(obstacle.appear, OBSTACLE_APPEAR)
            self.push(obstacle.disappear, OBSTACLE_DISAPPEAR)
        if self.cfg.replan_time is not None:
            self.push(max(0.0, self.cfg.replan_time), REPLAN)
        self.push(0.0, TICK)

        while self.events:
            self.clock = self.events[0][0]
            replan_now = False
            while self.events and self.events[0][0] == self.clock:
                _, priority, _, payload = heapq.heappop(self.events)
                if priority == COMPLETE:
                    self.complete(payload)
                elif priority == OBSTACLE_APPEAR:
                    self.obstacle_waiting = True
                elif priority == OBSTACLE_DISAPPEAR:
                    self.clear_obstacle()
                elif priority == REPLAN:
                    replan_now = True
            if self.obstacle_waiting:
                self.try_materialize()
            if self.frozen and not self.running:
                self.handover()
            self.dispatch()
            if replan_now:
                self.begin_replan()

        return self.finish()

    def complete(self, agent: int):
        node_id, source, target = self.running.pop(agent)
        record_event(self.adg, node_id, 'completed', self.clock)
        self.positions[agent] = target
        self.last_completion[agent] = self.clock
        self.log('complete', agent, node_id[1], source, target)

    def try_materialize(self):
        vertex = self.cfg.obstacle.vertex
        holder = self._occupied(vertex)
        if holder is None:
            self.obstacle_waiting = False
            self.obstacle_active = True
            self.log('obstacle_appear', source=vertex, target=vertex)
        elif self.clock == _clock(self.cfg.obstacle.appear):
            logger.warning(f"Obstacle vertex {vertex} held by agent {holder} at "
                           f"{self.clock:g}s; deferring appearance")

    def clear_obstacle(self):
        vertex = self.cfg.obstacle.vertex
        if self.obstacle_waiting:
            logger.warning(f"Obstacle at {vertex} never appeared: vertex stayed occupied")
        self.obstacle_waiting = False
        if not self.obstacle_active:
            return
        self.obstacle_active = False
        self.log('obstacle_disappear', source=vertex, target=vertex)
        for agent in sorted(self.held):
            self.move(agent)
        self.held.clear()

    def move(self, agent: int):
        """Physically begin the assigned action of ``agent``."""
        node_id, source, target = self.running[agent]
        if source != target:
            holder = self._occupied(target, ignore=agent)
            if holder is not None:
                self.violations.append((self.clock, agent, holder, target))
                logger.error(f"Occupancy violation at {self.clock:g}s: agent {agent} "
                             f"enters {target} held by agent {holder}")
        duration = self.adg.nodes[node_id].duration
        if self.cfg.jitter is not None:
            duration += max(0.0, self.cfg.jitter(*node_id))
        self.push(self.clock + duration, COMPLETE, agent)

    def dispatch(self):
        """Assign every ADG-executable action; move unless the target holds the obstacle."""
        if self.frozen:
            return
        for node_id in sorted(executable_actions(self.adg)):
            agent, index = node_id
            action = self.adg.nodes[node_id].action
            record_event(self.adg, node_id, 'started', self.clock)
            self.running[agent] = (node_id, action.source, action.target)
            self.log('start', agent, index, action.source, action.target)
            if (self.obstacle_active and action.target == self.cfg.obstacle.vertex
                    and not action.is_wait):
                self.held.add(agent)
                self.log('blocked', agent, index, action.source, action.target)
            else:
                self.move(agent)

    def unfinished_agents(self) -> int:
        return sum(1 for k in range(len(self.instance)) if next_node(self.adg, k) is not None)

    def begin_replan(self):
        if self.frozen or self.result.replanned:
            return
        snapshot = self.adg.copy()
        advance_clock(snapshot, self.clock)
        self.result.snapshot = snapshot
        self.result.snapshot_time = self.clock
        self.result.unfinished_at_replan = self.unfinished_agents()
        self.frozen = True
        # assignments still waiting on the obstacle are withdrawn; the agent never moved
        for agent in sorted(self.held):
            del self.running[agent]
        self.held.clear()
        logger.debug(f"Replan requested at {self.clock:g}s, {len(self.running)} actions running")
        if not self.running:
            self.handover()
            self.dispatch()

    def handover(self):
        """Plan from the current positions and swap in the new ADG."""
        # moving an agent off its goal forfeits the finish time it already has
        leave_goal_cost = [(self.clock - self.last_completion[k]) / self.cfg.action_duration
                           for k in range(len(self.instance))]
        planner = CBSPlanner(self.instance.with_starts(self.positions), self.cfg.planner_cfg, leave_goal_cost)
        wall_start = time.perf_counter()
        try:
            new_solution = Solution(planner.solve().paths, self.cfg.action_duration)
        except PlannerError as e:
            raise ScenarioFailure('replan_failed', str(e), self.trace)
        wall = time.perf_counter() - wall_start
        self.result.replan_wall_time = wall
        if self.cfg.runtime_clock == 'wall':
            self.result.replan_runtime = wall
        else:
            self.result.replan_runtime = planner.stats.low_level_expanded * self.cfg.seconds_per_expansion
        logger.debug(f"Replanned at {self.clock:g}s in {wall:.3f}s wall "
                     f"({planner.stats.high_level_expanded} CBS nodes)")

        self.adg = build_adg(new_solution, self.clock)
        self.frozen = False
        self.result.replanned = True
        self.result.handover_time = self.clock
        self.result.replan_solution = new_solution
        self.log('replan')

    def finish(self) -> ScenarioResult:
        if not self.adg.is_finished():
            stuck = sorted(k for k in range(len(self.instance)) if next_node(self.adg, k) is not None)
            raise DeadlockError(f"agents {stuck} cannot proceed at {self.clock:g}s", self.trace)
        for k, goal in enumerate(self.instance.goals):
            if self.positions[k] != goal:
                raise ScenarioFailure('not_at_goal', f"agent {k} ended at {self.positions[k]}, "
                                      f"goal {goal}", self.trace)
        self.result.finish_times = list(self.last_completion)
        self.result.executed_soc = _clock(sum(self.last_completion))
        return self.result


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Execute one scenario to completion."""
    return ScenarioExecutor(cfg).run()


def overhead_adjusted_soc(result: ScenarioResult) -> float:
    """Executed SOC plus solver runtime charged to every agent unfinished at replan time."""
    return result.executed_soc + result.replan_runtime * result.unfinished_at_replan
