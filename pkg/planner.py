"""
Optimal 1-robust MAPF solver (Conflict-Based Search).

Two agents conflict when they hold one vertex at the same step or at two
consecutive steps. The high level branches on such a conflict by forbidding
one agent's (vertex, step) occupancy in each child; the low level is a
space-time A* that honors those vertex constraints.
"""

import heapq
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import config
from mapf_core import MapfError, MapfInstance, Solution, Vertex

logger = logging.getLogger(__name__)

Constraint = Tuple[Vertex, int]


class PlannerError(MapfError):
    """The planner could not return a solution."""


class PlannerTimeout(PlannerError):
    """Time or node budget exhausted; carries the best known lower bound on SOC."""

    def __init__(self, message: str, lower_bound: float):
        super().__init__(message)
        self.lower_bound = lower_bound


class InfeasibleInstance(PlannerError):
    """Some agent cannot reach its goal."""


@dataclass(frozen=True)
class PlannerConfig:
    suboptimality_bound: float = config.SUBOPTIMALITY_BOUND
    timeout: float = config.PLANNER_TIMEOUT
    node_limit: int = config.PLANNER_NODE_LIMIT

    def __post_init__(self):
        if self.suboptimality_bound < 1.0:
            raise ValueError(f"suboptimality bound must be >= 1.0, got {self.suboptimality_bound}")
        if self.timeout <= 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")
        if self.node_limit < 1:
            raise ValueError(f"node limit must be positive, got {self.node_limit}")


@dataclass
class PlannerStats:
    high_level_expanded: int = 0
    high_level_generated: int = 0
    low_level_expanded: int = 0
    runtime: float = 0.0


@dataclass
class _HighLevelNode:
    constraints: Dict[int, FrozenSet[Constraint]]
    paths: List[List[Vertex]]
    cost: float
    conflicts: int
    seq: int = field(default=0)


def _position(path: List[Vertex], step: int) -> Vertex:
    return path[min(step, len(path) - 1)]


def find_conflicts(paths: Sequence[List[Vertex]]) -> List[Tuple[int, int, int, int, Vertex]]:
    """
    All 1-robust conflicts as (agent_a, step_a, agent_b, step_b, vertex), earliest first.

    step_b is step_a (same step) or step_a + 1 (b enters what a held).
    """
    horizon = max(len(path) for path in paths)
    conflicts = []
    for step in range(horizon):
        now = {}
        for k, path in enumerate(paths):
            v = _position(path, step)
            if v in now:
                conflicts.append((now[v], step, k, step, v))
            else:
                now[v] = k
        if step + 1 >= horizon:
            break
        for b, path in enumerate(paths):
            v = _position(path, step + 1)
            a = now.get(v)
            if a is not None and a != b:
                conflicts.append((a, step, b, step + 1, v))
    return conflicts


class SpaceTimeAstar:
    """Single-agent A* over (vertex, step) honoring vertex constraints."""

    def __init__(self, instance: MapfInstance, agent: int, heuristic: Dict[Vertex, int]):
        self.grid = instance.grid
        self.agent = agent
        self.start, self.goal = instance.agents[agent]
        self.heuristic = heuristic
        self.expanded = 0

    def find_path(self, constraints: FrozenSet[Constraint],
                  others: Sequence[Optional[List[Vertex]]] = ()) -> Optional[List[Vertex]]:
        """
        Earliest-arrival path that avoids ``constraints``.

        Args:
            constraints: Forbidden (vertex, step) pairs for this agent
            others: Current paths of other agents, used only to break ties
                    toward fewer conflicts

        Returns:
            Vertex list ending at the goal, or None if no path exists
        """
        if self.start not in self.heuristic:
            return None
        last_constraint = max((t for _, t in constraints), default=-1)
        last_goal_constraint = max((t for v, t in constraints if v == self.goal), default=-1)
        if (self.start, 0) in constraints:
            return None

        occupied, resting = self._conflict_table(others)

        def conflicts_at(v, t):
            count = sum(occupied.get((v, t + dt), 0) for dt in (-1, 0, 1))
            since = resting.get(v)
            if since is not None and t >= since - 1:
                count += 1
            return count

        # Beyond the last constraint, states at the same vertex are interchangeable
        cap = last_constraint + 1
        open_list = [(self.heuristic[self.start], 0, self.heuristic[self.start], 0, 0, self.start)]
        parents = {(self.start, 0): None}
        closed = set()
        counter = 0
        while open_list:
            f, n_conf, h, t, _, v = heapq.heappop(open_list)
            key = (v, min(t, cap))
            if key in closed:
                continue
            closed.add(key)
            self.expanded += 1
            if v == self.goal and t > last_goal_constraint:
                return self._reconstruct(parents, (v, t))
            for nxt in [v] + self.grid.neighbors(v):
                nt = t + 1
                # every path to (nxt, nt) costs nt, so the first parent found is kept
                if (nxt, nt) in constraints or (nxt, nt) in parents:
                    continue
                if (nxt, min(nt, cap)) in closed:
                    continue
                parents[(nxt, nt)] = (v, t)
                counter += 1
                nh = self.heuristic[nxt]
                heapq.heappush(open_list, (nt + nh, n_conf + conflicts_at(nxt, nt), nh, nt, counter, nxt))
        return None

    def _conflict_table(self, others):
        occupied = {}
        resting = {}
        for k, path in enumerate(others):
            if k == self.agent or not path:
                continue
            for t, v in enumerate(path):
                occupied[(v, t)] = occupied.get((v, t), 0) + 1
            resting[path[-1]] = len(path) - 1
        return occupied, resting

    @staticmethod
    def _reconstruct(parents, state):
        path = []
        while state is not None:
            path.append(state[0])
            state = parents[state]
        return path[::-1]


class CBSPlanner:
    """
    Conflict-Based Search for 1-robust MAPF.

    With ``suboptimality_bound`` 1.0 the returned SOC is optimal. A larger
    bound selects, among open nodes within the bound, the one with fewest
    conflicts (focal selection).
    """

    def __init__(self, instance: MapfInstance, cfg: Optional[PlannerConfig] = None,
                 leave_goal_cost: Optional[Sequence[float]] = None):
        self.instance = instance
        self.cfg = cfg or PlannerConfig()
        # extra cost for an agent that starts on its goal and has to move off it
        self.leave_goal_cost = None
        if leave_goal_cost is not None:
            self.leave_goal_cost = [cost if start == goal else 0.0
                                    for cost, (start, goal) in zip(leave_goal_cost, instance.agents)]
        self.stats = PlannerStats()
        self.engines = [
            SpaceTimeAstar(instance, k, instance.grid.distances_to(goal))
            for k, goal in enumerate(instance.goals)
        ]

    def _soc(self, paths):
        soc = sum(len(path) - 1 for path in paths)
        if self.leave_goal_cost is not None:
            soc += sum(self.leave_goal_cost[k] for k, path in enumerate(paths) if len(path) > 1)
        return soc

    def _plan_agent(self, agent, constraints, paths):
        return self.engines[agent].find_path(constraints, paths)

    def solve(self) -> Solution:
        """Run CBS; raises PlannerTimeout or InfeasibleInstance on failure."""
        start_time = time.perf_counter()
        try:
            return self._search(start_time)
        finally:
            self.stats.runtime = time.perf_counter() - start_time
            self.stats.low_level_expanded = sum(engine.expanded for engine in self.engines)

    def _search(self, start_time: float) -> Solution:
        n = len(self.instance)
        empty = frozenset()
        paths: List[List[Vertex]] = []
        for k in range(n):
            path = self._plan_agent(k, empty, paths)
            if path is None:
                raise InfeasibleInstance(f"agent {k} cannot reach goal {self.instance.goals[k]}")
            paths.append(path)

        root = _HighLevelNode({k: empty for k in range(n)}, paths, self._soc(paths),
                              len(find_conflicts(paths)))
        open_list = []
        seq = 0
        heapq.heappush(open_list, (root.cost, root.conflicts, seq, root))
        self.stats.high_level_generated = 1
        bound = self.cfg.suboptimality_bound

        while open_list:
            if time.perf_counter() - start_time > self.cfg.timeout:
                raise PlannerTimeout(f"timeout after {self.cfg.timeout:.1f}s", float(open_list[0][0]))
            if self.stats.high_level_expanded >= self.cfg.node_limit:
                raise PlannerTimeout(f"node limit {self.cfg.node_limit} reached", float(open_list[0][0]))

            node = self._pop(open_list, bound)
            self.stats.high_level_expanded += 1
            conflicts = find_conflicts(node.paths)
            if not conflicts:
                logger.debug(f"CBS solved {n} agents: SOC {node.cost}, "
                             f"{self.stats.high_level_expanded} nodes expanded")
                return Solution(node.paths)

            a, step_a, b, step_b, v = conflicts[0]
            for agent, step in ((a, step_a), (b, step_b)):
                constraints = dict(node.constraints)
                constraints[agent] = node.constraints[agent] | {(v, step)}
                new_path = self._plan_agent(agent, constraints[agent], node.paths)
                if new_path is None:
                    continue
                paths = list(node.paths)
                paths[agent] = new_path
                seq += 1
                child = _HighLevelNode(constraints, paths, self._soc(paths),
                                       len(find_conflicts(paths)), seq)
                heapq.heappush(open_list, (child.cost, child.conflicts, seq, child))
                self.stats.high_level_generated += 1

        raise InfeasibleInstance("no conflict-free solution exists")

    @staticmethod
    def _pop(open_list, bound):
        if bound <= 1.0:
            return heapq.heappop(open_list)[3]
        limit = open_list[0][0] * bound
        focal = min((entry for entry in open_list if entry[0] <= limit),
                    key=lambda entry: (entry[1], entry[0], entry[2]))
        open_list.remove(focal)
        heapq.heapify(open_list)
        return focal[3]


def solve_1robust(instance: MapfInstance, cfg: Optional[PlannerConfig] = None) -> Solution:
    """Optimal (bound 1.0) 1-robust solution for ``instance``."""
    return CBSPlanner(instance, cfg).solve()


def solve_from_state(instance: MapfInstance, positions: Sequence[Vertex],
                     cfg: Optional[PlannerConfig] = None,
                     leave_goal_cost: Optional[Sequence[float]] = None) -> Solution:
    """
    Same as solve_1robust with the starts replaced by current ``positions``.

    ``leave_goal_cost[k]`` is added to the SOC when agent k stands on its goal
    and the plan moves it; mid-execution this is the time already banked by
    the agent's earlier arrival.
    """
    return CBSPlanner(instance.with_starts(positions), cfg, leave_goal_cost).solve()
