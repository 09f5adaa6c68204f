"""
Grid environments, MAPF instances, plans, 1-robust validation and cost metrics.

Vertices are ``(x, y)`` tuples with (0, 0) the upper-left cell, as in the
MovingAI benchmark files.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

import config

logger = logging.getLogger(__name__)

Vertex = Tuple[int, int]

FREE_GLYPHS = {'.', 'G'}
BLOCKED_GLYPHS = {'@', 'O', 'T'}

# 4-connected moves, fixed order for deterministic expansion
MOVES = [(0, -1), (1, 0), (0, 1), (-1, 0)]


class MapfError(Exception):
    """Base class for all toolkit errors."""


class MapParseError(MapfError):
    """Malformed MovingAI map text."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class StructuralError(MapfError):
    """A plan or instance references vertices it may not use."""


class InstanceGenerationError(MapfError):
    """No valid start/goal placement could be generated."""


@dataclass(frozen=True, eq=False)
class GridMap:
    """Rectangular 4-connected grid; ``blocked[y, x]`` marks obstacles."""
    width: int
    height: int
    blocked: np.ndarray
    name: str = ''

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise StructuralError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if self.blocked.shape != (self.height, self.width):
            raise StructuralError(f"occupancy shape {self.blocked.shape} does not match "
                                  f"{self.height}x{self.width}")

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and np.array_equal(self.blocked, other.blocked))

    def __hash__(self):
        return hash((self.width, self.height, self.blocked.tobytes()))

    def in_bounds(self, v: Vertex) -> bool:
        x, y = v
        return 0 <= x < self.width and 0 <= y < self.height

    def is_free(self, v: Vertex) -> bool:
        return self.in_bounds(v) and not self.blocked[v[1], v[0]]

    def neighbors(self, v: Vertex) -> List[Vertex]:
        """Free 4-neighbors of ``v`` (waits not included)."""
        x, y = v
        return [(x + dx, y + dy) for dx, dy in MOVES if self.is_free((x + dx, y + dy))]

    def free_cells(self) -> List[Vertex]:
        """All free cells in row-major order."""
        ys, xs = np.nonzero(~self.blocked)
        return [(int(x), int(y)) for y, x in zip(ys, xs)]

    def to_graph(self) -> nx.Graph:
        """Undirected graph over free cells."""
        graph = nx.grid_2d_graph(self.width, self.height)
        graph.remove_nodes_from([(x, y) for y, x in zip(*np.nonzero(self.blocked))])
        return graph

    def distances_to(self, goal: Vertex) -> Dict[Vertex, int]:
        """Shortest grid distance from every reachable cell to ``goal``."""
        return nx.single_source_shortest_path_length(self.to_graph(), goal)


@dataclass(frozen=True)
class MapfInstance:
    """A grid plus an ordered list of (start, goal) pairs."""
    grid: GridMap
    agents: Tuple[Tuple[Vertex, Vertex], ...]

    def __post_init__(self):
        object.__setattr__(self, 'agents', tuple((tuple(s), tuple(g)) for s, g in self.agents))
        for k, (start, goal) in enumerate(self.agents):
            for v in (start, goal):
                if not self.grid.is_free(v):
                    raise StructuralError(f"agent {k}: vertex {v} is not a free cell")
        if len(set(self.starts)) != len(self.starts):
            raise StructuralError("starts are not pairwise distinct")
        if len(set(self.goals)) != len(self.goals):
            raise StructuralError("goals are not pairwise distinct")

    @property
    def starts(self) -> List[Vertex]:
        return [s for s, _ in self.agents]

    @property
    def goals(self) -> List[Vertex]:
        return [g for _, g in self.agents]

    def __len__(self):
        return len(self.agents)

    def with_starts(self, positions: Sequence[Vertex]) -> 'MapfInstance':
        """Same goals, new starts (replanning from mid-execution positions)."""
        return MapfInstance(self.grid, tuple(zip((tuple(p) for p in positions), self.goals)))


@dataclass(frozen=True)
class Action:
    """a_i^k = (v_i, v_{i+1}); ``index`` is 1-based."""
    agent: int
    index: int
    source: Vertex
    target: Vertex

    @property
    def is_wait(self) -> bool:
        return self.source == self.target


@dataclass
class Solution:
    """
    Per-agent vertex sequences; ``paths[k][t]`` is agent k's planned vertex at step t.

    After its last step an agent stays at its final vertex.
    """
    paths: List[List[Vertex]]
    step_duration: float = config.ACTION_DURATION
    plans: List[List[Action]] = field(init=False, repr=False)

    def __post_init__(self):
        self.paths = [[tuple(v) for v in path] for path in self.paths]
        for k, path in enumerate(self.paths):
            if not path:
                raise StructuralError(f"agent {k}: empty path (needs at least its start)")
        self.plans = [
            [Action(k, i + 1, path[i], path[i + 1]) for i in range(len(path) - 1)]
            for k, path in enumerate(self.paths)
        ]

    def __len__(self):
        return len(self.paths)

    def position(self, agent: int, step: int) -> Vertex:
        path = self.paths[agent]
        return path[min(step, len(path) - 1)]

    def planned_start(self, action: Action) -> float:
        return (action.index - 1) * self.step_duration

    def planned_completion(self, action: Action) -> float:
        return action.index * self.step_duration


@dataclass(frozen=True)
class CostSummary:
    soc: float
    makespan: float


@dataclass(frozen=True)
class ConflictReport:
    """Two agents at one vertex at the same step or at consecutive steps."""
    kind: str  # vertex, swap, following, cycle
    agents: Tuple[int, int]
    vertex: Vertex
    steps: Tuple[int, int]


def parse_movingai_map(text: str, name: str = '') -> GridMap:
    """
    Parse MovingAI grid map text.

    Args:
        text: Map file contents (type/height/width/map header, then rows)
        name: Optional map name kept on the GridMap

    Returns:
        GridMap with '.'/'G' free and '@'/'O'/'T' blocked
    """
    lines = text.splitlines()
    header = {}
    expected = ['type', 'height', 'width', 'map']
    for line_no, key in enumerate(expected, 1):
        if line_no > len(lines):
            raise MapParseError(f"missing header line '{key}'", line_no)
        parts = lines[line_no - 1].split()
        if not parts or parts[0] != key:
            raise MapParseError(f"expected '{key}' header", line_no)
        if key in ('height', 'width'):
            if len(parts) != 2 or not parts[1].isdigit() or int(parts[1]) < 1:
                raise MapParseError(f"bad {key} value", line_no)
            header[key] = int(parts[1])

    height, width = header['height'], header['width']
    rows = [line.rstrip('\r\n') for line in lines[4:]]
    while rows and not rows[-1].strip():
        rows.pop()
    if len(rows) != height:
        raise MapParseError(f"header says height {height} but found {len(rows)} rows",
                            5 + min(len(rows), height))

    blocked = np.zeros((height, width), dtype=bool)
    for y, row in enumerate(rows):
        line_no = 5 + y
        if len(row) != width:
            raise MapParseError(f"row has {len(row)} cells, expected {width}", line_no)
        for x, glyph in enumerate(row):
            if glyph in BLOCKED_GLYPHS:
                blocked[y, x] = True
            elif glyph not in FREE_GLYPHS:
                raise MapParseError(f"unknown glyph {glyph!r} at column {x}", line_no)
    return GridMap(width, height, blocked, name)


def serialize_movingai_map(grid: GridMap) -> str:
    """Write a GridMap in MovingAI format (blocked cells as '@')."""
    rows = [''.join('@' if cell else '.' for cell in row) for row in grid.blocked]
    return '\n'.join(['type octile', f'height {grid.height}', f'width {grid.width}', 'map']
                     + rows) + '\n'


def load_map(path: str) -> GridMap:
    """Load a MovingAI .map file; the map name is the file stem."""
    name = os.path.splitext(os.path.basename(path))[0]
    with open(path, 'r') as f:
        return parse_movingai_map(f.read(), name)


def _check_structure(instance: MapfInstance, sol: Solution):
    if len(sol) != len(instance):
        raise StructuralError(f"solution has {len(sol)} plans for {len(instance)} agents")
    for k, path in enumerate(sol.paths):
        start, goal = instance.agents[k]
        for step, v in enumerate(path):
            if not instance.grid.is_free(v):
                raise StructuralError(f"agent {k} step {step}: vertex {v} is out of bounds or blocked")
            if step > 0:
                u = path[step - 1]
                if abs(u[0] - v[0]) + abs(u[1] - v[1]) > 1:
                    raise StructuralError(f"agent {k} step {step}: {u} -> {v} is not a grid edge")
        if path[0] != start or path[-1] != goal:
            raise StructuralError(f"agent {k}: plan must run from {start} to {goal}")


def _classify(sol: Solution, a: int, b: int, step: int) -> str:
    """Kind of the conflict where ``b`` enters at step+1 the vertex ``a`` holds at ``step``."""
    if sol.position(b, step) == sol.position(a, step + 1):
        return 'swap'
    occupant = {sol.position(k, step): k for k in range(len(sol))}
    seen = {b}
    current = a
    while current not in seen:
        seen.add(current)
        current = occupant.get(sol.position(current, step + 1))
        if current is None:
            return 'following'
    return 'cycle' if current == b else 'following'


def validate_solution(instance: MapfInstance, sol: Solution) -> List[ConflictReport]:
    """
    Find all violations of 1-robustness.

    Returns:
        Conflict reports; empty iff the solution is 1-robust
    """
    _check_structure(instance, sol)
    horizon = max(len(path) for path in sol.paths)
    reports = []
    for step in range(horizon):
        now = {}
        for k in range(len(sol)):
            v = sol.position(k, step)
            if v in now:
                reports.append(ConflictReport('vertex', (now[v], k), v, (step, step)))
            else:
                now[v] = k
        if step + 1 >= horizon:
            break
        for b in range(len(sol)):
            v = sol.position(b, step + 1)
            a = now.get(v)
            if a is not None and a != b:
                reports.append(ConflictReport(_classify(sol, a, b, step), (a, b), v, (step, step + 1)))
    return reports


def cost_summary(sol: Solution) -> CostSummary:
    """SOC and makespan of the planned solution, in seconds."""
    lengths = [len(plan) for plan in sol.plans]
    return CostSummary(soc=sum(lengths) * sol.step_duration,
                       makespan=max(lengths) * sol.step_duration)


def generate_instance(grid: GridMap, agent_count: int, seed: int,
                      max_retries: int = 100) -> MapfInstance:
    """
    Random instance with distinct starts, distinct goals, each goal reachable.

    Args:
        grid: Environment
        agent_count: Number of agents
        seed: Randomization seed; the result is deterministic in (grid, count, seed)
        max_retries: Placement attempts before giving up
    """
    free = grid.free_cells()
    if len(free) < 2 * agent_count:
        raise InstanceGenerationError(
            f"map {grid.name or '?'} has {len(free)} free cells, needs {2 * agent_count}")

    component = {}
    for comp_id, comp in enumerate(sorted(nx.connected_components(grid.to_graph()), key=min)):
        for v in comp:
            component[v] = comp_id

    rng = np.random.default_rng(seed)
    for attempt in range(max_retries):
        order = rng.permutation(len(free))
        starts = [free[i] for i in order[:agent_count]]
        used_goals = set()
        goals = []
        for start in starts:
            candidates = [v for v in free
                          if component[v] == component[start] and v != start and v not in used_goals]
            if not candidates:
                break
            goal = candidates[int(rng.integers(len(candidates)))]
            used_goals.add(goal)
            goals.append(goal)
        if len(goals) == agent_count:
            return MapfInstance(grid, tuple(zip(starts, goals)))
        logger.debug(f"Placement attempt {attempt} failed for seed {seed}")
    raise InstanceGenerationError(f"no connected placement for {agent_count} agents "
                                  f"after {max_retries} attempts (seed {seed})")


def format_vertex(v: Vertex) -> str:
    return f"{v[0]},{v[1]}"


def parse_vertex(token: str) -> Vertex:
    x, y = token.split(',')
    return int(x), int(y)


def write_instance(instance: MapfInstance) -> str:
    lines = [f"agents {len(instance)}"]
    lines += [f"{s[0]} {s[1]} {g[0]} {g[1]}" for s, g in instance.agents]
    return '\n'.join(lines) + '\n'


def read_instance(text: str, grid: GridMap) -> MapfInstance:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0].split()[0] != 'agents':
        raise MapParseError("expected 'agents N' header", 1)
    count = int(lines[0].split()[1])
    if len(lines) - 1 != count:
        raise MapParseError(f"header says {count} agents but found {len(lines) - 1}", len(lines))
    agents = []
    for line_no, line in enumerate(lines[1:], 2):
        try:
            sx, sy, gx, gy = (int(tok) for tok in line.split())
        except ValueError:
            raise MapParseError(f"expected 'sx sy gx gy', got {line!r}", line_no)
        agents.append(((sx, sy), (gx, gy)))
    return MapfInstance(grid, tuple(agents))


def write_solution(sol: Solution) -> str:
    return '\n'.join(' '.join(format_vertex(v) for v in path) for path in sol.paths) + '\n'


def read_solution(text: str, step_duration: Optional[float] = None) -> Solution:
    paths = [[parse_vertex(tok) for tok in line.split()] for line in text.splitlines() if line.strip()]
    return Solution(paths, step_duration or config.ACTION_DURATION)
