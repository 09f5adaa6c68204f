"""
Action Dependency Graph: construction, execution gating and estimate propagation.

Nodes are plan actions keyed ``(agent, index)``. Type-1 edges chain one agent's
actions; Type-2 edges make an agent wait until another agent has left a vertex
it is about to enter. Each node tracks planned, estimated and actual
start/completion times; actual times are ``None`` until they happen.
"""

import heapq
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Set, Tuple

import networkx as nx

import config
from mapf_core import Action, MapfError, Solution

logger = logging.getLogger(__name__)

NodeId = Tuple[int, int]
Edge = Tuple[NodeId, NodeId]

PENDING = 'pending'
RUNNING = 'running'
COMPLETED = 'completed'

TYPE1 = 'type1'
TYPE2 = 'type2'


class AdgConstructionError(MapfError):
    """The plan induces a cyclic or contradictory dependency."""


class AdgStateError(MapfError):
    """An event does not fit the node's current status."""


class MonotonicityError(AdgStateError):
    """An event is older than the last recorded event."""


@dataclass
class AdgNode:
    action: Action
    duration: float
    planned_start: float
    planned_completion: float
    est_start: float
    est_completion: float
    actual_start: Optional[float] = None
    actual_completion: Optional[float] = None
    status: str = PENDING


@dataclass(frozen=True)
class AdgEdge:
    kind: str
    source: NodeId
    target: NodeId


class Adg:
    """
    Dependency graph over all actions of a solution.

    The graph structure never changes after construction; only node timing and
    status are mutated, through ``record_event``.
    """

    def __init__(self, graph: nx.DiGraph, nodes: Dict[NodeId, AdgNode],
                 agent_nodes: List[List[NodeId]], start_time: float):
        self.graph = graph
        self.nodes = nodes
        self.agent_nodes = agent_nodes
        self.start_time = start_time
        self.order = list(nx.lexicographical_topological_sort(graph))
        self.position = {node: i for i, node in enumerate(self.order)}
        self.type2_edges = sorted((u, v) for u, v, kind in graph.edges(data='kind') if kind == TYPE2)
        self.last_event_time = start_time
        self.running: Set[NodeId] = set()

    @property
    def edges(self) -> List[AdgEdge]:
        return [AdgEdge(kind, u, v) for u, v, kind in sorted(self.graph.edges(data='kind'))]

    @property
    def satisfied_type2(self) -> Set[Edge]:
        """Type-2 edges whose source action has completed."""
        return {(u, v) for u, v in self.type2_edges if self.nodes[u].status == COMPLETED}

    def predecessors(self, node: NodeId) -> List[NodeId]:
        return sorted(self.graph.predecessors(node))

    def copy(self) -> 'Adg':
        """Snapshot with independent node state; structure is shared."""
        clone = Adg.__new__(Adg)
        clone.graph = self.graph
        clone.nodes = {key: replace(node) for key, node in self.nodes.items()}
        clone.agent_nodes = self.agent_nodes
        clone.start_time = self.start_time
        clone.order = self.order
        clone.position = self.position
        clone.type2_edges = self.type2_edges
        clone.last_event_time = self.last_event_time
        clone.running = set(self.running)
        return clone

    def is_finished(self) -> bool:
        return all(node.status == COMPLETED for node in self.nodes.values())


def _visits(path):
    """Maximal stays of one agent: (vertex, enter_step, enter_action, leave_action)."""
    visits = []
    step = 0
    while step < len(path):
        v = path[step]
        end = step
        while end + 1 < len(path) and path[end + 1] == v:
            end += 1
        enter_action = step if step > 0 else None
        leave_action = end + 1 if end + 1 < len(path) else None
        visits.append((v, step, enter_action, leave_action))
        step = end + 1
    return visits


def _prune_dominated(edges: Set[Edge]) -> Set[Edge]:
    """Drop (a_i^k -> a_j^l) when some (a_i'^k -> a_j'^l) has i' >= i and j' <= j."""
    by_pair = {}
    for (k, i), (l, j) in edges:
        by_pair.setdefault((k, l), []).append((i, j))
    kept = set()
    for (k, l), pairs in by_pair.items():
        for i, j in pairs:
            dominated = any((i2 >= i and j2 <= j) and (i2, j2) != (i, j) for i2, j2 in pairs)
            if not dominated:
                kept.add(((k, i), (l, j)))
    return kept


def build_adg(sol: Solution, start_time: float = 0.0) -> Adg:
    """
    Build the ADG of a 1-robust solution.

    Args:
        sol: Solution whose plans become ADG nodes
        start_time: Clock value at which the plan's first actions may start

    Returns:
        Adg with estimates initialized to the planned times
    """
    graph = nx.DiGraph()
    nodes = {}
    agent_nodes = []
    for k, plan in enumerate(sol.plans):
        ids = []
        for action in plan:
            node_id = (k, action.index)
            planned_start = start_time + sol.planned_start(action)
            planned_completion = start_time + sol.planned_completion(action)
            nodes[node_id] = AdgNode(action, sol.step_duration, planned_start, planned_completion,
                                     planned_start, planned_completion)
            graph.add_node(node_id)
            if ids:
                graph.add_edge(ids[-1], node_id, kind=TYPE1)
            ids.append(node_id)
        agent_nodes.append(ids)

    per_vertex = {}
    for k, path in enumerate(sol.paths):
        for v, enter_step, enter_action, leave_action in _visits(path):
            per_vertex.setdefault(v, []).append((enter_step, k, enter_action, leave_action))

    type2 = set()
    for v, visits in per_vertex.items():
        visits.sort()
        for (step_a, k, _, leave), (step_b, l, enter, _) in zip(visits, visits[1:]):
            if k == l:
                continue
            if leave is None or enter is None:
                raise AdgConstructionError(
                    f"agents {k} and {l} both hold {v} without a leaving/entering action")
            type2.add(((k, leave), (l, enter)))

    for u, w in sorted(_prune_dominated(type2)):
        graph.add_edge(u, w, kind=TYPE2)

    if not nx.is_directed_acyclic_graph(graph):
        cycle = nx.find_cycle(graph)
        raise AdgConstructionError(f"cyclic dependency: {cycle}")

    adg = Adg(graph, nodes, agent_nodes, start_time)
    logger.debug(f"Built ADG: {len(nodes)} actions, {len(adg.type2_edges)} type-2 edges")
    return adg


def next_node(adg: Adg, agent: int) -> Optional[NodeId]:
    """First non-completed action of ``agent``, or None when its plan is done."""
    for node_id in adg.agent_nodes[agent]:
        if adg.nodes[node_id].status != COMPLETED:
            return node_id
    return None


def executable_actions(adg: Adg) -> Set[NodeId]:
    """Pending actions whose predecessors have all completed."""
    ready = set()
    for agent in range(len(adg.agent_nodes)):
        node_id = next_node(adg, agent)
        if node_id is None or adg.nodes[node_id].status != PENDING:
            continue
        if all(adg.nodes[p].status == COMPLETED for p in adg.graph.predecessors(node_id)):
            ready.add(node_id)
    return ready


def _recompute(adg: Adg, node_id: NodeId) -> bool:
    """Refresh one pending node's estimates from its predecessors; True if changed."""
    node = adg.nodes[node_id]
    if node.status != PENDING:
        return False
    preds = list(adg.graph.predecessors(node_id))
    est_start = max((adg.nodes[p].est_completion for p in preds), default=adg.start_time)
    est_completion = est_start + node.duration
    changed = est_start != node.est_start or est_completion != node.est_completion
    node.est_start, node.est_completion = est_start, est_completion
    return changed


def _propagate_from(adg: Adg, sources: List[NodeId]):
    """Push estimate changes forward in topological order."""
    heap = []
    queued = set()
    for source in sources:
        for succ in adg.graph.successors(source):
            if succ not in queued:
                queued.add(succ)
                heapq.heappush(heap, (adg.position[succ], succ))
    while heap:
        _, node_id = heapq.heappop(heap)
        if _recompute(adg, node_id):
            for succ in adg.graph.successors(node_id):
                if succ not in queued:
                    queued.add(succ)
                    heapq.heappush(heap, (adg.position[succ], succ))


def propagate(adg: Adg) -> Adg:
    """Recompute every pending estimate in topological order."""
    for node_id in adg.order:
        _recompute(adg, node_id)
    return adg


def refresh_overdue(adg: Adg, now: float, tick: float = config.PROPAGATION_TICK) -> List[NodeId]:
    """Running actions past their estimated completion get ``now + tick``."""
    overdue = []
    for node_id in adg.running:
        node = adg.nodes[node_id]
        if node.est_completion < now:
            node.est_completion = now + tick
            overdue.append(node_id)
    return sorted(overdue)


def advance_clock(adg: Adg, now: float, tick: float = config.PROPAGATION_TICK) -> Adg:
    """Apply the overdue rule at ``now`` without recording an event."""
    if now < adg.last_event_time:
        raise MonotonicityError(f"clock {now} precedes last event at {adg.last_event_time}")
    _propagate_from(adg, refresh_overdue(adg, now, tick))
    return adg


def record_event(adg: Adg, node_id: NodeId, event: str, time: float) -> Adg:
    """
    Apply a start or completion event and propagate estimates.

    Args:
        adg: Graph to update in place
        node_id: Action the event refers to
        event: 'started' or 'completed'
        time: Event time in seconds

    Returns:
        The same (updated) Adg
    """
    if time < adg.last_event_time:
        raise MonotonicityError(f"event at {time} precedes last event at {adg.last_event_time}")
    node = adg.nodes[node_id]
    if event == 'started':
        if node.status != PENDING:
            raise AdgStateError(f"cannot start {node_id}: status is {node.status}")
        if any(adg.nodes[p].status != COMPLETED for p in adg.graph.predecessors(node_id)):
            raise AdgStateError(f"cannot start {node_id}: dependencies not completed")
        node.status = RUNNING
        adg.running.add(node_id)
        node.actual_start = time
        node.est_start = time
        node.est_completion = time + node.duration
    elif event == 'completed':
        if node.status != RUNNING:
            raise AdgStateError(f"cannot complete {node_id}: status is {node.status}")
        if time < node.actual_start:
            raise MonotonicityError(f"{node_id} completes at {time} before its start {node.actual_start}")
        node.status = COMPLETED
        adg.running.discard(node_id)
        node.actual_completion = time
        node.est_completion = time
    else:
        raise AdgStateError(f"unknown event {event!r}")
    adg.last_event_time = time
    _propagate_from(adg, [node_id] + refresh_overdue(adg, time))
    return adg


def edge_slacks(adg: Adg) -> Dict[Edge, Tuple[float, float]]:
    """
    Planned and expected slack of every Type-2 edge.

    For e = (a_i^k, a_j^l): delta = t_c(a_i^k) - t_c(a_{j-1}^l), and the
    same with estimates. A first action's virtual predecessor completes at
    the ADG start time.
    """
    slacks = {}
    for source, target in adg.type2_edges:
        agent, index = target
        if index > 1:
            prev = adg.nodes[(agent, index - 1)]
            prev_planned, prev_est = prev.planned_completion, prev.est_completion
        else:
            prev_planned = prev_est = adg.start_time
        src = adg.nodes[source]
        slacks[(source, target)] = (src.planned_completion - prev_planned,
                                    src.est_completion - prev_est)
    return slacks


def _fmt(value: Optional[float]) -> str:
    return '-' if value is None else f"{value:g}"


def dump_adg(adg: Adg) -> str:
    """Debug dump: one line per node, then one line per edge."""
    lines = []
    for node_id in sorted(adg.nodes):
        node = adg.nodes[node_id]
        a = node.action
        lines.append(' '.join([
            str(a.agent), str(a.index), f"{a.source[0]},{a.source[1]}", f"{a.target[0]},{a.target[1]}",
            node.status, _fmt(node.planned_start), _fmt(node.planned_completion),
            _fmt(node.est_start), _fmt(node.est_completion),
            _fmt(node.actual_start), _fmt(node.actual_completion),
        ]))
    for edge in adg.edges:
        lines.append(f"{edge.kind} {edge.source[0]}:{edge.source[1]} {edge.target[0]}:{edge.target[1]}")
    return '\n'.join(lines) + '\n'
