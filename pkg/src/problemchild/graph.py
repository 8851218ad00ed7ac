"""Weighted, directed, acyclic process graph.

Nodes are process instances (keyed by guid, never collapsed by name);
edges are parent->child create relations, weighted once at build time
with the classifier's malicious-probability output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime
from typing import Optional, Sequence

import numpy as np

from .features import featurize_edge
from .gbt import GbtModel, predict_weights
from .ingest import ProcessInstance, iter_edges

log = logging.getLogger(__name__)

GRAPH_FORMAT_VERSION = 1


@dataclass
class ProcessNode:
    guid: str
    process_name: str
    command_line: str = ""
    parent_name: Optional[str] = None
    user: str = ""
    create_ts: Optional[datetime] = None
    end_ts: Optional[datetime] = None
    is_stub: bool = False
    weight: Optional[float] = None          # inbound-edge classifier weight
    anomalous_score: Optional[float] = None  # filled by the detector
    community_id: Optional[int] = None       # filled by community detection


@dataclass
class ProcessEdge:
    parent_guid: str
    child_guid: str
    weight: float


@dataclass
class ProcessGraph:
    nodes: dict = field(default_factory=dict)   # guid -> ProcessNode, build order
    edges: list = field(default_factory=list)   # list[ProcessEdge]
    cycle_breaks: int = 0

    def inbound(self) -> dict:
        return {e.child_guid: e for e in self.edges}

    def to_json_dict(self) -> dict:
        return {
            "format_version": GRAPH_FORMAT_VERSION,
            "nodes": [
                {
                    "guid": n.guid,
                    "process_name": n.process_name,
                    "command_line": n.command_line,
                    "parent_name": n.parent_name,
                    "user": n.user,
                    "is_stub": n.is_stub,
                    "weight": n.weight,
                    "anomalous_score": n.anomalous_score,
                    "community_id": n.community_id,
                }
                for n in self.nodes.values()
            ],
            "edges": [
                {"parent": e.parent_guid, "child": e.child_guid,
                 "weight": e.weight}
                for e in self.edges
            ],
        }


def _node_from_instance(inst: ProcessInstance, is_stub: bool = False) -> ProcessNode:
    event = inst.create_event
    return ProcessNode(
        guid=inst.guid,
        process_name=event.process_name,
        command_line=event.command_line,
        parent_name=event.parent_name,
        user=event.user,
        create_ts=event.timestamp,
        end_ts=inst.terminate_timestamp,
        is_stub=is_stub,
    )


def build_graph(instances: Sequence[ProcessInstance], model: GbtModel) -> ProcessGraph:
    """One node per instance; one weighted edge per resolvable parent
    relation. Unresolved parents get a synthetic stub node so chains are
    not orphaned. Malformed-guid cycles are broken by dropping the edge
    whose child was created later."""
    graph = ProcessGraph()
    for inst in instances:
        graph.nodes[inst.guid] = _node_from_instance(inst)

    pairs = []
    for parent, child, parent_is_stub in iter_edges(
            instances, model.vocab.delta_t_cap if model.vocab else 86400.0):
        if parent_is_stub and parent.guid not in graph.nodes:
            graph.nodes[parent.guid] = _node_from_instance(parent, is_stub=True)
        pairs.append((parent, child))

    if pairs:
        X = np.stack([
            featurize_edge(parent, child, model.vocab).values
            for parent, child in pairs
        ])
        weights = predict_weights(model, X)
        for (parent, child), w in zip(pairs, weights):
            graph.edges.append(ProcessEdge(parent.guid, child.guid, float(w)))
            graph.nodes[child.guid].weight = float(w)

    _break_cycles(graph)
    return graph


def _break_cycles(graph: ProcessGraph) -> None:
    while True:
        cycles = assert_dag(graph)
        if not cycles:
            return
        for cycle in cycles:
            # Drop the edge into the latest-created node of the cycle.
            def created(guid):
                ts = graph.nodes[guid].create_ts
                return (ts.timestamp() if ts else 0.0, guid)
            victim = max(cycle, key=created)
            before = len(graph.edges)
            graph.edges = [e for e in graph.edges if e.child_guid != victim]
            if len(graph.edges) < before:
                graph.nodes[victim].weight = None
                graph.cycle_breaks += 1
                log.warning("broke guid cycle at node %s", victim)
        # Re-check: breaking one cycle can expose another.


def assert_dag(graph: ProcessGraph):
    """Topological-sort acyclicity check. Returns a list of cycles (each
    a list of guids); empty means acyclic."""
    out_degree = {guid: 0 for guid in graph.nodes}
    parent_of = {}
    for e in graph.edges:
        out_degree[e.parent_guid] += 1
        parent_of[e.child_guid] = e.parent_guid

    queue = [guid for guid, deg in out_degree.items() if deg == 0]
    seen = set(queue)
    while queue:
        guid = queue.pop()
        parent = parent_of.get(guid)
        if parent is None:
            continue
        out_degree[parent] -= 1
        if out_degree[parent] == 0 and parent not in seen:
            seen.add(parent)
            queue.append(parent)

    leftovers = [guid for guid in graph.nodes if guid not in seen]
    cycles = []
    visited = set()
    for start in leftovers:
        if start in visited:
            continue
        path = []
        guid = start
        while guid not in visited and guid in parent_of:
            visited.add(guid)
            path.append(guid)
            guid = parent_of[guid]
        if guid in path:  # closed the loop
            cycles.append(path[path.index(guid):])
    return cycles
