"""Semantic property dependency graph.

An edge ``a -> b`` says that some output (or stored input) of operation ``b``
may supply a value for an input field of operation ``a``.  Edges are seeded
from name similarity and then strengthened or weakened by server feedback.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .semantics import EmbeddingTable, NameSimilarity
from .spec_model import ApiSpec, input_fields, leaf_name, output_fields

CONSUMER_LOCATIONS = ("query", "body", "path")
PRODUCER_TARGETS = ("parameters", "body", "response")


class UnknownEdge(KeyError):
    pass


class DuplicateEdge(ValueError):
    pass


@dataclass(frozen=True)
class SpdgConfig:
    similarity_threshold: float = 0.7
    fallback_top_k: int = 5
    refine_step: float = 0.05
    prune_floor: float = 0.1
    discovered_weight: float = 0.75

    def __post_init__(self):
        if not 0 < self.similarity_threshold < 1:
            raise ValueError("similarity_threshold must be in (0, 1)")
        if self.fallback_top_k < 1:
            raise ValueError("fallback_top_k must be >= 1")
        if not 0 < self.refine_step < 1:
            raise ValueError("refine_step must be in (0, 1)")
        if not 0 <= self.discovered_weight <= 1:
            raise ValueError("discovered_weight must be in [0, 1]")


@dataclass
class SpdgEdge:
    consumer_op: str
    consumer_field: str
    consumer_location: str
    producer_op: str
    producer_field: str
    producer_target: str
    similarity: float
    refined_weight: float
    origin: str = "semantic"
    fallback: bool = False
    pruned: bool = False

    def __post_init__(self):
        if self.consumer_location not in CONSUMER_LOCATIONS:
            raise ValueError(f"bad consumer location {self.consumer_location!r}")
        if self.producer_target not in PRODUCER_TARGETS:
            raise ValueError(f"bad producer target {self.producer_target!r}")
        if self.origin not in ("semantic", "discovered"):
            raise ValueError(f"bad origin {self.origin!r}")

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.consumer_op, self.consumer_field, self.producer_op, self.producer_field)

    @property
    def consumer(self) -> tuple[str, str, str]:
        return (self.consumer_op, self.consumer_field, self.consumer_location)

    @property
    def producer(self) -> tuple[str, str, str]:
        return (self.producer_op, self.producer_field, self.producer_target)

    @property
    def action_key(self) -> str:
        """How the dependency agent names this edge in its Q-table."""
        return producer_key(*self.producer)


def consumer_key(op: str, field: str, location: str) -> str:
    return f"{op}|{location}:{field}"


def producer_key(op: str, field: str, target: str) -> str:
    return f"{op}|{target}:{field}"


class Spdg:
    def __init__(self, nodes: list[str], config: SpdgConfig = SpdgConfig()):
        self.nodes = list(nodes)
        self.config = config
        self.edges: list[SpdgEdge] = []
        self._index: dict[tuple, SpdgEdge] = {}

    def _insert(self, edge: SpdgEdge) -> SpdgEdge:
        if edge.consumer_op == edge.producer_op:
            raise ValueError(f"self-edge on {edge.consumer_op!r}")
        if edge.key in self._index:
            raise DuplicateEdge(f"edge {edge.key} already present")
        self.edges.append(edge)
        self._index[edge.key] = edge
        return edge

    def find(self, consumer_op: str, consumer_field: str, producer_op: str, producer_field: str) -> SpdgEdge | None:
        return self._index.get((consumer_op, consumer_field, producer_op, producer_field))

    def __contains__(self, edge: SpdgEdge) -> bool:
        return self._index.get(edge.key) is edge

    def outgoing(self, consumer_op: str, consumer_field: str | None = None, include_pruned: bool = False) -> list[SpdgEdge]:
        return [
            e
            for e in self.edges
            if e.consumer_op == consumer_op
            and (consumer_field is None or e.consumer_field == consumer_field)
            and (include_pruned or not e.pruned)
        ]

    def operation_weight(self, consumer_op: str, producer_op: str) -> float:
        """Operation-level weight: the best refined field-pair weight."""
        weights = [
            e.refined_weight
            for e in self.edges
            if e.consumer_op == consumer_op and e.producer_op == producer_op and not e.pruned
        ]
        return max(weights, default=0.0)

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "config": asdict(self.config),
            "edges": [asdict(e) for e in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_dot(self) -> str:
        lines = ["digraph spdg {", "  rankdir=LR;"]
        for node in self.nodes:
            lines.append(f"  {json.dumps(node)};")
        for e in self.edges:
            style = "dashed" if e.pruned else ("dotted" if e.origin == "discovered" else "solid")
            label = f"{e.consumer_field} <- {e.producer_target}.{e.producer_field} ({e.refined_weight:.2f})"
            lines.append(
                f"  {json.dumps(e.consumer_op)} -> {json.dumps(e.producer_op)} "
                f"[label={json.dumps(label)}, style={style}];"
            )
        lines.append("}")
        return "\n".join(lines) + "\n"


def _consumer_location(location: str) -> str:
    # headers never become dependency consumers
    return location if location in CONSUMER_LOCATIONS else ""


def build_spdg(spec: ApiSpec, table: EmbeddingTable, config: SpdgConfig = SpdgConfig()) -> Spdg:
    """Seed the graph from name similarity between inputs and 2xx outputs.

    Field pairs scoring above the threshold each get an edge.  An operation
    left without outgoing edges is linked to its ``fallback_top_k`` most
    similar producers, ranked by their best field-pair score.
    """
    graph = Spdg([op.id for op in spec.operations], config)
    sim = NameSimilarity(table)
    inputs = {
        op.id: [(f, loc) for f, loc in input_fields(op) if _consumer_location(loc)] for op in spec.operations
    }
    outputs = {op.id: output_fields(op) for op in spec.operations}

    for a in spec.operations:
        for b in spec.operations:
            if a.id == b.id:
                continue
            for field, loc in inputs[a.id]:
                for out in outputs[b.id]:
                    score = sim(leaf_name(field), leaf_name(out))
                    if score > config.similarity_threshold:
                        graph._insert(SpdgEdge(a.id, field, loc, b.id, out, "response", score, score))

    for a in spec.operations:
        if graph.outgoing(a.id) or not inputs[a.id]:
            continue
        ranked = []
        for b in spec.operations:
            if a.id == b.id or not outputs[b.id]:
                continue
            best = None
            for field, loc in inputs[a.id]:
                for out in outputs[b.id]:
                    score = sim(leaf_name(field), leaf_name(out))
                    if best is None or score > best[0]:
                        best = (score, field, loc, out)
            ranked.append((best, b.id))
        # stable sort keeps spec order among equal scores
        ranked.sort(key=lambda item: -item[0][0])
        for (score, field, loc, out), producer in ranked[: config.fallback_top_k]:
            weight = min(max(score, 0.0), 1.0)
            graph._insert(SpdgEdge(a.id, field, loc, producer, out, "response", weight, weight, fallback=True))
    return graph


def refine_edge(graph: Spdg, edge: SpdgEdge, outcome: str) -> SpdgEdge:
    if edge not in graph:
        raise UnknownEdge(edge.key)
    step = graph.config.refine_step
    if outcome == "success":
        weight = edge.refined_weight + step
    elif outcome == "failure":
        weight = edge.refined_weight - step
    else:
        raise ValueError(f"outcome must be 'success' or 'failure', got {outcome!r}")
    edge.refined_weight = min(max(weight, 0.0), 1.0)
    if edge.refined_weight < graph.config.prune_floor:
        edge.pruned = True
    return edge


def add_discovered_edge(
    graph: Spdg,
    consumer: tuple[str, str, str],
    producer: tuple[str, str, str],
    initial_weight: float | None = None,
) -> SpdgEdge:
    weight = graph.config.discovered_weight if initial_weight is None else initial_weight
    if not 0 <= weight <= 1:
        raise ValueError(f"initial weight must be in [0, 1], got {weight}")
    c_op, c_field, c_loc = consumer
    p_op, p_field, p_target = producer
    return graph._insert(SpdgEdge(c_op, c_field, c_loc, p_op, p_field, p_target, weight, weight, origin="discovered"))
