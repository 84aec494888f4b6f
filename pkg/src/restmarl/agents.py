"""The four cooperating agents: operation, parameter, value and dependency.

The operation agent learns on its own with a reward that favours failing
operations.  The parameter, value and dependency agents share one reward that
favours 2xx responses and are updated together through ``joint_update``.
"""
from __future__ import annotations

import copy
import logging
import random
from dataclasses import dataclass, field

from .engine import Binding, DataBank, RequestPlan, ResponseRecord, ValueSource, record_success
from .learning import LearningConfig, QTable, independent_update, joint_update, select_action
from .semantics import NameSimilarity
from .spdg import (
    CONSUMER_LOCATIONS,
    Spdg,
    SpdgEdge,
    add_discovered_edge,
    consumer_key,
    producer_key,
    refine_edge,
)
from .spec_model import ApiSpec, OperationNode, input_fields, leaf_name
from .values import (
    LlmValueSource,
    MalformedCompletion,
    RandomPolicy,
    TransportFailure,
    databank_value,
    random_value,
)

logger = logging.getLogger(__name__)

OPERATION_STATE = "available"
PARAMETER_COMBINATION_LIMIT = 10
ALL_SOURCES = (ValueSource.DEPENDENCY, ValueSource.LLM, ValueSource.RANDOM)


# --- rewards -------------------------------------------------------------------


def operation_reward(status: int) -> int:
    if not 100 <= status <= 599:
        raise ValueError(f"status {status} outside 100-599")
    if status == 401:
        return -3
    if status == 405:
        return -10
    if status >= 500:
        return 2
    if status >= 400:
        return 1
    if 200 <= status < 300:
        return -1
    return 0


def shared_reward(status: int) -> int:
    if not 100 <= status <= 599:
        raise ValueError(f"status {status} outside 100-599")
    if 200 <= status < 300:
        return 2
    if 400 <= status < 500:
        return -2
    if status >= 500:
        return -1
    return 0


# --- state and action types ------------------------------------------------------


@dataclass(frozen=True)
class ParameterAgentState:
    operation_id: str
    available: tuple[str, ...]
    required: tuple[str, ...]

    def __post_init__(self):
        if not set(self.required) <= set(self.available):
            raise ValueError("required parameters must be available")

    @classmethod
    def of(cls, op: OperationNode) -> ParameterAgentState:
        return cls(op.id, tuple(p.name for p in op.parameters), tuple(op.required_names))


@dataclass(frozen=True)
class ValueAgentState:
    operation_id: str
    parameter: str
    kind: str
    constraints: object

    @property
    def key(self) -> str:
        return f"{self.operation_id}|{self.parameter}"


@dataclass
class DependencyChoice:
    consumer: tuple[str, str, str]
    producer: tuple[str, str, str]
    via_edge: SpdgEdge | None = None

    @property
    def random(self) -> bool:
        return self.via_edge is None


def combination_key(combination: tuple[str, ...]) -> str:
    return "+".join(combination) if combination else "(none)"


def parameter_action_space(
    state: ParameterAgentState,
    rng: random.Random,
    limit: int = PARAMETER_COMBINATION_LIMIT,
) -> list[tuple[str, ...]]:
    """Candidate parameter subsets, each containing every required parameter.

    Up to ``limit`` subsets: all of them when few enough exist, otherwise the
    required-only and all-parameter sets plus distinct random supersets.
    """
    required = [n for n in state.available if n in state.required]
    optional = [n for n in state.available if n not in state.required]

    def combo(chosen: set[str]) -> tuple[str, ...]:
        return tuple(n for n in state.available if n in state.required or n in chosen)

    if 2 ** len(optional) <= limit:
        subsets = sorted(range(2 ** len(optional)), key=lambda m: (bin(m).count("1"), m))
        return [combo({optional[i] for i in range(len(optional)) if mask >> i & 1}) for mask in subsets]

    out = [combo(set()), combo(set(optional))]
    while len(out) < limit:
        chosen = {n for n in optional if rng.random() < 0.5}
        candidate = combo(chosen)
        if candidate not in out:
            out.append(candidate)
    assert all(set(required) <= set(c) for c in out)
    return out


# --- the agent suite -------------------------------------------------------------


@dataclass
class Decision:
    """What the agents chose for one step, kept for the feedback pass."""

    operation: str
    combination: tuple[str, ...]
    plan: RequestPlan
    # value-agent states for the bound parameters, keyed by parameter name
    value_states: dict[str, str] = field(default_factory=dict)


class Agents:
    def __init__(
        self,
        spec: ApiSpec,
        spdg: Spdg,
        rng: random.Random,
        learning: LearningConfig = LearningConfig(),
        llm: LlmValueSource | None = None,
        similarity: NameSimilarity | None = None,
        random_policy: RandomPolicy = RandomPolicy(),
        learn: bool = True,
        use_spdg: bool = True,
        extra_headers: dict[str, str] | None = None,
    ):
        self.spec = spec
        self.spdg = spdg
        self.rng = rng
        self.learning = learning
        self.llm = llm
        self.similarity = similarity
        self.random_policy = random_policy
        self.learn = learn
        self.use_spdg = use_spdg
        self.extra_headers = dict(extra_headers or {})
        self.databank = DataBank()

        self.operation_q = QTable("operation")
        self.parameter_q = QTable("parameter")
        self.value_q = QTable("value")
        self.dependency_q = QTable("dependency")

        self.sources = ALL_SOURCES if llm is not None else (ValueSource.DEPENDENCY, ValueSource.RANDOM)
        self.combinations = {
            op.id: parameter_action_space(ParameterAgentState.of(op), rng) for op in spec.operations
        }
        for edge in spdg.edges:
            self.dependency_q.set(consumer_key(*edge.consumer), edge.action_key, edge.similarity)
        self._evaluated_outputs: set[tuple[str, str]] = set()

    @property
    def qtables(self) -> list[QTable]:
        return [self.operation_q, self.parameter_q, self.value_q, self.dependency_q]

    # -- selection ---------------------------------------------------------------

    def choose_plan(self, epsilon: float) -> Decision:
        rng = self.rng
        op_id = select_action(self.operation_q, OPERATION_STATE, self.spec.operation_ids, epsilon, rng)
        op = self.spec.operation(op_id)
        combos = self.combinations[op_id]
        keys = [combination_key(c) for c in combos]
        chosen_key = select_action(self.parameter_q, op_id, keys, epsilon, rng)
        combination = combos[keys.index(chosen_key)]

        bindings = []
        value_states = {}
        for name in combination:
            param = op.parameter(name)
            state = ValueAgentState(op_id, name, param.kind, param.constraints)
            value_states[name] = state.key
            source = select_action(self.value_q, state.key, list(self.sources), epsilon, rng)
            bindings.append(self._bind(op, param, ValueSource(source), epsilon))

        plan = RequestPlan(
            operation_id=op_id,
            method=op.method,
            path=op.path,
            bindings=bindings,
            declared_methods=tuple(self.spec.methods_for_path(op.path)),
            has_body=op.request_body is not None,
            extra_headers=dict(self.extra_headers),
        )
        return Decision(op_id, combination, plan, value_states)

    def _bind(self, op: OperationNode, param, source: ValueSource, epsilon: float) -> Binding:
        if source is ValueSource.DEPENDENCY:
            choice = dependency_lookup(self, (op.id, param.name, param.location), epsilon, self.rng)
            if choice is not None:
                value = databank_value(self.databank, choice, self.rng)
                edge_key = choice.via_edge.key if choice.via_edge is not None else None
                return Binding(param, value, source, choice.producer, edge_key, choice.random)
            source = ValueSource.LLM if self.llm is not None else ValueSource.RANDOM
        if source is ValueSource.LLM:
            values = self._llm_candidates(op, param)
            if values:
                return Binding(param, copy.deepcopy(self.rng.choice(values)), source)
            source = ValueSource.RANDOM
        value = random_value(param.kind, param.constraints, self.random_policy, self.rng, param.schema)
        return Binding(param, value, ValueSource.RANDOM)

    def _llm_candidates(self, op: OperationNode, param) -> list:
        if self.llm is None:
            return []
        try:
            return self.llm.values(self.llm.request_for(op.id, param))
        except (TransportFailure, MalformedCompletion) as exc:
            logger.warning("LLM values unavailable for %s.%s: %s", op.id, param.name, exc)
            return []

    # -- feedback ----------------------------------------------------------------

    def apply_feedback(self, decision: Decision, sent: RequestPlan, response: ResponseRecord) -> None:
        apply_feedback(self, decision, sent, response)


def dependency_lookup(
    agents: Agents,
    consumer: tuple[str, str, str],
    epsilon: float,
    rng: random.Random,
) -> DependencyChoice | None:
    """Pick a stored producer value for ``consumer`` or return ``None``.

    Exploits the highest-Q live edge whose producer has stored values; with
    probability ``epsilon`` (or when no such edge exists) queries a uniformly
    random stored field instead.
    """
    databank = agents.databank
    available = databank.available()
    if not available:
        return None
    op, field_name, location = consumer
    ckey = consumer_key(op, field_name, location)

    if agents.use_spdg and rng.random() >= epsilon:
        edges = [e for e in agents.spdg.outgoing(op, field_name) if databank.values(*_store_of(e.producer))]
        if edges:
            values = [agents.dependency_q.get(ckey, e.action_key) for e in edges]
            best = max(values)
            ties = [e for e, v in zip(edges, values) if v == best]
            edge = ties[0] if len(ties) == 1 else rng.choice(ties)
            return DependencyChoice(consumer, edge.producer, edge)

    producer = rng.choice(available)
    edge = agents.spdg.find(op, field_name, producer[0], producer[1]) if agents.use_spdg else None
    if edge is not None and (edge.pruned or edge.producer_target != producer[2]):
        edge = None
    return DependencyChoice(consumer, producer, edge)


def _store_of(producer: tuple[str, str, str]) -> tuple[str, str, str]:
    op, field_name, target = producer
    return op, target, field_name


def apply_feedback(agents: Agents, decision: Decision, sent: RequestPlan, response: ResponseRecord) -> None:
    """Learn from one exchange.

    Transport errors teach nothing.  Mutated requests update only the
    operation agent; they never refine edges or feed the data bank.
    """
    if response.transport_error:
        return
    status = response.status
    cfg = agents.learning
    if agents.learn:
        independent_update(
            agents.operation_q, OPERATION_STATE, decision.operation, operation_reward(status),
            agents.spec.operation_ids, cfg,
        )
    if sent.mutated:
        return

    plan = decision.plan
    success = response.ok
    op = agents.spec.operation(decision.operation)

    if success:
        for b in plan.bindings:
            if b.random_dependency and b.producer is not None and b.producer[0] != op.id and b.location in CONSUMER_LOCATIONS:
                if agents.spdg.find(op.id, b.name, b.producer[0], b.producer[1]) is None:
                    edge = add_discovered_edge(agents.spdg, (op.id, b.name, b.location), b.producer)
                    agents.dependency_q.set(consumer_key(*edge.consumer), edge.action_key, edge.refined_weight)
                    b.edge_key = edge.key

    if agents.learn:
        participants = []
        next_sets = []
        combos = agents.combinations[op.id]
        participants.append((agents.parameter_q, op.id, combination_key(decision.combination)))
        next_sets.append([combination_key(c) for c in combos])
        sources = [s.value for s in agents.sources]
        for b in plan.bindings:
            participants.append((agents.value_q, decision.value_states[b.name], b.source.value))
            next_sets.append(sources)
            if b.producer is not None:
                ckey = consumer_key(op.id, b.name, b.location)
                action = producer_key(*b.producer)
                live = [e.action_key for e in agents.spdg.outgoing(op.id, b.name)]
                participants.append((agents.dependency_q, ckey, action))
                next_sets.append(live + ([action] if action not in live else []))
        joint_update(participants, shared_reward(status), next_sets, cfg)

    for b in plan.bindings:
        if b.edge_key is None:
            continue
        edge = agents.spdg.find(*b.edge_key)
        if edge is not None:
            refine_edge(agents.spdg, edge, "success" if success else "failure")

    if success:
        undocumented = record_success(agents.databank, plan, response, op)
        if agents.use_spdg and agents.similarity is not None:
            evaluate_undocumented(agents, op.id, undocumented)


def evaluate_undocumented(agents: Agents, producer_op: str, paths: list[str]) -> list[SpdgEdge]:
    """Link response fields missing from the documentation to similar inputs elsewhere."""
    added = []
    threshold = agents.spdg.config.similarity_threshold
    for path in paths:
        if (producer_op, path) in agents._evaluated_outputs:
            continue
        agents._evaluated_outputs.add((producer_op, path))
        for other in agents.spec.operations:
            if other.id == producer_op:
                continue
            for field_name, location in input_fields(other):
                if location not in CONSUMER_LOCATIONS:
                    continue
                score = agents.similarity(leaf_name(field_name), leaf_name(path))
                if score <= threshold or agents.spdg.find(other.id, field_name, producer_op, path) is not None:
                    continue
                edge = add_discovered_edge(
                    agents.spdg, (other.id, field_name, location), (producer_op, path, "response"), score
                )
                agents.dependency_q.set(consumer_key(*edge.consumer), edge.action_key, score)
                added.append(edge)
    return added
