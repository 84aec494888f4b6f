"""Tabular Q-learning: tables, epsilon-greedy selection, TD updates.

Two update rules are provided.  ``independent_update`` is the ordinary
one-agent rule.  ``joint_update`` treats the joint Q-value as the sum of the
participants' Q-values and applies one shared TD error to every participant.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterable, Sequence


class EmptyActionSet(ValueError):
    pass


class ZeroBudget(ValueError):
    pass


@dataclass(frozen=True)
class LearningConfig:
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1

    def __post_init__(self):
        # alpha == 0 is tolerated for tests that freeze the table
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not self.epsilon_start >= self.epsilon_end >= 0:
            raise ValueError("need epsilon_start >= epsilon_end >= 0")


class QTable:
    """Sparse state -> action -> value map; unseen pairs read as 0."""

    def __init__(self, name: str = ""):
        self.name = name
        self.entries: dict[str, dict[str, float]] = {}

    def get(self, state: str, action: str) -> float:
        return self.entries.get(state, {}).get(action, 0.0)

    def set(self, state: str, action: str, value: float) -> None:
        if not math.isfinite(value):
            raise ValueError(f"non-finite Q-value {value!r} for ({state!r}, {action!r})")
        self.entries.setdefault(state, {})[action] = float(value)

    def max_q(self, state: str, actions: Iterable[str]) -> float:
        values = [self.get(state, a) for a in actions]
        return max(values) if values else 0.0

    def rows(self) -> list[dict]:
        return [
            {"agent": self.name, "state_key": s, "action_key": a, "q": q}
            for s, acts in self.entries.items()
            for a, q in acts.items()
        ]

    def __len__(self) -> int:
        return sum(len(a) for a in self.entries.values())


@dataclass(frozen=True)
class TdTrace:
    agent: str
    state: str
    action: str
    reward: float
    delta: float
    old_q: float
    new_q: float
    joint: bool = False


def epsilon_at(elapsed: float, budget: float, config: LearningConfig = LearningConfig()) -> float:
    """Linear decay from ``epsilon_start`` to ``epsilon_end`` across ``budget``."""
    if budget <= 0:
        raise ZeroBudget("epsilon schedule needs a positive budget")
    if elapsed < 0:
        raise ValueError("elapsed must be non-negative")
    frac = min(elapsed / budget, 1.0)
    return config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac


def select_action(
    qtable: QTable,
    state: str,
    actions: Sequence[str],
    epsilon: float,
    rng: random.Random,
) -> str:
    if not actions:
        raise EmptyActionSet(f"no actions available in state {state!r}")
    if rng.random() < epsilon:
        return rng.choice(actions)
    values = [qtable.get(state, a) for a in actions]
    best = max(values)
    ties = [a for a, v in zip(actions, values) if v == best]
    return ties[0] if len(ties) == 1 else rng.choice(ties)


def independent_update(
    qtable: QTable,
    state: str,
    action: str,
    reward: float,
    next_actions: Sequence[str],
    config: LearningConfig,
    next_state: str | None = None,
) -> TdTrace:
    """One Q-learning step; the next state defaults to the current one."""
    next_state = state if next_state is None else next_state
    old = qtable.get(state, action)
    delta = reward + config.gamma * qtable.max_q(next_state, next_actions) - old
    new = old + config.alpha * delta
    qtable.set(state, action, new)
    return TdTrace(qtable.name, state, action, reward, delta, old, new)


def joint_update(
    tables: Sequence[tuple[QTable, str, str]],
    reward: float,
    next_action_sets: Sequence[Sequence[str]],
    config: LearningConfig,
) -> list[TdTrace]:
    """Value-decomposition step shared by every ``(table, state, action)`` participant.

    The joint max over next actions is taken as the sum of per-participant
    maxima, which is exact for an additive joint value.
    """
    if not tables:
        raise ValueError("joint_update needs at least one participant")
    if len(next_action_sets) != len(tables):
        raise ValueError("one next-action set per participant is required")
    current = 0.0
    for table, s, a in tables:
        current += table.get(s, a)
    best_next = 0.0
    for (table, s, _), actions in zip(tables, next_action_sets):
        best_next += table.max_q(s, actions)
    delta = reward + config.gamma * best_next - current

    traces = []
    for table, s, a in tables:
        old = table.get(s, a)
        new = old + config.alpha * delta
        table.set(s, a, new)
        traces.append(TdTrace(table.name, s, a, reward, delta, old, new, joint=True))
    return traces


def joint_max(per_agent: Sequence[Sequence[float]]) -> float:
    """max over the action product of the summed values, via per-agent maxima."""
    total = 0.0
    for values in per_agent:
        total += max(values)
    return total
