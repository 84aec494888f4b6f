"""Value sources: typed random values, LLM-backed values, stored dependency values."""
from __future__ import annotations

import copy
import datetime as _dt
import hashlib
import json
import logging
import os
import random
import string
import uuid
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Protocol

import httpx
import regex

from .engine import DataBank
from .spec_model import ConstraintSet, SchemaNode

logger = logging.getLogger(__name__)

ALPHABET = string.ascii_letters + string.digits
DEFAULT_LLM_COUNT = 10
API_KEY_ENV = "RESTMARL_LLM_API_KEY"


class TransportFailure(RuntimeError):
    pass


class MalformedCompletion(ValueError):
    pass


class EmptyStore(LookupError):
    pass


# --- random --------------------------------------------------------------------


@dataclass(frozen=True)
class RandomPolicy:
    string_len: tuple[int, int] = (1, 50)
    int_range: tuple[int, int] = (-1024, 1024)
    number_range: tuple[float, float] = (-1024.0, 1024.0)
    array_len: tuple[int, int] = (0, 3)


def _formatted(fmt: str | None, rng: random.Random) -> str | None:
    if fmt == "date":
        day = _dt.date(1970, 1, 1) + _dt.timedelta(days=rng.randint(0, 40000))
        return day.isoformat()
    if fmt == "date-time":
        moment = _dt.datetime(1970, 1, 1) + _dt.timedelta(seconds=rng.randint(0, 3_000_000_000))
        return moment.isoformat() + "Z"
    if fmt == "uuid":
        return str(uuid.UUID(int=rng.getrandbits(128), version=4))
    return None


def random_value(
    kind: str,
    constraints: ConstraintSet | None = None,
    policy: RandomPolicy = RandomPolicy(),
    rng: random.Random | None = None,
    schema: SchemaNode | None = None,
) -> Any:
    """A type-correct value that deliberately ignores the schema constraints."""
    rng = rng or random.Random()
    if kind == "string":
        special = _formatted(schema.format if schema else None, rng)
        if special is not None:
            return special
        n = rng.randint(*policy.string_len)
        return "".join(rng.choice(ALPHABET) for _ in range(n))
    if kind == "integer":
        return rng.randint(*policy.int_range)
    if kind == "number":
        return rng.uniform(*policy.number_range)
    if kind == "boolean":
        return rng.random() < 0.5
    if kind == "array":
        item = schema.items if schema is not None and schema.items is not None else SchemaNode()
        return [random_value(item.kind, None, policy, rng, item) for _ in range(rng.randint(*policy.array_len))]
    if kind == "object":
        props = schema.properties if schema is not None else {}
        return {name: random_value(sub.kind, None, policy, rng, sub) for name, sub in props.items()}
    raise ValueError(f"unsupported kind {kind!r}")


# --- LLM -----------------------------------------------------------------------


@dataclass(frozen=True)
class LlmRequest:
    operation_id: str
    parameter: str
    kind: str
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    examples: tuple = ()
    count: int = DEFAULT_LLM_COUNT
    schema: SchemaNode | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")

    @property
    def format(self) -> str | None:
        return self.schema.format if self.schema is not None else None


@dataclass(frozen=True)
class LlmClientConfig:
    endpoint: str
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.8
    api_key_env: str = API_KEY_ENV
    timeout: float = 30.0

    def __post_init__(self):
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must be in [0, 2]")

    @property
    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env) or None


class LlmBackend(Protocol):
    def generate(self, request: LlmRequest) -> list[Any]: ...


def prompt_template() -> str:
    return (resources.files("restmarl") / "data" / "llm_prompt_v1.txt").read_text(encoding="utf-8")


def build_messages(request: LlmRequest) -> list[dict[str, str]]:
    text = prompt_template()
    fields = {
        "{parameter}": request.parameter,
        "{kind}": request.kind + (f", format {request.format}" if request.format else ""),
        "{operation}": request.operation_id,
        "{constraints}": json.dumps(request.constraints.to_dict(), sort_keys=True),
        "{examples}": json.dumps(list(request.examples), default=str),
        "{count}": str(request.count),
    }
    for token, value in fields.items():
        text = text.replace(token, value)
    return [
        {"role": "system", "content": "You are a REST API testing assistant."},
        {"role": "user", "content": text},
    ]


def parse_completion(content: str) -> list[Any]:
    start, end = content.find("["), content.rfind("]")
    if start < 0 or end <= start:
        raise MalformedCompletion(f"no JSON array in completion: {content[:80]!r}")
    try:
        values = json.loads(content[start : end + 1])
    except json.JSONDecodeError as exc:
        raise MalformedCompletion(str(exc)) from exc
    if not isinstance(values, list):
        raise MalformedCompletion("completion is not a JSON array")
    return values


class ChatCompletionsBackend:
    """POSTs ``{model, temperature, messages}`` and reads ``choices[0].message.content``."""

    def __init__(self, config: LlmClientConfig, client: httpx.Client | None = None):
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout)

    def generate(self, request: LlmRequest) -> list[Any]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        payload = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": build_messages(request),
        }
        try:
            resp = self.client.post(self.config.endpoint, json=payload, headers=headers, timeout=self.config.timeout)
        except httpx.HTTPError as exc:
            raise TransportFailure(str(exc)) from exc
        if resp.status_code >= 400:
            raise TransportFailure(f"LLM endpoint answered {resp.status_code}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedCompletion(f"unexpected completion envelope: {exc}") from exc
        return parse_completion(content)


_FIRST = ("john", "maria", "wei", "amara", "lukas", "sofia", "omar", "yuki", "elena", "david")
_LAST = ("doe", "garcia", "chen", "okafor", "schmidt", "rossi", "haddad", "tanaka", "novak", "smith")
_DOMAINS = ("example.com", "mail.org", "example.net", "test.io")


class StubBackend:
    """Deterministic, offline stand-in for a chat model.

    Output depends only on the request and ``seed``.  Constraint handling, in
    order: enum values, specification examples, then a template chosen from
    the pattern (e-mail, alphanumeric, letters and spaces), falling back to
    alphanumerics padded to ``minLength``.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed

    def _rng(self, request: LlmRequest) -> random.Random:
        tag = json.dumps(
            [
                self.seed,
                request.operation_id,
                request.parameter,
                request.kind,
                request.constraints.to_dict(),
                list(request.examples),
                request.count,
                request.format,
            ],
            sort_keys=True,
            default=str,
        )
        return random.Random(int.from_bytes(hashlib.sha256(tag.encode()).digest()[:8], "big"))

    def generate(self, request: LlmRequest) -> list[Any]:
        rng = self._rng(request)
        cons = request.constraints
        out: list[Any] = []
        if cons.enum_values:
            out.extend(cons.enum_values)
        out.extend(request.examples)
        attempts = 0
        while len(out) < request.count and attempts < request.count * 4:
            attempts += 1
            value = self._candidate(request, rng, len(out))
            if value not in out:
                out.append(value)
        return out[: max(request.count, len(cons.enum_values or ()))]

    def _candidate(self, request: LlmRequest, rng: random.Random, index: int) -> Any:
        kind, cons = request.kind, request.constraints
        if kind == "boolean":
            return index % 2 == 0
        if kind in ("integer", "number"):
            lo = cons.minimum if cons.minimum is not None else (cons.maximum - 1000 if cons.maximum is not None else 1)
            hi = cons.maximum if cons.maximum is not None else lo + 999
            if kind == "integer":
                return rng.randint(int(lo), int(hi))
            return round(rng.uniform(lo, hi), 2)
        if kind == "array":
            item = request.schema.items if request.schema and request.schema.items else SchemaNode()
            sub = LlmRequest(request.operation_id, request.parameter, item.kind, item.constraints, (), 2, item)
            return self.generate(sub)[: rng.randint(1, 2)]
        if kind == "object":
            props = request.schema.properties if request.schema else {}
            return {
                name: self.generate(LlmRequest(request.operation_id, name, s.kind, s.constraints, (), 1, s))[0]
                for name, s in props.items()
            }
        return self._string(request, rng, index)

    def _string(self, request: LlmRequest, rng: random.Random, index: int) -> str:
        cons = request.constraints
        special = _formatted(request.format, rng)
        if special is not None:
            return special
        first = _FIRST[index % len(_FIRST)]
        last = _LAST[0] if index == 0 else rng.choice(_LAST)
        pattern = cons.pattern or ""
        lowered = request.parameter.lower()
        if request.format == "email" or "@" in pattern or "mail" in lowered:
            value = f"{first}.{last}@{_DOMAINS[0]}" if index == 0 else f"{first}.{last}{rng.randint(1, 99)}@{rng.choice(_DOMAINS)}"
        elif "\\pL" in pattern or "\\p{L}" in pattern or (not pattern and "name" in lowered):
            value = f"{first.title()} {last.title()}"
        elif pattern and regex.fullmatch(r"\^?\[[a-zA-Z0-9\-]+\][+*]\$?", pattern):
            value = self._alnum(rng, cons, default_len=10)
        elif pattern:
            value = self._alnum(rng, cons, default_len=8)
        else:
            stem = "".join(ch for ch in lowered if ch.isalnum()) or "value"
            value = f"{stem}{rng.randint(100, 999)}"
        return _fit_length(value, cons, rng)

    def _alnum(self, rng: random.Random, cons: ConstraintSet, default_len: int) -> str:
        lo = cons.min_length or 1
        hi = cons.max_length or max(lo, default_len + 4)
        n = min(max(default_len, lo), hi)
        # lead with a letter and include a digit: looks like a real password/id
        chars = [rng.choice(string.ascii_letters)] + [rng.choice(ALPHABET) for _ in range(n - 2)]
        if n >= 2:
            chars.append(rng.choice(string.digits))
        return "".join(chars)[:n]


def _fit_length(value: str, cons: ConstraintSet, rng: random.Random) -> str:
    if cons.min_length is not None and len(value) < cons.min_length:
        value += "".join(rng.choice(ALPHABET) for _ in range(cons.min_length - len(value)))
    if cons.max_length is not None and len(value) > cons.max_length:
        value = value[: cons.max_length]
    return value


def _coerce(kind: str, value: Any) -> Any:
    """Map a candidate to ``kind`` or return ``None`` when it cannot be."""
    if kind == "string":
        return value if isinstance(value, str) else (json.dumps(value) if isinstance(value, (dict, list)) else str(value))
    if kind == "integer":
        if isinstance(value, bool):
            return None
        if isinstance(value, int):
            return value
        try:
            return int(str(value).strip())
        except ValueError:
            return None
    if kind == "number":
        if isinstance(value, bool):
            return None
        try:
            return float(value) if not isinstance(value, (int, float)) else value
        except (TypeError, ValueError):
            return None
    if kind == "boolean":
        if isinstance(value, bool):
            return value
        return {"true": True, "false": False}.get(str(value).lower())
    if kind == "array":
        return value if isinstance(value, list) else None
    if kind == "object":
        return value if isinstance(value, dict) else None
    return value


def satisfies(value: Any, constraints: ConstraintSet) -> bool:
    """Pattern and length checks used to filter LLM candidates."""
    if not isinstance(value, str):
        return True
    if constraints.pattern:
        try:
            if regex.search(constraints.pattern, value) is None:
                return False
        except regex.error:
            logger.debug("cannot compile pattern %r; not filtering", constraints.pattern)
    if constraints.min_length is not None and len(value) < constraints.min_length:
        return False
    if constraints.max_length is not None and len(value) > constraints.max_length:
        return False
    return True


class LlmValueSource:
    """Caching front end over an LLM backend: one generation per (operation, parameter)."""

    def __init__(self, backend: LlmBackend, count: int = DEFAULT_LLM_COUNT):
        self.backend = backend
        self.count = count
        self.cache: dict[tuple[str, str], tuple] = {}
        self.generations = 0

    def request_for(self, operation_id: str, param) -> LlmRequest:
        examples = (param.example,) if param.example is not None else ()
        return LlmRequest(operation_id, param.name, param.kind, param.constraints, examples, self.count, param.schema)

    def values(self, request: LlmRequest) -> list[Any]:
        return llm_values(self, request)


def llm_values(client: LlmValueSource, request: LlmRequest) -> list[Any]:
    """Cached candidate list for ``request``; generates at most once per key.

    :raises TransportFailure: the backend could not be reached.
    :raises MalformedCompletion: two consecutive unparseable completions.
    """
    key = (request.operation_id, request.parameter)
    if key in client.cache:
        return list(client.cache[key])
    client.generations += 1
    try:
        raw = client.backend.generate(request)
    except MalformedCompletion:
        logger.info("malformed completion for %s.%s, retrying once", *key)
        raw = client.backend.generate(request)
    values = []
    for candidate in raw:
        value = _coerce(request.kind, candidate)
        if value is None or not satisfies(value, request.constraints):
            continue
        if value not in values:
            values.append(value)
    client.cache[key] = tuple(values)
    return list(values)


# --- stored values -------------------------------------------------------------


def databank_value(databank: DataBank, choice, rng: random.Random) -> Any:
    """Uniform pick among the stored values of ``choice.producer``."""
    op, field_name, target = choice.producer
    stored = databank.values(op, target, field_name)
    if not stored:
        raise EmptyStore(f"no stored values for {target}:{field_name} of {op}")
    return copy.deepcopy(rng.choice(stored))
