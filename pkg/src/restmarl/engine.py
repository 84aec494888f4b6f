"""Request construction, mutation, dispatch and the store of successful values."""
from __future__ import annotations

import copy
import enum
import json
import random
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Protocol
from urllib.parse import quote, urlencode

import httpx

from .spec_model import ApiSpec, OperationNode, ParameterDef, output_fields

STANDARD_METHODS = ("GET", "POST", "PUT", "DELETE", "PATCH")
DEFAULT_TIMEOUT = 10.0
STORE_CAP = 100

_BAD_CONTENT_TYPES = ("text/plain", "application/xml", "application/x-www-form-urlencoded", "invalid/type")


class ValueSource(str, enum.Enum):
    DEPENDENCY = "DEPENDENCY"
    LLM = "LLM"
    RANDOM = "RANDOM"


class MutationKind(str, enum.Enum):
    DROP_REQUIRED = "drop_required"
    WRONG_TYPE = "wrong_type"
    INVALID_CONTENT_TYPE = "invalid_content_type"
    OVERLONG_STRING = "overlong_string"
    METHOD_SWAP = "method_swap"


class UnboundPathVariable(ValueError):
    pass


@dataclass
class Binding:
    param: ParameterDef
    value: Any
    source: ValueSource
    # (producer op, field, target) when the value came from the DataBank
    producer: tuple[str, str, str] | None = None
    edge_key: tuple | None = None
    random_dependency: bool = False

    @property
    def name(self) -> str:
        return self.param.name

    @property
    def location(self) -> str:
        return self.param.location


@dataclass
class RequestPlan:
    operation_id: str
    method: str
    path: str
    bindings: list[Binding] = field(default_factory=list)
    declared_methods: tuple[str, ...] = ()
    has_body: bool = False
    content_type: str | None = None
    extra_headers: dict[str, str] = field(default_factory=dict)
    mutated: bool = False
    mutation_kind: MutationKind | None = None

    def __post_init__(self):
        if self.mutated != (self.mutation_kind is not None):
            raise ValueError("mutated must be set exactly when mutation_kind is")

    def binding(self, name: str) -> Binding | None:
        for b in self.bindings:
            if b.name == name:
                return b
        return None

    def sources(self) -> dict[str, str]:
        return {b.name: b.source.value for b in self.bindings}


@dataclass(frozen=True)
class HttpRequest:
    method: str
    path: str
    query: tuple[tuple[str, str], ...] = ()
    headers: tuple[tuple[str, str], ...] = ()
    body: bytes | None = None

    @property
    def target(self) -> str:
        return self.path + ("?" + urlencode(self.query) if self.query else "")

    def header(self, name: str) -> str | None:
        for k, v in self.headers:
            if k.lower() == name.lower():
                return v
        return None


@dataclass(frozen=True)
class ResponseRecord:
    status: int
    headers: dict[str, str] = field(default_factory=dict)
    body: str = ""
    latency: float = 0.0
    timestamp: float = 0.0
    error: str | None = None

    def __post_init__(self):
        if self.error is None and not 100 <= self.status <= 599:
            raise ValueError(f"status {self.status} outside 100-599")

    @property
    def transport_error(self) -> bool:
        return self.error is not None

    @property
    def ok(self) -> bool:
        return self.error is None and 200 <= self.status < 300


# --- building ------------------------------------------------------------------


def _text(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (dict, list)):
        return json.dumps(value, separators=(",", ":"))
    if value is None:
        return ""
    return str(value)


def build_request(plan: RequestPlan, spec: ApiSpec | None = None) -> HttpRequest:
    """Turn a plan into a concrete request: path substitution, query, JSON body."""
    path = plan.path
    for b in plan.bindings:
        if b.location == "path":
            path = path.replace("{" + b.name + "}", quote(_text(b.value), safe=""))
    if "{" in path:
        missing = path[path.index("{") + 1 : path.index("}")] if "}" in path else path
        raise UnboundPathVariable(f"{plan.operation_id}: no value bound for path variable {missing!r}")

    query = []
    for b in plan.bindings:
        if b.location != "query":
            continue
        if isinstance(b.value, list):
            query.extend((b.name, _text(v)) for v in b.value)
        else:
            query.append((b.name, _text(b.value)))

    headers = [(b.name, _text(b.value)) for b in plan.bindings if b.location == "header"]
    headers.extend(plan.extra_headers.items())

    body_bindings = [b for b in plan.bindings if b.location == "body"]
    has_body = plan.has_body or bool(body_bindings)
    if spec is not None and not has_body:
        try:
            has_body = spec.operation(plan.operation_id).request_body is not None
        except KeyError:
            pass
    body = None
    if has_body:
        if len(body_bindings) == 1 and body_bindings[0].param.name == "body" and (
            body_bindings[0].param.schema is None or body_bindings[0].param.schema.kind != "object"
            or not body_bindings[0].param.schema.properties
        ):
            payload = body_bindings[0].value
        else:
            payload = {b.name: b.value for b in body_bindings}
        body = json.dumps(payload).encode("utf-8")
    content_type = plan.content_type or ("application/json" if body is not None else None)
    if content_type is not None:
        headers.append(("Content-Type", content_type))
    return HttpRequest(plan.method, path, tuple(query), tuple(headers), body)


# --- mutation ------------------------------------------------------------------


def _wrong_typed(kind: str, rng: random.Random) -> Any:
    if kind == "string":
        return rng.randint(-99999, 99999)
    if kind in ("integer", "number"):
        return rng.choice(["not-a-number", "NaN", "12abc", ""])
    if kind == "boolean":
        return rng.choice(["maybe", 2, "yes-no"])
    if kind == "array":
        return rng.choice([{"unexpected": 1}, "not-a-list", 0])
    return rng.choice([["unexpected"], "not-an-object", 0])


def _applicable(plan: RequestPlan) -> list[MutationKind]:
    kinds = []
    if any(b.param.required and b.location != "path" for b in plan.bindings):
        kinds.append(MutationKind.DROP_REQUIRED)
    if plan.bindings:
        kinds.append(MutationKind.WRONG_TYPE)
    kinds.append(MutationKind.INVALID_CONTENT_TYPE)
    if any(b.param.kind == "string" for b in plan.bindings):
        kinds.append(MutationKind.OVERLONG_STRING)
    if any(m not in plan.declared_methods for m in STANDARD_METHODS if m != plan.method):
        kinds.append(MutationKind.METHOD_SWAP)
    return kinds


def maybe_mutate(plan: RequestPlan, rate: float = 0.2, rng: random.Random | None = None) -> RequestPlan:
    """With probability ``rate`` return a copy carrying exactly one mutation.

    Unmutated plans are returned as-is (the same object).
    """
    if not 0 <= rate <= 1:
        raise ValueError(f"mutation rate must be in [0, 1], got {rate}")
    rng = rng or random.Random()
    if rng.random() >= rate:
        return plan
    kind = rng.choice(_applicable(plan))
    bindings = [replace(b, value=copy.deepcopy(b.value)) for b in plan.bindings]
    mutated = replace(plan, bindings=bindings, extra_headers=dict(plan.extra_headers), mutated=True, mutation_kind=kind)

    if kind is MutationKind.DROP_REQUIRED:
        victims = [b for b in bindings if b.param.required and b.location != "path"]
        victim = rng.choice(victims)
        mutated.bindings = [b for b in bindings if b is not victim]
        if victim.location == "body":
            mutated.has_body = True
    elif kind is MutationKind.WRONG_TYPE:
        victim = rng.choice(bindings)
        victim.value = _wrong_typed(victim.param.kind, rng)
    elif kind is MutationKind.INVALID_CONTENT_TYPE:
        mutated.content_type = rng.choice(_BAD_CONTENT_TYPES)
    elif kind is MutationKind.OVERLONG_STRING:
        victim = rng.choice([b for b in bindings if b.param.kind == "string"])
        limit = victim.param.constraints.max_length or 1024
        victim.value = "A" * (limit + 1 + rng.randint(0, 16))
    else:
        choices = [m for m in STANDARD_METHODS if m != plan.method and m not in plan.declared_methods]
        mutated.method = rng.choice(choices)
    return mutated


# --- dispatch ------------------------------------------------------------------


class Transport(Protocol):
    def send(self, request: HttpRequest) -> ResponseRecord: ...


class InProcessTransport:
    """Calls an application object directly; latency is the app's simulated latency.

    The app must provide ``handle(request) -> (status, headers, body, latency)``.
    Simulated latency above ``timeout`` yields a timeout record without sleeping,
    which keeps seeded sessions reproducible.
    """

    def __init__(self, app, timeout: float = DEFAULT_TIMEOUT):
        self.app = app
        self.timeout = timeout
        self.clock = 0.0

    def send(self, request: HttpRequest) -> ResponseRecord:
        status, headers, body, latency = self.app.handle(request)
        if latency > self.timeout:
            self.clock += self.timeout
            return ResponseRecord(0, latency=self.timeout, timestamp=self.clock, error="timeout")
        self.clock += latency
        return ResponseRecord(status, dict(headers), body, latency, self.clock)


class HttpTransport:
    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT, client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.client = client or httpx.Client(timeout=timeout, follow_redirects=False)

    def send(self, request: HttpRequest) -> ResponseRecord:
        url = self.base_url + request.path
        start = time.perf_counter()
        try:
            resp = self.client.request(
                request.method,
                url,
                params=list(request.query),
                headers=list(request.headers),
                content=request.body,
                timeout=self.timeout,
            )
        except httpx.TimeoutException:
            return ResponseRecord(0, latency=time.perf_counter() - start, timestamp=time.time(), error="timeout")
        except httpx.ConnectError:
            return ResponseRecord(
                0, latency=time.perf_counter() - start, timestamp=time.time(), error="connection_refused"
            )
        except httpx.HTTPError as exc:
            return ResponseRecord(
                0, latency=time.perf_counter() - start, timestamp=time.time(), error=f"transport: {exc}"
            )
        return ResponseRecord(
            resp.status_code,
            dict(resp.headers),
            resp.text,
            time.perf_counter() - start,
            time.time(),
        )

    def close(self) -> None:
        self.client.close()


def dispatch(request: HttpRequest, transport: Transport) -> ResponseRecord:
    return transport.send(request)


# --- responses and the data bank ----------------------------------------------


def decompose_response(body: str) -> list[tuple[str, Any]]:
    """Flatten a JSON body into ``(dotted path, scalar)`` pairs.

    Array indices are dropped, so every element of a collection contributes
    under the same path.  Non-JSON bodies decompose to nothing.
    """
    try:
        data = json.loads(body) if body else None
    except (json.JSONDecodeError, TypeError):
        return []
    out: list[tuple[str, Any]] = []
    seen: set[tuple[str, str, str]] = set()

    def walk(value: Any, prefix: str) -> None:
        if isinstance(value, dict):
            for key, sub in value.items():
                walk(sub, f"{prefix}.{key}" if prefix else str(key))
        elif isinstance(value, list):
            for item in value:
                walk(item, prefix)
        elif value is not None and prefix:
            marker = (prefix, type(value).__name__, repr(value))
            if marker not in seen:
                seen.add(marker)
                out.append((prefix, value))

    walk(data, "")
    return out


def _value_key(value: Any) -> str:
    return type(value).__name__ + ":" + json.dumps(value, sort_keys=True, default=str)


class DataBank:
    """Values seen in successful, unmutated exchanges, per operation.

    Three stores per operation: ``parameters`` (path/query/header values),
    ``body`` (request body properties, nested ones dotted) and ``response``
    (decomposed response fields).  Each field keeps at most ``cap`` distinct
    values, oldest evicted first.
    """

    TARGETS = ("parameters", "body", "response")

    def __init__(self, cap: int = STORE_CAP):
        self.cap = cap
        self._stores: dict[str, dict[str, dict[str, deque]]] = {}

    def add(self, op: str, target: str, field: str, value: Any) -> bool:
        if target not in self.TARGETS:
            raise ValueError(f"unknown store {target!r}")
        store = self._stores.setdefault(op, {t: {} for t in self.TARGETS})[target]
        values = store.setdefault(field, deque(maxlen=self.cap))
        key = _value_key(value)
        if any(_value_key(v) == key for v in values):
            return False
        values.append(copy.deepcopy(value))
        return True

    def values(self, op: str, target: str, field: str) -> list[Any]:
        return list(self._stores.get(op, {}).get(target, {}).get(field, ()))

    def fields(self, op: str, target: str) -> list[str]:
        return [f for f, v in self._stores.get(op, {}).get(target, {}).items() if v]

    def available(self) -> list[tuple[str, str, str]]:
        """Every (op, field, target) with at least one stored value, in insertion order."""
        out = []
        for op, stores in self._stores.items():
            for target in self.TARGETS:
                for f, values in stores[target].items():
                    if values:
                        out.append((op, f, target))
        return out

    def is_empty(self) -> bool:
        return not self.available()

    # the three named stores, for inspection
    def successful_params(self, op: str) -> dict[str, list]:
        return {f: list(v) for f, v in self._stores.get(op, {}).get("parameters", {}).items()}

    def successful_body_props(self, op: str) -> dict[str, list]:
        return {f: list(v) for f, v in self._stores.get(op, {}).get("body", {}).items()}

    def response_fields(self, op: str) -> dict[str, list]:
        return {f: list(v) for f, v in self._stores.get(op, {}).get("response", {}).items()}


def record_success(
    databank: DataBank,
    plan: RequestPlan,
    response: ResponseRecord,
    op: OperationNode | None = None,
) -> list[str]:
    """Store an unmutated 2xx exchange; return response paths ``op`` does not document."""
    if plan.mutated or not response.ok:
        return []
    for b in plan.bindings:
        if b.location == "body":
            databank.add(plan.operation_id, "body", b.name, b.value)
            if isinstance(b.value, (dict, list)):
                for path, value in decompose_response(json.dumps(b.value)):
                    databank.add(plan.operation_id, "body", f"{b.name}.{path}", value)
        else:
            databank.add(plan.operation_id, "parameters", b.name, b.value)
    fields = decompose_response(response.body)
    for path, value in fields:
        databank.add(plan.operation_id, "response", path, value)
    if op is None:
        return []
    documented = set(output_fields(op))
    undocumented = []
    for path, _ in fields:
        if path not in documented and path not in undocumented:
            undocumented.append(path)
    return undocumented
