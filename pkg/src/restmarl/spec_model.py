"""OpenAPI 3 parsing into a normalized operation model.

Every other module works from :class:`ApiSpec`; nothing downstream touches the
raw document.  All local ``$ref`` pointers are inlined during parsing.
"""
from __future__ import annotations

import json
import logging
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

logger = logging.getLogger(__name__)

HTTP_METHODS = ("get", "put", "post", "delete", "options", "head", "patch", "trace")
KINDS = ("string", "integer", "number", "boolean", "array", "object")
LOCATIONS = ("path", "query", "header", "body")
MAX_REF_EXPANSIONS = 5

# OpenAPI says these header parameters are ignored by tooling.
_IGNORED_HEADERS = {"accept", "content-type", "authorization"}
_PATH_VAR = re.compile(r"{([^{}]+)}")


class SpecError(Exception):
    """Base class for specification loading failures."""


class MalformedDocument(SpecError):
    pass


class UnsupportedVersion(MalformedDocument):
    pass


class UnresolvableRef(SpecError):
    pass


class NoOperations(UserWarning):
    """Issued when a document parses but declares no operations."""


@dataclass(frozen=True)
class ConstraintSet:
    pattern: str | None = None
    min_length: int | None = None
    max_length: int | None = None
    minimum: float | None = None
    maximum: float | None = None
    enum_values: tuple | None = None

    def __post_init__(self):
        for name in ("min_length", "max_length"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
        if self.min_length is not None and self.max_length is not None:
            if self.min_length > self.max_length:
                raise ValueError(f"minLength {self.min_length} > maxLength {self.max_length}")
        if self.minimum is not None and self.maximum is not None:
            if self.minimum > self.maximum:
                raise ValueError(f"minimum {self.minimum} > maximum {self.maximum}")

    def is_empty(self) -> bool:
        return all(getattr(self, f) is None for f in self.__dataclass_fields__)

    def to_dict(self) -> dict[str, Any]:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if getattr(self, k) is not None}
        if "enum_values" in out:
            out["enum_values"] = list(out["enum_values"])
        return out


@dataclass(frozen=True)
class SchemaNode:
    kind: str = "string"
    properties: dict[str, SchemaNode] = field(default_factory=dict)
    items: SchemaNode | None = None
    required_names: tuple[str, ...] = ()
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    format: str | None = None
    example: Any = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schema kind {self.kind!r}")
        if self.properties and self.kind != "object":
            raise ValueError("properties only allowed on object schemas")
        if self.items is not None and self.kind != "array":
            raise ValueError("items only allowed on array schemas")


@dataclass(frozen=True)
class ParameterDef:
    name: str
    location: str
    kind: str
    required: bool
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    schema: SchemaNode | None = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("parameter name must be non-empty")
        if self.location not in LOCATIONS:
            raise ValueError(f"unknown parameter location {self.location!r}")
        if self.location == "path" and not self.required:
            raise ValueError(f"path parameter {self.name!r} must be required")

    @property
    def example(self) -> Any:
        return self.schema.example if self.schema is not None else None

    @property
    def format(self) -> str | None:
        return self.schema.format if self.schema is not None else None


@dataclass(frozen=True)
class OperationNode:
    id: str
    method: str
    path: str
    parameters: tuple[ParameterDef, ...] = ()
    request_body: SchemaNode | None = None
    responses: dict[str, SchemaNode | None] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValueError("operation id must be non-empty")
        if not self.path.startswith("/"):
            raise ValueError(f"path must begin with '/': {self.path!r}")
        path_params = {p.name for p in self.parameters if p.location == "path"}
        for var in _PATH_VAR.findall(self.path):
            if var not in path_params:
                raise ValueError(f"path variable {var!r} of {self.id} has no parameter")

    def parameter(self, name: str) -> ParameterDef:
        for p in self.parameters:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def required_names(self) -> list[str]:
        return [p.name for p in self.parameters if p.required]

    def success_schemas(self) -> list[SchemaNode]:
        return [s for code, s in self.responses.items() if s is not None and _is_2xx(code)]


@dataclass(frozen=True)
class ApiSpec:
    title: str
    base_url: str
    operations: tuple[OperationNode, ...] = ()

    def __post_init__(self):
        ids = [op.id for op in self.operations]
        if len(ids) != len(set(ids)):
            raise ValueError("operation ids must be unique")

    def operation(self, op_id: str) -> OperationNode:
        for op in self.operations:
            if op.id == op_id:
                return op
        raise KeyError(op_id)

    @property
    def operation_ids(self) -> list[str]:
        return [op.id for op in self.operations]

    def methods_for_path(self, path: str) -> list[str]:
        return [op.method for op in self.operations if op.path == path]


def _is_2xx(code: str) -> bool:
    return str(code).upper() in ("2XX",) or (str(code).isdigit() and 200 <= int(code) < 300)


# --- loading -----------------------------------------------------------------


def load_spec(path: str | Path) -> ApiSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecError(f"cannot read specification {path}: {exc}") from exc
    fmt = "json" if path.suffix.lower() == ".json" else "yaml"
    return parse_spec(text, fmt)


def parse_spec(document: str, format: str = "yaml") -> ApiSpec:
    """Parse an OpenAPI 3.x document given as JSON or YAML text.

    A document with no operations still parses; a :class:`NoOperations`
    warning is issued instead of raising.
    """
    raw = _load_document(document, format)
    if not isinstance(raw, dict):
        raise MalformedDocument("top level of an OpenAPI document must be a mapping")
    if "swagger" in raw:
        raise UnsupportedVersion(
            f"'swagger: {raw['swagger']}' documents are not supported; "
            "expected an 'openapi: 3.x' version field"
        )
    version = str(raw.get("openapi", ""))
    if not version.startswith("3"):
        raise UnsupportedVersion(f"'openapi' version field must be 3.x, got {version or 'nothing'!r}")

    _check_refs(raw, raw)
    parser = _Parser(raw)
    try:
        spec = parser.parse()
    except ValueError as exc:
        raise MalformedDocument(str(exc)) from exc
    if not spec.operations:
        warnings.warn("specification declares no operations", NoOperations, stacklevel=2)
    return spec


def _load_document(document: str, format: str) -> Any:
    try:
        if format == "json":
            return json.loads(document)
        if format == "yaml":
            return yaml.safe_load(document)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise MalformedDocument(f"document is not valid {format}: {exc}") from exc
    raise ValueError(f"unknown format {format!r}")


def _lookup_ref(ref: str, root: dict) -> Any:
    if not isinstance(ref, str) or not ref.startswith("#/"):
        raise UnresolvableRef(f"only local references are supported: {ref!r}")
    node: Any = root
    for part in ref[2:].split("/"):
        part = part.replace("~1", "/").replace("~0", "~")
        if isinstance(node, dict) and part in node:
            node = node[part]
        elif isinstance(node, list) and part.isdigit() and int(part) < len(node):
            node = node[int(part)]
        else:
            raise UnresolvableRef(f"dangling reference {ref!r}")
    return node


def _check_refs(node: Any, root: dict) -> None:
    if isinstance(node, dict):
        ref = node.get("$ref")
        if ref is not None:
            _lookup_ref(ref, root)
        for value in node.values():
            _check_refs(value, root)
    elif isinstance(node, list):
        for value in node:
            _check_refs(value, root)


class _Parser:
    def __init__(self, root: dict):
        self.root = root

    def deref(self, obj: Any) -> Any:
        seen = 0
        while isinstance(obj, dict) and "$ref" in obj:
            obj = _lookup_ref(obj["$ref"], self.root)
            seen += 1
            if seen > 32:
                raise UnresolvableRef("reference chain does not terminate")
        return obj

    def parse(self) -> ApiSpec:
        info = self.root.get("info") or {}
        servers = self.root.get("servers") or []
        base_url = ""
        if servers and isinstance(servers[0], dict):
            base_url = str(servers[0].get("url", ""))
        operations = []
        seen_ids: set[str] = set()
        for path, item in (self.root.get("paths") or {}).items():
            item = self.deref(item)
            if not isinstance(item, dict):
                continue
            shared = item.get("parameters") or []
            for method in HTTP_METHODS:
                raw_op = item.get(method)
                if not isinstance(raw_op, dict):
                    continue
                op = self.operation(str(path), method.upper(), raw_op, shared)
                if op.id in seen_ids:
                    raise MalformedDocument(f"duplicate operation id {op.id!r}")
                seen_ids.add(op.id)
                operations.append(op)
        return ApiSpec(title=str(info.get("title", "")), base_url=base_url, operations=tuple(operations))

    def operation(self, path: str, method: str, raw: dict, shared: list) -> OperationNode:
        op_id = raw.get("operationId") or f"{method} {path}"
        merged: dict[tuple[str, str], dict] = {}
        for p in list(shared) + list(raw.get("parameters") or []):
            p = self.deref(p)
            if isinstance(p, dict) and "name" in p and "in" in p:
                merged[(p["name"], p["in"])] = p
        params = []
        for (name, loc), p in merged.items():
            if loc not in ("path", "query", "header"):
                continue
            if loc == "header" and name.lower() in _IGNORED_HEADERS:
                continue
            schema = self.schema(p.get("schema") or {})
            if schema.example is None and "example" in p:
                schema = _with_example(schema, p["example"])
            params.append(
                ParameterDef(
                    name=name,
                    location=loc,
                    kind=schema.kind,
                    required=bool(p.get("required", False)) or loc == "path",
                    constraints=schema.constraints,
                    schema=schema,
                )
            )
        declared = {p.name for p in params if p.location == "path"}
        for var in _PATH_VAR.findall(path):
            if var not in declared:
                logger.warning("%s: path variable %r undeclared, assuming string", op_id, var)
                params.append(ParameterDef(var, "path", "string", True, ConstraintSet(), SchemaNode()))

        body = None
        raw_body = self.deref(raw.get("requestBody"))
        if isinstance(raw_body, dict):
            body = self.content_schema(raw_body.get("content"))
            if body is not None:
                params.extend(self.body_parameters(body, bool(raw_body.get("required", False))))

        responses: dict[str, SchemaNode | None] = {}
        for code, resp in (raw.get("responses") or {}).items():
            resp = self.deref(resp)
            responses[str(code)] = self.content_schema(resp.get("content")) if isinstance(resp, dict) else None

        return OperationNode(
            id=str(op_id),
            method=method,
            path=path,
            parameters=tuple(params),
            request_body=body,
            responses=responses,
        )

    def body_parameters(self, body: SchemaNode, body_required: bool) -> list[ParameterDef]:
        if body.kind != "object" or not body.properties:
            return [ParameterDef("body", "body", body.kind, body_required, body.constraints, body)]
        return [
            ParameterDef(name, "body", sub.kind, name in body.required_names, sub.constraints, sub)
            for name, sub in body.properties.items()
        ]

    def content_schema(self, content: Any) -> SchemaNode | None:
        if not isinstance(content, dict) or not content:
            return None
        media = next((m for m in content if "json" in m), None) or next(iter(content))
        entry = content[media]
        if not isinstance(entry, dict) or "schema" not in entry:
            return None
        return self.schema(entry["schema"])

    def schema(self, raw: Any, chain: tuple[str, ...] = ()) -> SchemaNode:
        if not isinstance(raw, dict):
            return SchemaNode()
        if "$ref" in raw:
            ref = raw["$ref"]
            if chain.count(ref) >= MAX_REF_EXPANSIONS:
                return SchemaNode(kind="object")
            return self.schema(_lookup_ref(ref, self.root), chain + (ref,))
        if "allOf" in raw:
            return self.merge_all_of(raw, chain)
        for key in ("oneOf", "anyOf"):
            if raw.get(key):
                return self.schema(raw[key][0], chain)

        kind = _kind_of(raw)
        props = {}
        items = None
        if kind == "object":
            props = {str(k): self.schema(v, chain) for k, v in (raw.get("properties") or {}).items()}
        elif kind == "array":
            items = self.schema(raw.get("items") or {}, chain)
        required = tuple(str(r) for r in raw.get("required") or () if isinstance(r, str))
        return SchemaNode(
            kind=kind,
            properties=props,
            items=items,
            required_names=required,
            constraints=_constraints(raw),
            format=raw.get("format"),
            example=_example_of(raw),
        )

    def merge_all_of(self, raw: dict, chain: tuple[str, ...]) -> SchemaNode:
        parts = [self.schema(s, chain) for s in raw["allOf"]]
        rest = {k: v for k, v in raw.items() if k != "allOf"}
        if rest:
            parts.append(self.schema(rest, chain))
        props: dict[str, SchemaNode] = {}
        required: list[str] = []
        for part in parts:
            props.update(part.properties)
            required.extend(r for r in part.required_names if r not in required)
        if props or all(p.kind == "object" for p in parts):
            return SchemaNode(kind="object", properties=props, required_names=tuple(required))
        return parts[0]


def _with_example(schema: SchemaNode, example: Any) -> SchemaNode:
    return SchemaNode(
        kind=schema.kind,
        properties=schema.properties,
        items=schema.items,
        required_names=schema.required_names,
        constraints=schema.constraints,
        format=schema.format,
        example=example,
    )


def _kind_of(raw: dict) -> str:
    kind = raw.get("type")
    if isinstance(kind, list):
        kind = next((k for k in kind if k != "null"), None)
    if kind in KINDS:
        return kind
    if "properties" in raw:
        return "object"
    if "items" in raw:
        return "array"
    return "string"


def _example_of(raw: dict) -> Any:
    if "example" in raw:
        return raw["example"]
    examples = raw.get("examples")
    if isinstance(examples, list) and examples:
        return examples[0]
    return None


def _num(value: Any) -> float | None:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return None
    return value


def _constraints(raw: dict) -> ConstraintSet:
    enum = raw.get("enum")
    pattern = raw.get("pattern")
    min_len = raw.get("minLength")
    max_len = raw.get("maxLength")
    return ConstraintSet(
        pattern=pattern if isinstance(pattern, str) else None,
        min_length=min_len if isinstance(min_len, int) and not isinstance(min_len, bool) else None,
        max_length=max_len if isinstance(max_len, int) and not isinstance(max_len, bool) else None,
        minimum=_num(raw.get("minimum")),
        maximum=_num(raw.get("maximum")),
        enum_values=tuple(enum) if isinstance(enum, list) and enum else None,
    )


# --- names -------------------------------------------------------------------


def _walk_schema(schema: SchemaNode | None, prefix: str = "") -> list[str]:
    """Dotted paths of every property reachable from ``schema``; array levels add no segment."""
    if schema is None:
        return []
    if schema.kind == "array":
        return _walk_schema(schema.items, prefix)
    out = []
    for name, sub in schema.properties.items():
        path = f"{prefix}.{name}" if prefix else name
        out.append(path)
        out.extend(_walk_schema(sub, path))
    return out


def input_fields(op: OperationNode, include_headers: bool = False) -> list[tuple[str, str]]:
    """``(dotted path, location)`` for every consumable input of ``op``."""
    fields: list[tuple[str, str]] = []
    for p in op.parameters:
        if p.location == "header" and not include_headers:
            continue
        fields.append((p.name, p.location))
        if p.location == "body" and p.schema is not None:
            fields.extend((f"{p.name}.{sub}", "body") for sub in _walk_schema(p.schema))
    return _dedupe(fields)


def output_fields(op: OperationNode) -> list[str]:
    """Dotted response-field paths across all 2xx response schemas."""
    paths: list[str] = []
    for schema in op.success_schemas():
        paths.extend(_walk_schema(schema))
    return _dedupe(paths)


def leaf_name(path: str) -> str:
    return path.rsplit(".", 1)[-1]


def extract_io_names(op: OperationNode) -> tuple[list[str], list[str]]:
    inputs = _dedupe(leaf_name(path) for path, _ in input_fields(op, include_headers=True))
    outputs = _dedupe(leaf_name(path) for path in output_fields(op))
    return inputs, outputs


def _dedupe(items) -> list:
    seen = set()
    out = []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


# --- serialization -----------------------------------------------------------


def schema_to_dict(schema: SchemaNode | None) -> dict | None:
    if schema is None:
        return None
    return {
        "kind": schema.kind,
        "properties": {k: schema_to_dict(v) for k, v in schema.properties.items()},
        "items": schema_to_dict(schema.items),
        "required_names": list(schema.required_names),
        "constraints": schema.constraints.to_dict(),
        "format": schema.format,
        "example": schema.example,
    }


def schema_from_dict(data: dict | None) -> SchemaNode | None:
    if data is None:
        return None
    cons = dict(data.get("constraints") or {})
    if "enum_values" in cons:
        cons["enum_values"] = tuple(cons["enum_values"])
    return SchemaNode(
        kind=data["kind"],
        properties={k: schema_from_dict(v) for k, v in data.get("properties", {}).items()},
        items=schema_from_dict(data.get("items")),
        required_names=tuple(data.get("required_names", ())),
        constraints=ConstraintSet(**cons),
        format=data.get("format"),
        example=data.get("example"),
    )


def spec_to_dict(spec: ApiSpec) -> dict:
    return {
        "title": spec.title,
        "base_url": spec.base_url,
        "operations": [
            {
                "id": op.id,
                "method": op.method,
                "path": op.path,
                "parameters": [
                    {
                        "name": p.name,
                        "location": p.location,
                        "kind": p.kind,
                        "required": p.required,
                        "constraints": p.constraints.to_dict(),
                        "schema": schema_to_dict(p.schema),
                    }
                    for p in op.parameters
                ],
                "request_body": schema_to_dict(op.request_body),
                "responses": {code: schema_to_dict(s) for code, s in op.responses.items()},
            }
            for op in spec.operations
        ],
    }


def spec_from_dict(data: dict) -> ApiSpec:
    ops = []
    for raw in data["operations"]:
        params = []
        for p in raw["parameters"]:
            cons = dict(p["constraints"])
            if "enum_values" in cons:
                cons["enum_values"] = tuple(cons["enum_values"])
            params.append(
                ParameterDef(
                    name=p["name"],
                    location=p["location"],
                    kind=p["kind"],
                    required=p["required"],
                    constraints=ConstraintSet(**cons),
                    schema=schema_from_dict(p["schema"]),
                )
            )
        ops.append(
            OperationNode(
                id=raw["id"],
                method=raw["method"],
                path=raw["path"],
                parameters=tuple(params),
                request_body=schema_from_dict(raw["request_body"]),
                responses={c: schema_from_dict(s) for c, s in raw["responses"].items()},
            )
        )
    return ApiSpec(title=data["title"], base_url=data["base_url"], operations=tuple(ops))
