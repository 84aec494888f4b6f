"""A small deterministic REST service used as the system under test.

Four operations with a value chain: a registered customer id opens a cart,
and only customers with a cart have orders.  The ``node:relation`` order
filter answers 500.  A second fault, a 500 on a duplicate registration
e-mail, exists behind a switch and is off by default.  The matching OpenAPI document ships as ``data/sim_openapi.yaml``.
"""
from __future__ import annotations

import json
import re
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from importlib import resources
from pathlib import Path
from urllib.parse import parse_qsl, urlsplit

from .engine import HttpRequest

EMAIL_RE = re.compile(r"^[\w-]+(\.[\w-]+)*@([\w-]+\.)+[a-zA-Z]+$")
PASSWORD_RE = re.compile(r"^[a-zA-Z0-9]+$")
FILTERS = ("node", "way", "relation")
BROKEN_FILTER = "node:relation"
FILTER_FAULT = "filter mishandled"
DUPLICATE_FAULT = 'duplicate key value violates unique constraint "customer_email_key"'
FILTER = "filter"
DUPLICATE_EMAIL = "duplicate_email"
KNOWN_FAULTS = (FILTER, DUPLICATE_EMAIL)

ROUTES = {
    ("POST", "register"): "register",
    ("GET", "users"): "get_user",
    ("POST", "carts"): "create_cart",
    ("GET", "orders"): "get_orders",
}
# resource -> whether the route takes one path segment after it
_SHAPES = {"register": False, "users": True, "carts": False, "orders": True}


def sim_spec_path() -> Path:
    return Path(str(resources.files("restmarl") / "data" / "sim_openapi.yaml"))


def sim_spec_text() -> str:
    return sim_spec_path().read_text(encoding="utf-8")


def _json(status: int, payload) -> tuple[int, dict, str]:
    return status, {"Content-Type": "application/json"}, json.dumps(payload)


def _error(status: int, message: str) -> tuple[int, dict, str]:
    return _json(status, {"error": _REASONS.get(status, "Error"), "message": message})


_REASONS = {400: "Bad Request", 404: "Not Found", 405: "Method Not Allowed", 415: "Unsupported Media Type", 500: "Internal Server Error"}


def _strict_int(value) -> int | None:
    if isinstance(value, bool) or not isinstance(value, int):
        return None
    return value


def _path_int(text: str) -> int | None:
    return int(text) if re.fullmatch(r"-?\d{1,18}", text) else None


@dataclass
class SimService:
    latency: float = 0.0
    faults: frozenset = frozenset({FILTER})
    users: dict[int, dict] = field(default_factory=dict)
    carts: dict[int, int] = field(default_factory=dict)  # cart id -> user id
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self.faults = frozenset(self.faults)
        unknown = self.faults - set(KNOWN_FAULTS)
        if unknown:
            raise ValueError(f"unknown faults {sorted(unknown)}; known: {KNOWN_FAULTS}")

    def reset(self) -> None:
        self.users.clear()
        self.carts.clear()

    def handle(self, request: HttpRequest) -> tuple[int, dict, str, float]:
        with self._lock:
            status, headers, body = self._route(request)
        return status, headers, body, self.latency

    def _route(self, request: HttpRequest) -> tuple[int, dict, str]:
        parts = [p for p in urlsplit(request.path).path.split("/")]
        if len(parts) < 2 or parts[0] != "" or parts[1] not in _SHAPES:
            return _error(404, "no such resource")
        resource = parts[1]
        segments = parts[2:]
        if _SHAPES[resource] != (len(segments) == 1) or (segments and not segments[0]):
            return _error(404, "no such resource")
        handler = ROUTES.get((request.method, resource))
        if handler is None:
            return _error(405, f"{request.method} not allowed on /{resource}")
        return getattr(self, handler)(request, *segments)

    def _body(self, request: HttpRequest):
        ctype = (request.header("Content-Type") or "").split(";")[0].strip().lower()
        if ctype != "application/json":
            return None, _error(415, "expected application/json")
        try:
            data = json.loads(request.body or b"")
        except (json.JSONDecodeError, UnicodeDecodeError):
            return None, _error(400, "malformed JSON body")
        if not isinstance(data, dict):
            return None, _error(400, "body must be a JSON object")
        return data, None

    def register(self, request: HttpRequest):
        data, err = self._body(request)
        if err:
            return err
        for name in ("email", "name", "password"):
            if not isinstance(data.get(name), str):
                return _error(400, f"{name} is required and must be a string")
        email, name, password = data["email"], data["name"], data["password"]
        if len(email) > 50 or not EMAIL_RE.match(email):
            return _error(400, "invalid email")
        if not name or len(name) > 50 or not all(ch.isalpha() or ch in " '-" for ch in name):
            return _error(400, "invalid name")
        if not 6 <= len(password) <= 50 or not PASSWORD_RE.match(password) or not password.isascii():
            return _error(400, "invalid password")
        links = data.get("links")
        if links is not None and (not isinstance(links, list) or not all(isinstance(x, dict) for x in links)):
            return _error(400, "links must be an array of objects")
        if any(u["email"] == email for u in self.users.values()):
            if DUPLICATE_EMAIL in self.faults:
                return _error(500, DUPLICATE_FAULT)
            return _error(400, "email already registered")
        n = len(self.users) + 1
        user_id = 10000 + (n * 7919) % 89989
        token = f"tok{user_id * 31 % 100003:06d}"
        self.users[user_id] = {"id": user_id, "email": email, "name": name}
        return _json(201, {"id": user_id, "email": email, "name": name, "token": token})

    def get_user(self, request: HttpRequest, raw_id: str):
        user_id = _path_int(raw_id)
        if user_id is None:
            return _error(400, "id must be an integer")
        user = self.users.get(user_id)
        if user is None:
            return _error(404, "user not found")
        return _json(200, user)

    def create_cart(self, request: HttpRequest):
        data, err = self._body(request)
        if err:
            return err
        user_id = _strict_int(data.get("user_id"))
        if user_id is None:
            return _error(400, "user_id is required and must be an integer")
        if user_id not in self.users:
            return _error(400, "unknown user")
        token = data.get("session_token")
        if token is not None and not isinstance(token, str):
            return _error(400, "session_token must be a string")
        cart_id = 500000 + 37 * (len(self.carts) + 1)
        self.carts[cart_id] = user_id
        return _json(201, {"cart_id": cart_id})

    def get_orders(self, request: HttpRequest, raw_user: str):
        user_id = _path_int(raw_user)
        if user_id is None:
            return _error(400, "user_id must be an integer")
        carts = [c for c, u in self.carts.items() if u == user_id]
        if user_id not in self.users or not carts:
            return _error(404, "no orders for user")
        filters = [v for k, v in request.query if k == "filter"]
        if filters:
            if filters[0] == BROKEN_FILTER and FILTER in self.faults:
                return _error(500, FILTER_FAULT)
            if filters[0] not in FILTERS:
                return _error(400, "unknown filter")
        items = [{"id": 900000 + c, "cart_id": c} for c in carts]
        return _json(200, {"items": items})


# --- loopback HTTP ---------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    service: SimService

    def _serve(self):
        split = urlsplit(self.path)
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else None
        request = HttpRequest(
            self.command,
            split.path,
            tuple(parse_qsl(split.query, keep_blank_values=True)),
            tuple(self.headers.items()),
            body,
        )
        status, headers, text, latency = self.server.service.handle(request)
        if latency:
            time.sleep(latency)
        payload = text.encode("utf-8")
        try:
            self.send_response(status)
            for k, v in headers.items():
                self.send_header(k, v)
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)
        except (BrokenPipeError, ConnectionResetError):
            pass

    do_GET = do_POST = do_PUT = do_DELETE = do_PATCH = do_HEAD = do_OPTIONS = _serve

    def log_message(self, format, *args):  # quiet
        pass


@contextmanager
def serve(service: SimService, host: str = "127.0.0.1", port: int = 0):
    """Serve ``service`` over HTTP in a background thread; yields the base URL."""
    server = ThreadingHTTPServer((host, port), _Handler)
    server.daemon_threads = True
    server.service = service
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://{host}:{server.server_address[1]}"
    finally:
        server.shutdown()
        server.server_close()
