import json
import random
import re
from collections import Counter
from types import SimpleNamespace

import httpx
import pytest

from restmarl.engine import DataBank
from restmarl.spec_model import ConstraintSet, SchemaNode
from restmarl.values import (
    ChatCompletionsBackend,
    EmptyStore,
    LlmClientConfig,
    LlmRequest,
    LlmValueSource,
    MalformedCompletion,
    RandomPolicy,
    StubBackend,
    TransportFailure,
    build_messages,
    databank_value,
    llm_values,
    parse_completion,
    random_value,
)

EMAIL = ConstraintSet(pattern=r"^[\w-]+(\.[\w-]+)*@([\w-]+\.)+[a-zA-Z]+$", max_length=50)
PASSWORD = ConstraintSet(pattern=r"^[a-zA-Z0-9]+$", min_length=6, max_length=50)


def test_random_boolean_reproducible():
    a = [random_value("boolean", rng=random.Random(1)) for _ in range(5)]
    b = [random_value("boolean", rng=random.Random(1)) for _ in range(5)]
    assert a == b and all(isinstance(x, bool) for x in a)


def test_random_integer_bounds():
    rng = random.Random(2)
    xs = [random_value("integer", rng=rng) for _ in range(10_000)]
    assert min(xs) >= -1024 and max(xs) <= 1024
    assert abs(sum(xs) / len(xs)) <= 25


def test_random_string_lengths():
    rng = random.Random(3)
    lengths = [len(random_value("string", rng=rng)) for _ in range(10_000)]
    assert min(lengths) >= 1 and max(lengths) <= 50


def test_random_ignores_constraints():
    rng = random.Random(4)
    vals = [random_value("string", PASSWORD, rng=rng) for _ in range(500)]
    assert any(len(v) < 6 for v in vals)


def test_random_policy_bounds_all_kinds():
    rng = random.Random(5)
    policy = RandomPolicy()
    item = SchemaNode("integer")
    for _ in range(100_000 // 5):
        assert -1024.0 <= random_value("number", rng=rng) <= 1024.0
        assert 1 <= len(random_value("string", rng=rng)) <= 50
        assert -1024 <= random_value("integer", rng=rng) <= 1024
        arr = random_value("array", rng=rng, schema=SchemaNode("array", items=item))
        assert 0 <= len(arr) <= 3 and all(-1024 <= x <= 1024 for x in arr)
        obj = random_value("object", rng=rng, schema=SchemaNode("object", {"a": SchemaNode("boolean")}))
        assert isinstance(obj["a"], bool)
    assert policy.string_len == (1, 50)


def test_random_formats():
    rng = random.Random(6)
    assert re.fullmatch(r"\d{4}-\d{2}-\d{2}", random_value("string", rng=rng, schema=SchemaNode(format="date")))
    u = random_value("string", rng=rng, schema=SchemaNode(format="uuid"))
    assert re.fullmatch(r"[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}", u)


def test_stub_email_first_candidate():
    out = StubBackend().generate(LlmRequest("POST /register", "email", "string", EMAIL))
    assert out[0] == "john.doe@example.com"
    assert all(re.fullmatch(EMAIL.pattern, v) for v in out)


def test_stub_password():
    out = StubBackend().generate(LlmRequest("POST /register", "password", "string", PASSWORD))
    assert out and all(len(v) >= 6 and re.fullmatch(r"[a-zA-Z0-9]+", v) for v in out)


def test_stub_is_pure():
    req = LlmRequest("op", "password", "string", PASSWORD)
    assert StubBackend(0).generate(req) == StubBackend(0).generate(req)


def test_stub_enum_first():
    req = LlmRequest("op", "filter", "string", ConstraintSet(enum_values=("node", "way")))
    assert StubBackend().generate(req)[:2] == ["node", "way"]


class CountingBackend:
    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def generate(self, request):
        self.calls += 1
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


def test_cache_hit_no_second_call():
    backend = CountingBackend([["a1", "b2"]])
    src = LlmValueSource(backend)
    req = LlmRequest("op", "p", "string")
    first = llm_values(src, req)
    assert llm_values(src, req) == first and backend.calls == 1 and src.generations == 1


def test_pattern_filter_before_caching():
    backend = CountingBackend([["abc123", "no spaces!", "x"]])
    src = LlmValueSource(backend)
    assert llm_values(src, LlmRequest("op", "password", "string", PASSWORD)) == ["abc123"]


def test_malformed_retry_once():
    backend = CountingBackend([MalformedCompletion("junk"), ["ok"]])
    assert llm_values(LlmValueSource(backend), LlmRequest("op", "p", "string")) == ["ok"]
    backend = CountingBackend([MalformedCompletion("junk"), MalformedCompletion("junk")])
    with pytest.raises(MalformedCompletion):
        llm_values(LlmValueSource(backend), LlmRequest("op", "p", "string"))


def test_kind_coercion():
    backend = CountingBackend([["7", 8, "x", True]])
    assert llm_values(LlmValueSource(backend), LlmRequest("op", "n", "integer")) == [7, 8]


def test_parse_completion():
    assert parse_completion('Sure! ["a", "b"] hope that helps') == ["a", "b"]
    with pytest.raises(MalformedCompletion):
        parse_completion("no array here")


def test_prompt_mentions_everything():
    text = build_messages(LlmRequest("POST /register", "password", "string", PASSWORD, count=7))[-1]["content"]
    for needle in ("password", "string", "POST /register", "minLength" if "minLength" in text else "min_length", "7"):
        assert needle in text


def _chat(handler):
    return ChatCompletionsBackend(LlmClientConfig("http://llm.test/v1/chat"), httpx.Client(transport=httpx.MockTransport(handler)))


def test_chat_backend_wire_format(monkeypatch):
    monkeypatch.setenv("RESTMARL_LLM_API_KEY", "k")
    seen = {}

    def handler(request):
        seen.update(json.loads(request.content), auth=request.headers["authorization"])
        return httpx.Response(200, json={"choices": [{"message": {"content": '["x1", "y2"]'}}]})

    assert _chat(handler).generate(LlmRequest("op", "p", "string")) == ["x1", "y2"]
    assert seen["temperature"] == 0.8 and seen["auth"] == "Bearer k"
    assert [m["role"] for m in seen["messages"]] == ["system", "user"]


def test_chat_backend_errors():
    with pytest.raises(TransportFailure):
        _chat(lambda r: httpx.Response(503)).generate(LlmRequest("op", "p", "string"))

    def boom(request):
        raise httpx.ConnectError("down")

    with pytest.raises(TransportFailure):
        _chat(boom).generate(LlmRequest("op", "p", "string"))
    with pytest.raises(MalformedCompletion):
        _chat(lambda r: httpx.Response(200, json={"nope": 1})).generate(LlmRequest("op", "p", "string"))


def test_temperature_range():
    with pytest.raises(ValueError):
        LlmClientConfig("http://x", temperature=3)


def _choice(op, field, target):
    return SimpleNamespace(producer=(op, field, target))


def test_databank_value_singleton_and_frequency():
    bank = DataBank()
    bank.add("GET /users/{id}", "response", "id", 7)
    assert databank_value(bank, _choice("GET /users/{id}", "id", "response"), random.Random(0)) == 7
    bank.add("GET /users/{id}", "response", "id", 9)
    rng = random.Random(1)
    counts = Counter(databank_value(bank, _choice("GET /users/{id}", "id", "response"), rng) for _ in range(1000))
    assert set(counts) == {7, 9} and all(abs(c - 500) <= 60 for c in counts.values())


def test_databank_value_reuses_email_verbatim():
    bank = DataBank()
    bank.add("POST /register", "body", "email", "john.doe@example.com")
    assert databank_value(bank, _choice("POST /register", "email", "body"), random.Random(0)) == "john.doe@example.com"


def test_databank_value_empty():
    with pytest.raises(EmptyStore):
        databank_value(DataBank(), _choice("x", "y", "response"), random.Random(0))
