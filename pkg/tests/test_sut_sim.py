import itertools
import json

import pytest

from restmarl.engine import HttpRequest
from restmarl.sut_sim import BROKEN_FILTER, DUPLICATE_EMAIL, FILTER_FAULT, SimService, sim_spec_path

JSON = (("Content-Type", "application/json"),)
FIRST_ID = 10000 + 7919 % 89989  # id the service hands to its first customer


def call(svc, method, path, body=None, query=(), headers=JSON):
    raw = json.dumps(body).encode() if body is not None else None
    status, _, text, _ = svc.handle(HttpRequest(method, path, tuple(query), headers if raw else (), raw))
    return status, json.loads(text)


def register(svc, email="a.b@example.com"):
    return call(svc, "POST", "/register", {"email": email, "name": "Ann Lee", "password": "secret1"})


def test_valid_register():
    status, body = register(SimService())
    assert status == 201 and body["id"] == FIRST_ID
    assert set(body) == {"id", "email", "name", "token"}


def test_second_id_is_fresh():
    svc = SimService()
    ids = [register(svc, f"u{i}@example.com")[1]["id"] for i in range(5)]
    assert len(set(ids)) == 5


@pytest.mark.parametrize(
    "field, value",
    [("email", "nope"), ("email", "a" * 45 + "@x.com"), ("password", "short"), ("password", "has space1"), ("name", "R2D2"), ("name", "")],
)
def test_register_constraints(field, value):
    body = {"email": "a.b@example.com", "name": "Ann Lee", "password": "secret1", field: value}
    assert call(SimService(), "POST", "/register", body)[0] == 400


def test_register_content_type():
    svc = SimService()
    raw = json.dumps({"email": "a.b@example.com", "name": "Ann", "password": "secret1"}).encode()
    status, _, _, _ = svc.handle(HttpRequest("POST", "/register", (), (("Content-Type", "text/plain"),), raw))
    assert status == 415


def test_duplicate_email_default_and_switch():
    svc = SimService()
    register(svc)
    assert register(svc)[0] == 400
    faulty = SimService(faults={DUPLICATE_EMAIL})
    register(faulty)
    assert register(faulty)[0] == 500
    with pytest.raises(ValueError):
        SimService(faults={"bogus"})


def test_users():
    svc = SimService()
    assert call(svc, "GET", f"/users/{FIRST_ID}")[0] == 404
    register(svc)
    status, body = call(svc, "GET", f"/users/{FIRST_ID}")
    assert status == 200 and body["id"] == FIRST_ID
    assert call(svc, "GET", "/users/abc")[0] == 400


def test_carts_and_orders_chain():
    svc = SimService()
    assert call(svc, "POST", "/carts", {"user_id": FIRST_ID})[0] == 400
    register(svc)
    assert call(svc, "GET", f"/orders/{FIRST_ID}")[0] == 404
    assert call(svc, "POST", "/carts", {"user_id": str(FIRST_ID)})[0] == 400
    status, cart = call(svc, "POST", "/carts", {"user_id": FIRST_ID, "session_token": "t"})
    assert status == 201 and isinstance(cart["cart_id"], int)
    status, orders = call(svc, "GET", f"/orders/{FIRST_ID}")
    assert status == 200 and orders["items"][0]["cart_id"] == cart["cart_id"]
    assert call(svc, "GET", f"/orders/{FIRST_ID}", query=(("filter", "way"),))[0] == 200
    assert call(svc, "GET", f"/orders/{FIRST_ID}", query=(("filter", "bogus"),))[0] == 400
    status, body = call(svc, "GET", f"/orders/{FIRST_ID}", query=(("filter", BROKEN_FILTER),))
    assert status == 500 and body["message"] == FILTER_FAULT == "filter mishandled"


def test_fault_switch_off():
    svc = SimService(faults=())
    register(svc)
    call(svc, "POST", "/carts", {"user_id": FIRST_ID})
    assert call(svc, "GET", f"/orders/{FIRST_ID}", query=(("filter", BROKEN_FILTER),))[0] == 400


def test_undeclared_method_and_unknown_path():
    svc = SimService()
    assert call(svc, "DELETE", "/register")[0] == 405
    assert call(svc, "GET", "/nowhere")[0] == 404
    assert call(svc, "GET", "/users")[0] == 404


def test_deterministic_given_sequence():
    def run():
        svc = SimService()
        out = [register(svc, f"u{i}@example.com") for i in range(3)]
        out.append(call(svc, "POST", "/carts", {"user_id": out[1][1]["id"]}))
        return out

    assert run() == run()


ACTIONS = ["R", "U+", "U-", "C+", "C-", "O+", "O-"]


def _apply(svc, action, n):
    if action == "R":
        return register(svc, f"user{n}@example.com")[0]
    uid = FIRST_ID if action.endswith("+") else 1
    if action[0] == "U":
        return call(svc, "GET", f"/users/{uid}")[0]
    if action[0] == "C":
        return call(svc, "POST", "/carts", {"user_id": uid})[0]
    return call(svc, "GET", f"/orders/{uid}")[0]


def test_orders_2xx_needs_the_chain():
    # every sequence of up to 4 abstract steps; orders succeeds only after register then carts
    for length in range(1, 5):
        for seq in itertools.product(ACTIONS, repeat=length):
            svc = SimService()
            for i, action in enumerate(seq):
                status = _apply(svc, action, i)
                if action[0] == "O" and status == 200:
                    prefix = seq[:i]
                    assert "R" in prefix and "C+" in prefix[prefix.index("R"):], seq


def test_conformance_with_shipped_document(sim_spec):
    import yaml

    doc = yaml.safe_load(sim_spec_path().read_text())
    svc = SimService()
    declared = {(m.upper(), p): set(ops[m]["responses"]) for p, ops in doc["paths"].items() for m in ops}
    observed = {
        ("POST", "/register"): [register(svc)[0], register(svc)[0], call(svc, "POST", "/register", {"email": 1, "name": "A", "password": "x"})[0]],
        ("GET", "/users/{id}"): [call(svc, "GET", f"/users/{FIRST_ID}")[0], call(svc, "GET", "/users/5")[0]],
        ("POST", "/carts"): [call(svc, "POST", "/carts", {"user_id": FIRST_ID})[0], call(svc, "POST", "/carts", {"user_id": 5})[0]],
        ("GET", "/orders/{user_id}"): [call(svc, "GET", f"/orders/{FIRST_ID}")[0], call(svc, "GET", "/orders/5")[0], call(svc, "GET", f"/orders/{FIRST_ID}", query=(("filter", "x"),))[0]],
    }
    for key, statuses in observed.items():
        assert {str(s) for s in statuses} <= declared[key], key
    # documented success fields come back with the documented types
    status, created = register(svc, "z@x.io")
    assert status == 201
    assert all(isinstance(created[f], t) for f, t in (("id", int), ("email", str), ("name", str)))
    assert isinstance(call(svc, "GET", f"/orders/{FIRST_ID}")[1]["items"][0]["id"], int)
