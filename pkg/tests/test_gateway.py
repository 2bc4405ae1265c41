import json

import httpx
import pytest
from hypothesis import given, settings, strategies as st

from clinval.gateway import (
    AuthError,
    BackendHTTPError,
    ContextLengthExceeded,
    ExhaustedRetries,
    Gateway,
    GenParams,
    HttpTransport,
    MockBackend,
    ModelEndpoint,
)
from clinval.prompting import Message, MissingField, PromptMessages, parse_generator_response

from conftest import endpoint, quiet_gateway

MSGS = PromptMessages((Message("user", "hello"),))


def _gw(backend, **kw):
    gw = quiet_gateway(**kw)
    gw.register_mock("m", backend)
    return gw


def test_happy_path():
    gw = _gw(MockBackend(script=["fixed text"]))
    res = gw.complete(endpoint("m"), MSGS)
    assert res.text == "fixed text" and res.attempt_count == 1


def test_retry_429_twice_then_success():
    gw = _gw(MockBackend(script=[429, 429, "ok"]))
    res = gw.complete(endpoint("m"), MSGS)
    assert res.text == "ok" and res.attempt_count == 3
    assert len(gw.delays) == 2


def test_auth_error_not_retried():
    backend = MockBackend(script=[401])
    gw = _gw(backend)
    with pytest.raises(AuthError):
        gw.complete(endpoint("m"), MSGS)
    assert len(backend.calls) == 1


def test_context_length_not_retried():
    backend = MockBackend(script=[400])
    with pytest.raises(ContextLengthExceeded):
        _gw(backend).complete(endpoint("m"), MSGS)
    assert len(backend.calls) == 1


def test_exhaustion_carries_cause():
    gw = _gw(MockBackend(script=[503]), max_attempts=3)
    with pytest.raises(ExhaustedRetries) as ei:
        gw.complete(endpoint("m"), MSGS)
    assert ei.value.attempts == 3 and isinstance(ei.value.cause, BackendHTTPError)


def test_parse_failure_is_retried():
    gw = _gw(MockBackend(script=["garbage", "[[ ## output ## ]]\nfine"]))
    res = gw.complete(endpoint("m"), MSGS, check=parse_generator_response)
    assert res.attempt_count == 2


def test_garbage_exhausts_with_parse_cause():
    gw = _gw(MockBackend(script=["garbage"]), max_attempts=3)
    with pytest.raises(ExhaustedRetries) as ei:
        gw.complete(endpoint("m"), MSGS, check=parse_generator_response)
    assert isinstance(ei.value.cause, MissingField)


def test_missing_key_fails_before_request(monkeypatch):
    monkeypatch.delenv("CLINVAL_TEST_KEY", raising=False)
    backend = MockBackend(script=["x"])
    with pytest.raises(AuthError):
        _gw(backend).complete(endpoint("m", "CLINVAL_TEST_KEY"), MSGS)
    assert backend.calls == []


def test_bounded_concurrency():
    backend = MockBackend(responder=lambda m: "r:" + m[0]["content"], latency=0.02)
    gw = _gw(backend)
    batch = [(i, PromptMessages((Message("user", f"p{i}"),))) for i in range(10)]
    out = gw.complete_many(endpoint("m"), batch, parallelism=3)
    assert sorted(out) == list(range(10))
    assert all(out[i].text == f"r:p{i}" for i in range(10))
    assert 1 <= backend.peak_in_flight <= 3


def test_partial_failure():
    def responder(messages):
        return 503 if messages[0]["content"] == "p7" else "ok"

    gw = _gw(MockBackend(responder=responder), max_attempts=2)
    batch = [(f"k{i}", PromptMessages((Message("user", f"p{i}"),))) for i in range(10)]
    out = gw.complete_many(endpoint("m"), batch, parallelism=4)
    errors = {k: v for k, v in out.items() if isinstance(v, Exception)}
    assert list(errors) == ["k7"] and isinstance(errors["k7"], ExhaustedRetries)
    assert sum(not isinstance(v, Exception) for v in out.values()) == 9


def test_empty_batch_and_duplicate_keys():
    gw = _gw(MockBackend(script=["x"]))
    assert gw.complete_many(endpoint("m"), []) == {}
    with pytest.raises(ValueError):
        gw.complete_many(endpoint("m"), [("a", MSGS), ("a", MSGS)])


@settings(max_examples=50)
@given(
    base=st.floats(0.01, 5), cap=st.floats(0.01, 60), jitter=st.floats(0, 1), seed=st.integers(0, 2**32)
)
def test_backoff_non_decreasing(base, cap, jitter, seed):
    gw = Gateway(backoff_base=base, backoff_cap=cap, jitter=jitter, seed=seed)
    it = iter(gw.backoff_delays())
    ds = [next(it) for _ in range(12)]
    assert all(b >= a for a, b in zip(ds, ds[1:]))
    assert all(d <= cap * (1 + jitter) + 1e-12 for d in ds)


@pytest.mark.parametrize("url", ["ftp://x", "not a url", "http://"])
def test_malformed_endpoint(url):
    with pytest.raises(ValueError):
        ModelEndpoint("e", url, "m")


def test_bad_gen_params():
    with pytest.raises(ValueError):
        GenParams(temperature=-1)


def test_http_transport_round_trip(monkeypatch):
    monkeypatch.setenv("CLINVAL_TEST_KEY", "sk-very-secret-123")
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"id": "r1", "choices": [{"message": {"content": "hi"}}]})

    transport = HttpTransport(client=httpx.Client(transport=httpx.MockTransport(handler)))
    ep = ModelEndpoint("real", "https://api.example.test/v1", "model-x", "CLINVAL_TEST_KEY", GenParams(0.0, 64))
    res = quiet_gateway(http=transport).complete(ep, MSGS)
    assert res.text == "hi" and res.request_id == "r1"
    assert seen["url"] == "https://api.example.test/v1/chat/completions"
    assert seen["auth"] == "Bearer sk-very-secret-123"
    assert seen["body"] == {"model": "model-x", "messages": [{"role": "user", "content": "hello"}], "temperature": 0.0, "max_tokens": 64}


@pytest.mark.parametrize(
    "status,body,exc",
    [
        (401, {"error": {"message": "bad key"}}, AuthError),
        (400, {"error": {"message": "too long", "code": "context_length_exceeded"}}, ContextLengthExceeded),
    ],
)
def test_http_error_classification(status, body, exc):
    transport = HttpTransport(client=httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(status, json=body))))
    with pytest.raises(exc):
        quiet_gateway(http=transport).complete(ModelEndpoint("r", "http://h.test", "m"), MSGS)


def test_http_transport_failure_retried():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) == 1:
            raise httpx.ConnectError("refused")
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    transport = HttpTransport(client=httpx.Client(transport=httpx.MockTransport(handler)))
    res = quiet_gateway(http=transport).complete(ModelEndpoint("r", "http://h.test", "m"), MSGS)
    assert res.attempt_count == 2


def test_audit_log_has_no_secrets(tmp_path, monkeypatch, caplog):
    monkeypatch.setenv("CLINVAL_TEST_KEY", "sk-very-secret-123")
    log = tmp_path / "audit.jsonl"
    gw = _gw(MockBackend(script=[429, "ok"]), audit_path=log)
    with caplog.at_level("DEBUG", logger="clinval"):
        gw.complete(endpoint("m", "CLINVAL_TEST_KEY"), MSGS, key="sample-1")
    line = json.loads(log.read_text())
    assert line["key"] == "sample-1" and line["attempts"] == 2 and line["error"] is None
    assert "sk-very-secret" not in log.read_text() and "sk-very-secret" not in caplog.text


def test_unregistered_mock():
    from clinval.gateway import GatewayError

    with pytest.raises(GatewayError):
        quiet_gateway().complete(endpoint("nobody"), MSGS)
