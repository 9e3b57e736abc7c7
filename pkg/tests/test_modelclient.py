import base64
import random
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest

from cod_harness.datamodel import ChatMessage, ContentPart, Modality, Role
from cod_harness.mock import Script
from cod_harness.modelclient import (
    ConfigurationError,
    EndpointConfig,
    ModelClient,
    PermanentError,
    ResponseCache,
    TransportFailure,
    cache_key,
    load_endpoint_config,
    to_wire_messages,
)

CONFIG = EndpointConfig(base_url="http://unused", model_id="m")


def msgs(text="hello", media=b"abc"):
    return [
        ChatMessage(Role.USER, (ContentPart.of_media(Modality.AUDIO, media, "audio/wav"), ContentPart.of_text(text)))
    ]


def test_cache_key_deterministic():
    assert cache_key(CONFIG, msgs()) == cache_key(CONFIG, msgs())


def test_cache_key_covers_temperature_and_tokens():
    assert cache_key(CONFIG, msgs()) != cache_key(EndpointConfig("http://unused", "m", temperature=0.7), msgs())
    assert cache_key(CONFIG, msgs()) != cache_key(EndpointConfig("http://unused", "m", max_output_tokens=64), msgs())
    assert cache_key(CONFIG, msgs()) != cache_key(EndpointConfig("http://unused", "m2"), msgs())


def test_cache_key_ignores_network_fields():
    other = EndpointConfig(
        "http://elsewhere", "m", request_timeout_seconds=5, max_retries=0, max_in_flight=9, api_key_env_name="X"
    )
    assert cache_key(CONFIG, msgs()) == cache_key(other, msgs())


def test_cache_key_covers_media_bytes_and_nonce():
    assert cache_key(CONFIG, msgs(media=b"abc")) != cache_key(CONFIG, msgs(media=b"abd"))
    assert cache_key(CONFIG, msgs()) != cache_key(CONFIG, msgs(), nonce=1)
    assert cache_key(CONFIG, msgs(), nonce=0) == cache_key(CONFIG, msgs())


def test_wire_format():
    history = msgs() + [
        ChatMessage.text(Role.ASSISTANT, "desc"),
        ChatMessage(Role.USER, (ContentPart.of_media(Modality.IMAGE, b"png", "image/png"), ContentPart.of_text("q"))),
    ]
    wire = to_wire_messages(history)
    audio = wire[0]["content"][0]
    assert audio == {"type": "input_audio", "input_audio": {"data": base64.b64encode(b"abc").decode(), "format": "wav"}}
    assert wire[0]["content"][1] == {"type": "text", "text": "hello"}
    assert wire[1] == {"role": "assistant", "content": "desc"}
    assert wire[2]["content"][0]["image_url"]["url"] == "data:image/png;base64," + base64.b64encode(b"png").decode()


def test_second_identical_call_served_from_cache(mock_endpoint, make_client):
    ep = mock_endpoint(lambda body: "hi there")
    client = make_client(ep)
    first = client.send_chat(msgs())
    second = client.send_chat(msgs())
    assert (first.from_cache, second.from_cache) == (False, True)
    assert first.text == second.text == "hi there"
    assert second.usage == first.usage
    assert ep.request_count == 1


def test_request_shape(mock_endpoint, make_client):
    ep = mock_endpoint(lambda body: "ok")
    make_client(ep, temperature=0.0, max_output_tokens=1024).send_chat(msgs())
    body = ep.requests[0]
    assert body["model"] == "mock-model"
    assert body["temperature"] == 0.0
    assert body["max_tokens"] == 1024


def test_retry_429_then_success(mock_endpoint, make_client):
    ep = mock_endpoint(Script([(429, {"error": "slow down"}), (429, {"error": "slow down"}), "fine"]))
    resp = make_client(ep, max_retries=3).send_chat(msgs())
    assert resp.text == "fine"
    assert ep.request_count == 3


def test_5xx_exhausts_retries(mock_endpoint, make_client):
    ep = mock_endpoint(lambda body: (503, {"error": "down"}))
    with pytest.raises(TransportFailure) as exc:
        make_client(ep, max_retries=2).send_chat(msgs())
    assert exc.value.status == 503
    assert exc.value.attempts == 3
    assert ep.request_count == 3


def test_401_is_permanent(mock_endpoint, make_client):
    ep = mock_endpoint(lambda body: (401, {"error": "bad key"}))
    with pytest.raises(PermanentError) as exc:
        make_client(ep, max_retries=5).send_chat(msgs())
    assert exc.value.status == 401
    assert ep.request_count == 1


def test_transport_error_retried():
    config = EndpointConfig("http://127.0.0.1:9", "m", api_key_env_name="PATH", max_retries=1, request_timeout_seconds=1)
    with ModelClient(config, sleep=lambda s: None) as client:
        with pytest.raises(TransportFailure) as exc:
            client.send_chat(msgs())
    assert exc.value.status is None
    assert exc.value.attempts == 2


def test_missing_api_key_before_network(mock_endpoint, monkeypatch):
    ep = mock_endpoint(lambda body: "x")
    monkeypatch.delenv("COD_HARNESS_NO_SUCH_KEY", raising=False)
    config = EndpointConfig(ep.base_url, "m", api_key_env_name="COD_HARNESS_NO_SUCH_KEY")
    with ModelClient(config) as client:
        with pytest.raises(ConfigurationError):
            client.send_chat(msgs())
    assert ep.request_count == 0


def test_backoff_schedule():
    client = ModelClient(CONFIG, rng=random.Random(0))
    for i in range(5):
        delay = client.backoff_delay(i)
        assert 0.8 * 2**i <= delay <= 1.2 * 2**i


def test_sleeps_between_attempts(mock_endpoint, api_key):
    ep = mock_endpoint(Script([(500, {}), (500, {}), "ok"]))
    slept = []
    config = EndpointConfig(ep.base_url, "m", api_key_env_name=api_key, max_retries=4)
    with ModelClient(config, sleep=slept.append, rng=random.Random(1)) as client:
        client.send_chat(msgs())
    assert len(slept) == 2
    assert 0.8 <= slept[0] <= 1.2 and 1.6 <= slept[1] <= 2.4


def test_max_in_flight_respected(mock_endpoint, make_client):
    ep = mock_endpoint(lambda body: "ok", delay=0.05)
    client = make_client(ep, max_in_flight=3)
    with ThreadPoolExecutor(max_workers=12) as pool:
        list(pool.map(lambda i: client.send_chat(msgs(text=f"q{i}")), range(24)))
    assert ep.request_count == 24
    assert ep.peak_concurrency <= 3
    assert ep.peak_concurrency >= 2


def test_concurrent_identical_requests_hit_network_once(mock_endpoint, make_client):
    ep = mock_endpoint(lambda body: "ok", delay=0.05)
    client = make_client(ep, max_in_flight=4)
    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(lambda i: client.send_chat(msgs()), range(8)))
    assert ep.request_count == 1
    assert sum(not r.from_cache for r in results) >= 1


def test_persistent_cache_write_once(tmp_path, mock_endpoint, make_client):
    path = tmp_path / "cache.jsonl"
    ep = mock_endpoint(Script(["first", "second"]))
    make_client(ep, ResponseCache(path)).send_chat(msgs())
    reopened = ResponseCache(path)
    key = cache_key(make_client(ep).config, msgs())
    assert reopened.get(key).text == "first"
    from cod_harness.modelclient import ChatResponse

    assert reopened.put(key, ChatResponse("overwrite")).text == "first"
    assert ResponseCache(path).get(key).text == "first"
    resp = make_client(ep, ResponseCache(path)).send_chat(msgs())
    assert resp.from_cache and ep.request_count == 1


def test_cache_concurrent_writers_keep_first(tmp_path):
    cache = ResponseCache(tmp_path / "c.jsonl")
    from cod_harness.modelclient import ChatResponse

    barrier = threading.Barrier(8)

    def put(i):
        barrier.wait()
        return cache.put("k", ChatResponse(f"v{i}")).text

    with ThreadPoolExecutor(max_workers=8) as pool:
        winners = set(pool.map(put, range(8)))
    assert len(winners) == 1
    assert len((tmp_path / "c.jsonl").read_text().splitlines()) == 1


def test_load_endpoint_config(tmp_path):
    path = tmp_path / "e.json"
    path.write_text('{"base_url": "http://x", "model_id": "gpt-4o-mini"}')
    cfg = load_endpoint_config(path, max_output_tokens=64)
    assert cfg.max_output_tokens == 64 and cfg.temperature == 0.0
    path.write_text('{"base_url": "http://x", "model_id": "m", "max_in_flight": 0}')
    with pytest.raises(ConfigurationError):
        load_endpoint_config(path)
