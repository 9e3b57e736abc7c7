from __future__ import annotations

import json
import sys
import shutil
from pathlib import Path

import pytest

from cod_harness.chains import DESCRIBE_AUDIO, DESCRIBE_IMAGE
from cod_harness.datamodel import Difficulty, MediaSample, Modality, Orientation
from cod_harness.ingest import Manifest, write_manifest
from cod_harness.mock import MockEndpoint, last_user_text
from cod_harness.modelclient import EndpointConfig, ModelClient, ResponseCache

FIXTURES = Path(__file__).parent / "fixtures"
REPLAY_RUNS = FIXTURES / "replay" / "runs"
API_KEY_ENV = "COD_HARNESS_TEST_KEY"

TEN_OPTIONS = tuple(
    zip(
        "ABCDEFGHIJ",
        (
            "Don't know and don't want to guess",
            "Powdery mildew",
            "Moss",
            "Rust",
            "Lichen",
            "Sooty mould",
            "Bacterial leaf spot",
            "Fungus",
            "Downy mildew",
            "Algae",
        ),
    )
)


def audio_sample(i: int = 0, **kw) -> MediaSample:
    base = dict(
        id=f"a{i:03d}",
        modality=Modality.AUDIO,
        media_path=f"clip{i:03d}.wav",
        mime="audio/wav",
        category="Speech",
        question=f"How did the first person react in clip {i}?",
        ground_truth_answer="The first person reacted by saying 'wow yeah'.",
        duration_seconds=10.0,
        judge_context="Two speakers discuss smoking bans in restaurants.",
    )
    base.update(kw)
    return MediaSample(**base)


def image_sample(i: int = 0, **kw) -> MediaSample:
    base = dict(
        id=f"i{i:03d}",
        modality=Modality.IMAGE,
        media_path=f"img{i:03d}.png",
        mime="image/png",
        category="validation",
        difficulty=Difficulty.HARD,
        question="What is the substance that is developing on these leaves?",
        options=TEN_OPTIONS,
        ground_truth_answer="J",
    )
    base.update(kw)
    return MediaSample(**base)


def write_media(root: Path, samples) -> None:
    root.mkdir(parents=True, exist_ok=True)
    for s in samples:
        (root / s.media_path).write_bytes(f"bytes-of-{s.id}".encode() * 3)


def chain_responder(body: dict) -> str:
    """Describe when asked to describe, otherwise answer; deterministic per request."""
    text = last_user_text(body)
    if text in (DESCRIBE_AUDIO, DESCRIBE_IMAGE):
        return "the audio contains two speakers discussing restaurants and smoking"
    if "Answer with the option's letter" in text:
        return "J."
    return "wow yeah"


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "test-key")
    return API_KEY_ENV


@pytest.fixture
def mock_endpoint():
    endpoints = []

    def factory(responder=chain_responder, **kw) -> MockEndpoint:
        ep = MockEndpoint(responder, **kw).start()
        endpoints.append(ep)
        return ep

    yield factory
    for ep in endpoints:
        ep.stop()


@pytest.fixture
def make_client(api_key):
    clients = []

    def factory(endpoint: MockEndpoint, cache: ResponseCache | None = None, **cfg) -> ModelClient:
        config = EndpointConfig(
            base_url=endpoint.base_url,
            model_id=cfg.pop("model_id", "mock-model"),
            api_key_env_name=api_key,
            max_retries=cfg.pop("max_retries", 3),
            **cfg,
        )
        client = ModelClient(config, cache, sleep=lambda s: None)
        clients.append(client)
        return client

    yield factory
    for c in clients:
        c.close()


@pytest.fixture
def audio_manifest(tmp_path) -> Manifest:
    samples = [audio_sample(i) for i in range(5)]
    write_media(tmp_path / "media", samples)
    path = tmp_path / "manifest.jsonl"
    write_manifest(path, "toy-audio", samples, "media")
    from cod_harness.ingest import load_manifest

    return load_manifest(path)


@pytest.fixture
def replay_runs(tmp_path) -> Path:
    dst = tmp_path / "replay-runs"
    shutil.copytree(REPLAY_RUNS, dst)
    return dst


def write_endpoint_config(path: Path, base_url: str, **kw) -> Path:
    data = {"base_url": base_url, "model_id": "mock-model", "api_key_env_name": API_KEY_ENV, "max_retries": 2}
    data.update(kw)
    path.write_text(json.dumps(data))
    return path


def random_verdict_set(rng, size: int, n_categories: int, invalid_rate: float):
    """Random verdicts plus the audio samples they reference."""
    from cod_harness.datamodel import JudgeVerdict, Orientation

    cats = ["Speech", "Sound", "Music", "Mixed", "Speech-2", "Other"][:n_categories]
    samples = {}
    verdicts = []
    n_samples = (size + 1) // 2
    for i in range(n_samples):
        s = audio_sample(i, id=f"s{i:05d}", category=rng.choice(cats))
        samples[s.id] = s
    for i in range(size):
        sid = f"s{i // 2:05d}"
        o = (Orientation.NO_SWAP, Orientation.SWAP)[i % 2]
        if rng.random() < invalid_rate:
            verdicts.append(JudgeVerdict(sid, o, "unparsable", False, 4))
        else:
            gt, p = rng.uniform(0.5, 10), rng.uniform(0, 10)
            verdicts.append(JudgeVerdict(sid, o, f"{gt} {p}", True, 1, gt, p))
    rng.shuffle(verdicts)
    return verdicts, samples


def flat_oracle(verdicts, samples):
    """Brute-force per-category means recomputed from the raw verdict list."""
    out = {}
    for cat in {samples[v.sample_id].category for v in verdicts}:
        valid = [v for v in verdicts if samples[v.sample_id].category == cat and v.valid]
        n_invalid = sum(1 for v in verdicts if samples[v.sample_id].category == cat and not v.valid)
        entry = {"n_valid": len(valid), "n_invalid": n_invalid}
        for name, vs in [("all", valid)] + [(o.value, [v for v in valid if v.orientation is o]) for o in Orientation]:
            if vs:
                gt = sum(v.score_gt for v in vs) / len(vs)
                p = sum(v.score_pred for v in vs) / len(vs)
                entry[name] = (gt, p, p / gt)
            else:
                entry[name] = None
        out[cat] = entry
    return out


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in mod.CRITERIA.items():
        ok, detail = mod.RESULTS.get(n, (False, "did not run to completion"))
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}: {title} | {detail}")
