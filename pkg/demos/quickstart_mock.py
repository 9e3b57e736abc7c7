#!/usr/bin/env python3
"""
Quickstart against a scripted local endpoint

Builds a five-clip audio manifest, answers it with standard and CoD
prompting, judges both runs in both orientations and prints the
alignment table. Everything talks to an in-process mock server, so no
API key or network is needed.
"""

import os
import tempfile
from pathlib import Path

from cod_harness import metrics
from cod_harness.chains import DESCRIBE_AUDIO, run_many
from cod_harness.datamodel import MediaSample, Modality, Strategy, StrategyKind
from cod_harness.ingest import load_manifest, write_manifest
from cod_harness.judge import judge_run
from cod_harness.mock import MockEndpoint, last_user_text
from cod_harness.modelclient import EndpointConfig, ModelClient
from cod_harness.report import pct

work = Path(tempfile.mkdtemp(prefix="cod-quickstart-"))
(work / "media").mkdir()

# A tiny manifest. Media bytes are placeholders; the mock never decodes them.
samples = []
for i, category in enumerate(["Speech", "Speech", "Sound", "Music", "Mixed"]):
    (work / "media" / f"clip{i}.wav").write_bytes(b"RIFF" + bytes(64) * (i + 1))
    samples.append(
        MediaSample(
            id=f"clip{i}",
            modality=Modality.AUDIO,
            media_path=f"clip{i}.wav",
            mime="audio/wav",
            category=category,
            question=f"What happens in clip {i}?",
            ground_truth_answer=f"Two people talk about clip {i} and then laugh.",
            duration_seconds=8.0 + i,
            judge_context=f"Clip {i}: a short conversation followed by laughter.",
        )
    )
write_manifest(work / "manifest.jsonl", "toy-audio", samples, "media")
manifest = load_manifest(work / "manifest.jsonl")
print(f"manifest: {len(manifest.samples)} samples in {work}")


# The "model": describes when asked to, and answers better once it has described.
def model(body):
    text = last_user_text(body)
    if text == DESCRIBE_AUDIO:
        return "Two speakers chat in a quiet room, one voice is amused, and laughter follows at the end."
    if len(body["messages"]) > 1:
        return "Two people talk and then laugh."
    return "Someone is talking."


# The "judge": rewards answers that mention the laughter.
def judge(body):
    prompt = last_user_text(body)
    a1 = prompt.split("[The Start of Assistant 1s Answer]\n")[1].split("\n")[0]
    a2 = prompt.split("[The Start of Assistant 2s Answer]\n")[1].split("\n")[0]
    score = lambda answer: 9 if "laugh" in answer else 5
    return f"{score(a1)} {score(a2)}"


os.environ.setdefault("DEMO_KEY", "not-a-real-key")
with MockEndpoint(model) as gen_server, MockEndpoint(judge) as judge_server:
    gen = ModelClient(EndpointConfig(gen_server.base_url, "demo-audio-model", api_key_env_name="DEMO_KEY"))
    judge_client = ModelClient(
        EndpointConfig(judge_server.base_url, "demo-judge", api_key_env_name="DEMO_KEY", max_output_tokens=64)
    )
    index = manifest.index()
    reports = {}
    for kind in (StrategyKind.STANDARD, StrategyKind.COD):
        records, failures = run_many(Strategy(kind), manifest.samples, gen, media_root=manifest.media_root)
        verdicts = judge_run(records, index, judge_client)
        reports[kind] = metrics.aggregate_category(verdicts, index, kind)
        if kind is StrategyKind.COD:
            density = metrics.info_density(records, index, metrics.TokenCountMode.WHITESPACE)
    print(f"generation requests: {gen_server.request_count}, judge requests: {judge_server.request_count}")

print("\ncategory   standard r   CoD r")
for std, cod in zip(reports[StrategyKind.STANDARD], reports[StrategyKind.COD]):
    print(f"{std.category:<10} {pct(std.r):>10}   {pct(cod.r):>6}")

print("\ndescription tokens per second (whitespace tokens, Mixed excluded)")
for d in density:
    print(f"  {d.category}: {d.id:.2f}")
