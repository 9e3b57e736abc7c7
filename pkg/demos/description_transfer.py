#!/usr/bin/env python3
"""
Transferring descriptions between models (CoD*)

A large model describes each image once; a small model then answers the
multiple-choice question with that description placed in its own
conversation as if it had written it. The small model is called exactly
once per question and the description reaches it byte for byte.
"""

import os
import tempfile
from pathlib import Path

from cod_harness import metrics
from cod_harness.chains import DESCRIBE_IMAGE, run_many
from cod_harness.datamodel import Difficulty, MediaSample, Modality, Strategy, StrategyKind
from cod_harness.mock import MockEndpoint, last_user_text
from cod_harness.modelclient import EndpointConfig, ModelClient

work = Path(tempfile.mkdtemp(prefix="cod-transfer-"))
options = (("A", "Moss"), ("B", "Rust"), ("C", "Lichen"), ("D", "Algae"))
samples = []
for i in range(6):
    (work / f"leaf{i}.png").write_bytes(b"\x89PNG" + bytes([i]) * 32)
    samples.append(
        MediaSample(
            id=f"leaf{i}",
            modality=Modality.IMAGE,
            media_path=f"leaf{i}.png",
            mime="image/png",
            category="validation",
            question="What is the substance developing on these leaves?",
            ground_truth_answer="D",
            difficulty=(Difficulty.EASY, Difficulty.HARD)[i % 2],
            options=options,
        )
    )
index = {s.id: s for s in samples}


def big_model(body):
    if last_user_text(body) == DESCRIBE_IMAGE:
        return "Green leaves covered in a thin, slimy green film that looks like algae, wet from rain."
    return "D."


def small_model(body):
    history = body["messages"]
    # without a description the small model guesses; with one it reads the word "algae"
    if len(history) == 3 and "algae" in history[1]["content"]:
        return "The answer is D."
    return "B"


os.environ.setdefault("DEMO_KEY", "not-a-real-key")
with MockEndpoint(big_model) as big, MockEndpoint(small_model) as small:
    describer = ModelClient(EndpointConfig(big.base_url, "big-vl", api_key_env_name="DEMO_KEY"))
    target = ModelClient(EndpointConfig(small.base_url, "small-vl", api_key_env_name="DEMO_KEY"))

    described, _ = run_many(Strategy(StrategyKind.COD), samples, describer, media_root=work)
    standard, _ = run_many(Strategy(StrategyKind.STANDARD), samples, target, media_root=work)
    before = small.request_count
    transfer, _ = run_many(
        Strategy(StrategyKind.COD_TRANSFER, "big-cod"),
        samples,
        target,
        media_root=work,
        source_records={r.sample_id: r for r in described},
    )
    print(f"describer requests: {big.request_count} (2 per image)")
    print(f"small-model requests for CoD*: {small.request_count - before} (1 per image)")

for name, records in (("Standard", standard), ("CoD*", transfer)):
    rep = metrics.accuracy(records, index)
    cells = ", ".join(f"{b} {a.n_correct}/{a.n_total}" for b, a in rep.per_bucket.items())
    print(f"{name:<8} {cells}")
