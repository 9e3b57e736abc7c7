#!/usr/bin/env python3
"""
Rebuilding the report tables from recorded runs

The test fixtures hold frozen generation and verdict logs for an
AIR-Bench-Chat-shaped audio set and an MMMU-Pro-shaped image set. This
script loads them through the run store and prints the same Markdown the
``cod-harness report`` command writes, without touching any endpoint.
"""

import sys
from pathlib import Path

from cod_harness.report import build_report, render_markdown
from cod_harness.runstore import RunStore

runs_dir = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "replay" / "runs"
store = RunStore(runs_dir)

# Open-ended audio runs: judged, so the report has alignment ratios, delta r and density.
audio = build_report(store, ["airbench-standard", "airbench-cod"])
print(render_markdown(audio))

# Multiple-choice image runs: scored by letter accuracy per difficulty bucket.
# CoD* answers with descriptions transferred from the Qwen2.5-VL-7B CoD run.
mcq = build_report(store, ["qwen2-vl-7b-standard", "qwen2-vl-7b-cod", "qwen2-vl-7b-codstar"])
print(render_markdown(mcq))

# The two scoring paths cannot share one comparison.
try:
    build_report(store, ["qwen2-vl-7b-standard", "airbench-cod"])
except ValueError as exc:
    print(f"mixing run kinds is refused: {exc}", file=sys.stderr)
