#!/usr/bin/env python3
"""Convert AIR-Bench Chat metadata into a harness manifest.

Expects the upstream ``Chat_meta.json`` (a JSON list of items) and the
directory holding the audio. Each item needs ``question``, ``answer_gt``,
``meta_info``, ``task_name`` and ``path``; ``uniq_id`` is used as the sample
id when present. Audio is looked up as ``<task_name>/<path>`` under the
audio root unless ``--flat`` is given.

Categories come from ``task_name``: names starting with ``speech``,
``sound`` or ``music`` map to Speech, Sound and Music, anything combining
two sources (``speech_and_sound``, ``speech_and_music``, ``mixed``...) maps
to Mixed. WAV durations are read from the file header; other formats are
left without a duration and ``cod-harness density`` will name them.

    python3 scripts/convert_airbench_chat.py Chat/Chat_meta.json Chat/ air_chat.jsonl
"""

from __future__ import annotations

import argparse
import json
import logging
import mimetypes
import sys
import wave
from pathlib import Path

from cod_harness.datamodel import MediaSample, Modality
from cod_harness.ingest import write_manifest

logger = logging.getLogger("convert_airbench_chat")

MIME_FALLBACK = {".wav": "audio/wav", ".mp3": "audio/mpeg", ".flac": "audio/flac"}


def category_of(task_name: str) -> str:
    name = task_name.lower()
    if "_and_" in name or name.startswith("mix"):
        return "Mixed"
    for prefix, label in (("speech", "Speech"), ("sound", "Sound"), ("music", "Music")):
        if name.startswith(prefix):
            return label
    return "Mixed"


def wav_duration(path: Path) -> float | None:
    try:
        with wave.open(str(path), "rb") as w:
            return w.getnframes() / float(w.getframerate())
    except (wave.Error, EOFError, OSError):
        return None


def convert(items: list[dict], audio_root: Path, flat: bool = False) -> list[MediaSample]:
    samples = []
    for n, item in enumerate(items):
        rel = item["path"] if flat else f"{item['task_name']}/{item['path']}"
        suffix = Path(rel).suffix.lower()
        mime = MIME_FALLBACK.get(suffix) or mimetypes.guess_type(rel)[0] or "application/octet-stream"
        duration = wav_duration(audio_root / rel) if suffix == ".wav" else None
        if duration is None:
            logger.warning("no duration for %s", rel)
        samples.append(
            MediaSample(
                id=str(item.get("uniq_id", n)),
                modality=Modality.AUDIO,
                media_path=rel,
                mime=mime,
                category=category_of(item["task_name"]),
                question=item["question"],
                ground_truth_answer=item["answer_gt"],
                duration_seconds=duration,
                judge_context=item.get("meta_info"),
            )
        )
    return samples


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("meta", type=Path, help="Chat_meta.json")
    p.add_argument("audio_root", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--flat", action="store_true", help="audio files sit directly under audio_root")
    p.add_argument("--dataset-name", default="AIR-Bench-Chat")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    items = json.loads(args.meta.read_text(encoding="utf-8"))
    samples = convert(items, args.audio_root, args.flat)
    write_manifest(args.out, args.dataset_name, samples, str(args.audio_root.resolve()))
    counts: dict[str, int] = {}
    for s in samples:
        counts[s.category] = counts.get(s.category, 0) + 1
    print(f"wrote {len(samples)} samples to {args.out}: {counts}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
