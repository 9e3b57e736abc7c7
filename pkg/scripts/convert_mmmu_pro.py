#!/usr/bin/env python3
"""Convert an MMMU-Pro (10-option) export into a harness manifest.

The input is JSONL with one row per question, as exported from the
Hugging Face ``MMMU/MMMU_Pro`` standard 10-option split after saving each
``image_1`` to disk. Required fields: ``id``, ``question``, ``options`` (a
list, or its Python/JSON string form), ``answer`` (letter) and
``image_1`` (path relative to the image root). ``topic_difficulty``
(Easy/Medium/Hard) fills the difficulty bucket; ``subject`` becomes the
category.

Rows that reference a second image are skipped by default because the
harness sends one media item per question; ``--keep-multi-image`` keeps
them with only the first image.

    python3 scripts/convert_mmmu_pro.py mmmu_pro_val.jsonl images/ mmmu_pro.jsonl
"""

from __future__ import annotations

import argparse
import ast
import json
import mimetypes
import sys
from pathlib import Path

from cod_harness.datamodel import LETTERS, Difficulty, MediaSample, Modality, validate_sample
from cod_harness.ingest import write_manifest


def parse_options(raw) -> list[str]:
    if isinstance(raw, list):
        return [str(o) for o in raw]
    try:
        return [str(o) for o in json.loads(raw)]
    except json.JSONDecodeError:
        return [str(o) for o in ast.literal_eval(raw)]


def convert(rows: list[dict], keep_multi_image: bool = False) -> tuple[list[MediaSample], list[str]]:
    samples, skipped = [], []
    for row in rows:
        if not keep_multi_image and row.get("image_2"):
            skipped.append(f"{row['id']}: more than one image")
            continue
        options = parse_options(row["options"])
        difficulty = row.get("topic_difficulty")
        sample = MediaSample(
            id=str(row["id"]),
            modality=Modality.IMAGE,
            media_path=row["image_1"],
            mime=mimetypes.guess_type(row["image_1"])[0] or "image/png",
            category=row.get("subject") or "validation",
            question=row["question"],
            ground_truth_answer=str(row["answer"]).strip(),
            difficulty=Difficulty(difficulty.lower()) if difficulty else None,
            options=tuple(zip(LETTERS, options)),
        )
        problems = validate_sample(sample)
        if problems:
            skipped.append(f"{row['id']}: {'; '.join(problems)}")
            continue
        samples.append(sample)
    return samples, skipped


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("rows", type=Path, help="JSONL export, one question per line")
    p.add_argument("image_root", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--keep-multi-image", action="store_true")
    p.add_argument("--dataset-name", default="MMMU_Pro")
    args = p.parse_args(argv)

    with args.rows.open(encoding="utf-8") as f:
        rows = [json.loads(line) for line in f if line.strip()]
    samples, skipped = convert(rows, args.keep_multi_image)
    for line in skipped:
        print(f"skipped {line}", file=sys.stderr)
    write_manifest(args.out, args.dataset_name, samples, str(args.image_root.resolve()))
    counts: dict[str, int] = {}
    for s in samples:
        key = s.difficulty.value if s.difficulty else "unrated"
        counts[key] = counts.get(key, 0) + 1
    print(f"wrote {len(samples)} samples to {args.out}: {counts}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
