"""Benchmark manifest loading and media resolution."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .datamodel import MediaSample, validate_sample

SCHEMA_VERSION = 1
SUPPORTED_SCHEMA_VERSIONS = frozenset({1})

REQUIRED_FIELDS = (
    "id",
    "modality",
    "media_path",
    "mime",
    "category",
    "question",
    "ground_truth_answer",
)


class ManifestError(ValueError):
    """A manifest file could not be loaded."""

    def __init__(self, message: str, line: int | None = None, fragment: str | None = None):
        self.line = line
        self.fragment = fragment
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MediaError(OSError):
    pass


@dataclass(frozen=True)
class Manifest:
    schema_version: int
    dataset_name: str
    samples: tuple[MediaSample, ...]
    media_root: Path

    def index(self) -> dict[str, MediaSample]:
        return {s.id: s for s in self.samples}

    def digest(self) -> str:
        """Content digest over the dataset name and every sample record."""
        h = hashlib.sha256(self.dataset_name.encode("utf-8"))
        for s in self.samples:
            h.update(b"\n")
            h.update(json.dumps(s.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8"))
        return h.hexdigest()


@dataclass(frozen=True)
class MediaPayload:
    data: bytes
    mime: str


def _fragment(line: str, limit: int = 80) -> str:
    line = line.rstrip("\n")
    return line if len(line) <= limit else line[:limit] + "..."


def _parse_header(line: str) -> dict[str, Any]:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed header ({exc.msg})", 1, _fragment(line)) from exc
    if not isinstance(header, dict):
        raise ManifestError("header must be an object", 1, _fragment(line))
    for key in ("schema_version", "dataset_name", "media_root"):
        if key not in header:
            raise ManifestError(f"missing field {key}", 1, _fragment(line))
    version = header["schema_version"]
    if version not in SUPPORTED_SCHEMA_VERSIONS:
        supported = ", ".join(str(v) for v in sorted(SUPPORTED_SCHEMA_VERSIONS))
        raise ManifestError(
            f"unsupported schema_version {version} (supported: {supported})", 1, _fragment(line)
        )
    return header


def parse_sample_record(record: Any, lineno: int, raw: str) -> MediaSample:
    if not isinstance(record, dict):
        raise ManifestError("record must be an object", lineno, _fragment(raw))
    for key in REQUIRED_FIELDS:
        if key not in record:
            raise ManifestError(f"missing field {key}", lineno, _fragment(raw))
    try:
        sample = MediaSample.from_dict(record)
    except (ValueError, TypeError, KeyError) as exc:
        raise ManifestError(f"invalid record ({exc})", lineno, _fragment(raw)) from exc
    violations = validate_sample(sample)
    if violations:
        raise ManifestError("; ".join(violations), lineno, _fragment(raw))
    return sample


def load_manifest(path: str | Path, media_root: str | Path | None = None) -> Manifest:
    """Load a line-delimited manifest.

    The first line is a header object with ``schema_version``,
    ``dataset_name`` and ``media_root``; each following nonblank line is one
    sample record. A relative ``media_root`` is taken relative to the
    manifest's directory. Passing ``media_root`` overrides the header.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines:
        raise ManifestError("empty manifest (no header line)")
    header = _parse_header(lines[0])

    samples: list[MediaSample] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"malformed record ({exc.msg})", lineno, _fragment(raw)) from exc
        sample = parse_sample_record(record, lineno, raw)
        if sample.id in seen:
            raise ManifestError(f"duplicate id {sample.id!r}", lineno, _fragment(raw))
        seen.add(sample.id)
        samples.append(sample)

    root = Path(media_root) if media_root is not None else Path(header["media_root"])
    if not root.is_absolute():
        root = (path.parent / root) if media_root is None else root.resolve()
    return Manifest(
        schema_version=header["schema_version"],
        dataset_name=header["dataset_name"],
        samples=tuple(samples),
        media_root=root,
    )


def write_manifest(path: str | Path, dataset_name: str, samples, media_root: str = ".") -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {"schema_version": SCHEMA_VERSION, "dataset_name": dataset_name, "media_root": media_root}
        fh.write(json.dumps(header) + "\n")
        for s in samples:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")


def resolve_media(sample: MediaSample, media_root: str | Path) -> MediaPayload:
    """Read the sample's media file under ``media_root``."""
    root = Path(media_root).resolve()
    rel = Path(sample.media_path)
    if rel.is_absolute():
        raise MediaError(f"path traversal rejected: {sample.media_path!r} is absolute")
    target = (root / rel).resolve()
    if not target.is_relative_to(root):
        raise MediaError(f"path traversal rejected: {sample.media_path!r} escapes {root}")
    try:
        data = target.read_bytes()
    except FileNotFoundError as exc:
        raise MediaError(f"media file not found: {target}") from exc
    return MediaPayload(data=data, mime=sample.mime)
