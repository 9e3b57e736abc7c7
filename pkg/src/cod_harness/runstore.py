"""On-disk run storage: append-only logs, resumability and replay.

Layout under ``runs_dir``::

    _cache/responses.jsonl      shared response cache (keyed by cache_key)
    <run_id>/run.json           immutable run header (written once)
    <run_id>/samples.jsonl      copy of the manifest the run was created from
    <run_id>/status.jsonl       status transitions
    <run_id>/generations.jsonl  GenerationRecord log
    <run_id>/verdicts.jsonl     JudgeVerdict log
    <run_id>/judge.json         judge configuration (written once, on first judging)

Schema history: version 0 runs stored ``strategy`` as a bare string and
``usage`` as a single object per generation; ``load_run`` migrates them.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, NamedTuple

from ._jsonl import AppendLog, write_json_once
from .datamodel import GenerationRecord, JudgeVerdict, Strategy, StrategyKind
from .ingest import Manifest, load_manifest, write_manifest
from .modelclient import EndpointConfig, ResponseCache

RUN_SCHEMA_VERSION = 1
RUNS_DIR_ENV = "COD_HARNESS_RUNS_DIR"
DEFAULT_RUNS_DIR = "runs"


class RunStoreError(Exception):
    pass


class RunNotFoundError(RunStoreError):
    pass


class RunStateError(RunStoreError):
    pass


class DuplicateRecordError(RunStoreError):
    pass


class ConfigMismatchError(RunStoreError):
    def __init__(self, run_id: str, stored: str, current: str):
        super().__init__(
            f"run {run_id} was created with config digest {stored}, current config digest is "
            f"{current}; start a new run for a changed configuration"
        )
        self.stored = stored
        self.current = current


class RunStatus(str, enum.Enum):
    IN_PROGRESS = "in_progress"
    COMPLETE = "complete"
    FAILED = "failed"


def default_runs_dir() -> Path:
    return Path(os.environ.get(RUNS_DIR_ENV, DEFAULT_RUNS_DIR))


def _digest(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def config_digest(
    endpoint: EndpointConfig, templates_digest: str, strategy: Strategy, manifest_digest: str
) -> str:
    return _digest(
        {
            "endpoint": endpoint.identity(),
            "templates": templates_digest,
            "strategy": strategy.to_dict(),
            "manifest": manifest_digest,
        }
    )


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    created_at: str
    config_digest: str
    strategy: Strategy
    model_id: str
    dataset_name: str
    status: RunStatus = RunStatus.IN_PROGRESS
    completed_sample_ids: frozenset[str] = frozenset()
    schema_version: int = RUN_SCHEMA_VERSION
    meta: dict[str, Any] = field(default_factory=dict)

    def header(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "run_id": self.run_id,
            "created_at": self.created_at,
            "config_digest": self.config_digest,
            "strategy": self.strategy.to_dict(),
            "model_id": self.model_id,
            "dataset_name": self.dataset_name,
            "meta": self.meta,
        }


class RunData(NamedTuple):
    manifest: RunManifest
    records: list[GenerationRecord]
    verdicts: list[JudgeVerdict]


def _migrate_header(header: dict[str, Any]) -> dict[str, Any]:
    version = header.get("schema_version", 0)
    if version == 0:
        header = dict(header)
        if isinstance(header.get("strategy"), str):
            header["strategy"] = {"kind": header["strategy"], "description_source_run": header.get("source_run")}
        header.setdefault("meta", {})
        header["schema_version"] = RUN_SCHEMA_VERSION
    elif version != RUN_SCHEMA_VERSION:
        raise RunStoreError(f"unsupported run schema_version {version} (supported: 0, {RUN_SCHEMA_VERSION})")
    return header


def _migrate_generation(rec: dict[str, Any], version: int, header: dict[str, Any]) -> dict[str, Any]:
    if version >= 1:
        return rec
    rec = dict(rec)
    if isinstance(rec.get("strategy"), str):
        rec["strategy"] = {"kind": rec["strategy"], "description_source_run": header["strategy"].get("description_source_run")}
    # v0 kept only the description turn's usage for cod, the single call's otherwise
    usage = rec.get("usage")
    rec["usage"] = [usage] if usage is not None else []
    if rec["strategy"]["kind"] != StrategyKind.STANDARD.value:
        rec["description_usage"] = usage
    rec.setdefault("request_digests", [])
    return rec


class _RunState:
    """In-memory mirror of one run's logs used to enforce append rules."""

    def __init__(self, run_dir: Path):
        self.lock = threading.Lock()
        self.generations = AppendLog(run_dir / "generations.jsonl")
        self.verdicts = AppendLog(run_dir / "verdicts.jsonl")
        self.status_log = AppendLog(run_dir / "status.jsonl")
        self.generation_keys = {
            (r["sample_id"], _kind_of(r["strategy"])) for r in self.generations.iter_records()
        }
        self.verdict_keys = {(v["sample_id"], v["orientation"]) for v in self.verdicts.iter_records()}
        statuses = self.status_log.read()
        self.status = RunStatus(statuses[-1]["status"]) if statuses else RunStatus.IN_PROGRESS


def _kind_of(strategy: Any) -> str:
    return strategy if isinstance(strategy, str) else strategy["kind"]


class RunStore:
    def __init__(self, runs_dir: str | Path | None = None):
        self.runs_dir = Path(runs_dir) if runs_dir is not None else default_runs_dir()
        self._states: dict[str, _RunState] = {}
        self._lock = threading.Lock()
        self._cache: ResponseCache | None = None

    def cache(self) -> ResponseCache:
        if self._cache is None:
            self._cache = ResponseCache(self.runs_dir / "_cache" / "responses.jsonl")
        return self._cache

    def run_dir(self, run_id: str) -> Path:
        if not run_id or "/" in run_id or run_id.startswith((".", "_")):
            raise RunStoreError(f"invalid run id {run_id!r}")
        return self.runs_dir / run_id

    def exists(self, run_id: str) -> bool:
        return (self.run_dir(run_id) / "run.json").exists()

    def _state(self, run_id: str) -> _RunState:
        with self._lock:
            state = self._states.get(run_id)
            if state is None:
                if not self.exists(run_id):
                    raise RunNotFoundError(f"run {run_id!r} not found under {self.runs_dir}")
                state = self._states[run_id] = _RunState(self.run_dir(run_id))
            return state

    def create_run(
        self,
        run_id: str,
        *,
        config_digest: str,
        strategy: Strategy,
        model_id: str,
        manifest: Manifest,
        meta: dict[str, Any] | None = None,
    ) -> RunManifest:
        run_dir = self.run_dir(run_id)
        if self.exists(run_id):
            raise RunStateError(f"run {run_id!r} already exists")
        run_dir.mkdir(parents=True, exist_ok=True)
        run = RunManifest(
            run_id=run_id,
            created_at=datetime.now(timezone.utc).isoformat(),
            config_digest=config_digest,
            strategy=strategy,
            model_id=model_id,
            dataset_name=manifest.dataset_name,
            meta=dict(meta or {}),
        )
        write_manifest(
            run_dir / "samples.jsonl", manifest.dataset_name, manifest.samples, str(manifest.media_root.resolve())
        )
        # run.json last: a run exists only once its header does
        write_json_once(run_dir / "run.json", run.header())
        return run

    def _read_header(self, run_id: str) -> dict[str, Any]:
        path = self.run_dir(run_id) / "run.json"
        if not path.exists():
            raise RunNotFoundError(f"run {run_id!r} not found under {self.runs_dir}")
        return json.loads(path.read_text(encoding="utf-8"))

    def run_manifest(self, run_id: str) -> RunManifest:
        raw = self._read_header(run_id)
        header = _migrate_header(raw)
        state = self._state(run_id)
        with state.lock:
            completed = frozenset(sid for sid, _ in state.generation_keys)
            status = state.status
        return RunManifest(
            run_id=header["run_id"],
            created_at=header["created_at"],
            config_digest=header["config_digest"],
            strategy=Strategy.from_dict(header["strategy"]),
            model_id=header["model_id"],
            dataset_name=header["dataset_name"],
            status=status,
            completed_sample_ids=completed,
            schema_version=raw.get("schema_version", 0),
            meta=header.get("meta", {}),
        )

    def samples(self, run_id: str, media_root: str | Path | None = None) -> Manifest:
        return load_manifest(self.run_dir(run_id) / "samples.jsonl", media_root=media_root)

    def append_record(self, run_id: str, record: GenerationRecord | JudgeVerdict) -> None:
        """Durably append one generation or verdict.

        Generations need an in-progress run; verdicts need a complete
        generation run. Duplicates are rejected.
        """
        state = self._state(run_id)
        with state.lock:
            if isinstance(record, GenerationRecord):
                if state.status is not RunStatus.IN_PROGRESS:
                    raise RunStateError(f"run {run_id} is {state.status.value}; cannot append generations")
                key = (record.sample_id, record.strategy.kind.value)
                if key in state.generation_keys:
                    raise DuplicateRecordError(
                        f"run {run_id} already has a {key[1]} generation for sample {key[0]}"
                    )
                state.generations.append(record.to_dict())
                state.generation_keys.add(key)
            else:
                if state.status is not RunStatus.COMPLETE:
                    raise RunStateError(
                        f"run {run_id} is {state.status.value}; verdicts need a complete generation run"
                    )
                key = (record.sample_id, record.orientation.value)
                if key in state.verdict_keys:
                    raise DuplicateRecordError(
                        f"run {run_id} already has a {key[1]} verdict for sample {key[0]}"
                    )
                state.verdicts.append(record.to_dict())
                state.verdict_keys.add(key)

    def set_status(self, run_id: str, status: RunStatus) -> None:
        state = self._state(run_id)
        with state.lock:
            if state.status is status:
                return
            if state.status is not RunStatus.IN_PROGRESS:
                raise RunStateError(f"run {run_id} is already {state.status.value}")
            state.status_log.append({"status": status.value, "at": datetime.now(timezone.utc).isoformat()})
            state.status = status

    def resume_plan(self, run_id: str, manifest: Manifest, current_digest: str) -> list[str]:
        """Manifest sample ids not yet generated, in manifest order."""
        run = self.run_manifest(run_id)
        if run.config_digest != current_digest:
            raise ConfigMismatchError(run_id, run.config_digest, current_digest)
        return [s.id for s in manifest.samples if s.id not in run.completed_sample_ids]

    def judge_meta(self, run_id: str) -> dict[str, Any] | None:
        path = self.run_dir(run_id) / "judge.json"
        return json.loads(path.read_text(encoding="utf-8")) if path.exists() else None

    def set_judge_meta(self, run_id: str, meta: dict[str, Any]) -> None:
        """Record the judge configuration; a different one for the same run is refused."""
        existing = self.judge_meta(run_id)
        if existing is None:
            self._state(run_id)
            write_json_once(self.run_dir(run_id) / "judge.json", meta)
        elif existing.get("digest") != meta.get("digest"):
            raise ConfigMismatchError(run_id, existing.get("digest", "?"), meta.get("digest", "?"))

    def load_run(self, run_id: str) -> RunData:
        raw_header = self._read_header(run_id)
        version = raw_header.get("schema_version", 0)
        header = _migrate_header(raw_header)
        state = self._state(run_id)
        records = [
            GenerationRecord.from_dict(_migrate_generation(r, version, header))
            for r in state.generations.iter_records()
        ]
        verdicts = [JudgeVerdict.from_dict(v) for v in state.verdicts.iter_records()]
        return RunData(self.run_manifest(run_id), records, verdicts)
