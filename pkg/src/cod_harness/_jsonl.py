"""Crash-tolerant append-only JSON-lines logs.

A record is committed once its trailing newline is on disk. A torn final
line (process killed mid-write) is dropped on read and cut off before the
next append.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from pathlib import Path
from typing import Any, Iterator

logger = logging.getLogger(__name__)


class CorruptLogError(ValueError):
    pass


def _committed_length(data: bytes) -> int:
    return data.rfind(b"\n") + 1


class AppendLog:
    def __init__(self, path: str | Path, *, fsync: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()
        self._recovered = False

    def exists(self) -> bool:
        return self.path.exists()

    def read(self) -> list[dict[str, Any]]:
        return list(self.iter_records())

    def iter_records(self) -> Iterator[dict[str, Any]]:
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        end = _committed_length(data)
        if end < len(data):
            logger.warning(
                "%s: discarding torn tail of %d bytes", self.path, len(data) - end
            )
        for lineno, raw in enumerate(data[:end].splitlines(), start=1):
            if not raw.strip():
                continue
            try:
                yield json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorruptLogError(f"{self.path}:{lineno}: {exc.msg}") from exc

    def _recover(self) -> None:
        if self._recovered or not self.path.exists():
            self._recovered = True
            return
        data = self.path.read_bytes()
        end = _committed_length(data)
        if end < len(data):
            logger.warning("%s: truncating torn tail of %d bytes", self.path, len(data) - end)
            with self.path.open("r+b") as fh:
                fh.truncate(end)
        self._recovered = True

    def append(self, record: dict[str, Any]) -> None:
        line = (json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")
        with self._lock:
            self._recover()
            self.path.parent.mkdir(parents=True, exist_ok=True)
            fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            try:
                view = memoryview(line)
                while view:
                    written = os.write(fd, view)
                    view = view[written:]
                if self.fsync:
                    os.fsync(fd)
            finally:
                os.close(fd)


def write_json_once(path: str | Path, obj: Any) -> None:
    """Atomically create ``path``; fails if it already exists."""
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    try:
        os.link(tmp, path)
    finally:
        tmp.unlink()
