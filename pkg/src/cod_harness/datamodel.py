"""Shared domain types.

Every type here is a frozen dataclass with ``to_dict``/``from_dict`` so it can
be written to and read back from the line-delimited run logs unchanged.
"""

from __future__ import annotations

import enum
import string
from dataclasses import dataclass, field
from typing import Any


class Modality(str, enum.Enum):
    AUDIO = "audio"
    IMAGE = "image"


class Difficulty(str, enum.Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"


class Role(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


class PartKind(str, enum.Enum):
    TEXT = "text"
    IMAGE = "image"
    AUDIO = "audio"


class StrategyKind(str, enum.Enum):
    STANDARD = "standard"
    COD = "cod"
    COD_TRANSFER = "cod_transfer"


class Orientation(str, enum.Enum):
    NO_SWAP = "no_swap"
    SWAP = "swap"


ORIENTATION_ORDER = {Orientation.NO_SWAP: 0, Orientation.SWAP: 1}

LETTERS = string.ascii_uppercase


@dataclass(frozen=True)
class MediaSample:
    id: str
    modality: Modality
    media_path: str
    mime: str
    category: str
    question: str
    ground_truth_answer: str
    difficulty: Difficulty | None = None
    duration_seconds: float | None = None
    options: tuple[tuple[str, str], ...] | None = None
    judge_context: str | None = None

    @property
    def is_mcq(self) -> bool:
        return self.options is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "modality": self.modality.value,
            "media_path": self.media_path,
            "mime": self.mime,
            "category": self.category,
            "difficulty": self.difficulty.value if self.difficulty else None,
            "duration_seconds": self.duration_seconds,
            "question": self.question,
            "options": [list(o) for o in self.options] if self.options is not None else None,
            "ground_truth_answer": self.ground_truth_answer,
            "judge_context": self.judge_context,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MediaSample:
        options = data.get("options")
        difficulty = data.get("difficulty")
        duration = data.get("duration_seconds")
        return cls(
            id=data["id"],
            modality=Modality(data["modality"]),
            media_path=data["media_path"],
            mime=data["mime"],
            category=data["category"],
            question=data["question"],
            ground_truth_answer=data["ground_truth_answer"],
            difficulty=Difficulty(difficulty) if difficulty is not None else None,
            duration_seconds=float(duration) if duration is not None else None,
            options=tuple((str(l), str(t)) for l, t in options) if options is not None else None,
            judge_context=data.get("judge_context"),
        )


def validate_sample(sample: MediaSample) -> list[str]:
    """Return every invariant violated by ``sample``; an empty list means ok."""
    violations: list[str] = []
    if not sample.id:
        violations.append("id must be nonempty")
    if not sample.media_path:
        violations.append("media_path must be nonempty")
    if not sample.question:
        violations.append("question must be nonempty")
    if sample.duration_seconds is not None and not sample.duration_seconds > 0:
        violations.append("duration must be > 0")
    if sample.options is not None:
        n = len(sample.options)
        if not 2 <= n <= 26:
            violations.append(f"options must have 2..26 entries, got {n}")
        letters = [letter for letter, _ in sample.options]
        if letters != list(LETTERS[: len(letters)]):
            violations.append("option letters must be consecutive from 'A'")
        if sample.ground_truth_answer not in letters:
            violations.append("ground truth not an option letter")
    elif not sample.ground_truth_answer:
        violations.append("ground_truth_answer must be nonempty")
    return violations


@dataclass(frozen=True)
class ContentPart:
    kind: PartKind
    text: str | None = None
    data: bytes | None = None
    mime: str | None = None

    def __post_init__(self) -> None:
        if self.kind is PartKind.TEXT:
            if self.text is None or self.data is not None:
                raise ValueError("text part needs text and no data")
        elif self.data is None or self.mime is None or self.text is not None:
            raise ValueError(f"{self.kind.value} part needs data and mime, and no text")

    @classmethod
    def of_text(cls, text: str) -> ContentPart:
        return cls(PartKind.TEXT, text=text)

    @classmethod
    def of_media(cls, modality: Modality, data: bytes, mime: str) -> ContentPart:
        return cls(PartKind(modality.value), data=data, mime=mime)


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    parts: tuple[ContentPart, ...]

    def __post_init__(self) -> None:
        if not self.parts:
            raise ValueError("message parts must be nonempty")
        if self.role is Role.ASSISTANT and any(p.kind is not PartKind.TEXT for p in self.parts):
            raise ValueError("assistant messages carry text parts only")

    @classmethod
    def text(cls, role: Role, text: str) -> ChatMessage:
        return cls(role, (ContentPart.of_text(text),))


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind
    description_source_run: str | None = None

    def __post_init__(self) -> None:
        needs_source = self.kind is StrategyKind.COD_TRANSFER
        if needs_source != (self.description_source_run is not None):
            raise ValueError("description_source_run is required exactly for cod_transfer")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "description_source_run": self.description_source_run}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Strategy:
        return cls(StrategyKind(data["kind"]), data.get("description_source_run"))


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int
    completion_tokens: int

    def to_dict(self) -> dict[str, int]:
        return {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens}

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> Usage | None:
        if data is None:
            return None
        return cls(int(data["prompt_tokens"]), int(data["completion_tokens"]))


@dataclass(frozen=True)
class GenerationRecord:
    """One chain execution.

    ``usage`` holds one entry per endpoint call (``None`` where the endpoint
    reported nothing). ``description_usage`` is the usage of the call that
    produced the description; for cod_transfer it is copied from the source
    record so token-density analytics stay available.
    """

    sample_id: str
    strategy: Strategy
    answer: str
    model_id: str
    created_at: str
    description: str | None = None
    usage: tuple[Usage | None, ...] = ()
    request_digests: tuple[str, ...] = ()
    description_usage: Usage | None = None

    def __post_init__(self) -> None:
        if self.strategy.kind is StrategyKind.STANDARD:
            if self.description is not None:
                raise ValueError("standard records carry no description")
        elif not self.description:
            raise ValueError(f"{self.strategy.kind.value} records need a nonempty description")

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "strategy": self.strategy.to_dict(),
            "description": self.description,
            "answer": self.answer,
            "model_id": self.model_id,
            "usage": [u.to_dict() if u else None for u in self.usage],
            "description_usage": self.description_usage.to_dict() if self.description_usage else None,
            "created_at": self.created_at,
            "request_digests": list(self.request_digests),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GenerationRecord:
        return cls(
            sample_id=data["sample_id"],
            strategy=Strategy.from_dict(data["strategy"]),
            description=data.get("description"),
            answer=data["answer"],
            model_id=data["model_id"],
            usage=tuple(Usage.from_dict(u) for u in data.get("usage", [])),
            description_usage=Usage.from_dict(data.get("description_usage")),
            created_at=data["created_at"],
            request_digests=tuple(data.get("request_digests", [])),
        )


@dataclass(frozen=True)
class JudgeVerdict:
    sample_id: str
    orientation: Orientation
    raw_text: str
    valid: bool
    attempts: int
    score_gt: float | None = None
    score_pred: float | None = None

    def __post_init__(self) -> None:
        if self.valid:
            for s in (self.score_gt, self.score_pred):
                if s is None or not 0 <= s <= 10:
                    raise ValueError(f"valid verdict needs scores in [0, 10], got {s}")
        elif self.score_gt is not None or self.score_pred is not None:
            raise ValueError("invalid verdict must leave scores unset")

    @property
    def key(self) -> tuple[str, int]:
        return (self.sample_id, ORIENTATION_ORDER[self.orientation])

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "orientation": self.orientation.value,
            "score_gt": self.score_gt,
            "score_pred": self.score_pred,
            "raw_text": self.raw_text,
            "valid": self.valid,
            "attempts": self.attempts,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> JudgeVerdict:
        return cls(
            sample_id=data["sample_id"],
            orientation=Orientation(data["orientation"]),
            score_gt=data.get("score_gt"),
            score_pred=data.get("score_pred"),
            raw_text=data["raw_text"],
            valid=bool(data["valid"]),
            attempts=int(data["attempts"]),
        )


@dataclass(frozen=True)
class OrientationScores:
    s_gt: float | None
    s_p: float | None
    r: float | None
    n_valid: int


@dataclass(frozen=True)
class CategoryReport:
    strategy: StrategyKind
    category: str
    s_gt: float | None
    s_p: float | None
    r: float | None
    n_valid: int
    n_invalid: int
    per_orientation: dict[Orientation, OrientationScores] = field(default_factory=dict)


@dataclass(frozen=True)
class DensityReport:
    category: str
    id: float
    n_samples: int
    total_tokens: int
    total_seconds: float
    per_sample_mean: float
    delta_r: float | None = None


@dataclass(frozen=True)
class BucketAccuracy:
    n_correct: int
    n_total: int

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_total if self.n_total else 0.0


@dataclass(frozen=True)
class AccuracyReport:
    strategy: StrategyKind
    per_bucket: dict[str, BucketAccuracy]
    n_unparsable: int
