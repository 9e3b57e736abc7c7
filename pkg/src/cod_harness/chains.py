"""Standard, Chain-of-Description and transferred-description prompting chains."""

from __future__ import annotations

import hashlib
import json
import re
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .datamodel import (
    ChatMessage,
    ContentPart,
    GenerationRecord,
    MediaSample,
    Modality,
    Role,
    Strategy,
    StrategyKind,
)
from .ingest import MediaError, resolve_media
from .modelclient import ChatResponse, ModelClient, ModelClientError

DESCRIBE_AUDIO = (
    "Please describe the audio in detail, including the spoken content, each speaker's tone "
    "and emotion, and any background sounds or music."
)
DESCRIBE_IMAGE = (
    "Please describe the image in detail, including objects, scene, colors, text, and "
    "spatial relationships."
)
MCQ_INSTRUCTION = "Answer with the option's letter from the given choices directly."

_PLACEHOLDER = re.compile(r"\{[A-Za-z_][A-Za-z0-9_]*\}|\{\{|\}\}")


class ChainError(Exception):
    def __init__(self, message: str, sample_id: str, turn: int | None = None):
        self.sample_id = sample_id
        self.turn = turn
        where = f"sample {sample_id}" + (f", turn {turn}" if turn is not None else "")
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class PromptTemplates:
    describe_audio: str = DESCRIBE_AUDIO
    describe_image: str = DESCRIBE_IMAGE
    answer_preamble: str | None = None
    # dataset_name -> modality value -> describe template
    overrides: Mapping[str, Mapping[str, str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        texts = [self.describe_audio, self.describe_image]
        texts += [t for per in self.overrides.values() for t in per.values()]
        for text in texts:
            if not text or not text.strip():
                raise ValueError("describe templates must be nonempty")
        if self.answer_preamble is not None:
            texts.append(self.answer_preamble)
        for text in texts:
            m = _PLACEHOLDER.search(text)
            if m:
                raise ValueError(f"template contains unresolved placeholder {m.group(0)!r}")

    def describe(self, modality: Modality, dataset_name: str | None = None) -> str:
        per = self.overrides.get(dataset_name or "", {})
        if modality.value in per:
            return per[modality.value]
        return self.describe_audio if modality is Modality.AUDIO else self.describe_image

    def to_dict(self) -> dict:
        return {
            "describe_audio": self.describe_audio,
            "describe_image": self.describe_image,
            "answer_preamble": self.answer_preamble,
            "overrides": {k: dict(v) for k, v in self.overrides.items()},
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_templates(path: str | Path) -> PromptTemplates:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return PromptTemplates(
        describe_audio=data.get("describe_audio", DESCRIBE_AUDIO),
        describe_image=data.get("describe_image", DESCRIBE_IMAGE),
        answer_preamble=data.get("answer_preamble"),
        overrides=data.get("overrides", {}),
    )


def render_question(sample: MediaSample) -> str:
    """Question text as sent to the model; MCQ options get one line each."""
    if sample.options is None:
        return sample.question
    lines = [sample.question, ""]
    for letter, text in sample.options:
        lines.append(f"{letter}. {' '.join(text.splitlines())}")
    lines.append(MCQ_INSTRUCTION)
    return "\n".join(lines)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _media_part(sample: MediaSample, media_root: str | Path) -> ContentPart:
    try:
        payload = resolve_media(sample, media_root)
    except MediaError as exc:
        raise ChainError(str(exc), sample.id) from exc
    return ContentPart.of_media(sample.modality, payload.data, payload.mime)


def _ask(client: ModelClient, messages: list[ChatMessage], sample_id: str, turn: int) -> ChatResponse:
    try:
        return client.send_chat(messages)
    except ModelClientError as exc:
        raise ChainError(str(exc), sample_id, turn) from exc


def _question_turn(sample: MediaSample, templates: PromptTemplates) -> ChatMessage:
    text = render_question(sample)
    if templates.answer_preamble:
        text = f"{templates.answer_preamble}\n\n{text}"
    return ChatMessage.text(Role.USER, text)


def run_standard(
    sample: MediaSample,
    client: ModelClient,
    *,
    media_root: str | Path,
) -> GenerationRecord:
    messages = [
        ChatMessage(Role.USER, (_media_part(sample, media_root), ContentPart.of_text(render_question(sample))))
    ]
    resp = _ask(client, messages, sample.id, 1)
    return GenerationRecord(
        sample_id=sample.id,
        strategy=Strategy(StrategyKind.STANDARD),
        answer=resp.text,
        model_id=client.config.model_id,
        created_at=_now(),
        usage=(resp.usage,),
        request_digests=(resp.cache_key,),
    )


def _describe_turn(
    sample: MediaSample, templates: PromptTemplates, dataset_name: str | None, media_root: str | Path
) -> ChatMessage:
    prompt = templates.describe(sample.modality, dataset_name)
    return ChatMessage(Role.USER, (_media_part(sample, media_root), ContentPart.of_text(prompt)))


def run_cod(
    sample: MediaSample,
    client: ModelClient,
    *,
    media_root: str | Path,
    templates: PromptTemplates = PromptTemplates(),
    dataset_name: str | None = None,
) -> GenerationRecord:
    """Describe the media first, then ask the question in the same conversation."""
    history = [_describe_turn(sample, templates, dataset_name, media_root)]
    first = _ask(client, history, sample.id, 1)
    if not first.text.strip():
        raise ChainError("empty description", sample.id, 1)
    history += [ChatMessage.text(Role.ASSISTANT, first.text), _question_turn(sample, templates)]
    second = _ask(client, history, sample.id, 2)
    return GenerationRecord(
        sample_id=sample.id,
        strategy=Strategy(StrategyKind.COD),
        description=first.text,
        answer=second.text,
        model_id=client.config.model_id,
        created_at=_now(),
        usage=(first.usage, second.usage),
        description_usage=first.usage,
        request_digests=(first.cache_key, second.cache_key),
    )


def run_cod_transfer(
    sample: MediaSample,
    client: ModelClient,
    *,
    source_records: Mapping[str, GenerationRecord],
    source_run: str,
    media_root: str | Path,
    templates: PromptTemplates = PromptTemplates(),
    dataset_name: str | None = None,
) -> GenerationRecord:
    """Answer with a description produced elsewhere, injected as the model's own turn."""
    source = source_records.get(sample.id)
    if source is None:
        raise ChainError(f"missing source record in run {source_run!r}", sample.id)
    if not source.description:
        raise ChainError(f"source record in run {source_run!r} has an empty description", sample.id)
    history = [
        _describe_turn(sample, templates, dataset_name, media_root),
        ChatMessage.text(Role.ASSISTANT, source.description),
        _question_turn(sample, templates),
    ]
    resp = _ask(client, history, sample.id, 1)
    return GenerationRecord(
        sample_id=sample.id,
        strategy=Strategy(StrategyKind.COD_TRANSFER, source_run),
        description=source.description,
        answer=resp.text,
        model_id=client.config.model_id,
        created_at=_now(),
        usage=(resp.usage,),
        description_usage=source.description_usage,
        request_digests=(resp.cache_key,),
    )


def run_strategy(
    strategy: Strategy,
    sample: MediaSample,
    client: ModelClient,
    *,
    media_root: str | Path,
    templates: PromptTemplates = PromptTemplates(),
    dataset_name: str | None = None,
    source_records: Mapping[str, GenerationRecord] | None = None,
) -> GenerationRecord:
    if strategy.kind is StrategyKind.STANDARD:
        return run_standard(sample, client, media_root=media_root)
    if strategy.kind is StrategyKind.COD:
        return run_cod(sample, client, media_root=media_root, templates=templates, dataset_name=dataset_name)
    return run_cod_transfer(
        sample,
        client,
        source_records=source_records or {},
        source_run=strategy.description_source_run or "",
        media_root=media_root,
        templates=templates,
        dataset_name=dataset_name,
    )


def run_many(
    strategy: Strategy,
    samples: Iterable[MediaSample],
    client: ModelClient,
    *,
    media_root: str | Path,
    templates: PromptTemplates = PromptTemplates(),
    dataset_name: str | None = None,
    source_records: Mapping[str, GenerationRecord] | None = None,
    on_record: Callable[[GenerationRecord], None] | None = None,
) -> tuple[list[GenerationRecord], dict[str, Exception]]:
    """Run one strategy over many samples concurrently.

    ``on_record`` is invoked from the calling thread only, so it can append
    to a single-writer log. Returns records in input order plus the
    per-sample failures.
    """
    samples = list(samples)
    order = {s.id: i for i, s in enumerate(samples)}
    records: list[GenerationRecord] = []
    failures: dict[str, Exception] = {}
    with ThreadPoolExecutor(max_workers=client.config.max_in_flight) as pool:
        futures = {
            pool.submit(
                run_strategy,
                strategy,
                s,
                client,
                media_root=media_root,
                templates=templates,
                dataset_name=dataset_name,
                source_records=source_records,
            ): s.id
            for s in samples
        }
        for fut in as_completed(futures):
            sid = futures[fut]
            try:
                record = fut.result()
            except (ChainError, ModelClientError) as exc:
                failures[sid] = exc
                continue
            if on_record is not None:
                on_record(record)
            records.append(record)
    records.sort(key=lambda r: order[r.sample_id])
    return records, failures
