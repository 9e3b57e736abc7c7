"""LLM-as-judge scoring with both answer orientations."""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor, as_completed
from importlib import resources
from typing import Callable, Collection, Iterable, Mapping

from .datamodel import (
    ChatMessage,
    GenerationRecord,
    JudgeVerdict,
    MediaSample,
    Orientation,
    Role,
)
from .modelclient import ModelClient, ModelClientError

MAX_PARSE_RETRIES = 3
EMPTY_ANSWER = "(empty response)"

PLACEHOLDERS = ("XAudioX", "XQuestionX", "XAssistant1X", "XAssistant2X")
_PLACEHOLDER_RE = re.compile("|".join(PLACEHOLDERS))
_NUMBER_RE = re.compile(r"[+-]?\d+(?:\.\d+)?")

CONTEXT_DATASET = "dataset"
CONTEXT_DESCRIPTION = "description"


def judge_template() -> str:
    return resources.files("cod_harness").joinpath("assets/judge_prompt.txt").read_text(encoding="utf-8")


JUDGE_TEMPLATE = judge_template()


class JudgeError(Exception):
    pass


class ScoreParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class ScoreRangeError(ScoreParseError):
    def __init__(self, value: float, raw: str):
        super().__init__(f"score {value} outside [0, 10]", raw)
        self.value = value


def render_judge_prompt(context_description: str, question: str, assistant1: str, assistant2: str) -> str:
    if not question:
        raise ValueError("question must be nonempty")
    if not assistant1 or not assistant2:
        raise ValueError("assistant answers must be nonempty")
    values = {
        "XAudioX": context_description,
        "XQuestionX": question,
        "XAssistant1X": assistant1,
        "XAssistant2X": assistant2,
    }
    # one pass, so placeholder-like text inside the inputs is left alone
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(0)], JUDGE_TEMPLATE)


def parse_scores(raw: str) -> tuple[float, float]:
    """Scores from the first line made of exactly two numeric tokens."""
    for line in raw.splitlines():
        tokens = line.split()
        if len(tokens) == 2 and all(_NUMBER_RE.fullmatch(t) for t in tokens):
            first, second = float(tokens[0]), float(tokens[1])
            for value in (first, second):
                if not 0 <= value <= 10:
                    raise ScoreRangeError(value, raw)
            return first, second
    raise ScoreParseError("no line with exactly two numeric values", raw)


def orient(gt: str, pred: str, orientation: Orientation) -> tuple[str, str]:
    """(assistant1, assistant2) for an orientation."""
    return (gt, pred) if orientation is Orientation.NO_SWAP else (pred, gt)


def map_scores(score1: float, score2: float, orientation: Orientation) -> tuple[float, float]:
    """(score_gt, score_pred) from the judge's (assistant1, assistant2) scores."""
    return (score1, score2) if orientation is Orientation.NO_SWAP else (score2, score1)


def judge_pair(
    sample: MediaSample,
    gt: str,
    pred: str,
    orientation: Orientation,
    client: ModelClient,
    *,
    context: str | None = None,
    max_parse_retries: int = MAX_PARSE_RETRIES,
) -> JudgeVerdict:
    """Score one (ground truth, prediction) pair in one orientation.

    Unparsable or out-of-range judge output is re-asked up to
    ``max_parse_retries`` times, each under a fresh cache nonce; after that
    the verdict is returned with ``valid=False``.
    """
    if context is None:
        context = sample.judge_context
    if context is None:
        raise JudgeError(f"sample {sample.id} has no judge context")
    a1, a2 = orient(gt.strip() or EMPTY_ANSWER, pred.strip() or EMPTY_ANSWER, orientation)
    prompt = render_judge_prompt(context, sample.question, a1, a2)
    messages = [ChatMessage.text(Role.USER, prompt)]
    raw = ""
    for attempt in range(max_parse_retries + 1):
        raw = client.send_chat(messages, nonce=attempt).text
        try:
            s1, s2 = parse_scores(raw)
        except ScoreParseError:
            continue
        score_gt, score_pred = map_scores(s1, s2, orientation)
        return JudgeVerdict(
            sample_id=sample.id,
            orientation=orientation,
            score_gt=score_gt,
            score_pred=score_pred,
            raw_text=raw,
            valid=True,
            attempts=attempt + 1,
        )
    return JudgeVerdict(
        sample_id=sample.id,
        orientation=orientation,
        raw_text=raw,
        valid=False,
        attempts=max_parse_retries + 1,
    )


def _context_for(record: GenerationRecord, sample: MediaSample, mode: str) -> str | None:
    if mode == CONTEXT_DATASET:
        return sample.judge_context
    if mode == CONTEXT_DESCRIPTION:
        return record.description
    raise ValueError(f"unknown judge context mode {mode!r}")


def judge_run(
    records: Iterable[GenerationRecord],
    samples: Mapping[str, MediaSample],
    client: ModelClient,
    *,
    context_mode: str = CONTEXT_DATASET,
    skip: Collection[tuple[str, Orientation]] = (),
    on_verdict: Callable[[JudgeVerdict], None] | None = None,
) -> list[JudgeVerdict]:
    """Judge every record in both orientations.

    Pairs listed in ``skip`` are not judged. ``on_verdict`` runs on the
    calling thread as each verdict completes. If any judge call fails in
    transport, the remaining pairs still finish and the first failure is
    raised afterwards.
    """
    records = list(records)
    missing = [r.sample_id for r in records if r.sample_id not in samples]
    if missing:
        raise JudgeError(f"records reference samples missing from the manifest: {', '.join(missing)}")
    no_context = [
        r.sample_id for r in records if _context_for(r, samples[r.sample_id], context_mode) is None
    ]
    if no_context:
        raise JudgeError(f"no judge context ({context_mode}) for samples: {', '.join(no_context)}")

    skip = set(skip)
    jobs = [
        (r, o)
        for r in records
        for o in (Orientation.NO_SWAP, Orientation.SWAP)
        if (r.sample_id, o) not in skip
    ]
    verdicts: list[JudgeVerdict] = []
    errors: list[Exception] = []
    with ThreadPoolExecutor(max_workers=client.config.max_in_flight) as pool:
        futures = []
        for record, orientation in jobs:
            sample = samples[record.sample_id]
            futures.append(
                pool.submit(
                    judge_pair,
                    sample,
                    sample.ground_truth_answer,
                    record.answer,
                    orientation,
                    client,
                    context=_context_for(record, sample, context_mode),
                )
            )
        for fut in as_completed(futures):
            try:
                verdict = fut.result()
            except ModelClientError as exc:
                errors.append(exc)
                continue
            if on_verdict is not None:
                on_verdict(verdict)
            verdicts.append(verdict)
    if errors:
        raise errors[0]
    verdicts.sort(key=lambda v: v.key)
    return verdicts
