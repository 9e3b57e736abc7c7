"""Alignment ratios, MCQ accuracy, answer-letter extraction and information density."""

from __future__ import annotations

import enum
import logging
import math
import re
from collections import defaultdict
from typing import Iterable, Mapping, Sequence

from .datamodel import (
    AccuracyReport,
    BucketAccuracy,
    CategoryReport,
    DensityReport,
    GenerationRecord,
    JudgeVerdict,
    MediaSample,
    Modality,
    Orientation,
    OrientationScores,
    StrategyKind,
    Usage,
)

logger = logging.getLogger(__name__)

# Bump when extract_choice rules change: accuracy numbers depend on them.
EXTRACTION_RULES_VERSION = 1

CATEGORY_ORDER = ("speech", "sound", "music", "mixed")
DIFFICULTY_ORDER = ("easy", "medium", "hard")
UNRATED = "unrated"


class MetricsError(ValueError):
    pass


class TokenCountMode(str, enum.Enum):
    USAGE_REPORTED = "usage_reported"
    WHITESPACE = "whitespace"


class Pooling(str, enum.Enum):
    POOLED = "pooled"
    PER_SAMPLE_MEAN = "per_sample_mean"


def category_sort_key(category: str) -> tuple[int, str]:
    low = category.lower()
    for i, name in enumerate(CATEGORY_ORDER):
        if low.startswith(name):
            return (i, low)
    return (len(CATEGORY_ORDER), low)


def is_mixed(category: str) -> bool:
    return category.lower().startswith("mixed")


def alignment_ratio(s_p: float, s_gt: float) -> float:
    if not s_gt > 0:
        raise MetricsError(f"ground-truth score must be > 0, got {s_gt}")
    return s_p / s_gt


def delta_r(r_cod: float, r_standard: float) -> float:
    return r_cod - r_standard


def _mean(values: Sequence[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def _scores(verdicts: Sequence[JudgeVerdict]) -> OrientationScores:
    s_gt = _mean([v.score_gt for v in verdicts])
    s_p = _mean([v.score_pred for v in verdicts])
    r = alignment_ratio(s_p, s_gt) if s_gt else None
    return OrientationScores(s_gt=s_gt, s_p=s_p, r=r, n_valid=len(verdicts))


def aggregate_category(
    verdicts: Iterable[JudgeVerdict],
    samples: Mapping[str, MediaSample],
    strategy: StrategyKind,
) -> list[CategoryReport]:
    """Per-category mean judge scores and alignment ratio.

    Overall ``s_gt``/``s_p`` are means over the valid verdicts of both
    orientations and ``r`` is the ratio of those means. Invalid verdicts are
    counted, never scored.
    """
    valid: dict[str, list[JudgeVerdict]] = defaultdict(list)
    invalid: dict[str, int] = defaultdict(int)
    for v in verdicts:
        sample = samples.get(v.sample_id)
        if sample is None:
            raise MetricsError(f"verdict references unknown sample {v.sample_id}")
        if v.valid:
            valid[sample.category].append(v)
        else:
            invalid[sample.category] += 1

    reports = []
    for category in sorted(set(valid) | set(invalid), key=category_sort_key):
        vs = valid[category]
        overall = _scores(vs)
        per_orientation = {
            o: _scores([v for v in vs if v.orientation is o])
            for o in (Orientation.NO_SWAP, Orientation.SWAP)
        }
        reports.append(
            CategoryReport(
                strategy=strategy,
                category=category,
                s_gt=overall.s_gt,
                s_p=overall.s_p,
                r=overall.r,
                n_valid=len(vs),
                n_invalid=invalid[category],
                per_orientation=per_orientation,
            )
        )
    return reports


_ANSWER_PHRASE = re.compile(r"(?i:\banswer\s*(?:is\s*:?|:))\s*\(?([A-Z])\)?(?![A-Za-z0-9])")
_BARE_LETTER = re.compile(r"\(?([A-Za-z])\s*[.):]?")
_CHOICE_TOKEN = re.compile(r"(?<![^\s(])(?:\(([A-Z])\)|([A-Z])(?:[.):]|$))", re.MULTILINE)


def extract_choice(answer: str, options: Sequence[tuple[str, str]]) -> str | None:
    """Option letter chosen by ``answer``, or ``None`` when unparsable.

    Rules, first hit wins:

    1. the whole answer is a letter, optionally followed by ``.``, ``)`` or ``:``;
    2. an "answer is X" / "Answer: X" phrase, X optionally parenthesised;
    3. the first standalone choice token: ``(X)``, or X followed by ``.``,
       ``)``, ``:`` or end of line (so the pronoun in "I cannot tell" is not
       a choice);
    4. the answer equals one option's text, case-insensitively.
    """
    letters = {letter for letter, _ in options}
    text = answer.replace("*", "").strip()

    m = _BARE_LETTER.fullmatch(text)
    if m and m.group(1).upper() in letters:
        return m.group(1).upper()

    for m in _ANSWER_PHRASE.finditer(text):
        letter = m.group(1).upper()
        if letter in letters:
            return letter

    for m in _CHOICE_TOKEN.finditer(text):
        letter = m.group(1) or m.group(2)
        if letter in letters:
            return letter

    folded = text.rstrip(".").strip().casefold()
    for letter, option_text in options:
        if option_text.strip().rstrip(".").casefold() == folded:
            return letter
    return None


def accuracy(
    records: Iterable[GenerationRecord],
    samples: Mapping[str, MediaSample],
    strategy: StrategyKind | None = None,
) -> AccuracyReport:
    """MCQ accuracy per difficulty bucket; unparsable answers count as wrong."""
    correct: dict[str, int] = defaultdict(int)
    total: dict[str, int] = defaultdict(int)
    unparsable = 0
    for rec in records:
        sample = samples.get(rec.sample_id)
        if sample is None:
            raise MetricsError(f"record references unknown sample {rec.sample_id}")
        if sample.options is None:
            raise MetricsError(f"sample {sample.id} is not multiple-choice")
        if strategy is None:
            strategy = rec.strategy.kind
        bucket = sample.difficulty.value if sample.difficulty else UNRATED
        choice = extract_choice(rec.answer, sample.options)
        total[bucket] += 1
        if choice is None:
            unparsable += 1
        elif choice == sample.ground_truth_answer:
            correct[bucket] += 1
    order = {name: i for i, name in enumerate(DIFFICULTY_ORDER)}
    per_bucket = {
        b: BucketAccuracy(correct[b], total[b])
        for b in sorted(total, key=lambda b: (order.get(b, len(order)), b))
    }
    return AccuracyReport(
        strategy=strategy or StrategyKind.STANDARD, per_bucket=per_bucket, n_unparsable=unparsable
    )


def token_count(text: str, mode: TokenCountMode, usage: Usage | None = None) -> int:
    if mode is TokenCountMode.USAGE_REPORTED:
        if usage is None:
            raise MetricsError(
                "no endpoint-reported usage for this description; rerun with the whitespace token mode"
            )
        return usage.completion_tokens
    return len(text.split())


def info_density(
    records: Iterable[GenerationRecord],
    samples: Mapping[str, MediaSample],
    mode: TokenCountMode = TokenCountMode.USAGE_REPORTED,
    *,
    pooling: Pooling = Pooling.POOLED,
) -> list[DensityReport]:
    """Description tokens per second of audio, per category (Mixed excluded).

    ``id`` follows ``pooling``; both the pooled rate and the mean of
    per-sample rates are always carried on the report.
    """
    tokens: dict[str, int] = defaultdict(int)
    seconds: dict[str, list[float]] = defaultdict(list)
    rates: dict[str, list[float]] = defaultdict(list)
    missing_duration: list[str] = []
    excluded: set[str] = set()
    for rec in records:
        sample = samples.get(rec.sample_id)
        if sample is None:
            raise MetricsError(f"record references unknown sample {rec.sample_id}")
        if rec.strategy.kind is StrategyKind.STANDARD or not rec.description:
            raise MetricsError(f"record for {rec.sample_id} carries no description")
        if sample.modality is not Modality.AUDIO:
            raise MetricsError(f"sample {sample.id} is not audio")
        if is_mixed(sample.category):
            excluded.add(sample.category)
            continue
        if sample.duration_seconds is None:
            missing_duration.append(sample.id)
            continue
        n = token_count(rec.description, mode, rec.description_usage)
        tokens[sample.category] += n
        seconds[sample.category].append(sample.duration_seconds)
        rates[sample.category].append(n / sample.duration_seconds)
    if missing_duration:
        raise MetricsError(f"samples missing duration_seconds: {', '.join(missing_duration)}")
    for category in sorted(excluded):
        logger.info("information density excludes category %r", category)

    reports = []
    for category in sorted(tokens, key=category_sort_key):
        total_seconds = math.fsum(seconds[category])
        if not total_seconds > 0:
            raise MetricsError(f"category {category} has zero total duration")
        pooled = tokens[category] / total_seconds
        per_sample = math.fsum(rates[category]) / len(rates[category])
        reports.append(
            DensityReport(
                category=category,
                id=pooled if pooling is Pooling.POOLED else per_sample,
                n_samples=len(rates[category]),
                total_tokens=tokens[category],
                total_seconds=total_seconds,
                per_sample_mean=per_sample,
            )
        )
    return reports
