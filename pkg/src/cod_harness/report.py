"""Report assembly and rendering as Markdown and CSV tables."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Sequence

from . import metrics
from .datamodel import (
    AccuracyReport,
    CategoryReport,
    DensityReport,
    Modality,
    Orientation,
    StrategyKind,
)
from .runstore import RunStore

logger = logging.getLogger(__name__)

STRATEGY_LABELS = {
    StrategyKind.STANDARD: "Standard",
    StrategyKind.COD: "CoD",
    StrategyKind.COD_TRANSFER: "CoD*",
}
ORIENTATION_LABELS = {Orientation.NO_SWAP: "No-S", Orientation.SWAP: "Swap"}


class ReportError(ValueError):
    pass


def round_half_up(value: float, places: int = 2) -> str:
    quantum = Decimal(1).scaleb(-places)
    return str(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def pct(value: float | None) -> str:
    return "n/a" if value is None else round_half_up(value * 100) + "%"


def num(value: float | None) -> str:
    return "n/a" if value is None else round_half_up(value)


@dataclass
class RunInfo:
    run_id: str
    strategy: StrategyKind
    model_id: str
    dataset_name: str
    source_run: str | None = None
    judge_model_id: str | None = None
    template_digest: str | None = None


@dataclass
class ReportBundle:
    runs: dict[str, RunInfo] = field(default_factory=dict)
    category_reports: dict[str, list[CategoryReport]] = field(default_factory=dict)
    accuracy_reports: dict[str, AccuracyReport] = field(default_factory=dict)
    density_reports: dict[str, list[DensityReport]] = field(default_factory=dict)
    # cod-like run id -> category -> r(cod) - r(standard)
    delta_r: dict[str, dict[str, float]] = field(default_factory=dict)
    baseline_run: str | None = None
    token_mode: metrics.TokenCountMode = metrics.TokenCountMode.USAGE_REPORTED
    pooling: metrics.Pooling = metrics.Pooling.POOLED


def build_report(
    store: RunStore,
    run_ids: Sequence[str],
    *,
    token_mode: metrics.TokenCountMode = metrics.TokenCountMode.USAGE_REPORTED,
    pooling: metrics.Pooling = metrics.Pooling.POOLED,
) -> ReportBundle:
    """Compute every table for ``run_ids`` from their stored logs."""
    bundle = ReportBundle(token_mode=token_mode, pooling=pooling)
    judged: list[str] = []
    mcq: list[str] = []
    for run_id in run_ids:
        data = store.load_run(run_id)
        index = store.samples(run_id).index()
        strategy = data.manifest.strategy.kind
        judge_meta = store.judge_meta(run_id) or {}
        bundle.runs[run_id] = RunInfo(
            run_id=run_id,
            strategy=strategy,
            model_id=data.manifest.model_id,
            dataset_name=data.manifest.dataset_name,
            source_run=data.manifest.strategy.description_source_run,
            judge_model_id=judge_meta.get("model_id"),
            template_digest=data.manifest.meta.get("templates_digest"),
        )
        if index and all(s.is_mcq for s in index.values()):
            mcq.append(run_id)
            bundle.accuracy_reports[run_id] = metrics.accuracy(data.records, index, strategy)
        elif data.verdicts:
            judged.append(run_id)
            bundle.category_reports[run_id] = metrics.aggregate_category(data.verdicts, index, strategy)
            audio = [r for r in data.records if index[r.sample_id].modality is Modality.AUDIO]
            eligible = all(
                index[r.sample_id].duration_seconds is not None
                for r in audio
                if not metrics.is_mixed(index[r.sample_id].category)
            )
            if strategy is not StrategyKind.STANDARD and audio and not eligible:
                logger.warning("run %s: audio samples lack durations, density table skipped", run_id)
            elif strategy is not StrategyKind.STANDARD and audio:
                bundle.density_reports[run_id] = metrics.info_density(
                    audio, index, token_mode, pooling=pooling
                )
        else:
            raise ReportError(f"run {run_id} is open-ended and has no verdicts; judge it first")
    if judged and mcq:
        raise ReportError(
            "cannot compare multiple-choice runs "
            f"({', '.join(mcq)}) with judged open-ended runs ({', '.join(judged)}): "
            "the first are scored by letter accuracy, the second by judge alignment ratio"
        )

    baseline = next((r for r in judged if bundle.runs[r].strategy is StrategyKind.STANDARD), None)
    bundle.baseline_run = baseline
    if baseline is not None:
        base_r = {c.category: c.r for c in bundle.category_reports[baseline]}
        for run_id in judged:
            if bundle.runs[run_id].strategy is StrategyKind.STANDARD:
                continue
            deltas = {
                c.category: metrics.delta_r(c.r, base_r[c.category])
                for c in bundle.category_reports[run_id]
                if c.r is not None and base_r.get(c.category) is not None
            }
            bundle.delta_r[run_id] = deltas
            if run_id in bundle.density_reports:
                bundle.density_reports[run_id] = [
                    replace(d, delta_r=deltas.get(d.category))
                    for d in bundle.density_reports[run_id]
                ]
    return bundle


def _row_label(info: RunInfo) -> str:
    return f"{STRATEGY_LABELS[info.strategy]} ({info.run_id})"


def _md_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return "\n".join(lines)


def _categories(bundle: ReportBundle) -> list[str]:
    cats = {c.category for reps in bundle.category_reports.values() for c in reps}
    return sorted(cats, key=metrics.category_sort_key)


def render_markdown(bundle: ReportBundle) -> str:
    parts = ["# Evaluation report", ""]
    parts.append("Runs:")
    for info in bundle.runs.values():
        extra = f", descriptions from {info.source_run}" if info.source_run else ""
        judge = f", judge {info.judge_model_id}" if info.judge_model_id else ""
        parts.append(f"- `{info.run_id}`: {STRATEGY_LABELS[info.strategy]}, model {info.model_id}{judge}{extra}")
    parts.append("")

    if bundle.category_reports:
        cats = _categories(bundle)
        rows = []
        for run_id, reps in bundle.category_reports.items():
            by_cat = {c.category: c for c in reps}
            label = _row_label(bundle.runs[run_id])
            rows.append([f"{label} s_gt"] + [num(getattr(by_cat.get(c), "s_gt", None)) for c in cats])
            rows.append([f"{label} s_p"] + [num(getattr(by_cat.get(c), "s_p", None)) for c in cats])
            rows.append([f"{label} r"] + [pct(getattr(by_cat.get(c), "r", None)) for c in cats])
        parts += ["## Alignment ratio by category", "", _md_table([""] + cats, rows), ""]

        header = [""] + [f"{c} {o}" for c in cats for o in ("No-S", "Swap", "Avg")]
        rows = []
        for run_id, reps in bundle.category_reports.items():
            by_cat = {c.category: c for c in reps}
            label = _row_label(bundle.runs[run_id])
            for metric, fmt in (("s_gt", num), ("s_p", num), ("r", pct)):
                row = [f"{label} {metric}"]
                for c in cats:
                    rep = by_cat.get(c)
                    for o in (Orientation.NO_SWAP, Orientation.SWAP):
                        row.append(fmt(getattr(rep.per_orientation[o], metric)) if rep else "n/a")
                    row.append(fmt(getattr(rep, metric)) if rep else "n/a")
                rows.append(row)
        parts += ["## Scores per judge orientation", "", _md_table(header, rows), ""]

        invalid = [
            f"- `{run_id}` {c.category}: {c.n_valid} valid, {c.n_invalid} invalid verdicts"
            for run_id, reps in bundle.category_reports.items()
            for c in reps
        ]
        parts += ["Verdict counts:", *invalid, ""]

    if bundle.delta_r:
        for run_id, deltas in bundle.delta_r.items():
            cats = sorted(deltas, key=metrics.category_sort_key)
            row = ["Δr"] + [round_half_up(deltas[c] * 100) + "pp" for c in cats]
            parts += [
                f"## Improvement of `{run_id}` over `{bundle.baseline_run}`",
                "",
                _md_table([""] + cats, [row]),
                "",
            ]

    if bundle.density_reports:
        for run_id, reps in bundle.density_reports.items():
            cats = [d.category for d in reps]
            rows = []
            if any(d.delta_r is not None for d in reps):
                rows.append(
                    ["Δr"] + [round_half_up(d.delta_r * 100) + "pp" if d.delta_r is not None else "n/a" for d in reps]
                )
            rows.append(["id"] + [round_half_up(d.id) for d in reps])
            rows.append(["n"] + [str(d.n_samples) for d in reps])
            parts += [
                f"## Information density of `{run_id}` descriptions",
                "",
                f"Tokens per second of audio ({bundle.token_mode.value} token counts, "
                f"{bundle.pooling.value}); Mixed excluded.",
                "",
                _md_table([""] + cats, rows),
                "",
            ]

    if bundle.accuracy_reports:
        buckets: list[str] = []
        for rep in bundle.accuracy_reports.values():
            buckets += [b for b in rep.per_bucket if b not in buckets]
        rows = []
        for run_id, rep in bundle.accuracy_reports.items():
            info = bundle.runs[run_id]
            row = [_row_label(info), info.model_id]
            for b in buckets:
                acc = rep.per_bucket.get(b)
                row.append(pct(acc.accuracy) if acc else "n/a")
            row.append(str(rep.n_unparsable))
            rows.append(row)
        header = ["", "model"] + [b.capitalize() for b in buckets] + ["unparsable"]
        parts += ["## Multiple-choice accuracy", "", _md_table(header, rows), ""]
        parts += [f"Answer extraction rules version {metrics.EXTRACTION_RULES_VERSION}.", ""]
    return "\n".join(parts)


def csv_tables(bundle: ReportBundle) -> dict[str, str]:
    """File name -> CSV text, full precision."""
    out: dict[str, str] = {}

    def table(name: str, header: list[str], rows: list[list[Any]]) -> None:
        if not rows:
            return
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r] for r in rows])
        out[name] = buf.getvalue()

    rows = []
    for run_id, reps in bundle.category_reports.items():
        strategy = bundle.runs[run_id].strategy.value
        for c in reps:
            for o in (Orientation.NO_SWAP, Orientation.SWAP):
                sc = c.per_orientation[o]
                rows.append([run_id, strategy, c.category, o.value, sc.s_gt, sc.s_p, sc.r, sc.n_valid, ""])
            rows.append([run_id, strategy, c.category, "avg", c.s_gt, c.s_p, c.r, c.n_valid, c.n_invalid])
    table(
        "alignment.csv",
        ["run_id", "strategy", "category", "orientation", "s_gt", "s_p", "r", "n_valid", "n_invalid"],
        rows,
    )

    rows = [
        [run_id, bundle.baseline_run, cat, d]
        for run_id, deltas in bundle.delta_r.items()
        for cat, d in deltas.items()
    ]
    table("delta_r.csv", ["run_id", "baseline_run", "category", "delta_r"], rows)

    rows = [
        [run_id, d.category, d.id, d.per_sample_mean, d.total_tokens, d.total_seconds, d.n_samples, d.delta_r,
         bundle.token_mode.value, bundle.pooling.value]
        for run_id, reps in bundle.density_reports.items()
        for d in reps
    ]
    table(
        "density.csv",
        ["run_id", "category", "id", "per_sample_mean", "total_tokens", "total_seconds", "n_samples",
         "delta_r", "token_mode", "pooling"],
        rows,
    )

    rows = [
        [run_id, bundle.runs[run_id].strategy.value, bundle.runs[run_id].model_id, bucket,
         acc.n_correct, acc.n_total, acc.accuracy, rep.n_unparsable]
        for run_id, rep in bundle.accuracy_reports.items()
        for bucket, acc in rep.per_bucket.items()
    ]
    table(
        "accuracy.csv",
        ["run_id", "strategy", "model_id", "bucket", "n_correct", "n_total", "accuracy", "n_unparsable"],
        rows,
    )
    return out


def write_report(bundle: ReportBundle, out_dir: str | Path, formats: Sequence[str] = ("md", "csv")) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "md" in formats:
        path = out_dir / "report.md"
        path.write_text(render_markdown(bundle), encoding="utf-8")
        written.append(path)
    if "csv" in formats:
        for name, text in csv_tables(bundle).items():
            path = out_dir / name
            path.write_text(text, encoding="utf-8")
            written.append(path)
    return written
