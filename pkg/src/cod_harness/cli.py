"""Command-line entry point: one pipeline stage per subcommand."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import metrics
from .chains import PromptTemplates, load_templates, run_many
from .datamodel import GenerationRecord, JudgeVerdict, Strategy, StrategyKind
from .ingest import ManifestError, load_manifest, resolve_media
from .judge import CONTEXT_DATASET, CONTEXT_DESCRIPTION, JUDGE_TEMPLATE, JudgeError, judge_run
from .modelclient import (
    JUDGE_MAX_TOKENS,
    ConfigurationError,
    ModelClient,
    ModelClientError,
    load_endpoint_config,
)
from .report import ReportError, build_report, render_markdown, write_report
from .runstore import RunStatus, RunStore, RunStoreError, config_digest

logger = logging.getLogger("cod_harness")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

STRATEGY_FLAGS = {
    "standard": StrategyKind.STANDARD,
    "cod": StrategyKind.COD,
    "cod-transfer": StrategyKind.COD_TRANSFER,
}
TOKEN_MODES = {"usage": metrics.TokenCountMode.USAGE_REPORTED, "whitespace": metrics.TokenCountMode.WHITESPACE}


class CliError(Exception):
    """Configuration or precondition problem; exits with status 2."""


def _store(args: argparse.Namespace) -> RunStore:
    return RunStore(args.runs_dir)


def cmd_validate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest, media_root=args.media_root)
    missing = []
    if args.check_media:
        for s in manifest.samples:
            try:
                resolve_media(s, manifest.media_root)
            except OSError as exc:
                missing.append(f"{s.id}: {exc}")
    print(f"{manifest.dataset_name}: {len(manifest.samples)} samples, schema_version {manifest.schema_version}")
    categories: dict[str, int] = {}
    for s in manifest.samples:
        categories[s.category] = categories.get(s.category, 0) + 1
    for cat, n in sorted(categories.items()):
        print(f"  {cat}: {n}")
    for line in missing:
        print(f"missing media: {line}", file=sys.stderr)
    return EXIT_CONFIG if missing else EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    kind = STRATEGY_FLAGS[args.strategy]
    if kind is StrategyKind.COD_TRANSFER and not args.source_run:
        raise CliError("--strategy cod-transfer requires --source-run")
    if kind is not StrategyKind.COD_TRANSFER and args.source_run:
        raise CliError("--source-run only applies to --strategy cod-transfer")
    strategy = Strategy(kind, args.source_run)
    manifest = load_manifest(args.manifest, media_root=args.media_root)
    endpoint = load_endpoint_config(args.endpoint_config)
    templates = load_templates(args.templates) if args.templates else PromptTemplates()
    store = _store(args)

    digest = config_digest(endpoint, templates.digest(), strategy, manifest.digest())
    if not store.exists(args.run_id):
        store.create_run(
            args.run_id,
            config_digest=digest,
            strategy=strategy,
            model_id=endpoint.model_id,
            manifest=manifest,
            meta={"templates_digest": templates.digest(), "endpoint": endpoint.identity()},
        )
    pending_ids = store.resume_plan(args.run_id, manifest, digest)
    print(f"{args.run_id}: {len(pending_ids)} pending of {len(manifest.samples)}")
    if not pending_ids:
        store.set_status(args.run_id, RunStatus.COMPLETE)
        return EXIT_OK
    if store.run_manifest(args.run_id).status is not RunStatus.IN_PROGRESS:
        raise CliError(f"run {args.run_id} is not in progress")

    source_records: dict[str, GenerationRecord] | None = None
    if kind is StrategyKind.COD_TRANSFER:
        source = store.load_run(args.source_run)
        source_records = {r.sample_id: r for r in source.records}
        absent = [sid for sid in pending_ids if sid not in source_records]
        if absent:
            raise CliError(f"source run {args.source_run} lacks records for: {', '.join(absent)}")
    if not os.environ.get(endpoint.api_key_env_name):
        raise CliError(f"environment variable {endpoint.api_key_env_name} is not set")

    index = manifest.index()
    done = 0

    def persist(record: GenerationRecord) -> None:
        nonlocal done
        store.append_record(args.run_id, record)
        done += 1
        if done % args.progress_every == 0 or done == len(pending_ids):
            print(f"  {done}/{len(pending_ids)} generated")

    with ModelClient(endpoint, store.cache()) as client:
        _, failures = run_many(
            strategy,
            [index[sid] for sid in pending_ids],
            client,
            media_root=manifest.media_root,
            templates=templates,
            dataset_name=manifest.dataset_name,
            source_records=source_records,
            on_record=persist,
        )
    if failures:
        print(f"{len(failures)} samples failed:", file=sys.stderr)
        for sid, exc in failures.items():
            print(f"  {sid}: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    store.set_status(args.run_id, RunStatus.COMPLETE)
    print(f"{args.run_id}: complete")
    return EXIT_OK


def _judge_digest(endpoint, context_mode: str) -> str:
    blob = json.dumps(
        {
            "endpoint": endpoint.identity(),
            "context": context_mode,
            "template": hashlib.sha256(JUDGE_TEMPLATE.encode("utf-8")).hexdigest(),
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def cmd_judge(args: argparse.Namespace) -> int:
    store = _store(args)
    run = store.run_manifest(args.run_id)
    manifest = store.samples(args.run_id)
    if run.status is not RunStatus.COMPLETE:
        pending = [s.id for s in manifest.samples if s.id not in run.completed_sample_ids]
        raise CliError(f"run {args.run_id} is not complete; pending samples: {', '.join(pending)}")
    endpoint = load_endpoint_config(args.judge_config, max_output_tokens=JUDGE_MAX_TOKENS)
    store.set_judge_meta(
        args.run_id,
        {
            "digest": _judge_digest(endpoint, args.judge_context),
            "model_id": endpoint.model_id,
            "context_mode": args.judge_context,
        },
    )
    data = store.load_run(args.run_id)
    done = {(v.sample_id, v.orientation) for v in data.verdicts}
    todo = 2 * len(data.records) - len(done)
    print(f"{args.run_id}: {todo} judge calls pending")
    if todo and not os.environ.get(endpoint.api_key_env_name):
        raise CliError(f"environment variable {endpoint.api_key_env_name} is not set")

    status = EXIT_OK
    with ModelClient(endpoint, store.cache()) as client:
        try:
            judge_run(
                data.records,
                manifest.index(),
                client,
                context_mode=args.judge_context,
                skip=done,
                on_verdict=lambda v: store.append_record(args.run_id, v),
            )
        except ModelClientError as exc:
            print(f"judging stopped: {exc}", file=sys.stderr)
            status = EXIT_PARTIAL
    verdicts: list[JudgeVerdict] = store.load_run(args.run_id).verdicts
    n_valid = sum(v.valid for v in verdicts)
    print(f"{args.run_id}: {len(verdicts)} verdicts, n_valid={n_valid}, n_invalid={len(verdicts) - n_valid}")
    return status


def cmd_score(args: argparse.Namespace) -> int:
    store = _store(args)
    bundle = build_report(store, args.run_id)
    if not bundle.accuracy_reports:
        raise CliError("score applies to multiple-choice runs; use report for judged runs")
    print(render_markdown(bundle))
    return EXIT_OK


def cmd_density(args: argparse.Namespace) -> int:
    store = _store(args)
    mode = TOKEN_MODES[args.token_mode]
    pooling = metrics.Pooling(args.pooling)
    for run_id in args.run_id:
        data = store.load_run(run_id)
        reports = metrics.info_density(data.records, store.samples(run_id).index(), mode, pooling=pooling)
        print(f"{run_id} ({mode.value}, {pooling.value})")
        for d in reports:
            line = f"  {d.category}: id={d.id:.2f} over {d.n_samples} samples"
            if args.verbose:
                line += f" (pooled {d.total_tokens}/{d.total_seconds:.2f}s, per-sample mean {d.per_sample_mean:.2f})"
            print(line)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    store = _store(args)
    bundle = build_report(
        store, args.run_id, token_mode=TOKEN_MODES[args.token_mode], pooling=metrics.Pooling(args.pooling)
    )
    formats = ("md", "csv") if args.format == "both" else (args.format,)
    for path in write_report(bundle, args.out_dir, formats):
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cod-harness", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def runs_dir(p: argparse.ArgumentParser) -> None:
        p.add_argument("--runs-dir", help="run storage directory (default: $COD_HARNESS_RUNS_DIR or ./runs)")

    p = sub.add_parser("validate", help="lint a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--media-root")
    p.add_argument("--check-media", action="store_true", help="also check every media file exists")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("generate", help="run a prompting strategy over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--media-root")
    p.add_argument("--endpoint-config", required=True)
    p.add_argument("--strategy", choices=sorted(STRATEGY_FLAGS), required=True)
    p.add_argument("--source-run", help="run whose descriptions cod-transfer reuses")
    p.add_argument("--run-id", required=True)
    p.add_argument("--templates", help="JSON file overriding the describe templates")
    p.add_argument("--progress-every", type=int, default=25)
    runs_dir(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("judge", help="judge a completed open-ended generation run")
    p.add_argument("--run-id", required=True)
    p.add_argument("--judge-config", required=True)
    p.add_argument(
        "--judge-context",
        choices=(CONTEXT_DATASET, CONTEXT_DESCRIPTION),
        default=CONTEXT_DATASET,
        help="text for the judge's description slot: dataset reference or the run's own description",
    )
    runs_dir(p)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("score", help="multiple-choice accuracy per difficulty")
    p.add_argument("--run-id", action="append", required=True)
    runs_dir(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("density", help="description tokens per second of audio")
    p.add_argument("--run-id", action="append", required=True)
    p.add_argument("--token-mode", choices=sorted(TOKEN_MODES), default="usage")
    p.add_argument("--pooling", choices=[m.value for m in metrics.Pooling], default="pooled")
    runs_dir(p)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("report", help="write Markdown/CSV tables for one or more runs")
    p.add_argument("--run-id", action="append", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--format", choices=("md", "csv", "both"), default="both")
    p.add_argument("--token-mode", choices=sorted(TOKEN_MODES), default="usage")
    p.add_argument("--pooling", choices=[m.value for m in metrics.Pooling], default="pooled")
    runs_dir(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (CliError, ConfigurationError, ManifestError, RunStoreError, ReportError, JudgeError,
            metrics.MetricsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
