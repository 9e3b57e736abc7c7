"""Evaluation harness for Standard and Chain-of-Description prompting of multi-modal models."""

from .chains import PromptTemplates, render_question, run_cod, run_cod_transfer, run_standard
from .datamodel import (
    ChatMessage,
    ContentPart,
    GenerationRecord,
    JudgeVerdict,
    MediaSample,
    Orientation,
    Strategy,
    StrategyKind,
    validate_sample,
)
from .ingest import Manifest, load_manifest, resolve_media
from .judge import judge_pair, judge_run, parse_scores, render_judge_prompt
from .metrics import (
    TokenCountMode,
    accuracy,
    aggregate_category,
    alignment_ratio,
    delta_r,
    extract_choice,
    info_density,
    token_count,
)
from .modelclient import EndpointConfig, ModelClient, ResponseCache, cache_key, send_chat
from .runstore import RunStore

__version__ = "0.1.0"
