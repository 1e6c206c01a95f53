"""Two-stage orchestration over manifests.

Stage 1 asks the model `rounds` independent yes/no queries per image and
averages the verdicts into a decision score; Stage 2 runs the structured
analysis only for images Stage 1 called fake ("judge first, analyze next"
unless the force flag bypasses the gate for experiments); local forgeries
with ground truth then go to the LLM judge.

Responses can be recorded to an append-only JSONL cache and replayed
exactly; the cache key covers model id, stage, round index, and a hash of
the full message sequence (which embeds the image bytes), so record/replay
round-trips are identity and interrupted runs resume without re-querying.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

from .dataset import ImageSample, Label, Manifest, Scope
from .errors import CacheMissError, ConfigError, JudgeParseError, TransportError
from .parsing import (
    AnalysisReport,
    JudgeParse,
    RUBRIC_NAMES,
    VerdictValue,
    parse_judge_scores,
    parse_report,
    parse_verdict,
)
from .prompts import PromptSpec, ShotConfig, Stage, build_prompt
from .provider import Provider, ProviderKind, RequestContext, RoundResponse

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_ROUNDS = 5
JUDGE_PARSE_RETRIES = 2


class CacheMode(str, Enum):
    OFF = "off"
    RECORD = "record"
    REPLAY = "replay"


class ResponseCache:
    """Append-only JSONL store of raw responses, keyed for exact replay."""

    def __init__(self, path: str | Path, mode: CacheMode):
        self.path = Path(path)
        self.mode = mode
        self._lock = threading.Lock()
        self._entries: dict[str, dict] = {}
        if self.path.is_file():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    obj = json.loads(line)
                    self._entries[obj["key"]] = obj
        elif mode is CacheMode.REPLAY:
            raise ConfigError(f"replay mode needs an existing cache: {self.path}")
        self._fh = None
        if mode is CacheMode.RECORD:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("a", encoding="utf-8")

    def get(self, key: str) -> Optional[dict]:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, record: dict) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = record
            if self._fh is not None:
                self._fh.write(json.dumps({"key": key, **record}, sort_keys=True) + "\n")
                self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


@dataclass
class QueryConfig:
    provider: Provider
    prompt_spec: PromptSpec
    shots: ShotConfig
    rounds: int = DEFAULT_ROUNDS
    cache: Optional[ResponseCache] = None
    max_edge: Optional[int] = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")


@dataclass
class DetectionScore:
    sample_id: str
    per_round: list[VerdictValue]
    rounds_total: int
    rounds_rejected: int
    score: Optional[float]  # None means fully rejected

    @classmethod
    def from_verdicts(cls, sample_id: str, verdicts: list[VerdictValue]) -> "DetectionScore":
        rejected = sum(1 for v in verdicts if v is VerdictValue.REJECT)
        yes = sum(1 for v in verdicts if v is VerdictValue.YES)
        scored = len(verdicts) - rejected
        score = yes / scored if scored else None
        return cls(
            sample_id=sample_id,
            per_round=list(verdicts),
            rounds_total=len(verdicts),
            rounds_rejected=rejected,
            score=score,
        )

    @property
    def rejected(self) -> bool:
        return self.score is None

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "per_round": [v.value for v in self.per_round],
            "rounds_total": self.rounds_total,
            "rounds_rejected": self.rounds_rejected,
            "score": self.score,
        }


@dataclass
class AnalysisRecord:
    sample_id: str
    report: AnalysisReport
    raw_text: str

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "report": self.report.to_dict(),
            "raw_text": self.raw_text,
        }


@dataclass
class JudgeScore:
    sample_id: str
    sub_scores: dict[str, float]  # rubric name -> 0..5
    final_percent: float
    clamped: tuple[str, ...] = ()

    @classmethod
    def from_parse(cls, sample_id: str, parsed: JudgeParse) -> "JudgeScore":
        return cls(
            sample_id=sample_id,
            sub_scores=parsed.as_dict(),
            final_percent=final_percent(parsed.scores),
            clamped=parsed.clamped,
        )

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "sub_scores": {k: self.sub_scores[k] for k in RUBRIC_NAMES},
            "final_percent": self.final_percent,
            "clamped": list(self.clamped),
        }


def final_percent(sub_scores) -> float:
    """Normalize four 0-5 rubric scores to a percentage of the 20-pt max."""
    return sum(sub_scores) / 20.0 * 100.0


def _prompt_hash(messages: list[dict]) -> str:
    blob = json.dumps(messages, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _cache_key(model_id: str, stage: Stage, round_index: int, prompt_hash: str) -> str:
    raw = f"{model_id}|{stage.value}|{round_index}|{prompt_hash}"
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()


def _complete_round(
    config: QueryConfig,
    messages: list[dict],
    ctx: RequestContext,
    usage: "UsageTally",
) -> RoundResponse:
    cache = config.cache
    if cache is None or cache.mode is CacheMode.OFF:
        resp = config.provider.complete(messages, ctx)
        usage.add(resp)
        return resp
    key = _cache_key(
        config.provider.config.model_id, ctx.stage, ctx.round_index, _prompt_hash(messages)
    )
    hit = cache.get(key)
    if hit is not None:
        resp = RoundResponse(
            raw_text=hit["raw_text"],
            prompt_tokens=hit.get("prompt_tokens", 0),
            completion_tokens=hit.get("completion_tokens", 0),
            round_index=ctx.round_index,
        )
        # Replayed rounds still count toward the run's logical usage, so a
        # resumed or replayed run reports the same totals as a clean one.
        usage.add(resp)
        return resp
    if cache.mode is CacheMode.REPLAY:
        raise CacheMissError(
            f"no cached response for {ctx.sample_id}/{ctx.stage.value}/r{ctx.round_index}"
        )
    resp = config.provider.complete(messages, ctx)
    usage.add(resp)
    cache.put(
        key,
        {
            "sample_id": ctx.sample_id,
            "stage": ctx.stage.value,
            "round_index": ctx.round_index,
            "raw_text": resp.raw_text,
            "prompt_tokens": resp.prompt_tokens,
            "completion_tokens": resp.completion_tokens,
        },
    )
    return resp


class UsageTally:
    def __init__(self):
        self._lock = threading.Lock()
        self.calls = 0
        self.prompt_tokens = 0
        self.completion_tokens = 0

    def add(self, resp: RoundResponse) -> None:
        with self._lock:
            self.calls += 1
            self.prompt_tokens += resp.prompt_tokens
            self.completion_tokens += resp.completion_tokens

    def to_dict(self) -> dict:
        return {
            "calls": self.calls,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }


def detect(
    sample: ImageSample,
    config: QueryConfig,
    usage: Optional[UsageTally] = None,
) -> DetectionScore:
    """Run `rounds` independent Stage-1 queries and aggregate the verdicts.

    A round that still fails after the provider's retries counts as a
    rejection rather than aborting the sample.
    """
    usage = usage if usage is not None else UsageTally()
    messages = build_prompt(config.prompt_spec, config.shots, sample, max_edge=config.max_edge)
    verdicts: list[VerdictValue] = []
    for r in range(config.rounds):
        ctx = RequestContext(sample.id, Stage.DETECT, r, label=sample.label)
        try:
            resp = _complete_round(config, messages, ctx, usage)
        except TransportError as exc:
            logger.warning("round failed for %s r%d: %s", sample.id, r, exc)
            verdicts.append(VerdictValue.REJECT)
            continue
        verdicts.append(parse_verdict(resp.raw_text).value)
    return DetectionScore.from_verdicts(sample.id, verdicts)


def analyze(
    sample: ImageSample,
    config: QueryConfig,
    usage: Optional[UsageTally] = None,
    round_index: int = 0,
) -> AnalysisRecord:
    """Single-round Stage-2 structured analysis, raw text retained."""
    usage = usage if usage is not None else UsageTally()
    messages = build_prompt(config.prompt_spec, config.shots, sample, max_edge=config.max_edge)
    ctx = RequestContext(sample.id, Stage.ANALYZE, round_index, label=sample.label)
    resp = _complete_round(config, messages, ctx, usage)
    return AnalysisRecord(sample.id, parse_report(resp.raw_text), resp.raw_text)


def judge_localization(
    record: AnalysisRecord,
    sample: ImageSample,
    judge_config: QueryConfig,
    usage: Optional[UsageTally] = None,
    parse_retries: int = JUDGE_PARSE_RETRIES,
) -> JudgeScore:
    """Grade a localization description against GT and mask with an LLM judge.

    Requires a local-scope sample with gt and mask present and a report
    that actually contains a location. Unparseable judge output is retried
    up to parse_retries times before JudgeParseError propagates.
    """
    if sample.scope is not Scope.LOCAL:
        raise ConfigError(f"{sample.id}: judge requires a local-scope sample")
    if sample.gt_path is None or sample.mask_path is None:
        raise ConfigError(f"{sample.id}: judge requires gt_path and mask_path")
    location_text = "\n".join(
        t
        for t in (record.report.location_absolute, record.report.location_relative)
        if t
    )
    if not location_text:
        raise ConfigError(f"{sample.id}: report has no location section to judge")
    usage = usage if usage is not None else UsageTally()
    messages = build_prompt(
        judge_config.prompt_spec,
        judge_config.shots,
        sample,
        extra_images=(sample.gt_path, sample.mask_path),
        instruction_suffix=location_text,
        max_edge=judge_config.max_edge,
    )
    last_exc: Optional[JudgeParseError] = None
    for attempt in range(parse_retries + 1):
        ctx = RequestContext(sample.id, Stage.JUDGE, attempt, label=sample.label)
        resp = _complete_round(judge_config, messages, ctx, usage)
        try:
            return JudgeScore.from_parse(sample.id, parse_judge_scores(resp.raw_text))
        except JudgeParseError as exc:
            last_exc = exc
    raise last_exc


@dataclass
class BatchConfig:
    detect: QueryConfig
    analyze: Optional[QueryConfig] = None
    judge: Optional[QueryConfig] = None
    force_analyze: bool = False
    fake_threshold: float = 0.5
    workers: int = 4


@dataclass
class RunRecord:
    detection: dict[str, DetectionScore] = field(default_factory=dict)
    analysis: dict[str, AnalysisRecord] = field(default_factory=dict)
    judge: dict[str, JudgeScore] = field(default_factory=dict)
    judge_failures: dict[str, str] = field(default_factory=dict)
    usage: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    interrupted: bool = False
    config_hash: str = ""
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.config_hash,
            "config": self.config,
            "detection": {k: v.to_dict() for k, v in sorted(self.detection.items())},
            "analysis": {k: v.to_dict() for k, v in sorted(self.analysis.items())},
            "judge": {k: v.to_dict() for k, v in sorted(self.judge.items())},
            "judge_failures": dict(sorted(self.judge_failures.items())),
            "usage": self.usage,
            "wall_time_s": self.wall_time_s,
            "interrupted": self.interrupted,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def run_batch(
    manifest: Manifest,
    config: BatchConfig,
    stages: set[Stage] = frozenset({Stage.DETECT}),
) -> RunRecord:
    """Execute the requested stages over every sample with a worker pool.

    Results are keyed by sample id, so the record is identical regardless
    of scheduling. KeyboardInterrupt flushes the cache and returns the
    partial record flagged interrupted; rerunning with the same record-mode
    cache resumes without re-querying completed rounds.
    """
    if Stage.ANALYZE in stages and config.analyze is None:
        raise ConfigError("analyze stage requested without an analyze config")
    if Stage.JUDGE in stages and (config.judge is None or config.analyze is None):
        raise ConfigError("judge stage requires analyze and judge configs")

    usage = UsageTally()
    record = RunRecord()
    lock = threading.Lock()
    start = time.monotonic()

    def process(sample: ImageSample) -> None:
        score: Optional[DetectionScore] = None
        if Stage.DETECT in stages:
            score = detect(sample, config.detect, usage)
            with lock:
                record.detection[sample.id] = score
        if Stage.ANALYZE in stages:
            gate_open = config.force_analyze or (
                score is not None
                and not score.rejected
                and score.score >= config.fake_threshold
            )
            if not gate_open:
                return
            analysis = analyze(sample, config.analyze, usage)
            with lock:
                record.analysis[sample.id] = analysis
            if (
                Stage.JUDGE in stages
                and sample.scope is Scope.LOCAL
                and sample.gt_path is not None
                and sample.mask_path is not None
            ):
                try:
                    judged = judge_localization(analysis, sample, config.judge, usage)
                except JudgeParseError as exc:
                    with lock:
                        record.judge_failures[sample.id] = str(exc)
                    return
                except ConfigError as exc:
                    with lock:
                        record.judge_failures[sample.id] = str(exc)
                    return
                with lock:
                    record.judge[sample.id] = judged

    interrupted = False
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = [pool.submit(process, s) for s in manifest.entries]
        try:
            for fut in futures:
                fut.result()
        except KeyboardInterrupt:
            interrupted = True
            for fut in futures:
                fut.cancel()

    for cache in {
        c.cache for c in (config.detect, config.analyze, config.judge) if c is not None
    }:
        if cache is not None:
            cache.close()

    record.usage = usage.to_dict()
    record.interrupted = interrupted
    # Wall time is real only for live HTTP runs; deterministic providers
    # report 0 so run records stay byte-reproducible.
    if config.detect.provider.config.kind is ProviderKind.HTTP:
        record.wall_time_s = time.monotonic() - start
    return record
