"""Dataset-construction filters and manifest-tracked assembly.

Every stage partitions its input into kept / dropped (plus a quarantine
bucket for transport faults that must not masquerade as data-quality
signals) and appends a :class:`StageRecord` so a manifest replay with the
recorded thresholds and seed reproduces the identical kept-set.

Threshold semantics are strict throughout: "exceeds" means a strict
inequality, recorded in the manifest so the choice stays auditable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

from .embedding import cosine_similarity, embed
from .errors import DataError, InspectorUnavailable
from .inspector import InspectorClient
from .matching import verdict_for
from .model import ChartSample, Provenance, sha256_hex, write_shard
from .sandbox import ExecutionLimits, RenderSandbox

DEFAULT_MAX_CAPTION_TOKENS = 4096
DEFAULT_SIMILARITY_THRESHOLD = 0.8
DEFAULT_MIN_PREFILTER_ACCURACY = 0.9


def whitespace_token_count(text: str) -> int:
    """Default caption token counter: whitespace-delimited tokens."""
    return len(text.split())


@dataclass(frozen=True)
class StageRecord:
    """Counts, reasons and thresholds for one curation stage."""

    stage: str
    n_in: int
    kept: int
    dropped: int
    quarantined: int = 0
    reasons: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kept + self.dropped + self.quarantined != self.n_in:
            raise ValueError(
                f"stage {self.stage!r}: kept ({self.kept}) + dropped ({self.dropped}) "
                f"+ quarantined ({self.quarantined}) must equal n_in ({self.n_in})"
            )

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "in": self.n_in,
            "kept": self.kept,
            "dropped": self.dropped,
            "quarantined": self.quarantined,
            "reasons": dict(self.reasons),
            "thresholds": dict(self.thresholds),
            "flags": dict(self.flags),
        }


@dataclass
class CurationManifest:
    """Reproducibility record for one curation run."""

    seed: int | None = None
    input_shards: list[dict] = field(default_factory=list)
    stages: list[StageRecord] = field(default_factory=list)
    timestamp: str = ""

    def __post_init__(self) -> None:
        if not self.timestamp:
            self.timestamp = datetime.now(timezone.utc).isoformat()

    def add_input_shard(self, path: str | Path) -> None:
        path = Path(path)
        self.input_shards.append(
            {"id": path.name, "sha256": sha256_hex(path.read_bytes())}
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "input_shards": self.input_shards,
                "stages": [s.to_dict() for s in self.stages],
                "timestamp": self.timestamp,
            },
            indent=2,
            sort_keys=True,
        )

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")
        return path


@dataclass(frozen=True)
class FilterResult:
    """Partition produced by one filter stage."""

    kept: tuple[ChartSample, ...]
    dropped: tuple[tuple[ChartSample, str], ...]
    quarantined: tuple[tuple[ChartSample, str], ...]
    record: StageRecord


def _make_result(
    stage: str,
    n_in: int,
    kept: list[ChartSample],
    dropped: list[tuple[ChartSample, str]],
    quarantined: list[tuple[ChartSample, str]],
    thresholds: dict,
    flags: dict | None = None,
) -> FilterResult:
    reasons: dict[str, int] = {}
    for _, reason in dropped:
        reasons[reason] = reasons.get(reason, 0) + 1
    for _, reason in quarantined:
        reasons[reason] = reasons.get(reason, 0) + 1
    record = StageRecord(
        stage=stage,
        n_in=n_in,
        kept=len(kept),
        dropped=len(dropped),
        quarantined=len(quarantined),
        reasons=reasons,
        thresholds=thresholds,
        flags=flags or {},
    )
    return FilterResult(
        kept=tuple(kept),
        dropped=tuple(dropped),
        quarantined=tuple(quarantined),
        record=record,
    )


def filter_caption_length(
    samples: Sequence[ChartSample],
    max_tokens: int = DEFAULT_MAX_CAPTION_TOKENS,
    token_counter: Callable[[str], int] = whitespace_token_count,
    counter_name: str = "whitespace",
) -> FilterResult:
    """Drop samples whose caption token count strictly exceeds the limit.

    A missing caption is flagged (not fatal) and kept with a count of zero.
    """
    kept: list[ChartSample] = []
    dropped: list[tuple[ChartSample, str]] = []
    missing = 0
    for sample in samples:
        if sample.caption is None:
            missing += 1
            kept.append(sample)
            continue
        if token_counter(sample.caption) > max_tokens:
            dropped.append((sample, "caption_too_long"))
        else:
            kept.append(sample)
    return _make_result(
        "caption_length",
        len(samples),
        kept,
        dropped,
        [],
        thresholds={"max_tokens": max_tokens, "token_counter": counter_name},
        flags={"missing_caption": missing},
    )


def filter_by_render_similarity(
    samples: Sequence[ChartSample],
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    *,
    backend,
    sandbox: RenderSandbox,
    limits: ExecutionLimits | None = None,
    parallelism: int = 4,
) -> FilterResult:
    """Render each sample's code and keep it iff cosine(source, render)
    strictly exceeds the threshold. Execution failures are dropped.
    """
    for sample in samples:
        if not sample.code:
            raise DataError(f"sample {sample.id!r} has no code to render")

    limits = limits or ExecutionLimits()
    outcomes = sandbox.batch_execute([s.code for s in samples], limits, parallelism=parallelism)

    kept: list[ChartSample] = []
    dropped: list[tuple[ChartSample, str]] = []
    for sample, outcome in zip(samples, outcomes):
        if not outcome.ok:
            dropped.append((sample, "execution_failure"))
            continue
        similarity = cosine_similarity(embed(sample.image, backend), embed(outcome.image, backend))
        if similarity > threshold:
            kept.append(sample)
        else:
            dropped.append((sample, "similarity_not_above_threshold"))
    return _make_result(
        "render_similarity",
        len(samples),
        kept,
        dropped,
        [],
        thresholds={"similarity_threshold": threshold, "comparison": "strictly_greater"},
    )


def render_and_pair(
    codes: Sequence[str],
    *,
    sandbox: RenderSandbox,
    limits: ExecutionLimits | None = None,
    parallelism: int = 4,
    id_prefix: str = "rendered",
) -> tuple[list[ChartSample], StageRecord]:
    """Pair each generated code with its own rendered image.

    The resulting sample's image is always the render of its code, never a
    source chart; failed renders are excluded and counted.
    """
    limits = limits or ExecutionLimits()
    outcomes = sandbox.batch_execute(list(codes), limits, parallelism=parallelism)

    samples: list[ChartSample] = []
    reasons: dict[str, int] = {}
    for index, (code, outcome) in enumerate(zip(codes, outcomes)):
        if not outcome.ok:
            reasons[outcome.status.value] = reasons.get(outcome.status.value, 0) + 1
            continue
        samples.append(
            ChartSample(
                id=f"{id_prefix}-{index:05d}-{sha256_hex(code.encode())[:8]}",
                image=outcome.image,
                provenance=Provenance.RENDERED,
                code=code,
            )
        )
    record = StageRecord(
        stage="render_and_pair",
        n_in=len(codes),
        kept=len(samples),
        dropped=len(codes) - len(samples),
        reasons=reasons,
        thresholds={},
    )
    return samples, record


def prefilter_threshold(min_acc: float, n_questions: int) -> int:
    """Required correct answers: ceil(min_acc * N), robust to fp rounding."""
    return math.ceil(min_acc * n_questions - 1e-9)


def consistency_prefilter(
    samples: Sequence[ChartSample],
    *,
    inspector: InspectorClient,
    min_acc: float = DEFAULT_MIN_PREFILTER_ACCURACY,
) -> FilterResult:
    """Keep samples whose source image the Inspector answers well enough.

    A sample passes iff the Inspector, shown the ORIGINAL image, answers at
    least ceil(min_acc * N) of its N questions correctly under the same
    matcher used for rewards.  Inspector transport failures quarantine the
    sample rather than dropping it.
    """
    kept: list[ChartSample] = []
    dropped: list[tuple[ChartSample, str]] = []
    quarantined: list[tuple[ChartSample, str]] = []
    for sample in samples:
        if sample.qa_set is None:
            raise DataError(f"sample {sample.id!r} carries no QA set")
        try:
            replies = inspector.answer_qa_set(sample.image, sample.qa_set)
        except InspectorUnavailable as exc:
            quarantined.append((sample, f"inspector_unavailable:{exc.index}"))
            continue
        correct = sum(
            verdict_for(reply, item) for reply, item in zip(replies, sample.qa_set.items)
        )
        needed = prefilter_threshold(min_acc, len(sample.qa_set.items))
        if correct >= needed:
            kept.append(sample)
        else:
            dropped.append((sample, "below_min_accuracy"))
    return _make_result(
        "consistency_prefilter",
        len(samples),
        kept,
        dropped,
        quarantined,
        thresholds={"min_acc": min_acc, "rule": "correct >= ceil(min_acc * N)"},
    )


def build_rl_dataset(
    pool: Sequence[ChartSample],
    target_k: int,
    *,
    backend,
    seed: int,
    inspector: InspectorClient,
    min_acc: float = DEFAULT_MIN_PREFILTER_ACCURACY,
    output_path: str | Path | None = None,
    manifest: CurationManifest | None = None,
) -> tuple[list[ChartSample], CurationManifest]:
    """Representative-sample the pool, prefilter, and write the RL shard.

    Deterministic for a fixed seed; the manifest records every stage.
    """
    from .embedding import representative_sample

    if target_k > len(pool):
        raise DataError(f"target_k={target_k} exceeds pool size {len(pool)}")

    manifest = manifest or CurationManifest(seed=seed)
    manifest.seed = seed

    vectors = [embed(sample.image, backend) for sample in pool]
    indices = sorted(representative_sample(vectors, target_k, seed))
    sampled = [pool[i] for i in indices]
    manifest.stages.append(
        StageRecord(
            stage="representative_sampling",
            n_in=len(pool),
            kept=len(sampled),
            dropped=len(pool) - len(sampled),
            reasons={"not_representative": len(pool) - len(sampled)},
            thresholds={"target_k": target_k, "encoder_id": getattr(backend, "encoder_id", "?")},
        )
    )

    result = consistency_prefilter(sampled, inspector=inspector, min_acc=min_acc)
    manifest.stages.append(result.record)

    kept = list(result.kept)
    if output_path is not None:
        write_shard(kept, output_path)
    return kept, manifest
