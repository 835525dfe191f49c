"""Core data model: chart samples, QA sets, reward breakdowns, rollout groups.

All types are immutable after construction and safe to share between
concurrent workers.  Validation comes in two flavors:

* constructor checks for invariants that would make an object meaningless
  (a QA item whose tolerance contradicts its answer type);
* :func:`validate_sample` / :func:`validate_qa_distribution`, which report
  violations as data so curation stages can flag rather than crash.

Dataset shards are JSON-lines files, one record per sample, with the image
stored as a relative file path plus SHA-256 checksum and the QA set inline.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

from PIL import Image, UnidentifiedImageError

from .errors import DataError, DecodeError

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, annotation only
    from .sandbox import RenderOutcome

# Population-std cutoff below which a reward group is treated as zero-variance.
ZERO_VARIANCE_EPS = 1e-12

SHARD_FIELDS = ("id", "image_path", "image_sha256", "caption", "code", "qa", "provenance")


class Provenance(str, Enum):
    SOURCE_DATASET = "source-dataset"
    RENDERED = "rendered"
    SYNTHETIC = "synthetic"


class AnswerType(str, Enum):
    BOOL = "bool"
    FLOAT = "float"
    STRING = "string"


class QACategory(str, Enum):
    CHART_TYPE = "chart_type"
    LAYOUT = "layout"
    TEXT_POSITIVE = "text_positive"
    TEXT_NEGATIVE = "text_negative"
    DATA_ACCURACY = "data_accuracy"
    STYLE = "style"


#: Required category counts for a schema-conformant 10-question set.
QA_DISTRIBUTION = {
    QACategory.CHART_TYPE: 1,
    QACategory.LAYOUT: 1,
    QACategory.TEXT_POSITIVE: 2,
    QACategory.TEXT_NEGATIVE: 1,
    QACategory.DATA_ACCURACY: 3,
    QACategory.STYLE: 2,
}

#: Minimum tolerance for numeric questions, as a fraction of |gold answer|.
DATA_TOLERANCE_FLOOR = 0.05


def image_size(image: bytes) -> tuple[int, int]:
    """Decode image bytes and return (width, height).

    Raises:
        DecodeError: if the bytes are not a decodable raster image.
    """
    try:
        with Image.open(io.BytesIO(image)) as img:
            return img.size
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"image bytes do not decode: {exc}") from exc


def ensure_png(image: bytes) -> bytes:
    """Return the image as PNG bytes, transcoding non-PNG formats on ingest.

    PNG input is returned unchanged so checksums stay bit-exact.
    """
    try:
        with Image.open(io.BytesIO(image)) as img:
            if img.format == "PNG":
                return image
            buf = io.BytesIO()
            img.save(buf, format="PNG")
            return buf.getvalue()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"image bytes do not decode: {exc}") from exc


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class QAItem:
    """One atomic verification question with a typed gold answer.

    Tolerance is stored in absolute units and applies to float answers only;
    the 5% floor relative to the gold value is checked at schema-validation
    time (:func:`validate_qa_distribution`), not at construction.
    """

    question: str
    answer_type: AnswerType
    gold_answer: bool | float | str
    category: QACategory
    tolerance: float | None = None

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ValueError("question non-empty")
        object.__setattr__(self, "answer_type", AnswerType(self.answer_type))
        object.__setattr__(self, "category", QACategory(self.category))
        if self.answer_type is AnswerType.FLOAT:
            if self.tolerance is None:
                raise ValueError("float answers require a tolerance")
            if not math.isfinite(self.tolerance) or self.tolerance < 0:
                raise ValueError("tolerance must be a non-negative finite float")
            object.__setattr__(self, "gold_answer", float(self.gold_answer))
        else:
            if self.tolerance is not None:
                raise ValueError("tolerance is only meaningful for float answers")
            if self.answer_type is AnswerType.BOOL and not isinstance(self.gold_answer, bool):
                raise ValueError("bool answer type requires a bool gold answer")
            if self.answer_type is AnswerType.STRING and not isinstance(self.gold_answer, str):
                raise ValueError("string answer type requires a str gold answer")

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "answer_type": self.answer_type.value,
            "gold_answer": self.gold_answer,
            "tolerance": self.tolerance,
            "category": self.category.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QAItem":
        return cls(
            question=data["question"],
            answer_type=AnswerType(data["answer_type"]),
            gold_answer=data["gold_answer"],
            tolerance=data.get("tolerance"),
            category=QACategory(data["category"]),
        )


@dataclass(frozen=True)
class QASet:
    """Ordered, non-empty collection of QA items for one source image."""

    items: tuple[QAItem, ...]
    source_image_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))
        if not self.items:
            raise ValueError("QA set must contain at least one item")

    def __len__(self) -> int:
        return len(self.items)

    def to_dict(self) -> dict:
        return {
            "items": [item.to_dict() for item in self.items],
            "source_image_id": self.source_image_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QASet":
        return cls(
            items=tuple(QAItem.from_dict(d) for d in data["items"]),
            source_image_id=data["source_image_id"],
        )


@dataclass(frozen=True)
class ChartSample:
    """A source chart image plus optional caption, code and QA set.

    Construction is permissive; use :func:`validate_sample` to get a
    violation report (curation treats violations as data, not errors).
    """

    id: str
    image: bytes
    provenance: Provenance
    caption: str | None = None
    code: str | None = None
    qa_set: QASet | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def image_sha256(self) -> str:
        return sha256_hex(self.image)


def validate_sample(sample: ChartSample) -> list[str]:
    """Check every ChartSample invariant; return violations (empty = valid).

    Each entry names the violated invariant.
    """
    violations: list[str] = []
    if not sample.id:
        violations.append("id non-empty")
    try:
        width, height = image_size(sample.image)
        if width < 1 or height < 1:
            violations.append("image decodes to a raster with width,height >= 1")
    except DecodeError:
        violations.append("image decodes to a raster with width,height >= 1")
    if sample.provenance is Provenance.RENDERED and not sample.code:
        violations.append("provenance=rendered implies code is present")
    return violations


@dataclass(frozen=True)
class QADistributionReport:
    """Outcome of schema validation for a QA set."""

    conforms: bool
    counts: dict[QACategory, int]
    problems: tuple[str, ...]

    def __bool__(self) -> bool:
        return self.conforms


def validate_qa_distribution(qa: QASet) -> QADistributionReport:
    """Check the 10-question category distribution and tolerance floor.

    Conformant sets have category counts of exactly
    chart_type:1, layout:1, text_positive:2, text_negative:1,
    data_accuracy:3, style:2, and every data-accuracy item carries a
    tolerance of at least 5% of the absolute gold value.

    Order-insensitive over items.
    """
    counts: dict[QACategory, int] = {cat: 0 for cat in QACategory}
    for item in qa.items:
        counts[item.category] += 1

    problems: list[str] = []
    for cat, expected in QA_DISTRIBUTION.items():
        if counts[cat] != expected:
            problems.append(f"category {cat.value}: expected {expected}, found {counts[cat]}")

    for item in qa.items:
        if item.category is QACategory.DATA_ACCURACY and item.answer_type is AnswerType.FLOAT:
            floor = DATA_TOLERANCE_FLOOR * abs(float(item.gold_answer))
            # Tiny slack so a tolerance stored as exactly 5% of gold passes.
            if item.tolerance < floor - 1e-12:
                problems.append(
                    f"data_accuracy tolerance {item.tolerance} below 5% floor {floor} "
                    f"for gold {item.gold_answer}"
                )

    return QADistributionReport(
        conforms=not problems,
        counts=counts,
        problems=tuple(problems),
    )


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-rollout reward components.

    ``r_vis`` is the raw cosine similarity (may be negative); ``r_vis_used``
    is the value actually composed into ``r_total`` after clipping to [0, 1].
    A non-executed rollout carries zero components and the configured
    reward floor as its total.
    """

    executed: bool
    r_qa: float
    r_vis: float
    r_total: float
    verdicts: tuple[bool, ...]
    lambda_used: float
    r_vis_used: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "verdicts", tuple(self.verdicts))
        if not 0.0 <= self.r_qa <= 1.0:
            raise ValueError(f"r_qa must lie in [0,1], got {self.r_qa}")
        if not -1.0 <= self.r_vis <= 1.0 + 1e-12:
            raise ValueError(f"r_vis must lie in [-1,1], got {self.r_vis}")
        if not self.executed:
            if self.r_qa != 0.0 or self.r_vis != 0.0:
                raise ValueError("non-executed rollouts must carry zero reward components")
        elif self.verdicts:
            pass_rate = sum(self.verdicts) / len(self.verdicts)
            if abs(self.r_qa - pass_rate) > 1e-12:
                raise ValueError("executed rollouts must have r_qa equal to the verdict pass rate")

    def to_dict(self) -> dict:
        return {
            "executed": self.executed,
            "r_qa": self.r_qa,
            "r_vis": self.r_vis,
            "r_vis_used": self.r_vis_used,
            "r_total": self.r_total,
            "verdicts": list(self.verdicts),
            "lambda_used": self.lambda_used,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RewardBreakdown":
        return cls(
            executed=data["executed"],
            r_qa=data["r_qa"],
            r_vis=data["r_vis"],
            r_vis_used=data.get("r_vis_used", 0.0),
            r_total=data["r_total"],
            verdicts=tuple(data["verdicts"]),
            lambda_used=data["lambda_used"],
        )


@dataclass(frozen=True)
class RolloutScore:
    """One scored rollout: candidate code, its render outcome, its rewards."""

    code: str
    outcome: "RenderOutcome"
    breakdown: RewardBreakdown

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "outcome": self.outcome.to_dict(),
            "breakdown": self.breakdown.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RolloutScore":
        from .sandbox import RenderOutcome

        return cls(
            code=data["code"],
            outcome=RenderOutcome.from_dict(data["outcome"]),
            breakdown=RewardBreakdown.from_dict(data["breakdown"]),
        )


@dataclass(frozen=True)
class RolloutGroup:
    """G scored rollouts for one sample plus standardized advantages.

    Constructor enforces the standardization contract: advantages have mean
    zero (within 1e-9) and, whenever the rewards have positive variance,
    unit population standard deviation (within 1e-9); zero-variance groups
    carry all-zero advantages.
    """

    sample_id: str
    rollouts: tuple[RolloutScore, ...]
    advantages: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "rollouts", tuple(self.rollouts))
        object.__setattr__(self, "advantages", tuple(float(a) for a in self.advantages))
        g = len(self.rollouts)
        if g < 2:
            raise ValueError(f"rollout groups need G >= 2, got {g}")
        if len(self.advantages) != g:
            raise ValueError("advantages must align one-to-one with rollouts")

        rewards = [r.breakdown.r_total for r in self.rollouts]
        mean_r = sum(rewards) / g
        var_r = sum((r - mean_r) ** 2 for r in rewards) / g
        mean_a = sum(self.advantages) / g
        if abs(mean_a) > 1e-9:
            raise ValueError(f"advantages must have zero mean, got {mean_a}")
        if math.sqrt(var_r) > ZERO_VARIANCE_EPS:
            std_a = math.sqrt(sum((a - mean_a) ** 2 for a in self.advantages) / g)
            if abs(std_a - 1.0) > 1e-9:
                raise ValueError(f"advantages must have unit population std, got {std_a}")
        elif any(a != 0.0 for a in self.advantages):
            raise ValueError("zero-variance groups must carry all-zero advantages")

    @property
    def rewards(self) -> tuple[float, ...]:
        return tuple(r.breakdown.r_total for r in self.rollouts)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "rollouts": [r.to_dict() for r in self.rollouts],
            "advantages": list(self.advantages),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RolloutGroup":
        return cls(
            sample_id=data["sample_id"],
            rollouts=tuple(RolloutScore.from_dict(r) for r in data["rollouts"]),
            advantages=tuple(data["advantages"]),
        )


# ---------------------------------------------------------------------------
# Shard I/O
# ---------------------------------------------------------------------------

_SAFE_ID_RE = re.compile(r"[^A-Za-z0-9._-]")


def _image_filename(sample_id: str) -> str:
    return _SAFE_ID_RE.sub("_", sample_id) + ".png"


def sample_to_record(sample: ChartSample, image_path: str) -> dict:
    """Build the JSON-lines record for one sample (image stored externally)."""
    return {
        "id": sample.id,
        "image_path": image_path,
        "image_sha256": sample.image_sha256,
        "caption": sample.caption,
        "code": sample.code,
        "qa": sample.qa_set.to_dict() if sample.qa_set is not None else None,
        "provenance": sample.provenance.value,
    }


def write_shard(samples: Iterable[ChartSample], shard_path: str | Path) -> Path:
    """Write samples as a JSON-lines shard with a sibling images/ directory.

    Images are transcoded to PNG on ingest and referenced by a path relative
    to the shard file.  Duplicate ids are rejected.
    """
    shard_path = Path(shard_path)
    shard_path.parent.mkdir(parents=True, exist_ok=True)
    images_dir = shard_path.parent / f"{shard_path.stem}_images"
    images_dir.mkdir(exist_ok=True)

    seen: set[str] = set()
    lines: list[str] = []
    for sample in samples:
        if sample.id in seen:
            raise DataError(f"duplicate sample id in shard: {sample.id!r}")
        seen.add(sample.id)
        png = ensure_png(sample.image)
        if png is not sample.image:
            sample = ChartSample(
                id=sample.id,
                image=png,
                provenance=sample.provenance,
                caption=sample.caption,
                code=sample.code,
                qa_set=sample.qa_set,
            )
        image_rel = f"{images_dir.name}/{_image_filename(sample.id)}"
        (shard_path.parent / image_rel).write_bytes(png)
        lines.append(json.dumps(sample_to_record(sample, image_rel), sort_keys=True))

    shard_path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return shard_path


def load_shard(shard_path: str | Path) -> list[ChartSample]:
    """Load a JSON-lines shard, verifying image checksums and id uniqueness.

    Raises:
        DataError: on duplicate ids, checksum mismatches or missing images.
    """
    shard_path = Path(shard_path)
    if not shard_path.exists():
        raise DataError(f"shard not found: {shard_path}")

    samples: list[ChartSample] = []
    seen: set[str] = set()
    for lineno, line in enumerate(shard_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        record = json.loads(line)
        sample_id = record["id"]
        if sample_id in seen:
            raise DataError(f"duplicate sample id {sample_id!r} at line {lineno}")
        seen.add(sample_id)

        image_file = shard_path.parent / record["image_path"]
        if not image_file.exists():
            raise DataError(f"missing image file for {sample_id!r}: {image_file}")
        image = image_file.read_bytes()
        if sha256_hex(image) != record["image_sha256"]:
            raise DataError(f"image checksum mismatch for sample {sample_id!r}")

        samples.append(
            ChartSample(
                id=sample_id,
                image=image,
                provenance=Provenance(record["provenance"]),
                caption=record.get("caption"),
                code=record.get("code"),
                qa_set=QASet.from_dict(record["qa"]) if record.get("qa") else None,
            )
        )
    return samples
