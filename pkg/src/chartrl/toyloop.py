"""Desk-scale RL loop: a categorical template policy trained with
group-standardized rewards.

The neural policy is replaced by a softmax over a fixed set of plotting
script templates of varying fidelity; every other component (render
sandbox, Inspector QA, visual reward, advantage standardization, KL
anchoring) is the production path.  Each epoch draws its rollout uniforms
from a generator reseeded with the policy seed (common random numbers), so
a zero learning rate yields an exactly constant trace and realized pass
rates move monotonically with the policy mass.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from .errors import DataError
from .inspector import InspectorClient, InspectorConfig, MockInspectorBackend, MockRule
from .model import AnswerType, ChartSample, Provenance, QACategory, QAItem, QASet, sha256_hex
from .rewards import RewardConfig, compute_advantages, kl_estimate, score_rollout_group
from .sandbox import ExecutionLimits, MockRenderRule, MockSandbox, RenderStatus

TRACE_COLUMNS = (
    "epoch",
    "mean_reward",
    "pass_rate",
    "mean_r_qa",
    "mean_r_vis",
    "kl",
    "consistency_per_pass",
    "visual_per_pass",
)


@dataclass
class ToyPolicy:
    """Categorical policy over plotting-script templates."""

    logits: np.ndarray
    templates: list[str]
    rng_seed: int

    def __post_init__(self) -> None:
        self.logits = np.asarray(self.logits, dtype=np.float64).copy()
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be finite")
        if len(self.logits) != len(self.templates):
            raise ValueError("one logit per template required")
        if len(self.templates) < 2:
            raise ValueError("need at least two template arms")

    def probabilities(self) -> np.ndarray:
        shifted = self.logits - self.logits.max()
        weights = np.exp(shifted)
        return weights / weights.sum()


@dataclass(frozen=True)
class TraceRow:
    """Per-epoch training metrics; ratio fields are None when nothing ran."""

    epoch: int
    mean_reward: float
    pass_rate: float
    mean_r_qa: float
    mean_r_vis: float
    kl: float
    consistency_per_pass: float | None
    visual_per_pass: float | None
    arm_probabilities: tuple[float, ...] = ()


@dataclass
class TrainingTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def __iter__(self):
        return iter(self.rows)

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self, path: str | Path | None = None) -> str:
        """Serialize the fixed trace columns; None ratios become empty cells."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in self.rows:
            writer.writerow(
                [
                    row.epoch,
                    repr(row.mean_reward),
                    repr(row.pass_rate),
                    repr(row.mean_r_qa),
                    repr(row.mean_r_vis),
                    repr(row.kl),
                    "" if row.consistency_per_pass is None else repr(row.consistency_per_pass),
                    "" if row.visual_per_pass is None else repr(row.visual_per_pass),
                ]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrainingTrace":
        rows: list[TraceRow] = []
        with open(path, newline="") as handle:
            for record in csv.DictReader(handle):
                rows.append(
                    TraceRow(
                        epoch=int(record["epoch"]),
                        mean_reward=float(record["mean_reward"]),
                        pass_rate=float(record["pass_rate"]),
                        mean_r_qa=float(record["mean_r_qa"]),
                        mean_r_vis=float(record["mean_r_vis"]),
                        kl=float(record["kl"]),
                        consistency_per_pass=(
                            float(record["consistency_per_pass"])
                            if record["consistency_per_pass"]
                            else None
                        ),
                        visual_per_pass=(
                            float(record["visual_per_pass"]) if record["visual_per_pass"] else None
                        ),
                    )
                )
        return cls(rows=rows)


def _sample_arms(probabilities: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF arm draws; monotone in the probability of lower arms."""
    cdf = np.cumsum(probabilities)
    arms = np.searchsorted(cdf, uniforms, side="right")
    return np.minimum(arms, len(probabilities) - 1)


def _apply_group_update(
    logits: np.ndarray,
    ref_logits: np.ndarray,
    arms: np.ndarray,
    advantages: Sequence[float],
    learning_rate: float,
    kl_beta: float,
) -> None:
    """Score-function update plus a KL pull toward the reference logits.

    The pull is a convex step toward the reference with coefficient
    min(kl_beta, 1) so oversized penalties anchor at the reference instead
    of oscillating past it.
    """
    for arm, advantage in zip(arms, advantages):
        logits[arm] += learning_rate * advantage
    pull = min(kl_beta, 1.0)
    logits -= pull * (logits - ref_logits)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def run_toy_rl_loop(
    dataset: Sequence[ChartSample],
    policy: ToyPolicy,
    config: RewardConfig,
    epochs: int,
    *,
    sandbox,
    inspector: InspectorClient,
    encoder,
    learning_rate: float = 0.5,
    limits: ExecutionLimits | None = None,
) -> TrainingTrace:
    """Optimize the template policy with group-standardized rewards.

    Per sample step: draw G arms, render the chosen templates, score the
    group, standardize, update the sampled arms' logits by lr * advantage
    and pull all logits toward their initial values by the KL coefficient.
    Fully deterministic for a fixed policy seed.
    """
    if not dataset:
        raise DataError("toy RL loop needs a non-empty dataset")
    for sample in dataset:
        if sample.qa_set is None:
            raise DataError(f"sample {sample.id!r} carries no QA set")

    ref_logits = policy.logits.copy()
    trace = TrainingTrace()

    for epoch in range(1, epochs + 1):
        rng = np.random.default_rng(policy.rng_seed)
        epoch_arms: list[int] = []
        totals: list[float] = []
        qa_sum = 0.0
        vis_sum = 0.0
        executed = 0

        for sample in dataset:
            uniforms = rng.random(config.group_size)
            arms = _sample_arms(policy.probabilities(), uniforms)
            codes = [
                policy.templates[arm].replace("{sample_id}", sample.id) for arm in arms
            ]
            group = score_rollout_group(
                sample,
                codes,
                sandbox=sandbox,
                inspector=inspector,
                encoder=encoder,
                config=config,
                limits=limits,
            )
            _apply_group_update(
                policy.logits, ref_logits, arms, group.advantages, learning_rate, config.kl_beta
            )

            epoch_arms.extend(int(a) for a in arms)
            for rollout in group.rollouts:
                breakdown = rollout.breakdown
                totals.append(breakdown.r_total)
                qa_sum += breakdown.r_qa
                vis_sum += breakdown.r_vis_used
                executed += int(breakdown.executed)

        n_rollouts = len(totals)
        arm_idx = np.asarray(epoch_arms, dtype=np.int64)
        kl = kl_estimate(_log_softmax(policy.logits)[arm_idx], _log_softmax(ref_logits)[arm_idx])
        trace.rows.append(
            TraceRow(
                epoch=epoch,
                mean_reward=sum(totals) / n_rollouts,
                pass_rate=executed / n_rollouts,
                mean_r_qa=qa_sum / n_rollouts,
                mean_r_vis=vis_sum / n_rollouts,
                kl=kl,
                consistency_per_pass=qa_sum / executed if executed else None,
                visual_per_pass=vis_sum / executed if executed else None,
                arm_probabilities=tuple(policy.probabilities()),
            )
        )
    return trace


def simulate_bandit(
    arm_rewards: Sequence[float],
    arm_executed: Sequence[bool],
    *,
    n_samples: int,
    epochs: int,
    seed: int,
    config: RewardConfig,
    learning_rate: float,
    initial_logits: Sequence[float] | None = None,
) -> list[np.ndarray]:
    """Fast path of the toy loop with fixed per-arm rewards, no rendering.

    Consumes randomness exactly like :func:`run_toy_rl_loop`, so on a
    fixture whose arms have deterministic rewards the two produce identical
    policy trajectories.  Returns the post-epoch probability vectors.
    """
    arm_rewards = np.asarray(arm_rewards, dtype=np.float64)
    logits = (
        np.zeros(len(arm_rewards))
        if initial_logits is None
        else np.asarray(initial_logits, dtype=np.float64).copy()
    )
    ref_logits = logits.copy()

    def probabilities() -> np.ndarray:
        shifted = logits - logits.max()
        weights = np.exp(shifted)
        return weights / weights.sum()

    trajectory: list[np.ndarray] = []
    for _ in range(epochs):
        rng = np.random.default_rng(seed)
        for _ in range(n_samples):
            uniforms = rng.random(config.group_size)
            arms = _sample_arms(probabilities(), uniforms)
            advantages = compute_advantages(arm_rewards[arms])
            _apply_group_update(logits, ref_logits, arms, advantages, learning_rate, config.kl_beta)
        trajectory.append(probabilities())
    return trajectory


# ---------------------------------------------------------------------------
# Bundled two-arm fixture: a faithful template vs. a broken one.
# ---------------------------------------------------------------------------

BAR_VALUES = (40.0, 55.0, 80.0, 65.0)
CHART_TITLE = "Quarterly totals"

FAITHFUL_TEMPLATE = """\
# arm: faithful (sample {sample_id})
import matplotlib.pyplot as plt

values = [40, 55, 80, 65]
labels = ["Q1", "Q2", "Q3", "Q4"]
fig, ax = plt.subplots()
ax.bar(labels, values, color="tab:blue")
ax.set_title("Quarterly totals")
ax.set_xlabel("Quarter")
plt.savefig("chart.png")
"""

BROKEN_TEMPLATE = """\
# arm: broken (sample {sample_id})
import matplotlib.pyplot as plt
def draw(:
    pass
"""


def make_bar_chart_png(values: Sequence[float] = BAR_VALUES, size: tuple[int, int] = (320, 240)) -> bytes:
    """Deterministic synthetic bar chart (blue bars on white, no text)."""
    width, height = size
    img = Image.new("RGB", size, "white")
    draw = ImageDraw.Draw(img)
    peak = max(values)
    slot = width // len(values)
    for i, value in enumerate(values):
        bar_height = int((value / peak) * (height - 20))
        x0 = i * slot + slot // 4
        x1 = (i + 1) * slot - slot // 4
        draw.rectangle([x0, height - bar_height, x1, height - 1], fill=(31, 119, 180))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def make_fixture_qa(source_image_id: str) -> QASet:
    """Schema-conformant 10-question set for the bundled bar chart."""
    items = (
        QAItem("Is this a vertical bar chart?", AnswerType.BOOL, True, QACategory.CHART_TYPE),
        QAItem("Is the chart a single panel without subplots?", AnswerType.BOOL, True, QACategory.LAYOUT),
        QAItem("Does the title read 'Quarterly totals'?", AnswerType.BOOL, True, QACategory.TEXT_POSITIVE),
        QAItem("Is the x-axis label 'Quarter'?", AnswerType.BOOL, True, QACategory.TEXT_POSITIVE),
        QAItem("Does the title contain the year 2050?", AnswerType.BOOL, False, QACategory.TEXT_NEGATIVE),
        QAItem("What is the value of the first bar?", AnswerType.FLOAT, 40.0, QACategory.DATA_ACCURACY, tolerance=4.0),
        QAItem("What is the value of the second bar?", AnswerType.FLOAT, 55.0, QACategory.DATA_ACCURACY, tolerance=5.5),
        QAItem("What is the largest bar value?", AnswerType.FLOAT, 80.0, QACategory.DATA_ACCURACY, tolerance=8.0),
        QAItem("Are the bars blue?", AnswerType.BOOL, True, QACategory.STYLE),
        QAItem("Are the bars drawn with a dashed outline?", AnswerType.BOOL, False, QACategory.STYLE),
    )
    return QASet(items=items, source_image_id=source_image_id)


#: Correct free-text replies for the fixture QA set, keyed by a question
#: fragment; used to build fingerprint-scoped mock Inspector rules.
FIXTURE_REPLIES = (
    ("vertical bar chart", "Yes, it is."),
    ("single panel", "Yes."),
    ("title read 'Quarterly totals'", "Yes, it does."),
    ("x-axis label 'Quarter'", "Yes."),
    ("contain the year 2050", "No."),
    ("value of the first bar", "The first bar is 40."),
    ("value of the second bar", "Around 55."),
    ("largest bar value", "80"),
    ("bars blue", "Yes, blue."),
    ("dashed outline", "No, solid."),
)


@dataclass
class ToyFixture:
    """Everything needed to run the bundled two-arm loop offline."""

    dataset: list[ChartSample]
    templates: list[str]
    sandbox: MockSandbox
    inspector: InspectorClient
    encoder: object
    faithful_arm: int = 0
    broken_arm: int = 1


def build_toy_fixture(n_samples: int = 4, max_concurrency: int = 8) -> ToyFixture:
    """Two-arm fixture: faithful and broken templates over one bar chart.

    The mock sandbox renders the faithful template as the source image
    itself; the mock Inspector answers correctly only for that image's
    fingerprint, so the faithful arm earns full QA and visual reward while
    the broken arm fails to execute.
    """
    from .embedding import DeterministicStubEncoder

    image = make_bar_chart_png()
    fingerprint = sha256_hex(image)

    dataset = [
        ChartSample(
            id=f"toy-{index:03d}",
            image=image,
            provenance=Provenance.SOURCE_DATASET,
            caption="Bar chart of quarterly totals.",
            qa_set=make_fixture_qa(f"toy-{index:03d}"),
        )
        for index in range(n_samples)
    ]

    sandbox = MockSandbox(
        rules=[
            MockRenderRule(
                code_substring="# arm: faithful",
                status=RenderStatus.SUCCESS,
                image=image,
            )
        ]
    )

    inspector_rules = [
        MockRule(image_fingerprint=fingerprint, question_pattern=pattern, reply=reply)
        for pattern, reply in FIXTURE_REPLIES
    ]
    inspector = InspectorClient(
        backend=MockInspectorBackend(rules=inspector_rules, default_reply="unclear"),
        config=InspectorConfig(max_concurrency=max_concurrency),
    )

    return ToyFixture(
        dataset=dataset,
        templates=[FAITHFUL_TEMPLATE, BROKEN_TEMPLATE],
        sandbox=sandbox,
        inspector=inspector,
        encoder=DeterministicStubEncoder(),
    )
