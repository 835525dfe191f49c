"""Reward computation and group-relative advantage standardization.

The total reward for one rollout is the QA pass rate plus a weighted visual
consistency term; groups of rollouts are standardized to zero-mean,
unit-population-std advantages, with zero-variance groups carrying no
learning signal.  A sequence-level KL estimator supports the trust-region
penalty of the optimization loop.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .embedding import cosine_similarity, embed
from .errors import EmptyQASet, GroupTooSmall, ShapeMismatch
from .inspector import InspectorClient
from .matching import verdict_for
from .model import (
    ChartSample,
    QASet,
    RewardBreakdown,
    RolloutGroup,
    RolloutScore,
    ZERO_VARIANCE_EPS,
)
from .sandbox import ExecutionLimits, RenderSandbox


@dataclass(frozen=True)
class RewardConfig:
    """Reward composition and group settings.

    ``lambda_weight`` balances the visual term against the QA term; the
    floor is the total reward assigned to rollouts whose code fails to
    execute.
    """

    lambda_weight: float = 1.0
    reward_floor_on_exec_failure: float = 0.0
    kl_beta: float = 0.02
    group_size: int = 4

    def __post_init__(self) -> None:
        if self.lambda_weight < 0:
            raise ValueError("lambda_weight must be >= 0")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be >= 0")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")


def qa_pass_rate(verdicts) -> float:
    """Fraction of verdicts that passed."""
    if not verdicts:
        raise EmptyQASet("no verdicts to aggregate")
    return sum(verdicts) / len(verdicts)


def compute_qa_reward(
    pred_image: bytes, qa: QASet, inspector: InspectorClient
) -> tuple[float, list[bool]]:
    """QA pass rate on the rendered image, with per-question verdicts.

    Unparseable Inspector replies count as failed verdicts.
    """
    if len(qa.items) == 0:
        raise EmptyQASet("cannot score an empty QA set")
    replies = inspector.answer_qa_set(pred_image, qa)
    verdicts = [verdict_for(reply, item) for reply, item in zip(replies, qa.items)]
    return qa_pass_rate(verdicts), verdicts


def compute_visual_reward(src: bytes, pred: bytes, backend) -> float:
    """Raw cosine similarity between source and rendered chart embeddings."""
    return cosine_similarity(embed(src, backend), embed(pred, backend))


def compute_total_reward(r_qa: float, r_vis: float, config: RewardConfig) -> float:
    """Total reward: r_qa + lambda * r_vis, exactly."""
    if not (math.isfinite(r_qa) and math.isfinite(r_vis)):
        raise ValueError("reward components must be finite")
    return r_qa + config.lambda_weight * r_vis


def clip_visual(r_vis: float) -> float:
    """Clip a raw cosine into [0, 1] before composing the total reward."""
    return max(0.0, min(1.0, r_vis))


def compute_advantages(rewards: list[float] | np.ndarray) -> list[float]:
    """Standardize rewards within the group: (R - mean) / population std.

    Zero-variance groups (population std below 1e-12) yield all-zero
    advantages.

    Raises:
        GroupTooSmall: fewer than two rewards.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size < 2:
        raise GroupTooSmall(f"need at least 2 rewards, got {rewards.size}")
    if not np.all(np.isfinite(rewards)):
        raise ValueError("rewards must be finite")
    std = float(rewards.std())
    if std < ZERO_VARIANCE_EPS:
        return [0.0] * rewards.size
    return list((rewards - rewards.mean()) / std)


def kl_estimate(logp_new, logp_ref) -> float:
    """Non-negative unbiased KL estimate: mean of exp(r) - r - 1.

    ``r = logp_ref - logp_new`` elementwise; the estimator is pointwise
    non-negative by convexity.

    Raises:
        ShapeMismatch: inputs of different shapes.
    """
    logp_new = np.asarray(logp_new, dtype=np.float64)
    logp_ref = np.asarray(logp_ref, dtype=np.float64)
    if logp_new.shape != logp_ref.shape:
        raise ShapeMismatch(f"shapes differ: {logp_new.shape} vs {logp_ref.shape}")
    if logp_new.size == 0:
        raise ShapeMismatch("cannot estimate KL over zero elements")
    if not (np.all(np.isfinite(logp_new)) and np.all(np.isfinite(logp_ref))):
        raise ValueError("log-probabilities must be finite")
    r = logp_ref - logp_new
    return max(0.0, float(np.mean(np.exp(r) - r - 1.0)))


def failed_breakdown(config: RewardConfig) -> RewardBreakdown:
    """Breakdown for a rollout whose code did not execute."""
    return RewardBreakdown(
        executed=False,
        r_qa=0.0,
        r_vis=0.0,
        r_vis_used=0.0,
        r_total=config.reward_floor_on_exec_failure,
        verdicts=(),
        lambda_used=config.lambda_weight,
    )


def score_rollout_group(
    sample: ChartSample,
    codes: list[str],
    *,
    sandbox: RenderSandbox,
    inspector: InspectorClient,
    encoder,
    config: RewardConfig,
    limits: ExecutionLimits | None = None,
    parallelism: int | None = None,
) -> RolloutGroup:
    """Render, verify and standardize one group of candidate scripts.

    Failed executions receive zero components and the configured reward
    floor; the raw visual cosine is clipped to [0, 1] before entering the
    total.  Outcome order matches input code order.
    """
    if sample.qa_set is None:
        raise ValueError(f"sample {sample.id!r} carries no QA set")
    if len(codes) != config.group_size:
        raise ValueError(
            f"expected group_size={config.group_size} codes, got {len(codes)}"
        )

    limits = limits or ExecutionLimits()
    parallelism = parallelism or min(len(codes), 4)
    outcomes = sandbox.batch_execute(codes, limits, parallelism=parallelism)

    def _score(outcome) -> RewardBreakdown:
        if not outcome.ok:
            return failed_breakdown(config)
        r_qa, verdicts = compute_qa_reward(outcome.image, sample.qa_set, inspector)
        r_vis = compute_visual_reward(sample.image, outcome.image, encoder)
        r_vis_used = clip_visual(r_vis)
        return RewardBreakdown(
            executed=True,
            r_qa=r_qa,
            r_vis=r_vis,
            r_vis_used=r_vis_used,
            r_total=compute_total_reward(r_qa, r_vis_used, config),
            verdicts=tuple(verdicts),
            lambda_used=config.lambda_weight,
        )

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        breakdowns = list(pool.map(_score, outcomes))

    advantages = compute_advantages([b.r_total for b in breakdowns])
    rollouts = tuple(
        RolloutScore(code=code, outcome=outcome, breakdown=breakdown)
        for code, outcome, breakdown in zip(codes, outcomes, breakdowns)
    )
    return RolloutGroup(sample_id=sample.id, rollouts=rollouts, advantages=tuple(advantages))
