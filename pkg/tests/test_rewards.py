import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chartrl.embedding import DeterministicStubEncoder
from chartrl.errors import GroupTooSmall, ShapeMismatch
from chartrl.inspector import InspectorClient, MockInspectorBackend, MockRule
from chartrl.model import sha256_hex
from chartrl.rewards import (
    RewardConfig,
    clip_visual,
    compute_advantages,
    compute_qa_reward,
    compute_total_reward,
    compute_visual_reward,
    kl_estimate,
    score_rollout_group,
)
from chartrl.sandbox import MockRenderRule, MockSandbox, RenderStatus

from .conftest import conforming_qa_set, make_sample


def correct_inspector(image: bytes) -> InspectorClient:
    """Mock Inspector answering the conforming QA set perfectly for one image."""
    fp = sha256_hex(image)
    rules = [
        MockRule(fp, "Is this a bar chart?", "Yes"),
        MockRule(fp, "legend at the top", "No"),
        MockRule(fp, "title 'Revenue'", "Yes"),
        MockRule(fp, "x label 'Year'", "Yes"),
        MockRule(fp, "mention 2050", "No"),
        MockRule(fp, "first value", "50"),
        MockRule(fp, "second value", "30"),
        MockRule(fp, "peak value", "80"),
        MockRule(fp, "bars red", "No"),
        MockRule(fp, "line dashed", "No"),
    ]
    return InspectorClient(MockInspectorBackend(rules=rules, default_reply="unclear"))


class TestQaReward:
    def test_seven_of_ten_correct(self, white_png):
        qa = conforming_qa_set()
        fp = sha256_hex(white_png)
        # Correct on items 0-5 and 8; wrong numbers on 6-7, inverted bool on 9.
        replies = ["Yes", "No", "Yes", "Yes", "No", "50", "99", "99", "No", "Yes"]
        rules = [
            MockRule(fp, item.question[:20], reply) for item, reply in zip(qa.items, replies)
        ]
        inspector = InspectorClient(MockInspectorBackend(rules=rules))
        r_qa, verdicts = compute_qa_reward(white_png, qa, inspector)
        assert r_qa == 0.7
        assert verdicts == [True, True, True, True, True, True, False, False, True, False]

    def test_all_correct_is_one(self, white_png):
        r_qa, verdicts = compute_qa_reward(white_png, conforming_qa_set(), correct_inspector(white_png))
        assert r_qa == 1.0 and all(verdicts)

    def test_all_unparseable_is_zero(self, white_png):
        inspector = InspectorClient(MockInspectorBackend(default_reply="hmm"))
        r_qa, verdicts = compute_qa_reward(white_png, conforming_qa_set(), inspector)
        assert r_qa == 0.0 and not any(verdicts)


class TestVisualReward:
    def test_identical_images(self, white_png):
        value = compute_visual_reward(white_png, white_png, DeterministicStubEncoder())
        assert math.isclose(value, 1.0, abs_tol=1e-6)

    def test_white_vs_black_below_one(self, white_png, black_png):
        value = compute_visual_reward(white_png, black_png, DeterministicStubEncoder())
        assert value < 1.0

    def test_lossless_reencode_still_one(self, white_png):
        import io

        from PIL import Image

        buf = io.BytesIO()
        Image.open(io.BytesIO(white_png)).save(buf, format="PNG", compress_level=9)
        value = compute_visual_reward(white_png, buf.getvalue(), DeterministicStubEncoder())
        assert math.isclose(value, 1.0, abs_tol=1e-6)


class TestTotalReward:
    def test_formula(self):
        assert compute_total_reward(0.7, 0.9, RewardConfig(lambda_weight=1.0)) == pytest.approx(1.6, abs=1e-12)
        assert compute_total_reward(0.7, 0.9, RewardConfig(lambda_weight=0.5)) == pytest.approx(1.15, abs=1e-12)

    @given(
        r_qa=st.floats(min_value=0, max_value=1, allow_nan=False),
        r_vis=st.floats(min_value=-1, max_value=1, allow_nan=False),
    )
    def test_lambda_zero_reduces_to_qa_only(self, r_qa, r_vis):
        assert compute_total_reward(r_qa, r_vis, RewardConfig(lambda_weight=0.0)) == r_qa

    def test_clip_visual(self):
        assert clip_visual(-0.4) == 0.0
        assert clip_visual(0.4) == 0.4
        assert clip_visual(1.3) == 1.0


class TestAdvantages:
    def test_zero_variance_gives_zeros(self):
        assert compute_advantages([1.0, 1.0, 1.0, 1.0]) == [0.0, 0.0, 0.0, 0.0]

    def test_two_point_group(self):
        assert compute_advantages([0.0, 2.0]) == [-1.0, 1.0]

    def test_three_point_fixture(self):
        advantages = compute_advantages([0.2, 0.8, 0.5])
        assert advantages == pytest.approx([-1.2247, 1.2247, 0.0], abs=1e-4)

    def test_group_too_small(self):
        with pytest.raises(GroupTooSmall):
            compute_advantages([1.0])

    @settings(max_examples=300)
    @given(
        st.lists(st.floats(min_value=-100, max_value=100, allow_nan=False), min_size=2, max_size=16)
    )
    def test_standardization_contract(self, rewards):
        advantages = np.asarray(compute_advantages(rewards))
        rewards = np.asarray(rewards)
        assert abs(advantages.mean()) < 1e-9
        if rewards.std() > 1e-12:
            assert abs(advantages.std() - 1.0) < 1e-9
            # Ranking preserved; reward gaps below fp resolution may tie.
            scale = np.abs(rewards).max()
            for i in range(len(rewards)):
                for j in range(len(rewards)):
                    if rewards[i] > rewards[j] + 1e-12 * scale:
                        assert advantages[i] > advantages[j]
        else:
            assert np.all(advantages == 0.0)


class TestKlEstimate:
    def test_identical_policies(self):
        assert kl_estimate([0.1, -2.0], [0.1, -2.0]) == 0.0

    def test_unit_log_ratio(self):
        value = kl_estimate([-1.0, -1.0], [0.0, 0.0])
        assert math.isclose(value, math.e - 2.0, abs_tol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            kl_estimate([0.0, 1.0], [0.0])

    @given(
        st.lists(st.floats(min_value=-5, max_value=0, allow_nan=False), min_size=1, max_size=20)
    )
    def test_non_negative(self, logp_new):
        rng = np.random.default_rng(0)
        logp_ref = np.asarray(logp_new) + rng.normal(scale=0.5, size=len(logp_new))
        assert kl_estimate(logp_new, logp_ref) >= 0.0


class TestScoreRolloutGroup:
    def _stack(self, image):
        sandbox = MockSandbox(
            rules=[MockRenderRule("# arm: good", RenderStatus.SUCCESS, image=image)]
        )
        return sandbox, correct_inspector(image), DeterministicStubEncoder()

    def test_two_rollout_example(self, white_png):
        sample = make_sample(image=white_png, qa_set=conforming_qa_set())
        sandbox, inspector, encoder = self._stack(white_png)
        config = RewardConfig(lambda_weight=1.0, group_size=2)
        group = score_rollout_group(
            sample,
            ["# arm: good\nplot()", "def broken(:"],
            sandbox=sandbox, inspector=inspector, encoder=encoder, config=config,
        )
        assert group.rewards == pytest.approx([2.0, 0.0], abs=1e-9)
        assert group.advantages == pytest.approx([1.0, -1.0], abs=1e-9)

    def test_all_failures_zero_advantages(self, white_png):
        sample = make_sample(image=white_png, qa_set=conforming_qa_set())
        sandbox, inspector, encoder = self._stack(white_png)
        config = RewardConfig(group_size=3)
        group = score_rollout_group(
            sample, ["def a(:", "def b(:", "def c(:"],
            sandbox=sandbox, inspector=inspector, encoder=encoder, config=config,
        )
        assert group.rewards == (0.0, 0.0, 0.0)
        assert group.advantages == (0.0, 0.0, 0.0)

    def test_order_matches_input(self, white_png):
        sample = make_sample(image=white_png, qa_set=conforming_qa_set())
        sandbox, inspector, encoder = self._stack(white_png)
        config = RewardConfig(group_size=3)
        group = score_rollout_group(
            sample, ["def a(:", "# arm: good\nplot()", "def c(:"],
            sandbox=sandbox, inspector=inspector, encoder=encoder, config=config,
        )
        executed = [r.breakdown.executed for r in group.rollouts]
        assert executed == [False, True, False]
        assert [r.code for r in group.rollouts] == ["def a(:", "# arm: good\nplot()", "def c(:"]

    def test_group_size_mismatch_rejected(self, white_png):
        sample = make_sample(image=white_png, qa_set=conforming_qa_set())
        sandbox, inspector, encoder = self._stack(white_png)
        with pytest.raises(ValueError):
            score_rollout_group(
                sample, ["x = 1"],
                sandbox=sandbox, inspector=inspector, encoder=encoder,
                config=RewardConfig(group_size=2),
            )

    def test_total_reward_range_with_clipping(self, white_png, black_png):
        # Rendered image very unlike the source: raw cosine may go negative,
        # the composed total must stay within [floor, 1 + lambda].
        sample = make_sample(image=white_png, qa_set=conforming_qa_set())
        sandbox = MockSandbox(
            rules=[MockRenderRule("# arm: dark", RenderStatus.SUCCESS, image=black_png)]
        )
        inspector = correct_inspector(white_png)
        config = RewardConfig(lambda_weight=1.0, group_size=2)
        group = score_rollout_group(
            sample, ["# arm: dark\nplot()", "def broken(:"],
            sandbox=sandbox, inspector=inspector, encoder=DeterministicStubEncoder(), config=config,
        )
        dark = group.rollouts[0].breakdown
        assert dark.r_vis < 0.0
        assert dark.r_vis_used == 0.0
        assert 0.0 <= dark.r_total <= 1.0 + config.lambda_weight
