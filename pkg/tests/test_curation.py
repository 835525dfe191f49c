import numpy as np
import pytest

from chartrl.curation import (
    CurationManifest,
    StageRecord,
    build_rl_dataset,
    consistency_prefilter,
    filter_by_render_similarity,
    filter_caption_length,
    prefilter_threshold,
    render_and_pair,
)
from chartrl.errors import DataError, TransportError
from chartrl.inspector import InspectorClient, InspectorConfig, MockInspectorBackend, MockRule
from chartrl.model import Provenance, load_shard, sha256_hex
from chartrl.sandbox import MockRenderRule, MockSandbox, RenderStatus

from .conftest import FakeEncoder, conforming_qa_set, make_sample, solid_png


class TestCaptionLength:
    def test_boundary_kept_at_exact_limit(self):
        sample = make_sample(caption=" ".join(["tok"] * 4096))
        result = filter_caption_length([sample])
        assert result.kept == (sample,)

    def test_dropped_above_limit(self):
        sample = make_sample(caption=" ".join(["tok"] * 4097))
        result = filter_caption_length([sample])
        assert result.dropped[0][1] == "caption_too_long"

    def test_empty_caption_kept_with_zero_count(self):
        result = filter_caption_length([make_sample(caption="")])
        assert len(result.kept) == 1

    def test_missing_caption_flagged_not_fatal(self):
        result = filter_caption_length([make_sample(caption=None)])
        assert len(result.kept) == 1
        assert result.record.flags["missing_caption"] == 1

    def test_custom_counter_recorded(self):
        result = filter_caption_length(
            [make_sample(caption="abcdef")], max_tokens=3,
            token_counter=len, counter_name="characters",
        )
        assert result.record.thresholds["token_counter"] == "characters"
        assert len(result.dropped) == 1

    def test_idempotent_on_kept_set(self):
        samples = [make_sample(f"s{i}", caption=" ".join(["t"] * n))
                   for i, n in enumerate([10, 5000, 4096, 4097])]
        first = filter_caption_length(samples)
        second = filter_caption_length(list(first.kept))
        assert second.kept == first.kept

    def test_manifest_replay_reproduces_kept_set(self):
        samples = [make_sample(f"s{i}", caption=" ".join(["t"] * n))
                   for i, n in enumerate([10, 900, 1200, 4097])]
        first = filter_caption_length(samples, max_tokens=1000)
        replay = filter_caption_length(samples, max_tokens=first.record.thresholds["max_tokens"])
        assert [s.id for s in replay.kept] == [s.id for s in first.kept]


SRC_IMAGE = solid_png("white")
EXACT_IMAGE = solid_png((200, 200, 200))
CLOSE_IMAGE = solid_png((180, 180, 180))
FAR_IMAGE = solid_png("black")


def similarity_stack():
    """Sandbox + encoder engineered for exact similarity values.

    Codes render to marker images whose fake embeddings give cosine of
    exactly 1.0 ("identical"), exactly 0.8 ("boundary") and 0.0 ("far")
    against the source.
    """
    sandbox = MockSandbox(
        rules=[
            MockRenderRule("render-identical", RenderStatus.SUCCESS, image=SRC_IMAGE),
            MockRenderRule("render-boundary", RenderStatus.SUCCESS, image=EXACT_IMAGE),
            MockRenderRule("render-far", RenderStatus.SUCCESS, image=FAR_IMAGE),
        ]
    )
    encoder = FakeEncoder({
        SRC_IMAGE: [1.0, 0.0],
        EXACT_IMAGE: [0.8, 0.6],   # cos vs (1,0) = 0.8 exactly
        CLOSE_IMAGE: [0.9, np.sqrt(1 - 0.81)],
        FAR_IMAGE: [0.0, 1.0],
    })
    return sandbox, encoder


class TestRenderSimilarity:
    def test_identical_render_kept(self):
        sandbox, encoder = similarity_stack()
        sample = make_sample(image=SRC_IMAGE, code="# render-identical")
        result = filter_by_render_similarity([sample], backend=encoder, sandbox=sandbox)
        assert result.kept == (sample,)

    def test_exactly_at_threshold_dropped(self):
        sandbox, encoder = similarity_stack()
        sample = make_sample(image=SRC_IMAGE, code="# render-boundary")
        result = filter_by_render_similarity([sample], backend=encoder, sandbox=sandbox)
        assert result.dropped[0][1] == "similarity_not_above_threshold"

    def test_just_above_threshold_kept(self):
        sandbox, encoder = similarity_stack()
        sandbox.rules.append(
            MockRenderRule("render-close", RenderStatus.SUCCESS, image=CLOSE_IMAGE)
        )
        sample = make_sample(image=SRC_IMAGE, code="# render-close")
        result = filter_by_render_similarity([sample], backend=encoder, sandbox=sandbox)
        assert result.kept == (sample,)

    def test_execution_failure_dropped_with_reason(self):
        sandbox, encoder = similarity_stack()
        sample = make_sample(image=SRC_IMAGE, code="def broken(:")
        result = filter_by_render_similarity([sample], backend=encoder, sandbox=sandbox)
        assert result.dropped[0][1] == "execution_failure"

    def test_partition_conserves_counts(self):
        sandbox, encoder = similarity_stack()
        samples = [
            make_sample("a", image=SRC_IMAGE, code="# render-identical"),
            make_sample("b", image=SRC_IMAGE, code="# render-boundary"),
            make_sample("c", image=SRC_IMAGE, code="def broken(:"),
        ]
        result = filter_by_render_similarity(samples, backend=encoder, sandbox=sandbox)
        record = result.record
        assert record.kept + record.dropped + record.quarantined == record.n_in == 3


class TestRenderAndPair:
    def test_sample_image_is_own_render(self, white_png):
        sandbox = MockSandbox(default_image=white_png)
        samples, record = render_and_pair(["x = 1"], sandbox=sandbox)
        assert len(samples) == 1
        assert samples[0].image == white_png
        assert samples[0].provenance is Provenance.RENDERED
        assert samples[0].code == "x = 1"
        # re-render reproduces the identical image
        again, _ = render_and_pair(["x = 1"], sandbox=sandbox)
        assert sha256_hex(again[0].image) == sha256_hex(samples[0].image)

    def test_invalid_code_excluded_and_counted(self):
        sandbox = MockSandbox()
        samples, record = render_and_pair(["def broken(:"], sandbox=sandbox)
        assert samples == []
        assert record.dropped == 1
        assert record.reasons == {"compile_error": 1}

    def test_same_code_twice_gives_identical_images(self, white_png):
        sandbox = MockSandbox(default_image=white_png)
        samples, _ = render_and_pair(["x = 1", "x = 1"], sandbox=sandbox)
        assert samples[0].image == samples[1].image
        assert samples[0].id != samples[1].id


def prefilter_inspector(image, n_correct: int):
    """Inspector answering the first n_correct questions right, rest wrong."""
    qa = conforming_qa_set()
    correct = ["Yes", "No", "Yes", "Yes", "No", "50", "30", "80", "No", "No"]
    wrong = ["No", "Yes", "No", "No", "Yes", "999", "999", "999", "Yes", "Yes"]
    fp = sha256_hex(image)
    rules = [
        MockRule(fp, item.question[:20], correct[i] if i < n_correct else wrong[i])
        for i, item in enumerate(qa.items)
    ]
    return InspectorClient(MockInspectorBackend(rules=rules))


class TestConsistencyPrefilter:
    def test_nine_of_ten_kept(self, white_png):
        sample = make_sample(image=white_png, qa_set=conforming_qa_set())
        result = consistency_prefilter(
            [sample], inspector=prefilter_inspector(white_png, 9)
        )
        assert result.kept == (sample,)

    def test_eight_of_ten_dropped(self, white_png):
        sample = make_sample(image=white_png, qa_set=conforming_qa_set())
        result = consistency_prefilter(
            [sample], inspector=prefilter_inspector(white_png, 8)
        )
        assert result.dropped[0][1] == "below_min_accuracy"

    def test_five_question_set_needs_all_correct(self):
        assert prefilter_threshold(0.9, 5) == 5
        assert prefilter_threshold(0.9, 10) == 9
        assert prefilter_threshold(0.9, 20) == 18

    def test_transport_failure_quarantines(self, white_png):
        class DeadBackend:
            def complete(self, image, question):
                raise TransportError("down")

        sample = make_sample(image=white_png, qa_set=conforming_qa_set())
        client = InspectorClient(DeadBackend(), InspectorConfig(retries=0))
        result = consistency_prefilter([sample], inspector=client)
        assert result.kept == ()
        assert result.dropped == ()
        assert len(result.quarantined) == 1
        assert result.record.quarantined == 1

    def test_missing_qa_set_is_data_error(self, white_png):
        with pytest.raises(DataError):
            consistency_prefilter(
                [make_sample(image=white_png)], inspector=prefilter_inspector(white_png, 9)
            )

    def test_idempotent_on_kept_set(self, white_png):
        sample = make_sample(image=white_png, qa_set=conforming_qa_set())
        inspector = prefilter_inspector(white_png, 10)
        first = consistency_prefilter([sample], inspector=inspector)
        second = consistency_prefilter(list(first.kept), inspector=inspector)
        assert second.kept == first.kept


class TestStageRecordAndManifest:
    def test_counts_must_conserve(self):
        with pytest.raises(ValueError):
            StageRecord(stage="x", n_in=3, kept=1, dropped=1)

    def test_manifest_json_round_trips_counts(self, tmp_path):
        manifest = CurationManifest(seed=7)
        manifest.stages.append(StageRecord(stage="x", n_in=2, kept=2, dropped=0))
        path = manifest.write(tmp_path / "manifest.json")
        import json

        data = json.loads(path.read_text())
        assert data["seed"] == 7
        assert data["stages"][0]["kept"] == 2


class TestBuildRlDataset:
    def _pool(self):
        # four visually distinct charts, conforming QA on each
        images = [solid_png(c) for c in ("white", "black", (200, 0, 0), (0, 0, 200))]
        vectors = {
            images[0]: [1.0, 0.0, 0.0],
            images[1]: [0.0, 1.0, 0.0],
            images[2]: [0.0, 0.0, 1.0],
            images[3]: [0.7, 0.7, 0.0],
        }
        pool = [
            make_sample(f"pool-{i}", image=img, qa_set=conforming_qa_set(f"pool-{i}"))
            for i, img in enumerate(images)
        ]
        return pool, FakeEncoder(vectors, dimension=3)

    def _inspector_all_correct(self, images):
        correct = ["Yes", "No", "Yes", "Yes", "No", "50", "30", "80", "No", "No"]
        qa = conforming_qa_set()
        rules = [
            MockRule("*", item.question[:20], reply) for item, reply in zip(qa.items, correct)
        ]
        return InspectorClient(MockInspectorBackend(rules=rules))

    def test_composition_and_manifest(self, tmp_path):
        pool, encoder = self._pool()
        kept, manifest = build_rl_dataset(
            pool, 3,
            backend=encoder, seed=11,
            inspector=self._inspector_all_correct(None),
            output_path=tmp_path / "rl.jsonl",
        )
        assert len(kept) == 3
        assert [s.stage for s in manifest.stages] == [
            "representative_sampling", "consistency_prefilter",
        ]
        assert manifest.stages[1].kept == 3
        assert load_shard(tmp_path / "rl.jsonl") == kept

    def test_same_seed_same_shard_ids(self, tmp_path):
        pool, encoder = self._pool()
        inspector = self._inspector_all_correct(None)
        kept_a, _ = build_rl_dataset(pool, 2, backend=encoder, seed=3, inspector=inspector)
        kept_b, _ = build_rl_dataset(pool, 2, backend=encoder, seed=3, inspector=inspector)
        assert [s.id for s in kept_a] == [s.id for s in kept_b]

    def test_all_failing_prefilter_gives_empty_shard(self, tmp_path):
        pool, encoder = self._pool()
        inspector = InspectorClient(MockInspectorBackend(default_reply="unclear"))
        kept, manifest = build_rl_dataset(
            pool, 2, backend=encoder, seed=3, inspector=inspector,
            output_path=tmp_path / "rl.jsonl",
        )
        assert kept == []
        assert manifest.stages[1].dropped == 2
        assert load_shard(tmp_path / "rl.jsonl") == []
