import json
import re

import pytest

from chartrl.cli import main
from chartrl.model import load_shard, write_shard
from .conftest import conforming_qa_set, make_sample, solid_png


@pytest.fixture
def shard(tmp_path):
    samples = [
        make_sample("short", caption="a few tokens only"),
        make_sample("long", caption=" ".join(["tok"] * 5000)),
        make_sample("scored", image=solid_png("white"), caption="scored sample",
                    qa_set=conforming_qa_set("scored")),
    ]
    path = tmp_path / "shard.jsonl"
    write_shard(samples, path)
    return path


@pytest.fixture
def codes_file(tmp_path):
    path = tmp_path / "codes.json"
    path.write_text(json.dumps(["x = 1\n", "def broken(:\n"]))
    return path


@pytest.fixture
def mock_config(tmp_path):
    """Config using the mock sandbox (serving a white PNG) and mock inspector."""
    image_path = tmp_path / "default.png"
    image_path.write_bytes(solid_png("white"))
    rules = [
        {"image_fingerprint": "*", "question_pattern": pattern, "reply": reply}
        for pattern, reply in (
            ("Is this a bar chart?", "Yes"),
            ("legend at the top", "No"),
            ("title 'Revenue'", "Yes"),
            ("x label 'Year'", "Yes"),
            ("mention 2050", "No"),
            ("first value", "50"),
            ("second value", "30"),
            ("peak value", "80"),
            ("bars red", "No"),
            ("line dashed", "No"),
        )
    ]
    rules_path = tmp_path / "rules.json"
    rules_path.write_text(json.dumps(rules))
    config_path = tmp_path / "run.toml"
    config_path.write_text(
        f"""
seed = 7

[inspector]
backend = "mock"
mock_rules = "{rules_path.name}"

[encoder]
kind = "stub"

[sandbox]
mode = "mock"
default_image = "{image_path.name}"

[reward]
lambda = 1.0
group_size = 2
"""
    )
    return config_path


def read_csv_rows(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


class TestExitCodes:
    def test_missing_input_path_is_config_error(self, tmp_path):
        code = main(["--output-dir", str(tmp_path / "out"),
                     "curate", "length", "--shard", str(tmp_path / "absent.jsonl")])
        assert code == 2

    def test_missing_config_file_is_config_error(self, tmp_path, shard):
        code = main(["--config", str(tmp_path / "absent.toml"),
                     "curate", "length", "--shard", str(shard)])
        assert code == 2

    def test_empty_codes_file_is_data_error(self, tmp_path, shard, mock_config):
        empty = tmp_path / "empty.json"
        empty.write_text("[]")
        code = main(["--config", str(mock_config), "--output-dir", str(tmp_path / "out"),
                     "score", "--shard", str(shard), "--sample-id", "scored",
                     "--codes", str(empty)])
        assert code == 3

    def test_unreachable_worker_is_component_error(self, tmp_path, shard, codes_file):
        config = tmp_path / "bad.toml"
        config.write_text('[sandbox]\nmode = "subprocess"\nworker_cmd = "/nonexistent/worker"\n')
        code = main(["--config", str(config), "--output-dir", str(tmp_path / "out"),
                     "score", "--shard", str(shard), "--sample-id", "scored",
                     "--codes", str(codes_file)])
        assert code == 4

    def test_bad_arguments_exit_two(self):
        assert main(["curate", "not-a-stage"]) == 2


class TestCurate:
    def test_length_filter_counts(self, tmp_path, shard, capsys):
        out = tmp_path / "out"
        code = main(["--output-dir", str(out), "curate", "length", "--shard", str(shard)])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "kept=2 dropped=1" in stdout
        kept = load_shard(out / "length_kept.jsonl")
        assert {s.id for s in kept} == {"short", "scored"}

    def test_manifest_deterministic_modulo_timestamp(self, tmp_path, shard):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["--output-dir", str(out_a), "--seed", "3",
                     "curate", "length", "--shard", str(shard)]) == 0
        assert main(["--output-dir", str(out_b), "--seed", "3",
                     "curate", "length", "--shard", str(shard)]) == 0
        scrub = lambda text: re.sub(r'"timestamp": "[^"]+"', '"timestamp": "T"', text)
        manifest_a = scrub((out_a / "length_manifest.json").read_text())
        manifest_b = scrub((out_b / "length_manifest.json").read_text())
        assert manifest_a == manifest_b

    def test_prefilter_stage(self, tmp_path, shard, mock_config, capsys):
        out = tmp_path / "out"
        code = main(["--config", str(mock_config), "--output-dir", str(out),
                     "curate", "prefilter", "--shard", str(shard)])
        # only 'scored' has a QA set -> data error since others lack QA
        assert code == 3

    def test_pair_stage(self, tmp_path, codes_file, mock_config, capsys):
        out = tmp_path / "out"
        code = main(["--config", str(mock_config), "--output-dir", str(out),
                     "curate", "pair", "--codes", str(codes_file)])
        assert code == 0
        paired = load_shard(out / "paired.jsonl")
        assert len(paired) == 1  # the broken script is dropped
        assert paired[0].code == "x = 1\n"


class TestScore:
    def test_two_rollouts_advantages_sum_to_zero(self, tmp_path, shard, mock_config, codes_file):
        out = tmp_path / "out"
        code = main(["--config", str(mock_config), "--output-dir", str(out),
                     "score", "--shard", str(shard), "--sample-id", "scored",
                     "--codes", str(codes_file)])
        assert code == 0
        rows = read_csv_rows(out / "scores.csv")
        assert len(rows) == 2
        advantages = [float(r["advantage"]) for r in rows]
        assert abs(sum(advantages)) < 1e-9

    def test_lambda_flag_changes_r_total_only(self, tmp_path, shard, mock_config, codes_file):
        def run(lambda_value, out_name):
            out = tmp_path / out_name
            assert main(["--config", str(mock_config), "--output-dir", str(out),
                         "score", "--shard", str(shard), "--sample-id", "scored",
                         "--codes", str(codes_file),
                         "--lambda", str(lambda_value)]) == 0
            return read_csv_rows(out / "scores.csv")

        base = run(1.0, "base")
        halved = run(0.5, "halved")
        for row_a, row_b in zip(base, halved):
            assert row_a["r_qa"] == row_b["r_qa"]
            assert row_a["r_vis"] == row_b["r_vis"]
        executed_a = [r for r in base if r["executed"] == "True"]
        executed_b = [r for r in halved if r["executed"] == "True"]
        assert float(executed_a[0]["r_total"]) > float(executed_b[0]["r_total"])

    def test_unknown_sample_is_data_error(self, tmp_path, shard, mock_config, codes_file):
        code = main(["--config", str(mock_config), "--output-dir", str(tmp_path / "out"),
                     "score", "--shard", str(shard), "--sample-id", "nope",
                     "--codes", str(codes_file)])
        assert code == 3

    def test_fenced_model_output_is_unwrapped(self, tmp_path, shard, mock_config):
        fenced = tmp_path / "fenced.json"
        fenced.write_text(json.dumps(["```python\nx = 1\n```", "def broken(:\n"]))
        out = tmp_path / "out"
        assert main(["--config", str(mock_config), "--output-dir", str(out),
                     "score", "--shard", str(shard), "--sample-id", "scored",
                     "--codes", str(fenced)]) == 0
        rows = read_csv_rows(out / "scores.csv")
        assert rows[0]["executed"] == "True"  # fence stripped, script compiles


class TestRlDemo:
    def test_trace_identical_across_runs(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["--output-dir", str(out), "--seed", "7",
                         "rl-demo", "--epochs", "5", "--samples", "3"]) == 0
        assert (out_a / "trace.csv").read_text() == (out_b / "trace.csv").read_text()
        assert (out_a / "ratios.csv").read_text() == (out_b / "ratios.csv").read_text()

    def test_zero_epochs_header_only(self, tmp_path):
        out = tmp_path / "out"
        assert main(["--output-dir", str(out), "rl-demo", "--epochs", "0"]) == 0
        assert (out / "trace.csv").read_text().count("\n") == 1
        assert (out / "ratios.csv").read_text().count("\n") == 1

    def test_final_reward_at_least_initial(self, tmp_path):
        out = tmp_path / "out"
        assert main(["--output-dir", str(out), "--seed", "7",
                     "rl-demo", "--epochs", "20"]) == 0
        rows = read_csv_rows(out / "trace.csv")
        assert float(rows[-1]["mean_reward"]) >= float(rows[0]["mean_reward"])


class TestEval:
    @pytest.fixture
    def records_csv(self, tmp_path):
        path = tmp_path / "records.csv"
        path.write_text(
            "sample_id,executed,score\n"
            "a,true,80\nb,true,60\nc,false,0\nd,false,0\ne,true,100\n"
        )
        return path

    def test_rate(self, tmp_path, records_csv, capsys):
        assert main(["--output-dir", str(tmp_path / "o"), "eval", "rate",
                     "--records", str(records_csv)]) == 0
        assert "execution_rate: 0.6" in capsys.readouterr().out

    def test_normalize(self, tmp_path, records_csv, capsys):
        assert main(["--output-dir", str(tmp_path / "o"), "eval", "normalize",
                     "--records", str(records_csv)]) == 0
        assert "normalized_mean: 48.0" in capsys.readouterr().out

    def test_ttest(self, tmp_path, capsys):
        scores = tmp_path / "scores.csv"
        scores.write_text("a,b\n1,0\n2,0\n3,0\n4,0\n5,0\n")
        assert main(["--output-dir", str(tmp_path / "o"), "eval", "ttest",
                     "--scores", str(scores)]) == 0
        stdout = capsys.readouterr().out
        assert "delta_mean: 3.0" in stdout
        assert "df: 4" in stdout

    def test_hacking_from_demo_trace(self, tmp_path):
        out = tmp_path / "demo"
        assert main(["--output-dir", str(out), "--seed", "7",
                     "rl-demo", "--epochs", "3", "--samples", "2"]) == 0
        ratios_out = tmp_path / "ratios"
        assert main(["--output-dir", str(ratios_out), "eval", "hacking",
                     "--trace", str(out / "trace.csv")]) == 0
        assert (ratios_out / "ratios.csv").exists()


class TestContaminationAndAsymmetry:
    def test_contamination_report_row_count(self, tmp_path, capsys):
        test_shard = tmp_path / "test.jsonl"
        train_shard = tmp_path / "train.jsonl"
        write_shard([make_sample("t0", image=solid_png("white"))], test_shard)
        write_shard(
            [make_sample("c0", image=solid_png("white")),
             make_sample("c1", image=solid_png("black"))],
            train_shard,
        )
        out = tmp_path / "out"
        assert main(["--output-dir", str(out), "contamination",
                     "--test-shard", str(test_shard), "--train-shard", str(train_shard),
                     "--top-k", "1", "--gallery"]) == 0
        rows = read_csv_rows(out / "contamination.csv")
        assert len(rows) == 1
        assert rows[0]["best_train_id"] == "c0"
        assert (out / "contamination.html").exists()

    def test_asymmetry_on_fixture_corpus(self, tmp_path, capsys):
        from pathlib import Path

        fixture_dir = Path(__file__).parent / "fixtures" / "token_corpus"
        out = tmp_path / "out"
        assert main(["--output-dir", str(out), "asymmetry",
                     "--scripts", str(fixture_dir)]) == 0
        report = json.loads((out / "asymmetry.json").read_text())
        assert abs(sum(report["shares"].values()) - 1.0) < 1e-9
