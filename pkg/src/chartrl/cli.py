"""Command-line entry point wiring curation, scoring, the RL demo and the
analytics reports behind one declarative TOML config.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
dependency failure (Inspector / encoder / sandbox unreachable).  Every
randomized path honors --seed and records it in the output manifest.
"""

from __future__ import annotations

import argparse
import csv
import json
import shlex
import sys
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python 3.10
    import tomli as tomllib

import numpy as np

from . import analytics, curation
from .embedding import DeterministicStubEncoder, RemoteEncoder
from .errors import ChartRLError, ComponentUnavailable, ConfigError, DataError
from .inspector import InspectorClient, InspectorConfig, MockInspectorBackend, HttpInspectorBackend
from .model import load_shard, write_shard
from .rewards import RewardConfig, score_rollout_group
from .sandbox import ExecutionLimits, MockSandbox, SubprocessSandbox, extract_code_block
from .toyloop import ToyPolicy, TrainingTrace, build_toy_fixture, run_toy_rl_loop

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_COMPONENT = 4


@dataclass
class RunConfig:
    """Declarative run configuration (TOML file + CLI overrides)."""

    seed: int = 0
    output_dir: Path = Path("chartrl-out")
    inspector: dict = field(default_factory=dict)
    encoder: dict = field(default_factory=dict)
    reward: dict = field(default_factory=dict)
    sandbox: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file is not valid TOML: {exc}") from exc
        config = cls(
            seed=int(data.get("seed", 0)),
            output_dir=Path(data.get("output_dir", "chartrl-out")),
            inspector=data.get("inspector", {}),
            encoder=data.get("encoder", {}),
            reward=data.get("reward", {}),
            sandbox=data.get("sandbox", {}),
        )
        config._check_paths(path.parent)
        return config

    def _check_paths(self, base: Path) -> None:
        # Referenced paths must exist at load time.
        for section, key in (("inspector", "mock_rules"), ("sandbox", "default_image")):
            value = getattr(self, section).get(key)
            if value:
                resolved = (base / value) if not Path(value).is_absolute() else Path(value)
                if not resolved.exists():
                    raise ConfigError(f"{section}.{key} path does not exist: {resolved}")
                getattr(self, section)[key] = str(resolved)

    def reward_config(self, lambda_override: float | None = None) -> RewardConfig:
        section = self.reward
        return RewardConfig(
            lambda_weight=(
                lambda_override if lambda_override is not None else section.get("lambda", 1.0)
            ),
            reward_floor_on_exec_failure=section.get("reward_floor", 0.0),
            kl_beta=section.get("kl_beta", 0.02),
            group_size=section.get("group_size", 4),
        )

    def build_inspector(self) -> InspectorClient:
        section = self.inspector
        inspector_config = InspectorConfig(
            endpoint=section.get("endpoint", ""),
            model_id=section.get("model_id", ""),
            max_concurrency=section.get("max_concurrency", 4),
            timeout=section.get("timeout", 60.0),
            retries=section.get("retries", 2),
        )
        backend_kind = section.get("backend", "mock")
        if backend_kind == "mock":
            rules_path = section.get("mock_rules")
            backend = (
                MockInspectorBackend.from_json_file(rules_path)
                if rules_path
                else MockInspectorBackend()
            )
        elif backend_kind == "http":
            backend = HttpInspectorBackend(inspector_config)
        else:
            raise ConfigError(f"unknown inspector backend {backend_kind!r}")
        return InspectorClient(backend=backend, config=inspector_config)

    def build_encoder(self):
        section = self.encoder
        kind = section.get("kind", "stub")
        if kind == "stub":
            return DeterministicStubEncoder()
        if kind == "remote":
            for key in ("endpoint", "encoder_id", "dimension"):
                if key not in section:
                    raise ConfigError(f"encoder.{key} is required for remote encoders")
            return RemoteEncoder(
                endpoint=section["endpoint"],
                encoder_id=section["encoder_id"],
                dimension=section["dimension"],
            )
        raise ConfigError(f"unknown encoder kind {kind!r}")

    def build_sandbox(self):
        section = self.sandbox
        mode = section.get("mode", "mock")
        if mode == "mock":
            default_image = None
            image_path = section.get("default_image")
            if image_path:
                default_image = Path(image_path).read_bytes()
            return MockSandbox(default_image=default_image)
        if mode == "subprocess":
            worker_cmd = section.get("worker_cmd") or None
            return SubprocessSandbox(worker_cmd=shlex.split(worker_cmd) if worker_cmd else None)
        raise ConfigError(f"unknown sandbox mode {mode!r}")

    def execution_limits(self) -> ExecutionLimits:
        section = self.sandbox
        return ExecutionLimits(
            wall_clock=section.get("wall_clock", 30.0),
            memory=section.get("memory_bytes", 2 * 1024**3),
            output_image_max=section.get("output_image_max", 16 * 1024**2),
        )


def _require_file(path: str | Path, description: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{description} not found: {path}")
    return path


def _load_codes(path: str | Path) -> list[str]:
    path = _require_file(path, "codes file")
    try:
        codes = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"codes file is not valid JSON: {exc}") from exc
    if not isinstance(codes, list) or not all(isinstance(c, str) for c in codes):
        raise DataError("codes file must contain a JSON array of script strings")
    if not codes:
        raise DataError("codes file is empty")
    return codes


def _load_records(path: str | Path) -> list[analytics.EvalRecord]:
    path = _require_file(path, "records file")
    records = []
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            executed = row["executed"].strip().lower() in ("1", "true", "yes")
            records.append(
                analytics.EvalRecord(
                    sample_id=row["sample_id"],
                    executed=executed,
                    score=float(row["score"]) if executed else 0.0,
                )
            )
    if not records:
        raise DataError(f"no records in {path}")
    return records


def _write_manifest(manifest: curation.CurationManifest, output_dir: Path, name: str) -> Path:
    output_dir.mkdir(parents=True, exist_ok=True)
    path = manifest.write(output_dir / name)
    print(f"manifest: {path}")
    return path


def cmd_curate(args: argparse.Namespace, config: RunConfig) -> int:
    shard = load_shard(_require_file(args.shard, "input shard")) if args.shard else []
    manifest = curation.CurationManifest(seed=config.seed)
    if args.shard:
        manifest.add_input_shard(args.shard)
    output_dir = config.output_dir

    if args.stage == "length":
        result = curation.filter_caption_length(shard, max_tokens=args.max_tokens)
    elif args.stage == "similarity":
        result = curation.filter_by_render_similarity(
            shard,
            threshold=args.threshold,
            backend=config.build_encoder(),
            sandbox=config.build_sandbox(),
            limits=config.execution_limits(),
        )
    elif args.stage == "prefilter":
        result = curation.consistency_prefilter(
            shard, inspector=config.build_inspector(), min_acc=args.min_acc
        )
    elif args.stage == "pair":
        codes = _load_codes(args.codes)
        samples, record = curation.render_and_pair(
            codes, sandbox=config.build_sandbox(), limits=config.execution_limits()
        )
        manifest.stages.append(record)
        output_dir.mkdir(parents=True, exist_ok=True)
        write_shard(samples, output_dir / "paired.jsonl")
        print(f"kept={record.kept} dropped={record.dropped}")
        _write_manifest(manifest, output_dir, "pair_manifest.json")
        return EXIT_OK
    elif args.stage == "build-rl":
        if not shard:
            raise DataError("build-rl needs a non-empty input shard")
        kept, manifest = curation.build_rl_dataset(
            shard,
            target_k=args.target_k,
            backend=config.build_encoder(),
            seed=config.seed,
            inspector=config.build_inspector(),
            min_acc=args.min_acc,
            output_path=output_dir / "rl_shard.jsonl",
            manifest=manifest,
        )
        print(f"kept={len(kept)}")
        _write_manifest(manifest, output_dir, "build_rl_manifest.json")
        return EXIT_OK
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown curation stage {args.stage!r}")

    manifest.stages.append(result.record)
    output_dir.mkdir(parents=True, exist_ok=True)
    write_shard(result.kept, output_dir / f"{args.stage}_kept.jsonl")
    print(
        f"kept={result.record.kept} dropped={result.record.dropped} "
        f"quarantined={result.record.quarantined}"
    )
    _write_manifest(manifest, output_dir, f"{args.stage}_manifest.json")
    return EXIT_OK


def cmd_score(args: argparse.Namespace, config: RunConfig) -> int:
    shard = load_shard(_require_file(args.shard, "input shard"))
    by_id = {sample.id: sample for sample in shard}
    if args.sample_id not in by_id:
        raise DataError(f"sample {args.sample_id!r} not in shard")
    sample = by_id[args.sample_id]
    if sample.qa_set is None:
        raise DataError(f"sample {args.sample_id!r} has no QA set")

    # Model outputs often wrap the script in a fenced block; bare scripts
    # pass through unchanged.
    codes = [extract_code_block(code) for code in _load_codes(args.codes)]
    reward_config = config.reward_config(lambda_override=args.lambda_weight)
    if len(codes) != reward_config.group_size:
        reward_config = RewardConfig(
            lambda_weight=reward_config.lambda_weight,
            reward_floor_on_exec_failure=reward_config.reward_floor_on_exec_failure,
            kl_beta=reward_config.kl_beta,
            group_size=max(2, len(codes)),
        )

    group = score_rollout_group(
        sample,
        codes,
        sandbox=config.build_sandbox(),
        inspector=config.build_inspector(),
        encoder=config.build_encoder(),
        config=reward_config,
        limits=config.execution_limits(),
    )

    config.output_dir.mkdir(parents=True, exist_ok=True)
    out_path = config.output_dir / "scores.csv"
    with open(out_path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["rollout", "executed", "r_qa", "r_vis", "r_total", "advantage"])
        for index, (rollout, advantage) in enumerate(zip(group.rollouts, group.advantages)):
            b = rollout.breakdown
            writer.writerow(
                [index, b.executed, repr(b.r_qa), repr(b.r_vis), repr(b.r_total), repr(advantage)]
            )
    print(f"scores: {out_path}")
    return EXIT_OK


def cmd_rl_demo(args: argparse.Namespace, config: RunConfig) -> int:
    fixture = build_toy_fixture(n_samples=args.samples)
    reward_config = config.reward_config()
    policy = ToyPolicy(
        logits=np.zeros(len(fixture.templates)),
        templates=fixture.templates,
        rng_seed=config.seed,
    )
    trace = run_toy_rl_loop(
        fixture.dataset,
        policy,
        reward_config,
        epochs=args.epochs,
        sandbox=fixture.sandbox,
        inspector=fixture.inspector,
        encoder=fixture.encoder,
        learning_rate=args.lr,
    )
    config.output_dir.mkdir(parents=True, exist_ok=True)
    trace_path = config.output_dir / "trace.csv"
    trace.to_csv(trace_path)
    ratios_path = config.output_dir / "ratios.csv"
    analytics.ratio_csv(analytics.reward_hacking_curves(trace), ratios_path)
    print(f"trace: {trace_path}")
    print(f"ratios: {ratios_path}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    if args.metric == "rate":
        records = _load_records(args.records)
        print(f"execution_rate: {analytics.execution_rate(records)}")
    elif args.metric == "normalize":
        records = _load_records(args.records)
        print(f"normalized_mean: {analytics.normalized_mean(records)}")
        print(f"mean_over_executed: {analytics.mean_over_executed(records)}")
        print(f"execution_rate: {analytics.execution_rate(records)}")
    elif args.metric == "ttest":
        path = _require_file(args.scores, "scores file")
        a: list[float] = []
        b: list[float] = []
        with open(path, newline="") as handle:
            for row in csv.DictReader(handle):
                a.append(float(row["a"]))
                b.append(float(row["b"]))
        if len(a) < 2:
            raise DataError("need at least two paired scores")
        result = analytics.paired_t_test(a, b)
        if result.degenerate:
            print(f"delta_mean: {result.delta_mean} (degenerate: zero variance)")
        else:
            print(
                f"delta_mean: {result.delta_mean} t: {result.t_stat} "
                f"p: {result.p_value} df: {result.df}"
            )
    elif args.metric == "hacking":
        trace = TrainingTrace.from_csv(_require_file(args.trace, "trace file"))
        points = analytics.reward_hacking_curves(trace)
        config.output_dir.mkdir(parents=True, exist_ok=True)
        out_path = config.output_dir / "ratios.csv"
        analytics.ratio_csv(points, out_path)
        print(f"ratios: {out_path}")
    return EXIT_OK


def cmd_contamination(args: argparse.Namespace, config: RunConfig) -> int:
    test_set = load_shard(_require_file(args.test_shard, "test shard"))
    train_set = load_shard(_require_file(args.train_shard, "train shard"))
    report = analytics.contamination_report(
        test_set, train_set, encoders=[config.build_encoder()], top_k=args.top_k
    )
    config.output_dir.mkdir(parents=True, exist_ok=True)
    out_path = config.output_dir / "contamination.csv"
    report.to_csv(out_path)
    print(f"report: {out_path}")
    print(f"percentiles: {json.dumps(report.percentiles, sort_keys=True)}")
    if args.gallery:
        gallery_path = analytics.contamination_gallery(
            report, test_set, train_set, config.output_dir / "contamination.html"
        )
        print(f"gallery: {gallery_path}")
    return EXIT_OK


def cmd_asymmetry(args: argparse.Namespace, config: RunConfig) -> int:
    root = Path(args.scripts)
    if root.is_dir():
        paths = sorted(root.glob("**/*.py"))
    elif root.exists():
        paths = [root]
    else:
        raise ConfigError(f"scripts path not found: {root}")
    corpus = [p.read_text() for p in paths]
    if not corpus:
        raise DataError(f"no scripts found under {root}")
    report = analytics.token_asymmetry_report(corpus)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    out_path = config.output_dir / "asymmetry.json"
    out_path.write_text(
        json.dumps(
            {
                "shares": report.shares,
                "total_tokens": report.total_tokens,
                "attribute_value_share": report.attribute_value_share,
                "top3_coverage": report.top3_coverage,
                "skipped_scripts": report.skipped_scripts,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    print(f"report: {out_path}")
    print(json.dumps(report.shares, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chartrl", description=__doc__)
    parser.add_argument("--config", help="TOML run configuration")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--output-dir", help="override the config output directory")
    commands = parser.add_subparsers(dest="command", required=True)

    curate = commands.add_parser("curate", help="dataset curation stages")
    curate.add_argument(
        "stage", choices=["length", "similarity", "pair", "prefilter", "build-rl"]
    )
    curate.add_argument("--shard", help="input shard (JSON-lines)")
    curate.add_argument("--codes", help="JSON array of scripts (pair stage)")
    curate.add_argument("--max-tokens", type=int, default=curation.DEFAULT_MAX_CAPTION_TOKENS)
    curate.add_argument("--threshold", type=float, default=curation.DEFAULT_SIMILARITY_THRESHOLD)
    curate.add_argument("--min-acc", type=float, default=curation.DEFAULT_MIN_PREFILTER_ACCURACY)
    curate.add_argument("--target-k", type=int, default=10)

    score = commands.add_parser("score", help="score one rollout group")
    score.add_argument("--shard", required=True)
    score.add_argument("--sample-id", required=True)
    score.add_argument("--codes", required=True)
    score.add_argument("--lambda", dest="lambda_weight", type=float, default=None)

    demo = commands.add_parser("rl-demo", help="run the bundled toy RL loop")
    demo.add_argument("--epochs", type=int, default=20)
    demo.add_argument("--samples", type=int, default=6)
    demo.add_argument("--lr", type=float, default=0.2)

    evaluate = commands.add_parser("eval", help="evaluation analytics")
    evaluate.add_argument("metric", choices=["rate", "normalize", "ttest", "hacking"])
    evaluate.add_argument("--records", help="CSV with sample_id,executed,score")
    evaluate.add_argument("--scores", help="CSV with paired columns a,b")
    evaluate.add_argument("--trace", help="training trace CSV")

    contamination = commands.add_parser("contamination", help="test/train similarity check")
    contamination.add_argument("--test-shard", required=True)
    contamination.add_argument("--train-shard", required=True)
    contamination.add_argument("--top-k", type=int, default=5)
    contamination.add_argument("--gallery", action="store_true")

    asymmetry = commands.add_parser("asymmetry", help="token-composition report")
    asymmetry.add_argument("--scripts", required=True, help="script file or directory")

    return parser


_HANDLERS = {
    "curate": cmd_curate,
    "score": cmd_score,
    "rl-demo": cmd_rl_demo,
    "eval": cmd_eval,
    "contamination": cmd_contamination,
    "asymmetry": cmd_asymmetry,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK

    try:
        config = RunConfig.load(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.output_dir is not None:
            config.output_dir = Path(args.output_dir)
        return _HANDLERS[args.command](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ComponentUnavailable as exc:
        print(f"component unavailable: {exc}", file=sys.stderr)
        return EXIT_COMPONENT
    except ChartRLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPONENT


def entrypoint() -> None:  # pragma: no cover - console script shim
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":  # pragma: no cover
    entrypoint()
