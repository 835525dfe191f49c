"""
Curation pipeline with manifests
================================

Every dataset filter partitions its input into kept/dropped (plus a
quarantine bucket for transport faults) and records counts, reasons and
thresholds in a manifest, so a rerun with the same seed reproduces the
identical kept-set.  Thresholds are strict: a caption of exactly 4096
tokens stays, similarity of exactly 0.8 drops.
"""

import tempfile
from pathlib import Path

from chartrl.curation import (
    build_rl_dataset,
    consistency_prefilter,
    filter_caption_length,
    render_and_pair,
)
from chartrl.embedding import DeterministicStubEncoder
from chartrl.toyloop import build_toy_fixture

fixture = build_toy_fixture(n_samples=8)
out_dir = Path(tempfile.mkdtemp(prefix="chartrl-demo-"))

# --- caption-length filter ------------------------------------------------
from dataclasses import replace

samples = list(fixture.dataset)
samples[0] = replace(samples[0], caption=" ".join(["token"] * 5000))
result = filter_caption_length(samples)
print(f"caption filter: kept={result.record.kept} dropped={result.record.dropped} "
      f"(reasons={result.record.reasons})")

# --- render-and-pair: each sample's image is the render of its own code ---
from chartrl.sandbox import MockSandbox
from chartrl.toyloop import make_bar_chart_png

pair_sandbox = MockSandbox(default_image=make_bar_chart_png())
codes = [
    "import matplotlib.pyplot as plt\nplt.plot([1, 2, 3])\nplt.savefig('x.png')\n",
    "def broken(:\n",
]
paired, record = render_and_pair(codes, sandbox=pair_sandbox)
print(f"render-and-pair: kept={record.kept} dropped={record.dropped} "
      f"(reasons={record.reasons})")

# --- consistency pre-filter on the ORIGINAL images ------------------------
result = consistency_prefilter(fixture.dataset, inspector=fixture.inspector)
print(f"consistency prefilter: kept={result.record.kept} of {result.record.n_in} "
      f"(needs >= 9 of 10 answers right on the source chart)")

# --- end-to-end RL-set construction ----------------------------------------
kept, manifest = build_rl_dataset(
    list(fixture.dataset), target_k=4,
    backend=DeterministicStubEncoder(), seed=11,
    inspector=fixture.inspector,
    output_path=out_dir / "rl_shard.jsonl",
)
manifest.write(out_dir / "manifest.json")
print(f"\nbuild-rl: {len(kept)} samples -> {out_dir / 'rl_shard.jsonl'}")
print((out_dir / "manifest.json").read_text())
