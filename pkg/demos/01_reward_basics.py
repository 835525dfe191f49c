"""
Verifiable rewards on a single chart
====================================

A candidate plotting script is rendered, the rendered chart is interrogated
with atomic yes/no and numeric questions, and the answers are checked
against gold facts with absolute tolerance.  Everything here runs offline:
the Inspector is a deterministic rule table and the sandbox serves the
fixture image.
"""

from chartrl.embedding import DeterministicStubEncoder
from chartrl.rewards import (
    RewardConfig,
    clip_visual,
    compute_qa_reward,
    compute_total_reward,
    compute_visual_reward,
)
from chartrl.sandbox import ExecutionLimits
from chartrl.toyloop import FAITHFUL_TEMPLATE, build_toy_fixture

fixture = build_toy_fixture(n_samples=1)
sample = fixture.dataset[0]

# Render one candidate script for this sample.
code = FAITHFUL_TEMPLATE.replace("{sample_id}", sample.id)
outcome = fixture.sandbox.execute_script(code, ExecutionLimits())
print(f"render status: {outcome.status.value}")

# Ask the ten verification questions about the rendered image.
r_qa, verdicts = compute_qa_reward(outcome.image, sample.qa_set, fixture.inspector)
for item, verdict in zip(sample.qa_set.items, verdicts):
    print(f"  [{'pass' if verdict else 'fail'}] {item.question}")
print(f"QA pass rate r_qa = {r_qa}")

# Visual consistency: cosine similarity between stub embeddings of the
# source chart and the render (raw cosine may be negative; the composed
# reward uses the value clipped to [0, 1]).
encoder = DeterministicStubEncoder()
r_vis = compute_visual_reward(sample.image, outcome.image, encoder)
print(f"visual consistency r_vis = {r_vis:.6f}")

config = RewardConfig(lambda_weight=1.0)
total = compute_total_reward(r_qa, clip_visual(r_vis), config)
print(f"total reward = r_qa + lambda * clip(r_vis) = {total:.6f}")
