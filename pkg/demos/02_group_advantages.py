"""
Group-relative advantages
=========================

A group of G candidate scripts is scored for one sample; the totals are
standardized within the group (zero mean, unit population std) to become
advantages.  Failed executions earn the reward floor, zero-variance groups
carry no learning signal, and a KL estimator measures policy drift.
"""

import numpy as np

from chartrl.rewards import RewardConfig, compute_advantages, kl_estimate, score_rollout_group
from chartrl.toyloop import BROKEN_TEMPLATE, FAITHFUL_TEMPLATE, build_toy_fixture

fixture = build_toy_fixture(n_samples=1)
sample = fixture.dataset[0]
config = RewardConfig(lambda_weight=1.0, group_size=4)

# Two faithful rollouts, one broken, one valid-but-empty script.
codes = [
    FAITHFUL_TEMPLATE.replace("{sample_id}", sample.id),
    BROKEN_TEMPLATE.replace("{sample_id}", sample.id),
    FAITHFUL_TEMPLATE.replace("{sample_id}", sample.id),
    "x = 1  # runs, draws nothing",
]
group = score_rollout_group(
    sample, codes,
    sandbox=fixture.sandbox, inspector=fixture.inspector,
    encoder=fixture.encoder, config=config,
)

print("rollout  executed  r_qa   r_vis  r_total  advantage")
for i, (rollout, advantage) in enumerate(zip(group.rollouts, group.advantages)):
    b = rollout.breakdown
    print(f"{i:>7}  {str(b.executed):>8}  {b.r_qa:<5.2f}  {b.r_vis:<5.2f}  {b.r_total:<7.3f}  {advantage:+.4f}")

print(f"\nadvantage mean = {np.mean(group.advantages):+.2e} (always 0)")
print(f"advantage std  = {np.std(group.advantages):.6f} (1 whenever rewards vary)")

# Standardization in isolation:
print("\ncompute_advantages([0, 2])        ->", compute_advantages([0.0, 2.0]))
print("compute_advantages([1, 1, 1, 1])  ->", compute_advantages([1.0, 1.0, 1.0, 1.0]))
print("compute_advantages([.2, .8, .5]) ->", [round(a, 4) for a in compute_advantages([0.2, 0.8, 0.5])])

# Sequence-level KL estimator: mean of exp(r) - r - 1, r = logp_ref - logp_new.
print("\nkl(identical policies) =", kl_estimate([-0.7, -1.2], [-0.7, -1.2]))
print("kl(log-ratio 1)        =", round(kl_estimate([-1.0], [0.0]), 5), "(= e - 2)")
