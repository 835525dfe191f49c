"""
Desk-scale RL loop: two template arms
=====================================

A categorical policy over a faithful template and a broken one is trained
with group-standardized rewards plus a KL pull toward its initial state.
The probability mass on the faithful arm climbs epoch over epoch; so do the
train reward and the pass rate, while reward-per-executable-sample stays
flat at its ceiling -- the signature of real improvement rather than
execution-rate hacking.
"""

import numpy as np

from chartrl.analytics import reward_hacking_curves
from chartrl.rewards import RewardConfig
from chartrl.toyloop import ToyPolicy, build_toy_fixture, run_toy_rl_loop

fixture = build_toy_fixture(n_samples=6)
config = RewardConfig(group_size=4, kl_beta=0.02)
policy = ToyPolicy(logits=np.zeros(2), templates=fixture.templates, rng_seed=7)

trace = run_toy_rl_loop(
    fixture.dataset, policy, config, epochs=20,
    sandbox=fixture.sandbox, inspector=fixture.inspector, encoder=fixture.encoder,
    learning_rate=0.2,
)

print("epoch  p(faithful)  mean_reward  pass_rate  consistency/pass  kl")
for row in trace.rows:
    ratio = f"{row.consistency_per_pass:.3f}" if row.consistency_per_pass else "  -  "
    print(
        f"{row.epoch:>5}  {row.arm_probabilities[0]:>11.4f}  {row.mean_reward:>11.4f}  "
        f"{row.pass_rate:>9.3f}  {ratio:>16}  {row.kl:.5f}"
    )

points = reward_hacking_curves(trace)
flat = {round(p.consistency_per_pass, 9) for p in points if p.consistency_per_pass}
print(f"\nreward-per-executable-sample values seen: {sorted(flat)}")
print("(a constant ceiling means the gains come from more faithful renders,")
print(" not from gaming the execution rate)")
