"""One replicate of LRB against UCB and subsampled UCB on a 100 x 100 rank-3 matrix.

Prints cumulative regret every 250 rounds, then how many arms LRB kept after
its forced-sampling phase.  Takes about ten seconds.
"""

import numpy as np

from blab import Environment, build_policy, generate_low_rank

T = 2000
B = generate_low_rank(100, 100, 3, "uniform01", seed=0)

specs = ["lrb(h=1,f=225)", "ucb", "ssucb"]
curves = {}
policies = {}
for spec in specs:
    policy = build_policy(spec, 100, 100, T, seed=1)
    env = Environment(B, noise_sd=0.1, seed=2)  # same noise stream for every policy
    regret = np.empty(T)
    for t in range(1, T + 1):
        arm, forced = policy.select(t)
        policy.update(t, arm, env.pull(arm, t), forced)
        regret[t - 1] = env.regret_of(arm)
    curves[spec] = np.cumsum(regret)
    policies[spec] = policy

print(f"{'t':>6}" + "".join(f"{s:>18}" for s in specs))
for t in range(250, T + 1, 250):
    print(f"{t:>6}" + "".join(f"{curves[s][t - 1]:18.1f}" for s in specs))

lrb = policies["lrb(h=1,f=225)"]
kept = lrb.candidate_arms()
best = np.argmax(B)
print(f"\nLRB kept {len(kept)} of {B.size} arms after forced sampling; best arm kept: {best in set(kept.tolist())}")
