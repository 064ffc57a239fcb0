"""Split LRB regret into the filtering part and the UCB part across h.

Small h keeps few arms, so the UCB part is small but mistakes in filtering
are costly; large h keeps many arms and shifts regret to the UCB part.  Runs
5 replicates per h through the experiment runner (about a minute).
"""

import numpy as np

from blab.experiment import parse_config, parse_grid, sweep

cfg = parse_config("""
[env]
d_r = 100
d_c = 100
rank = 3
noise_sd = 0.1

[experiment]
horizon = 2000
replications = 5
master_seed = 7
decompose = true

[policies]
lrb(f=225)
""")
result = sweep(cfg, parse_grid("h = 0.5, 1, 1.5, 2, 2.5, 3, 3.5"), threads=1)

print(f"{'h':>5} {'part 1':>9} {'part 2':>9} {'total':>9}")
for row in result.summary:
    spec = f"lrb({row.params})"
    parts = [p for (s, _), p in result.parts.items() if s == spec]
    p1 = np.mean([p.part1 for p in parts])
    p2 = np.mean([p.part2 for p in parts])
    h = row.params.split("h=")[1]
    print(f"{h:>5} {p1:9.1f} {p2:9.1f} {p1 + p2:9.1f}")
