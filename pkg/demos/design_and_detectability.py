"""How long must the watermark be, and how hard is it to find the subgraphs?

Run: python3 demos/design_and_detectability.py
"""

from gnnwm.detectability import (brute_force_space, monte_carlo_overlap, overlap_probability_exact,
                                 overlap_probability_hypergeometric, overlap_probability_published,
                                 scientific)
from gnnwm.graph import subgraph_size
from gnnwm.numeric import Rng
from gnnwm.watermark import design_watermark

# A 745-feature graph with four watermarked subgraphs.  Random sign vectors
# agree at an index with probability 2 * 0.5^T, which sets the natural MI.
d = design_watermark(F=745, T=4, alpha_tgt=1e-5, alpha_lb=1e-5)
print("design for F=745, T=4")
for k, v in d.summary().items():
    print(f"  {k:12s} {v}")

# Shorter watermarks suffice as T grows, because natural agreement shrinks.
for T in (2, 3, 4, 5, 6):
    print(f"  T={T}: M={design_watermark(745, T).M}")

# Brute force: an attacker enumerating every 23-node subset of 4590 training
# nodes, then every choice of four of them.
n_train = 4590
n_sub = subgraph_size(0.005, n_train)
count, log10_sets = brute_force_space(n_train, n_sub, 4)
print(f"\n{n_sub}-node subgraphs of {n_train} nodes: {scientific(count)}")
print(f"sets of four such subgraphs: 10^{log10_sets:.2f}")

# Random search: chance that one random subset overlaps some watermarked
# subgraph in at least j nodes.  The published sum starts at m = 1, so it is
# reported next to the hypergeometric tail and the exact joint probability.
print("\n j  published      hypergeometric  exact joint     Monte-Carlo (1e5)")
rng = Rng(0)
for j in (1, 2, 3, 4):
    pub = overlap_probability_published(n_train, n_sub, 4, j)
    hyp = overlap_probability_hypergeometric(n_train, n_sub, 4, j)
    ex = float(overlap_probability_exact(n_train, n_sub, 4, j))
    mc, se = monte_carlo_overlap(rng.spawn(j), n_train, n_sub, 4, j, trials=10**5)
    print(f" {j}  {pub:.6f}     {hyp:.4e}      {ex:.4e}      {mc:.4e} +- {se:.1e}")
