"""Prune and fine-tune a watermarked model and watch accuracy and the p-value.

Run: python3 demos/removal_attacks.py   (about a minute on one core)
"""

from gnnwm.attacks import robustness_sweep
from gnnwm.graph import split_nodes, synth_graph
from gnnwm.numeric import Rng
from gnnwm.verification import build_null
from gnnwm.watermark import ArchConfig, DesignConfig, EmbedConfig, embed

g = synth_graph(Rng(1))
rng = Rng(7)
split = split_nodes(rng.spawn(0), g)
design = DesignConfig(T=4, s=0.03)
res = embed(g, split, ArchConfig("SAGE", 3, 128), EmbedConfig(), design, rng)
null = build_null(res.model, g, split, design.T, design.s, rng=rng.spawn(4))

# Structured pruning zeroes the lowest-norm output rows of every weight matrix.
prune = robustness_sweep(res.model, g, split, res.secret, null, "prune")
print("pruning")
print(prune.to_csv())

# Fine-tuning on the validation nodes at a tenth of the training rate.
tune = robustness_sweep(res.model, g, split, res.secret, null, "finetune", grid=range(1, 50))
held = sum(r["p_value"] < 0.01 for r in tune.rows)
print(f"fine-tuning: p < 0.01 after {held} of 49 epochs")
print("\n".join(tune.to_csv().splitlines()[::8]))
