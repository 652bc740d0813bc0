"""Embed a watermark into a GraphSAGE classifier and test ownership.

Run: python3 demos/embed_and_verify.py   (about a minute on one core)
"""

import numpy as np

from gnnwm.explain import KernelConfig
from gnnwm.graph import random_subgraphs, split_nodes, synth_graph
from gnnwm.models import accuracy
from gnnwm.numeric import Rng
from gnnwm.verification import build_null, verify
from gnnwm.watermark import ArchConfig, DesignConfig, EmbedConfig, embed

g = synth_graph(Rng(1))                      # 600 nodes, 100 features, 4 classes
rng = Rng(7)
split = split_nodes(rng.spawn(0), g)
kernel = KernelConfig()

# Subgraphs of 3% of the training nodes (11 nodes each).  Smaller subgraphs
# leave too few node pairs for the explanations to carry the pattern.
design = DesignConfig(T=4, s=0.03)
arch = ArchConfig("SAGE", layers=3, hidden=128)


def log(epoch, row, model):
    if epoch % 50 == 0:
        print(f"  epoch {epoch:3d}  loss {row['loss']:9.3f}  wmk {row['loss_wmk']:.4f}  "
              f"alignment {row['alignment']:.1f}%")


print("embedding (r = 50)")
res = embed(g, split, arch, EmbedConfig(r=50), design, rng, kernel, on_epoch=log)
print(f"  watermark length M = {res.secret.design.M}, test accuracy {accuracy(res.model, g, split.test):.3f}")

print("control run (r = 0, same seed)")
ctl = embed(g, split, arch, EmbedConfig(r=0), design, rng, kernel)
print(f"  test accuracy {accuracy(ctl.model, g, split.test):.3f}")

# The verifier only sees the model, the candidate node sets and a null
# distribution of MI over random training subgraphs of the same size.
null = build_null(res.model, g, split, design.T, design.s, rng=rng.spawn(4), kernel=kernel)
print(f"null MI: mean {null.mu:.2f}, sd {null.sigma:.2f}")

owner = verify(res.model, g, res.secret.subgraphs.node_sets, null)
print(f"owner's subgraphs: MI={owner.MI_cdt} p={owner.p_value:.2e} verified={owner.verdict}")

hits = 0
for i in range(50):
    cands = random_subgraphs(Rng(1000 + i), split.train, design.T, null.n_sub)
    hits += verify(res.model, g, cands, null).verdict
print(f"random claimants verified: {hits}/50")

ctl_null = build_null(ctl.model, g, split, design.T, design.s, rng=rng.spawn(4), kernel=kernel)
rep = verify(ctl.model, g, res.secret.subgraphs.node_sets, ctl_null)
print(f"owner's subgraphs on the control model: p={rep.p_value:.3f} verified={rep.verdict}")
