"""
Asking the network "has anyone trained on this?"
================================================

Each participant keeps only the hashes of its own partition. A query
floods outward from the entry node until somebody answers yes or every
edge has been used, so a hit costs at most 2|E| messages.
"""

import numpy as np

from augmixcloak.classifier import init_model
from augmixcloak.dfl import build_topology, flood_query, make_participants

hashes = [[11, 12, 13], [21, 22], [], [41, 42, 43, 44], [51]]
model = init_model("mlp", 2, seed=0, input_shape=(2, 2, 1))
partitions = [(np.zeros((len(hs), 2, 2, 1)), np.zeros(len(hs), int)) for hs in hashes]

for kind in ("fully", "ring", "star"):
    topo = build_topology(kind, len(hashes))
    parts = make_participants(topo, partitions, [model] * len(hashes), hashes=hashes)
    for h in (12, 44, 99):
        res = flood_query(topo, parts, 0, h)
        print(f"{kind:>5} |E|={len(topo.edges):2d}  hash {h:2d}: found={res.found!s:5}  "
              f"messages={res.messages:2d} (bound {2 * len(topo.edges)})")
