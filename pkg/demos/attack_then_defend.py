"""
Overfit a small federation, attack it, then put the cloak in front
===================================================================

Toy-sized so it runs in well under a minute on a laptop CPU. The attack
numbers are F1 scores where 0.5 means the attacker is guessing.

A model this small leaks mostly through correctness (m1): it is right on
members far more often than on non-members. The cloak pulls m1 back toward
0.5, but the entropy attacks, already near chance, overshoot below it,
since cloaked members now look *less* confident than non-members. That
overshoot is what the tuner (``defense="tune"``) trades off at desk scale.

For the desk-scale version (4,000 samples, CNN, tuner) see the README.
"""

import sys
import tempfile
from pathlib import Path

from augmixcloak.config import ExperimentConfig
from augmixcloak.datasets import write_garment_idx
from augmixcloak.experiment import run_experiment

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="augmix-demo-"))
write_garment_idx(work / "data", 80, seed=5)

cfg = ExperimentConfig(
    dataset=str(work / "data"),
    output_dir=str(work / "out"),
    train_size=400,
    n_participants=4,
    topology="ring",
    rounds=4,
    epochs=8,
    arch="mlp",
    eval_members=100,
    eval_nonmembers=100,
    k_shadows=1,
    defense={"n": [0, 1], "w": [0.7, 0.3], "alpha": 0.9},  # the gentlest grid point
    dataset_name="toy",
    seed=3,
).validate()

result = run_experiment(cfg)
for rep in (result.undefended, result.defended):
    f1 = " ".join(f"{x:.3f}" for x in rep.f1_vector)
    print(f"defense={rep.defense:<3}  Acc1={rep.acc_train:.3f}  Acc2={rep.acc_test:.3f}  "
          f"F1[binary m1 m2 m3]={f1}  mean|F1-0.5|={rep.deviation:.3f}")

print()
print((work / "out" / "report.csv").read_text())
print(f"outputs in {work / 'out'}")
