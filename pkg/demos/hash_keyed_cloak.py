"""
What the gateway does to a single query
=======================================

Walks one garment image through the defense: hash it, derive the
augmentation chain and the PCA class key from the hash, then blend.
Run it twice and every number is the same, because nothing here draws
from a random stream once the image is fixed.
"""

import numpy as np

from augmixcloak.augmentation import AugIntensity, apply_augmentations, derive_aug_key, derive_aug_num, select_augmentations
from augmixcloak.datasets import synthesize_garments
from augmixcloak.defense import DefenseConfig, transform_query
from augmixcloak.pca_fusion import build_gallery, derive_pca_key
from augmixcloak.phash import compute_phash

raw, labels = synthesize_garments(40, seed=7)
images = raw[..., None] / 255.0  # (N, 28, 28, 1) in [0, 1]
query = images[3]

# 64-bit perceptual hash; the top bit is the first DCT coefficient
h = compute_phash(query)
print(f"phash of sample 3: {h:016x} (label {labels[3]})")

# a gentle and a heavy intensity: weights over how many ops get chained
gentle = AugIntensity((0, 1), (0.7, 0.3))
heavy = AugIntensity((2, 3), (0.2, 0.8))
for name, intensity in (("gentle", gentle), ("heavy", heavy)):
    ops = select_augmentations(derive_aug_key(h), derive_aug_num(h, intensity))
    print(f"{name:>6}: E[#ops]={intensity.expected_count:.1f} -> {[op.name for op in ops]}")

# the same image always gets the same chain
ops = select_augmentations(derive_aug_key(h), derive_aug_num(h, heavy))
again = apply_augmentations(query.copy(), ops)
assert np.array_equal(apply_augmentations(query, ops), again)

# one PCA reconstruction per class, built from the images a participant holds
gallery = build_gallery(images, labels, 10)
print(f"pca_key = h mod 10 = {derive_pca_key(h, 10)}")

cfg = DefenseConfig(heavy, alpha=0.7)
seen, decision = transform_query(query, h, True, cfg, gallery)
print(f"member query -> {decision}")
print(f"pixels moved by the cloak: mean |diff| = {np.abs(seen - query).mean():.3f}")

# a hash nobody holds goes to the model untouched
seen, decision = transform_query(query, h, False, cfg, gallery)
print(f"non-member query untouched: {np.array_equal(seen, query)}")
