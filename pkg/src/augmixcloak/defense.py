"""The defended answer path and the confidence-clipping baseline.

A query image is hashed and looked up across the network. Images that match a
training hash are augmented with hash-selected operators and blended with the
hash-selected class reconstruction before reaching the model; all other images
go to the model untouched.
"""

from dataclasses import dataclass, field

import numpy as np

from .augmentation import AugIntensity, apply_augmentations, derive_aug_key, derive_aug_num, select_augmentations
from .classifier import ModelParams, predict, predict_batch
from .dfl import membership_query
from .imaging import Normalizer
from .pca_fusion import PcaGallery, check_alpha, derive_pca_key, fuse
from .phash import compute_phash


@dataclass(frozen=True)
class DefenseConfig:
    intensity: AugIntensity = field(default_factory=lambda: AugIntensity((0, 1), (0.7, 0.3)))
    alpha: float = 0.8
    enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "alpha", check_alpha(self.alpha))

    def to_dict(self) -> dict:
        return {"n": list(self.intensity.n), "w": list(self.intensity.w), "alpha": self.alpha, "enabled": self.enabled}

    @classmethod
    def from_dict(cls, d: dict) -> "DefenseConfig":
        return cls(AugIntensity(d["n"], d["w"]), d["alpha"], d.get("enabled", True))


@dataclass(frozen=True)
class GatewayDecision:
    is_member_detected: bool
    aug_key: int | None = None
    aug_num: int | None = None
    pca_key: int | None = None
    ops: tuple = ()

    def to_dict(self) -> dict:
        return {
            "is_member_detected": self.is_member_detected,
            "aug_key": self.aug_key,
            "aug_num": self.aug_num,
            "pca_key": self.pca_key,
            "ops": list(self.ops),
        }


def transform_query(img: np.ndarray, h: int, detected: bool, cfg: DefenseConfig, gallery: PcaGallery):
    """Return the image the model should see, plus the audit record of what was done."""
    if not (detected and cfg.enabled):
        return img, GatewayDecision(bool(detected))
    aug_key = derive_aug_key(h)
    aug_num = derive_aug_num(h, cfg.intensity)
    ops = select_augmentations(aug_key, aug_num)
    pca_key = derive_pca_key(h, gallery.n_cls)
    fused = fuse(apply_augmentations(img, ops), gallery[pca_key], cfg.alpha)
    return fused, GatewayDecision(True, aug_key, aug_num, pca_key, tuple(op.name for op in ops))


def answer_query(topology, participants, entry_id: int, img: np.ndarray, cfg: DefenseConfig,
                 gallery: PcaGallery, normalizer: Normalizer, model: ModelParams | None = None):
    """Answer one query at participant ``entry_id`` with that participant's model."""
    model = participants[entry_id].model if model is None else model
    if gallery.n_cls != model.n_cls:
        raise ValueError(f"gallery has {gallery.n_cls} classes, model predicts {model.n_cls}")
    h = compute_phash(img)
    detected = membership_query(topology, participants, entry_id, h) if cfg.enabled else False
    seen, decision = transform_query(img, h, detected, cfg, gallery)
    return predict(model, normalizer.standardize(seen)), decision


class QueryBatch:
    """A fixed set of query images prepared for repeated defended evaluation.

    Hashes and network lookups do not depend on the defense parameters, so they
    are computed once; augmented images are cached per ``(image, aug_num)``.
    The images produced are exactly those :func:`transform_query` would produce.
    """

    def __init__(self, images, topology=None, participants=None, entry_id: int = 0, hashes=None, detected=None):
        self.images = np.asarray(images, dtype=np.float64)
        self.hashes = list(hashes) if hashes is not None else [compute_phash(img) for img in self.images]
        if detected is None:
            detected = [membership_query(topology, participants, entry_id, h) for h in self.hashes]
        self.detected = np.asarray(detected, dtype=bool)
        self._aug_cache = {}

    def __len__(self) -> int:
        return len(self.images)

    def _augmented(self, i: int, aug_num: int) -> np.ndarray:
        key = (i, aug_num)
        if key not in self._aug_cache:
            ops = select_augmentations(derive_aug_key(self.hashes[i]), aug_num)
            self._aug_cache[key] = apply_augmentations(self.images[i], ops)
        return self._aug_cache[key]

    def transformed(self, cfg: DefenseConfig | None, gallery: PcaGallery | None = None) -> np.ndarray:
        if cfg is None or not cfg.enabled:
            return self.images
        out = self.images.copy()
        for i in np.flatnonzero(self.detected):
            h = self.hashes[i]
            aug = self._augmented(i, derive_aug_num(h, cfg.intensity))
            out[i] = fuse(aug, gallery[derive_pca_key(h, gallery.n_cls)], cfg.alpha)
        return out

    def predict(self, model: ModelParams, normalizer: Normalizer, cfg: DefenseConfig | None = None,
                gallery: PcaGallery | None = None) -> np.ndarray:
        return predict_batch(model, normalizer(self.transformed(cfg, gallery)))


def clip_confidence(p, max_conf: float) -> np.ndarray:
    """Cap the top probability at ``max_conf``; the rest is rescaled proportionally."""
    p = np.asarray(p, dtype=np.float64)
    n_cls = p.shape[-1]
    if not 1.0 / n_cls <= max_conf < 1.0:
        raise ValueError(f"max_conf must lie in [1/{n_cls}, 1), got {max_conf}")
    if p.ndim == 2:
        return np.stack([clip_confidence(row, max_conf) for row in p])
    out = p.copy()
    capped = np.zeros(n_cls, dtype=bool)
    # rescaling can lift a runner-up above the cap when max_conf < 0.5; repeat until none exceeds it
    while out[~capped].size and out[~capped].max() > max_conf:
        free = np.flatnonzero(~capped)
        top = free[np.argmax(out[free])]
        capped[top] = True
        out[top] = max_conf
        free = np.flatnonzero(~capped)
        if free.size == 0:
            break  # max_conf is 1/n_cls up to rounding: the result is uniform
        budget = 1.0 - max_conf * capped.sum()
        mass = out[free].sum()
        if mass <= 0.0:
            # nothing left to scale: spread the freed mass evenly
            out[free] = budget / len(free)
        else:
            out[free] *= budget / mass
    return out
