"""Deterministic augmentation operators and hash-keyed operator selection.

Every operator has fixed parameters so that a given query image always maps
to the same augmented image. The registry order is a stability contract: the
hash-derived key indexes into it.
"""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .imaging import check_image, resize_bilinear, sample_bilinear, to_grayscale

AUG_KEY_MODULUS = 12
AUG_NUM_MODULUS = 1000

# Fixed operator parameters, kept in one place.
ROTATION_DEG = 15.0
TRANSLATE_FRAC = 0.10
AFFINE_ROTATION_DEG = -10.0
AFFINE_SCALE = 0.9
AFFINE_SHEAR_DEG = 5.0
CROP_FRAC = 0.80
PERSPECTIVE_FRAC = 0.10
BLUR_SIGMA = 1.0
SHARPEN_AMOUNT = 1.0
POSTERIZE_BITS = 4
EQUALIZE_BINS = 256


@dataclass(frozen=True)
class AugmentationOp:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, img: np.ndarray) -> np.ndarray:
        return self.fn(img)

    def __repr__(self) -> str:
        return f"AugmentationOp({self.name})"


def _warp(img: np.ndarray, inverse: np.ndarray) -> np.ndarray:
    """Resample through a 3x3 output->input map in centered pixel coordinates."""
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = np.stack([xx.ravel() - cx, yy.ravel() - cy, np.ones(h * w)])
    src = inverse @ pts
    xs = src[0] / src[2] + cx
    ys = src[1] / src[2] + cy
    out = sample_bilinear(img, ys.reshape(h, w), xs.reshape(h, w))
    return np.clip(out, 0.0, 1.0)


def _rotation(deg: float) -> np.ndarray:
    # positive angle turns the content counter-clockwise on screen (y axis points down)
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def horizontal_flip(img):
    return img[:, ::-1].copy()


def rotation(img):
    return _warp(img, np.linalg.inv(_rotation(ROTATION_DEG)))


def affine_translate(img):
    h, w = img.shape[:2]
    forward = np.array([[1.0, 0.0, TRANSLATE_FRAC * w], [0.0, 1.0, TRANSLATE_FRAC * h], [0.0, 0.0, 1.0]])
    return _warp(img, np.linalg.inv(forward))


def affine(img):
    shear = np.array([[1.0, np.tan(np.deg2rad(AFFINE_SHEAR_DEG)), 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    scale = np.diag([AFFINE_SCALE, AFFINE_SCALE, 1.0])
    forward = _rotation(AFFINE_ROTATION_DEG) @ shear @ scale
    return _warp(img, np.linalg.inv(forward))


def center_crop(img):
    h, w = img.shape[:2]
    ch, cw = max(1, int(round(h * CROP_FRAC))), max(1, int(round(w * CROP_FRAC)))
    top, left = (h - ch) // 2, (w - cw) // 2
    return resize_bilinear(img[top:top + ch, left:left + cw], h, w)


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 projective map sending the four ``src`` points onto ``dst``."""
    rows, rhs = [], []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.extend([u, v])
    p = np.linalg.solve(np.array(rows, dtype=np.float64), np.array(rhs, dtype=np.float64))
    return np.append(p, 1.0).reshape(3, 3)


def perspective(img):
    h, w = img.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    corners = np.array([[-cx, -cy], [cx, -cy], [cx, cy], [-cx, cy]])
    moved = corners.copy()
    # top-left and top-right corners pulled toward the center
    moved[:2] *= 1.0 - PERSPECTIVE_FRAC
    # output->input: map the displaced quadrilateral back onto the full frame
    return _warp(img, _homography(moved, corners))


def equalize(img):
    out = np.empty_like(img)
    for ch in range(img.shape[2]):
        levels = np.clip(np.floor(img[:, :, ch] * (EQUALIZE_BINS - 1) + 0.5), 0, EQUALIZE_BINS - 1).astype(np.intp)
        hist = np.bincount(levels.ravel(), minlength=EQUALIZE_BINS)
        cdf = np.cumsum(hist)
        cdf_min = cdf[hist > 0][0]
        total = levels.size
        if total == cdf_min:
            out[:, :, ch] = img[:, :, ch]
            continue
        lut = np.clip((cdf - cdf_min) / (total - cdf_min), 0.0, 1.0)
        out[:, :, ch] = lut[levels]
    return out


def _gauss_kernel(sigma: float) -> np.ndarray:
    k = np.exp(-np.array([-1.0, 0.0, 1.0]) ** 2 / (2 * sigma**2))
    return k / k.sum()


def gaussian_blur(img):
    k = _gauss_kernel(BLUR_SIGMA)
    p = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    rows = k[0] * p[:-2] + k[1] * p[1:-1] + k[2] * p[2:]
    return k[0] * rows[:, :-2] + k[1] * rows[:, 1:-1] + k[2] * rows[:, 2:]


def grayscale(img):
    return np.repeat(to_grayscale(img), img.shape[2], axis=2)


def sharpening(img):
    return np.clip(img + SHARPEN_AMOUNT * (img - gaussian_blur(img)), 0.0, 1.0)


def posterize(img):
    mask = (0xFF << (8 - POSTERIZE_BITS)) & 0xFF
    levels = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 1e-9).astype(np.uint16)
    return (levels & mask).astype(np.float64) / 255.0


_CENTER_CROP = AugmentationOp("CenterCrop", center_crop)

REGISTRY: tuple = (
    AugmentationOp("HorizontalFlip", horizontal_flip),
    AugmentationOp("Rotation", rotation),
    AugmentationOp("AffineTranslate", affine_translate),
    AugmentationOp("Affine", affine),
    _CENTER_CROP,
    AugmentationOp("Perspective", perspective),
    AugmentationOp("Equalize", equalize),
    _CENTER_CROP,
    AugmentationOp("GaussianBlur", gaussian_blur),
    AugmentationOp("Grayscale", grayscale),
    AugmentationOp("Sharpening", sharpening),
    AugmentationOp("Posterize", posterize),
)
assert len(REGISTRY) == AUG_KEY_MODULUS


@dataclass(frozen=True)
class AugIntensity:
    """Distribution over augmentation counts: count ``n[k]`` with probability ``w[k]``."""

    n: tuple
    w: tuple

    def __post_init__(self):
        n = tuple(int(x) for x in self.n)
        w = tuple(float(x) for x in self.w)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "w", w)
        if not n or len(n) != len(w):
            raise ValueError("n and w must be non-empty and of equal length")
        if any(x < 0 for x in n):
            raise ValueError("augmentation counts must be non-negative")
        if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ValueError(f"weights must be non-negative and sum to 1, got {w}")

    @property
    def expected_count(self) -> float:
        return float(sum(a * b for a, b in zip(self.n, self.w)))

    def to_dict(self) -> dict:
        return {"n": list(self.n), "w": list(self.w)}

    def __str__(self) -> str:
        return f"n={list(self.n)} w={[round(x, 6) for x in self.w]}"


def derive_aug_key(h: int) -> int:
    return int(h) % AUG_KEY_MODULUS


def derive_aug_num(h: int, intensity: AugIntensity) -> int:
    u = (int(h) % AUG_NUM_MODULUS) / AUG_NUM_MODULUS
    cumulative = 0.0
    for count, weight in zip(intensity.n, intensity.w):
        cumulative += weight
        if u < cumulative:
            return count
    # float shortfall in the cumulative sum: fall back to the last count with weight
    for count, weight in zip(reversed(intensity.n), reversed(intensity.w)):
        if weight > 0:
            return count
    return intensity.n[-1]


def select_augmentations(aug_key: int, aug_num: int) -> list:
    if not 0 <= aug_key < AUG_KEY_MODULUS:
        raise ValueError(f"aug_key must be in [0, {AUG_KEY_MODULUS}), got {aug_key}")
    if not 0 <= aug_num <= AUG_KEY_MODULUS:
        raise ValueError(f"aug_num must be in [0, {AUG_KEY_MODULUS}], got {aug_num}")
    return [REGISTRY[(aug_key + i) % AUG_KEY_MODULUS] for i in range(aug_num)]


def apply_augmentations(img: np.ndarray, ops: Sequence[AugmentationOp]) -> np.ndarray:
    check_image(img)
    out = img
    for op in ops:
        out = op(out)
    return out if ops else img.copy()


def operator_names() -> list:
    return [op.name for op in REGISTRY]
