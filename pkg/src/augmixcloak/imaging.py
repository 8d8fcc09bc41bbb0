"""Image representation and the low-level deterministic transforms.

An image is a ``numpy.ndarray`` of shape ``(H, W, C)`` with ``C`` in ``{1, 3}``
and float values in ``[0, 1]``. Byte images are divided by 255 on ingestion
(see :func:`as_image`).
"""

from dataclasses import dataclass

import numpy as np

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class InvalidImageError(ValueError):
    pass


def as_image(data) -> np.ndarray:
    """Coerce a pixel buffer to the canonical float ``(H, W, C)`` layout.

    uint8 input is scaled by 1/255; 2-D input gains a singleton channel axis.
    """
    arr = np.asarray(data)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    else:
        arr = arr.astype(np.float64, copy=False)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    check_image(arr)
    return arr


def check_image(img: np.ndarray) -> None:
    if not isinstance(img, np.ndarray) or img.ndim != 3:
        raise InvalidImageError(f"expected an (H, W, C) array, got {getattr(img, 'shape', type(img))}")
    if img.shape[2] not in (1, 3):
        raise InvalidImageError(f"channel count must be 1 or 3, got {img.shape[2]}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise InvalidImageError(f"empty image of shape {img.shape}")


def to_grayscale(img: np.ndarray) -> np.ndarray:
    check_image(img)
    if img.shape[2] == 1:
        return img
    gray = img @ LUMA_WEIGHTS
    return np.clip(gray, 0.0, 1.0)[:, :, None]


def _axis_coords(n_in: int, n_out: int) -> np.ndarray:
    # corner-aligned: first/last output samples sit exactly on first/last input pixels
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear lookup at fractional coordinates with edge replication.

    ``ys`` and ``xs`` are broadcastable arrays of source row/column positions.
    Returns an array of shape ``ys.shape + (C,)``.
    """
    h, w = img.shape[:2]
    ys = np.clip(ys, 0.0, h - 1)
    xs = np.clip(xs, 0.0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    check_image(img)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    h, w = img.shape[:2]
    if (out_h, out_w) == (h, w):
        return img.copy()
    ys = _axis_coords(h, out_h)[:, None]
    xs = _axis_coords(w, out_w)[None, :]
    out = sample_bilinear(img, ys, xs)
    # convex weights keep the source range; clip only guards rounding
    return np.clip(out, img.min(), img.max())


@dataclass(frozen=True)
class StandardizedImage:
    """Per-channel standardized pixels plus the statistics that produced them."""

    data: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def invert(self) -> np.ndarray:
        return self.data * self.stds + self.means


def _channel_stats(values, channels: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(values, dtype=np.float64).ravel(), (channels,))
    if arr.shape != (channels,):
        raise ValueError(f"{name} must have one entry per channel")
    return arr.copy()


def standardize(img: np.ndarray, means, stds) -> StandardizedImage:
    check_image(img)
    c = img.shape[2]
    means = _channel_stats(means, c, "means")
    stds = _channel_stats(stds, c, "stds")
    if np.any(stds <= 0):
        raise ValueError("standard deviations must be strictly positive")
    return StandardizedImage((img - means) / stds, means, stds)


@dataclass(frozen=True)
class Normalizer:
    """Dataset-level channel statistics, applied to single images or batches."""

    means: np.ndarray
    stds: np.ndarray

    @classmethod
    def fit(cls, images: np.ndarray) -> "Normalizer":
        images = np.asarray(images, dtype=np.float64)
        means = images.mean(axis=(0, 1, 2))
        stds = images.std(axis=(0, 1, 2))
        stds = np.where(stds > 0, stds, 1.0)
        return cls(means, stds)

    def __call__(self, images: np.ndarray) -> np.ndarray:
        return (np.asarray(images, dtype=np.float64) - self.means) / self.stds

    def standardize(self, img: np.ndarray) -> StandardizedImage:
        return standardize(img, self.means, self.stds)

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "stds": self.stds.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.asarray(d["means"], dtype=np.float64), np.asarray(d["stds"], dtype=np.float64))
