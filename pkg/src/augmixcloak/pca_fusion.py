"""Per-class first-principal-component reconstructions and hash-keyed fusion."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import check_image

POWER_MAX_ITER = 1000
POWER_TOL = 1e-10


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class ClassMatrix:
    X: np.ndarray  # (n, H*W*C), rows are row-major flattened images
    class_id: int
    shape: tuple  # (H, W, C)


def build_class_matrix(images, class_id: int = 0) -> ClassMatrix:
    images = [np.asarray(img, dtype=np.float64) for img in images]
    if len(images) < 2:
        raise ValueError(f"class {class_id}: need at least 2 images, got {len(images)}")
    shape = images[0].shape
    for img in images:
        check_image(img)
        if img.shape != shape:
            raise ValueError(f"class {class_id}: image shape {img.shape} != {shape}")
    X = np.stack([img.reshape(-1) for img in images])
    return ClassMatrix(X, class_id, tuple(shape))


def first_principal_component(cm: ClassMatrix) -> np.ndarray:
    """Unit direction of maximum variance of the column-centered data.

    Power iteration runs on the n x n Gram matrix of the centered rows, started
    from the image of the all-ones direction, so results are reproducible.
    The sign is fixed so that the largest-magnitude entry is positive.
    """
    X = cm.X
    Xc = X - X.mean(axis=0)
    scale = np.abs(Xc).max()
    if scale <= 1e-12 * max(1.0, float(np.abs(X).max())):
        raise DegenerateDataError(f"class {cm.class_id}: all rows identical, no variance")
    Xc = Xc / scale
    gram = Xc @ Xc.T

    d = X.shape[1]
    u = Xc @ (np.ones(d) / np.sqrt(d))
    if np.linalg.norm(u) < 1e-12 * np.sqrt(X.shape[0]):
        # all-ones direction carries no variance; start from the highest-variance column
        u = Xc[:, int(np.argmax((Xc**2).sum(axis=0)))].copy()
    u /= np.linalg.norm(u)

    eig = float(u @ gram @ u)
    for _ in range(POWER_MAX_ITER):
        y = gram @ u
        norm = np.linalg.norm(y)
        if norm == 0.0:
            break
        u = y / norm
        new_eig = float(u @ gram @ u)
        if abs(new_eig - eig) <= POWER_TOL * abs(new_eig):
            eig = new_eig
            break
        eig = new_eig

    v = Xc.T @ u
    v /= np.linalg.norm(v)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return v


def reconstruct_class_image(cm: ClassMatrix, scalar_stats: bool = False) -> np.ndarray:
    """Scale the first component by the data spread, shift by the mean, clamp, reshape.

    Statistics are per-pixel columns by default (population std); with
    ``scalar_stats`` a single mean and std over all entries are used instead.
    """
    v1 = first_principal_component(cm)
    if scalar_stats:
        mu, sigma = cm.X.mean(), cm.X.std()
    else:
        mu, sigma = cm.X.mean(axis=0), cm.X.std(axis=0)
    m = np.clip(v1 * sigma + mu, 0.0, 1.0)
    return m.reshape(cm.shape)


def derive_pca_key(h: int, n_cls: int) -> int:
    if n_cls < 1:
        raise ValueError(f"n_cls must be >= 1, got {n_cls}")
    return int(h) % n_cls


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"fusion weight must lie in [0, 1], got {alpha}")
    return alpha


def fuse(aug: np.ndarray, pca: np.ndarray, alpha: float) -> np.ndarray:
    alpha = check_alpha(alpha)
    if aug.shape != pca.shape:
        raise ValueError(f"cannot fuse shapes {aug.shape} and {pca.shape}")
    if alpha == 1.0:
        return aug.copy()
    if alpha == 0.0:
        return pca.copy()
    return alpha * aug + (1.0 - alpha) * pca


@dataclass(frozen=True)
class PcaGallery:
    images: tuple  # one reconstruction per class id

    @property
    def n_cls(self) -> int:
        return len(self.images)

    def __getitem__(self, class_id: int) -> np.ndarray:
        return self.images[class_id]

    def save(self, directory) -> Path:
        """Write one PNG per class plus ``manifest.json``; returns the manifest path."""
        from PIL import Image as PILImage

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {"n_cls": self.n_cls, "shape": list(self.images[0].shape), "classes": {}}
        for cid, img in enumerate(self.images):
            name = f"class_{cid:04d}.png"
            arr = np.round(img * 255.0).astype(np.uint8)
            PILImage.fromarray(arr[:, :, 0] if arr.shape[2] == 1 else arr).save(directory / name)
            np.save(directory / f"class_{cid:04d}.npy", img)
            manifest["classes"][str(cid)] = name
        path = directory / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2))
        return path

    @classmethod
    def load(cls, directory) -> "PcaGallery":
        # the .npy twins keep full precision; the PNGs are for inspection
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        images = []
        for cid in range(manifest["n_cls"]):
            name = manifest["classes"][str(cid)]
            images.append(np.load(directory / name.replace(".png", ".npy")))
        return cls(tuple(images))


def build_gallery(images, labels, n_cls: int, scalar_stats: bool = False) -> PcaGallery:
    """One reconstruction per class; any class with fewer than two samples is an error."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    out = []
    for cid in range(n_cls):
        members = images[labels == cid]
        if len(members) < 2:
            raise ValueError(f"class {cid} has {len(members)} samples; PCA gallery needs at least 2")
        out.append(reconstruct_class_image(build_class_matrix(list(members), cid), scalar_stats))
    return PcaGallery(tuple(out))
