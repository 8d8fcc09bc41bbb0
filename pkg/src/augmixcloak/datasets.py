"""Dataset ingestion (IDX and class-directory formats), IID partitioning, and a
synthetic garment-silhouette dataset shaped like Fashion-MNIST."""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import ImageDraw, ImageFilter

from .imaging import as_image

IDX_DTYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")


class IngestionError(ValueError):
    pass


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, H, W, C) float in [0, 1]
    labels: np.ndarray
    n_cls: int
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if len(self.images) != len(self.labels):
            raise IngestionError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_cls):
            raise IngestionError(f"labels must lie in [0, {self.n_cls}), got max {self.labels.max()}")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx, split: str | None = None) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return LabeledDataset(self.images[idx], self.labels[idx], self.n_cls, split or self.split)


# ---------------------------------------------------------------- IDX


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    path = Path(path)
    try:
        with _open(path) as fh:
            raw = fh.read()
    except OSError as exc:
        raise IngestionError(f"{path}: cannot read ({exc})") from exc
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] not in IDX_DTYPES:
        raise IngestionError(f"{path}: bad IDX magic {raw[:4].hex()}")
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IngestionError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = np.dtype(IDX_DTYPES[raw[2]])
    count = int(np.prod(dims)) if dims else 1
    if len(raw) - header < count * dtype.itemsize:
        raise IngestionError(f"{path}: truncated IDX payload, expected {count} values of dims {dims}")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    codes = {np.dtype(np.uint8): 0x08, np.dtype(np.int8): 0x09}
    if array.dtype not in codes:
        raise ValueError(f"write_idx supports uint8/int8, got {array.dtype}")
    path = Path(path)
    payload = bytes([0, 0, codes[array.dtype], array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    payload += array.tobytes()
    if path.suffix == ".gz":
        # fixed mtime and no embedded name keep the compressed bytes reproducible
        with open(path, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def _idx_pair(path: Path):
    """Resolve ``path`` (a directory or an images file) to (images file, labels file)."""
    if path.is_dir():
        imgs = sorted(p for p in path.iterdir() if "images" in p.name and "idx3" in p.name)
        labs = sorted(p for p in path.iterdir() if "labels" in p.name and "idx1" in p.name)
        if len(imgs) != 1 or len(labs) != 1:
            raise IngestionError(f"{path}: expected exactly one *images*idx3* and one *labels*idx1* file")
        return imgs[0], labs[0]
    labels = path.with_name(path.name.replace("images", "labels").replace("idx3", "idx1"))
    if labels == path or not labels.exists():
        raise IngestionError(f"{path}: no matching labels file")
    return path, labels


def load_idx(path, n_cls: int | None = None, split: str = "train") -> LabeledDataset:
    img_path, lab_path = _idx_pair(Path(path))
    images = read_idx(img_path)
    labels = read_idx(lab_path)
    if images.ndim not in (3, 4):
        raise IngestionError(f"{img_path}: expected 3-D or 4-D image array, got dims {images.shape}")
    if labels.ndim != 1 or len(labels) != len(images):
        raise IngestionError(f"{lab_path}: {len(labels)} labels for {len(images)} images")
    if images.ndim == 3:
        images = images[..., None]
    data = images.astype(np.float64) / 255.0 if images.dtype == np.uint8 else images.astype(np.float64)
    labels = labels.astype(np.intp)
    n_cls = n_cls or int(labels.max()) + 1
    try:
        return LabeledDataset(data, labels, n_cls, split)
    except IngestionError as exc:
        raise IngestionError(f"{lab_path}: {exc}") from exc


def load_image_dir(path, split: str = "train") -> LabeledDataset:
    """One subdirectory per class (sorted names give class ids), PNG/PPM/PGM files inside."""
    root = Path(path)
    if not root.is_dir():
        raise IngestionError(f"{root}: not a directory")
    classes = sorted(p for p in root.iterdir() if p.is_dir())
    if not classes:
        raise IngestionError(f"{root}: no class subdirectories")
    images, labels = [], []
    for cid, cdir in enumerate(classes):
        for f in sorted(cdir.iterdir()):
            if f.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            try:
                with PILImage.open(f) as im:
                    arr = np.asarray(im.convert("L" if im.mode in ("L", "1", "I;16", "P") else "RGB"))
            except OSError as exc:
                raise IngestionError(f"{f}: unreadable image ({exc})") from exc
            images.append(as_image(arr))
            labels.append(cid)
    if not images:
        raise IngestionError(f"{root}: no images found")
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise IngestionError(f"{root}: mixed image shapes {sorted(shapes)}")
    return LabeledDataset(np.stack(images), np.array(labels), len(classes), split)


def load_dataset(path, fmt: str = "idx", split: str = "train", n_cls: int | None = None) -> LabeledDataset:
    if fmt == "idx":
        return load_idx(path, n_cls, split)
    if fmt == "image-dir":
        return load_image_dir(path, split)
    raise IngestionError(f"unknown dataset format {fmt!r}")


# ---------------------------------------------------------------- partitioning


def partition_indices(ds: LabeledDataset, n: int, seed: int) -> list:
    """Per class: seeded shuffle, then deal round-robin to ``n`` partitions (sorted index arrays)."""
    if n < 1:
        raise ValueError("need at least one partition")
    rng = np.random.default_rng(seed)
    buckets = [[] for _ in range(n)]
    for c in range(ds.n_cls):
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[rng.permutation(len(idx))]
        for k, i in enumerate(idx):
            buckets[k % n].append(i)
    return [np.sort(np.array(b, dtype=np.intp)) for b in buckets]


def partition_iid(ds: LabeledDataset, n: int, seed: int) -> list:
    return [ds.subset(idx) for idx in partition_indices(ds, n, seed)]


# ---------------------------------------------------------------- synthetic garments

GARMENT_CLASSES = ("tshirt", "trouser", "pullover", "dress", "coat", "sandal", "shirt", "sneaker", "bag", "boot")

# polygons on a unit canvas, (x, y) with y pointing down
_SHAPES = {
    "tshirt": [[(.30, .15), (.42, .12), (.50, .17), (.58, .12), (.70, .15), (.88, .32), (.78, .42), (.70, .35),
                (.70, .88), (.30, .88), (.30, .35), (.22, .42), (.12, .32)]],
    "trouser": [[(.33, .10), (.67, .10), (.70, .90), (.56, .90), (.50, .35), (.44, .90), (.30, .90)]],
    "pullover": [[(.30, .14), (.42, .11), (.50, .15), (.58, .11), (.70, .14), (.86, .30), (.92, .85), (.80, .86),
                  (.72, .45), (.70, .86), (.30, .86), (.28, .45), (.20, .86), (.08, .85), (.14, .30)]],
    "dress": [[(.40, .10), (.60, .10), (.62, .35), (.80, .90), (.20, .90), (.38, .35)]],
    "coat": [[(.28, .10), (.44, .08), (.50, .20), (.56, .08), (.72, .10), (.88, .28), (.94, .90), (.82, .90),
              (.74, .45), (.74, .94), (.26, .94), (.26, .45), (.18, .90), (.06, .90), (.12, .28)]],
    "sandal": [[(.08, .62), (.30, .55), (.55, .60), (.92, .66), (.92, .74), (.08, .74)],
               [(.20, .56), (.30, .40), (.40, .58)], [(.50, .60), (.62, .44), (.72, .63)]],
    "shirt": [[(.30, .13), (.40, .10), (.50, .22), (.60, .10), (.70, .13), (.84, .28), (.88, .70), (.78, .71),
               (.72, .40), (.71, .88), (.29, .88), (.28, .40), (.22, .71), (.12, .70), (.16, .28)]],
    "sneaker": [[(.06, .70), (.14, .50), (.36, .46), (.52, .54), (.80, .58), (.94, .66), (.94, .78), (.06, .78)]],
    "bag": [[(.15, .38), (.85, .38), (.88, .88), (.12, .88)],
            [(.32, .38), (.36, .16), (.64, .16), (.68, .38), (.60, .38), (.58, .24), (.42, .24), (.40, .38)]],
    "boot": [[(.30, .12), (.62, .12), (.62, .52), (.92, .64), (.94, .84), (.10, .84), (.14, .60), (.30, .52)]],
}
# rendering nuisance parameters; together they set how hard the classes are to tell apart
POSE_DEGREES = 15.0
SILHOUETTE_JITTER = 0.06
PIXEL_NOISE = 0.15
OCCLUSION_P = 0.6
OCCLUSION_SIZE = (5, 13)

# darker interior strokes that separate look-alike classes
_DETAILS = {
    "coat": [[(.50, .22), (.50, .94)]],
    "shirt": [[(.50, .22), (.50, .88)], [(.44, .12), (.50, .22), (.56, .12)]],
    "sneaker": [[(.30, .60), (.60, .62)]],
    "boot": [[(.30, .70), (.90, .72)]],
}


def _render_garment(cls_name: str, rng: np.random.Generator, size: int) -> np.ndarray:
    scale = 4
    big = size * scale
    canvas = PILImage.new("L", (big, big), 0)
    draw = ImageDraw.Draw(canvas)
    angle = np.deg2rad(rng.uniform(-POSE_DEGREES, POSE_DEGREES))
    sx, sy = rng.uniform(0.75, 1.1), rng.uniform(0.75, 1.1)
    shear = rng.uniform(-0.15, 0.15)
    tx, ty = rng.uniform(-0.08, 0.08, 2)
    c, s = np.cos(angle), np.sin(angle)
    mat = np.array([[c, -s], [s, c]]) @ np.array([[sx, shear], [0.0, sy]])

    def place(poly):
        pts = np.array(poly) - 0.5
        pts = pts + rng.normal(0, SILHOUETTE_JITTER, pts.shape)
        pts = pts @ mat.T + 0.5 + [tx, ty]
        return [tuple(p) for p in (pts * big)]

    fill = int(rng.uniform(90, 255))
    for poly in _SHAPES[cls_name]:
        draw.polygon(place(poly), fill=fill)
    for line in _DETAILS.get(cls_name, []):
        draw.line(place(line), fill=int(fill * rng.uniform(0.1, 0.5)), width=scale)
    img = np.asarray(canvas.filter(ImageFilter.GaussianBlur(rng.uniform(1.0, 4.0))).resize((size, size), PILImage.BILINEAR),
                     dtype=np.float64) / 255.0
    # fabric texture: random stripes and speckle over the garment
    yy, xx = np.mgrid[0:size, 0:size]
    freq, phase, theta = rng.uniform(0.3, 1.5), rng.uniform(0, 2 * np.pi), rng.uniform(0, np.pi)
    stripes = 0.5 + 0.5 * np.sin(freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    texture = 1.0 - rng.uniform(0.0, 0.6) * stripes
    img = img * texture
    img = img + rng.normal(0, PIXEL_NOISE, img.shape) * (img > 0.02) + np.abs(rng.normal(0, 0.05, img.shape))
    # random occluding patch
    if rng.random() < OCCLUSION_P:
        h = rng.integers(*OCCLUSION_SIZE)
        y0, x0 = rng.integers(0, size - h, 2)
        img[y0:y0 + h, x0:x0 + h] *= rng.uniform(0.0, 0.5)
    return np.clip(img, 0.0, 1.0)


def synthesize_garments(n_per_class: int, seed: int = 0, size: int = 28):
    """Fashion-MNIST-like 28x28 grayscale garments: returns ``(uint8 images (N, size, size), labels)``.

    Samples are interleaved by class; every sample has its own pose, silhouette
    jitter, fabric texture, blur and noise, all drawn from ``seed``.
    """
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for _ in range(n_per_class):
        for cid, name in enumerate(GARMENT_CLASSES):
            images.append(np.round(_render_garment(name, rng, size) * 255).astype(np.uint8))
            labels.append(cid)
    return np.stack(images), np.array(labels, dtype=np.uint8)


def write_garment_idx(directory, n_per_class: int, seed: int = 0, prefix: str = "garments") -> tuple:
    """Write a synthetic garment set as an IDX pair; returns the (images, labels) paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images, labels = synthesize_garments(n_per_class, seed)
    img_path = directory / f"{prefix}-images-idx3-ubyte"
    lab_path = directory / f"{prefix}-labels-idx1-ubyte"
    write_idx(img_path, images)
    write_idx(lab_path, labels)
    return img_path, lab_path
