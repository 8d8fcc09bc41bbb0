"""Small numpy image classifiers: a two-conv CNN and an MLP, trained with plain SGD.

Parameters live in one flat vector so that models can be averaged and shipped
between participants without knowing the architecture.
"""

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ARCHITECTURES = ("cnn", "mlp")
CONV1_FILTERS = 16
CONV2_FILTERS = 32
MLP_HIDDEN = 64
CNN_HIDDEN = 128
KERNEL = 3
CHECKPOINT_MAGIC = b"AMCK"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.05
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError(f"invalid training config {self}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def _pooled(n: int) -> int:
    return n // 2


def build_layout(arch_id: str, input_shape, n_cls: int) -> list:
    """``[(name, shape, offset), ...]`` describing how the flat vector is sliced."""
    h, w, c = input_shape
    if arch_id == "cnn":
        h1, w1 = _pooled(h - KERNEL + 1), _pooled(w - KERNEL + 1)
        h2, w2 = _pooled(h1 - KERNEL + 1), _pooled(w1 - KERNEL + 1)
        if h2 < 1 or w2 < 1:
            raise ValueError(f"input {input_shape} too small for the cnn architecture")
        shapes = [
            ("conv1.w", (KERNEL, KERNEL, c, CONV1_FILTERS)),
            ("conv1.b", (CONV1_FILTERS,)),
            ("conv2.w", (KERNEL, KERNEL, CONV1_FILTERS, CONV2_FILTERS)),
            ("conv2.b", (CONV2_FILTERS,)),
            ("fc.w", (h2 * w2 * CONV2_FILTERS, CNN_HIDDEN)),
            ("fc.b", (CNN_HIDDEN,)),
            ("dense.w", (CNN_HIDDEN, n_cls)),
            ("dense.b", (n_cls,)),
        ]
    elif arch_id == "mlp":
        shapes = [
            ("hidden.w", (h * w * c, MLP_HIDDEN)),
            ("hidden.b", (MLP_HIDDEN,)),
            ("dense.w", (MLP_HIDDEN, n_cls)),
            ("dense.b", (n_cls,)),
        ]
    else:
        raise ValueError(f"unknown architecture {arch_id!r}; expected one of {ARCHITECTURES}")
    layout, offset = [], 0
    for name, shape in shapes:
        layout.append((name, shape, offset))
        offset += int(np.prod(shape))
    return layout


@dataclass(frozen=True)
class ModelParams:
    arch_id: str
    input_shape: tuple
    n_cls: int
    theta: np.ndarray

    def __post_init__(self):
        expected = self.size
        if self.theta.shape != (expected,):
            raise ValueError(f"theta has shape {self.theta.shape}, layout needs ({expected},)")

    @property
    def layout(self) -> list:
        return build_layout(self.arch_id, self.input_shape, self.n_cls)

    @property
    def size(self) -> int:
        name, shape, offset = self.layout[-1]
        return offset + int(np.prod(shape))

    def unpack(self, theta=None) -> dict:
        theta = self.theta if theta is None else theta
        return {name: theta[off:off + int(np.prod(shape))].reshape(shape) for name, shape, off in self.layout}

    def with_theta(self, theta: np.ndarray) -> "ModelParams":
        return replace(self, theta=np.asarray(theta, dtype=np.float64))

    def compatible(self, other: "ModelParams") -> bool:
        return (self.arch_id, tuple(self.input_shape), self.n_cls) == (other.arch_id, tuple(other.input_shape), other.n_cls)


def init_model(arch_id: str, n_cls: int, seed: int, input_shape=(28, 28, 1)) -> ModelParams:
    """He-style uniform fan-in initialization; biases start at zero."""
    input_shape = tuple(int(s) for s in input_shape)
    layout = build_layout(arch_id, input_shape, n_cls)
    rng = np.random.default_rng(seed)
    size = layout[-1][2] + int(np.prod(layout[-1][1]))
    theta = np.zeros(size)
    for name, shape, off in layout:
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[:-1]))
            bound = np.sqrt(6.0 / fan_in)
            theta[off:off + int(np.prod(shape))] = rng.uniform(-bound, bound, int(np.prod(shape)))
    return ModelParams(arch_id, input_shape, n_cls, theta)


# ---------------------------------------------------------------- layers


def _as_dtype(theta, dtype):
    return theta if theta.dtype == dtype else theta.astype(dtype)


def _conv_forward(x, w, b):
    k = w.shape[0]
    n, h, wd, c = x.shape
    ho, wo = h - k + 1, wd - k + 1
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # (n, ho, wo, c, k, k)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)
    out = cols @ w.reshape(k * k * c, -1) + b
    return out.reshape(n, ho, wo, -1), cols


def _conv_backward(dout, cols, x_shape, w):
    k = w.shape[0]
    n, h, wd, c = x_shape
    f = w.shape[-1]
    d2 = dout.reshape(-1, f)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(-1, f).T).reshape(n, h - k + 1, wd - k + 1, k, k, c)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    ho, wo = h - k + 1, wd - k + 1
    for i in range(k):
        for j in range(k):
            dx[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    return dx, dw, db


def _pool_forward(x):
    n, h, w, f = x.shape
    h2, w2 = h // 2, w // 2
    blocks = x[:, :h2 * 2, :w2 * 2].reshape(n, h2, 2, w2, 2, f).transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, f, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout, arg, x_shape):
    n, h, w, f = x_shape
    h2, w2 = h // 2, w // 2
    blocks = np.zeros((n, h2, w2, f, 4), dtype=dout.dtype)
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :h2 * 2, :w2 * 2] = blocks.reshape(n, h2, w2, f, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h2 * 2, w2 * 2, f)
    return dx


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(model: ModelParams, x: np.ndarray, theta=None, keep: bool = False):
    p = model.unpack(_as_dtype(model.theta if theta is None else theta, x.dtype))
    cache = {}
    if model.arch_id == "cnn":
        z1, cols1 = _conv_forward(x, p["conv1.w"], p["conv1.b"])
        a1 = np.maximum(z1, 0.0)
        p1, arg1 = _pool_forward(a1)
        z2, cols2 = _conv_forward(p1, p["conv2.w"], p["conv2.b"])
        a2 = np.maximum(z2, 0.0)
        p2, arg2 = _pool_forward(a2)
        flat = p2.reshape(len(x), -1)
        zf = flat @ p["fc.w"] + p["fc.b"]
        af = np.maximum(zf, 0.0)
        logits = af @ p["dense.w"] + p["dense.b"]
        if keep:
            cache = dict(x=x, z1=z1, cols1=cols1, a1=a1, arg1=arg1, p1=p1, z2=z2, cols2=cols2,
                         a2=a2, arg2=arg2, p2=p2, flat=flat, zf=zf, af=af)
    else:
        flat = x.reshape(len(x), -1)
        zh = flat @ p["hidden.w"] + p["hidden.b"]
        ah = np.maximum(zh, 0.0)
        logits = ah @ p["dense.w"] + p["dense.b"]
        if keep:
            cache = dict(flat=flat, zh=zh, ah=ah)
    return logits, cache


def _backward(model: ModelParams, dlogits: np.ndarray, cache: dict, theta=None) -> np.ndarray:
    p = model.unpack(_as_dtype(model.theta if theta is None else theta, dlogits.dtype))
    g = {}
    if model.arch_id == "cnn":
        g["dense.w"] = cache["af"].T @ dlogits
        g["dense.b"] = dlogits.sum(axis=0)
        dzf = (dlogits @ p["dense.w"].T) * (cache["zf"] > 0)
        g["fc.w"] = cache["flat"].T @ dzf
        g["fc.b"] = dzf.sum(axis=0)
        dp2 = (dzf @ p["fc.w"].T).reshape(cache["p2"].shape)
        da2 = _pool_backward(dp2, cache["arg2"], cache["a2"].shape)
        dz2 = da2 * (cache["z2"] > 0)
        dp1, g["conv2.w"], g["conv2.b"] = _conv_backward(dz2, cache["cols2"], cache["p1"].shape, p["conv2.w"])
        da1 = _pool_backward(dp1, cache["arg1"], cache["a1"].shape)
        dz1 = da1 * (cache["z1"] > 0)
        _, g["conv1.w"], g["conv1.b"] = _conv_backward(dz1, cache["cols1"], cache["x"].shape, p["conv1.w"])
    else:
        g["dense.w"] = cache["ah"].T @ dlogits
        g["dense.b"] = dlogits.sum(axis=0)
        dzh = (dlogits @ p["dense.w"].T) * (cache["zh"] > 0)
        g["hidden.w"] = cache["flat"].T @ dzh
        g["hidden.b"] = dzh.sum(axis=0)
    return np.concatenate([g[name].ravel() for name, _, _ in model.layout])


def _check_input(model: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype != np.float32:
        x = x.astype(np.float64, copy=False)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != tuple(model.input_shape):
        raise ValueError(f"input shape {x.shape[1:]} does not match model input {tuple(model.input_shape)}")
    return x


def loss_and_grad(model: ModelParams, x: np.ndarray, y: np.ndarray, weight_decay: float = 0.0, theta=None):
    """Mean cross-entropy plus ``weight_decay/2 * |theta|^2`` and its gradient."""
    theta = model.theta if theta is None else theta
    x = _check_input(model, x)
    y = np.asarray(y, dtype=np.intp)
    logits, cache = _forward(model, x, theta, keep=True)
    probs = softmax(logits.astype(np.float64))
    n = len(x)
    loss = -np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-300))) + 0.5 * weight_decay * float(theta @ theta)
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits = (dlogits / n).astype(x.dtype)
    grad = _backward(model, dlogits, cache, theta) + weight_decay * theta
    return loss, grad


def predict_batch(model: ModelParams, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    x = _check_input(model, x)
    out = [softmax(_forward(model, x[i:i + batch_size])[0].astype(np.float64)) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.n_cls))


def predict(model: ModelParams, img) -> np.ndarray:
    """Class probabilities for one standardized image (array or ``StandardizedImage``)."""
    data = getattr(img, "data", img)
    return predict_batch(model, data)[0]


def accuracy(model: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    if len(x) == 0:
        return float("nan")
    return float(np.mean(predict_batch(model, x).argmax(axis=1) == np.asarray(y)))


def train_local(model: ModelParams, x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> ModelParams:
    """Mini-batch SGD on cross-entropy with L2 penalty; the shuffle stream comes from ``cfg.seed``."""
    if len(x) == 0:
        raise ValueError("cannot train on an empty dataset")
    x = _check_input(model, x)
    y = np.asarray(y, dtype=np.intp)
    theta = model.theta.copy()
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _, grad = loss_and_grad(model, x[batch], y[batch], cfg.weight_decay, theta)
            theta -= cfg.learning_rate * grad
    return model.with_theta(theta)


def average_models(models) -> ModelParams:
    models = list(models)
    if not models:
        raise ValueError("need at least one model to average")
    first = models[0]
    for m in models[1:]:
        if not first.compatible(m):
            raise ValueError(f"cannot average {m.arch_id}{m.input_shape} with {first.arch_id}{first.input_shape}")
    if len(models) == 1:
        return first
    # sorting the summands makes the float result independent of argument order
    stacked = np.sort(np.stack([m.theta for m in models]), axis=0)
    return first.with_theta(stacked.sum(axis=0) / len(models))


def save_checkpoint(model: ModelParams, path) -> None:
    header = json.dumps({
        "arch_id": model.arch_id,
        "input_shape": list(model.input_shape),
        "n_cls": model.n_cls,
        "layout": [[name, list(shape), off] for name, shape, off in model.layout],
    }).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(model.theta.astype("<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + hlen])
    theta = np.frombuffer(raw[8 + hlen:], dtype="<f4").astype(np.float64)
    return ModelParams(header["arch_id"], tuple(header["input_shape"]), header["n_cls"], theta)
