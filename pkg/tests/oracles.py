"""Independent brute-force reference implementations used by the tests.

None of these share code paths with the package beyond the image layout.
"""

import math

import numpy as np


def naive_dct2(block):
    """Orthonormal DCT-II by the O(N^4) double sum."""
    n = len(block)
    out = [[0.0] * n for _ in range(n)]
    for u in range(n):
        cu = math.sqrt(1.0 / n) if u == 0 else math.sqrt(2.0 / n)
        for v in range(n):
            cv = math.sqrt(1.0 / n) if v == 0 else math.sqrt(2.0 / n)
            s = 0.0
            for x in range(n):
                cx = math.cos((2 * x + 1) * u * math.pi / (2 * n))
                row = block[x]
                for y in range(n):
                    s += row[y] * cx * math.cos((2 * y + 1) * v * math.pi / (2 * n))
            out[u][v] = cu * cv * s
    return np.array(out)


def dct2_full_sum(block):
    """The same O(N^4) double sum, evaluated as one contraction over an explicit
    (u, v, x, y) cosine tensor. Used where the pure-Python loop is too slow."""
    block = np.asarray(block, dtype=np.float64)
    n = block.shape[0]
    idx = np.arange(n)
    cos = np.cos((2 * idx[None, :] + 1) * idx[:, None] * np.pi / (2 * n))  # cos[u, x]
    scale = np.where(idx == 0, math.sqrt(1.0 / n), math.sqrt(2.0 / n))
    basis = (scale[:, None, None, None] * scale[None, :, None, None]
             * cos[:, None, :, None] * cos[None, :, None, :])  # basis[u, v, x, y]
    return np.tensordot(basis, block, axes=([2, 3], [0, 1]))


def naive_resize(img, out_h, out_w):
    """Corner-aligned bilinear resize, pixel by pixel."""
    h, w, c = img.shape
    out = np.zeros((out_h, out_w, c))
    for i in range(out_h):
        y = (h - 1) / 2.0 if out_h == 1 else i * (h - 1) / (out_h - 1)
        y0 = int(math.floor(y))
        y1 = min(y0 + 1, h - 1)
        fy = y - y0
        for j in range(out_w):
            x = (w - 1) / 2.0 if out_w == 1 else j * (w - 1) / (out_w - 1)
            x0 = int(math.floor(x))
            x1 = min(x0 + 1, w - 1)
            fx = x - x0
            for ch in range(c):
                top = img[y0, x0, ch] * (1 - fx) + img[y0, x1, ch] * fx
                bot = img[y1, x0, ch] * (1 - fx) + img[y1, x1, ch] * fx
                out[i, j, ch] = top * (1 - fy) + bot * fy
    return out


def oracle_phash(img, dct=naive_dct2):
    """The full hash recipe rebuilt from scratch around a reference DCT."""
    if img.shape[2] == 3:
        gray = 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]
        gray = np.clip(gray, 0, 1)[:, :, None]
    else:
        gray = img
    small = naive_resize(gray, 32, 32)[:, :, 0]
    small = np.clip(small, gray.min(), gray.max())
    coeffs = dct(small.tolist())
    block = [float(coeffs[u][v]) for u in range(8) for v in range(8)]
    block = [0.0 if abs(b) < 1e-9 else b for b in block]
    med = sorted(block)[31]
    value = 0
    for b in block:
        value = value * 2 + (1 if b > med else 0)
    return value


def dense_first_pc(X):
    """Leading eigenvector of the sample covariance via a full symmetric eigendecomposition."""
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc
    vals, vecs = np.linalg.eigh(cov)
    return vecs[:, -1]


def brute_f1(pred, truth):
    tp = fp = fn = 0
    for p, t in zip(pred, truth):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif t and not p:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def union_oracle(indexes, h):
    return any(int(h) in set(ix.entries) for ix in indexes)


def finite_difference(f, theta, coords, eps=1e-5):
    out = []
    for i in coords:
        t_plus = theta.copy()
        t_plus[i] += eps
        t_minus = theta.copy()
        t_minus[i] -= eps
        out.append((f(t_plus) - f(t_minus)) / (2 * eps))
    return np.array(out)
