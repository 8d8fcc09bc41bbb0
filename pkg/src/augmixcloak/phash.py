"""64-bit DCT perceptual hash, sorted hash indexes and duplicate statistics."""

import csv
import io
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .imaging import resize_bilinear, to_grayscale

HASH_SIZE = 8
DCT_SIZE = 32
# coefficients smaller than this are exact zeros up to float rounding
ZERO_SNAP = 1e-9


class PHash64(int):
    """A 64-bit perceptual hash. The integer value is the hash's decimal reading."""

    def __new__(cls, bits: int):
        bits = int(bits)
        if not 0 <= bits < 1 << 64:
            raise ValueError(f"hash out of 64-bit range: {bits}")
        return super().__new__(cls, bits)

    @property
    def bits(self) -> int:
        return int(self)

    @property
    def phash_decimal(self) -> int:
        return int(self)

    def hamming(self, other: int) -> int:
        return bin(int(self) ^ int(other)).count("1")

    def __repr__(self) -> str:
        return f"PHash64(0x{int(self):016x})"


@lru_cache(maxsize=None)
def dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] /= np.sqrt(2.0)
    mat.setflags(write=False)
    return mat


def dct2d(matrix: np.ndarray) -> np.ndarray:
    """Orthonormal type-II 2-D DCT of a 32x32 block."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (DCT_SIZE, DCT_SIZE):
        raise ValueError(f"dct2d expects a {DCT_SIZE}x{DCT_SIZE} matrix, got {matrix.shape}")
    c = dct_matrix(DCT_SIZE)
    return c @ matrix @ c.T


def hash_preprocess(img: np.ndarray) -> np.ndarray:
    """Grayscale, resize to 32x32 and return the 2-D pixel block fed to the DCT."""
    return resize_bilinear(to_grayscale(img), DCT_SIZE, DCT_SIZE)[:, :, 0]


def hash_from_coefficients(coeffs: np.ndarray) -> PHash64:
    """Bits from the top-left 8x8 block: 1 where a coefficient exceeds the lower median."""
    block = np.array(coeffs[:HASH_SIZE, :HASH_SIZE], dtype=np.float64)
    block[np.abs(block) < ZERO_SNAP] = 0.0
    flat = block.ravel()
    median = np.sort(flat)[(flat.size - 1) // 2]
    value = 0
    for bit in flat > median:
        value = (value << 1) | int(bit)
    return PHash64(value)


def compute_phash(img: np.ndarray) -> PHash64:
    return hash_from_coefficients(dct2d(hash_preprocess(img)))


@dataclass(frozen=True)
class HashIndex:
    """Sorted multiset of a participant's training-image hashes."""

    entries: tuple
    owner: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, h) -> bool:
        return lookup(self, h)


def build_hash_index(images, owner: int = 0, hashes=None) -> HashIndex:
    """Index the hashes of ``images``; precomputed ``hashes`` skip the hashing step."""
    if hashes is None:
        hashes = [compute_phash(img) for img in images]
    return HashIndex(tuple(sorted(PHash64(h) for h in hashes)), owner)


def lookup(index: HashIndex, h) -> bool:
    entries = index.entries
    i = bisect_left(entries, int(h))
    return i < len(entries) and entries[i] == int(h)


@dataclass
class DuplicateReport:
    multiplicities: dict = field(default_factory=dict)  # multiplicity -> number of hash values
    test_hits: int = 0
    test_total: int = 0

    @property
    def test_fraction(self) -> float:
        return self.test_hits / self.test_total if self.test_total else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["multiplicity", "count"])
        for mult in sorted(self.multiplicities):
            writer.writerow([mult, self.multiplicities[mult]])
        writer.writerow(["test_hits", "test_total"])
        writer.writerow([self.test_hits, self.test_total])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DuplicateReport":
        rows = list(csv.reader(io.StringIO(text)))
        split = rows.index(["test_hits", "test_total"])
        mults = {int(m): int(c) for m, c in rows[1:split]}
        hits, total = rows[split + 1]
        return cls(mults, int(hits), int(total))


def duplicate_stats(train_index: HashIndex, test_hashes) -> DuplicateReport:
    counts = Counter(train_index.entries)
    mults = Counter(c for c in counts.values() if c > 1)
    hits = sum(1 for h in test_hashes if lookup(train_index, h))
    return DuplicateReport(dict(sorted(mults.items())), hits, len(test_hashes))
