"""Automatic search for the defense intensity that puts every attack near chance."""

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .augmentation import AugIntensity
from .defense import DefenseConfig

F1_WINDOW = (0.35, 0.65)
DEFAULT_ALPHAS = (0.5, 0.6, 0.7, 0.8, 0.9)
WEIGHT_STEP = 0.1


def default_intensities() -> list:
    out = []
    for a in (0, 1, 2):
        for k in range(11):
            w0 = round(1.0 - k / 10, 10)
            out.append(AugIntensity((a, a + 1), (w0, round(1.0 - w0, 10))))
    return out


@dataclass(frozen=True)
class SearchSpace:
    alpha_grid: tuple = DEFAULT_ALPHAS
    candidate_intensities: tuple = field(default_factory=lambda: tuple(default_intensities()))
    refinement_steps: int = 3

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alpha_grid)
        object.__setattr__(self, "alpha_grid", alphas)
        object.__setattr__(self, "candidate_intensities", tuple(self.candidate_intensities))
        if not alphas or not self.candidate_intensities:
            raise ValueError("search space needs at least one alpha and one intensity")
        if any(not 0.0 <= a <= 1.0 for a in alphas) or list(alphas) != sorted(alphas):
            raise ValueError(f"alpha grid must be ascending values in [0, 1], got {alphas}")

    @property
    def alpha_step(self) -> float:
        if len(self.alpha_grid) < 2:
            return 0.1
        return float(np.min(np.diff(self.alpha_grid)))


def deviation(f1s) -> float:
    return float(np.mean([abs(f - 0.5) for f in f1s]))


def in_window(f1s) -> bool:
    lo, hi = F1_WINDOW
    return all(lo <= f <= hi for f in f1s)


@dataclass(frozen=True)
class Evaluation:
    config: DefenseConfig
    f1s: tuple
    phase: str
    acc1: float | None = None
    acc2: float | None = None

    @property
    def deviation(self) -> float:
        return deviation(self.f1s)

    @property
    def in_range(self) -> bool:
        return in_window(self.f1s)

    def rank_key(self):
        """Total order: in-window first, then mean deviation, max deviation, alpha, expected count."""
        return (
            not self.in_range,
            round(self.deviation, 12),
            round(max(abs(f - 0.5) for f in self.f1s), 12),
            self.config.alpha,
            self.config.intensity.expected_count,
        )


@dataclass
class TunerResult:
    best: DefenseConfig
    deviation: float
    f1_vector: tuple
    in_range: bool
    evaluations: list = field(default_factory=list, repr=False)

    @property
    def out_of_range(self) -> bool:
        return not self.in_range

    def to_dict(self) -> dict:
        return {
            "best": self.best.to_dict(),
            "deviation": self.deviation,
            "f1_vector": list(self.f1_vector),
            "in_range": self.in_range,
            "evaluations": len(self.evaluations),
        }

    def sweep_csv(self) -> str:
        return write_sweep_csv(self.evaluations)


SWEEP_HEADER = ["kind", "config", "acc1", "acc2", "binary", "m1", "m2", "m3", "deviation"]


def sweep_row(kind: str, config: str, f1s, acc1=None, acc2=None) -> list:
    fmt = lambda v: "" if v is None else f"{v:.4f}"
    return [kind, config, fmt(acc1), fmt(acc2), *(f"{f:.4f}" for f in f1s), f"{deviation(f1s):.4f}"]


def describe(cfg: DefenseConfig) -> str:
    n = " ".join(str(x) for x in cfg.intensity.n)
    w = " ".join(f"{x:.4f}" for x in cfg.intensity.w)
    return f"alpha={cfg.alpha:.4f} n=[{n}] w=[{w}]"


def write_sweep_csv(evaluations, path=None) -> str:
    rows = [sweep_row(f"tune-{ev.phase}", describe(ev.config), ev.f1s, ev.acc1, ev.acc2) for ev in evaluations]
    return write_rows(rows, path)


def write_rows(rows, path=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    writer.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def _config_key(cfg: DefenseConfig):
    return (round(cfg.alpha, 9), cfg.intensity.n, tuple(round(x, 9) for x in cfg.intensity.w))


def _weight_neighbors(intensity: AugIntensity) -> list:
    w = np.array(intensity.w)
    out = []
    if len(w) == 2:
        # two-entry weights move along the tenths lattice
        for delta in (-WEIGHT_STEP, WEIGHT_STEP):
            w0 = round(float(np.clip(w[0] + delta, 0.0, 1.0)), 10)
            if w0 != w[0]:
                out.append(AugIntensity(intensity.n, (w0, round(1.0 - w0, 10))))
        return out
    for j in range(len(w)):
        for delta in (-WEIGHT_STEP, WEIGHT_STEP):
            moved = w.copy()
            moved[j] = np.clip(moved[j] + delta, 0.0, 1.0)
            if moved.sum() > 0 and moved[j] != w[j]:
                out.append(AugIntensity(intensity.n, tuple(moved / moved.sum())))
    return out


def search_defense_params(space: SearchSpace, evaluate: Callable[[DefenseConfig], Sequence[float]]) -> TunerResult:
    """Grid search over (alpha, intensity) followed by local refinement around the winner.

    ``evaluate`` maps a :class:`DefenseConfig` to the four attack F1 scores
    (binary, correctness, entropy, modified entropy), or to an object exposing
    them as ``f1_vector``.
    """
    seen = {}
    evaluations = []

    def run(cfg: DefenseConfig, phase: str) -> Evaluation:
        key = _config_key(cfg)
        if key not in seen:
            out = evaluate(cfg)
            # a report object carries accuracies along with its F1 vector
            f1s = tuple(float(f) for f in getattr(out, "f1_vector", out))
            if len(f1s) != 4:
                raise ValueError(f"evaluate must return four F1 scores, got {len(f1s)}")
            seen[key] = Evaluation(cfg, f1s, phase, getattr(out, "acc_train", None), getattr(out, "acc_test", None))
            evaluations.append(seen[key])
        return seen[key]

    phase1 = [run(DefenseConfig(inten, alpha), "grid") for alpha in space.alpha_grid
              for inten in space.candidate_intensities]
    best = min(phase1, key=Evaluation.rank_key)

    half = space.alpha_step / 2.0
    for _ in range(space.refinement_steps):
        cfg = best.config
        neighbors = [DefenseConfig(cfg.intensity, round(float(np.clip(cfg.alpha + d, 0.0, 1.0)), 10)) for d in (-half, half)]
        neighbors += [DefenseConfig(inten, cfg.alpha) for inten in _weight_neighbors(cfg.intensity)]
        candidates = [run(c, "refine") for c in neighbors]
        challenger = min(candidates, key=Evaluation.rank_key)
        if challenger.rank_key() < best.rank_key():
            best = challenger
        else:
            break

    return TunerResult(best.config, best.deviation, best.f1s, best.in_range, evaluations)
