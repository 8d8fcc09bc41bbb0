"""Membership inference attacks and their F1 evaluation.

Three metric attacks (prediction correctness, prediction entropy, modified
entropy) and one learned attack trained on shadow-model outputs. The member
class is the positive class throughout.
"""

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .classifier import ModelParams, TrainConfig, init_model, predict_batch, train_local
from .dfl import derive_seed

EPS = 1e-30
METRICS = ("entropy", "mentropy")
REPORT_HEADER = ["dataset", "topology", "defense", "acc1", "acc2", "binary", "m1", "m2", "m3"]


@dataclass(frozen=True)
class AttackSample:
    probs: np.ndarray
    true_label: int
    is_member: bool


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    return float(-np.sum(p * np.log(np.maximum(p, EPS))))


def modified_entropy(p, y: int) -> float:
    p = np.asarray(p, dtype=np.float64)
    py = p[y]
    others = np.delete(p, y)
    return float(-(1.0 - py) * np.log(max(py, EPS)) - np.sum(others * np.log(np.maximum(1.0 - others, EPS))))


def entropy_batch(probs: np.ndarray) -> np.ndarray:
    return -np.sum(probs * np.log(np.maximum(probs, EPS)), axis=1)


def modified_entropy_batch(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    idx = np.arange(len(probs))
    py = probs[idx, labels]
    terms = probs * np.log(np.maximum(1.0 - probs, EPS))
    rest = terms.sum(axis=1) - terms[idx, labels]
    return -(1.0 - py) * np.log(np.maximum(py, EPS)) - rest


def correctness_attack(s: AttackSample) -> bool:
    return int(np.argmax(s.probs)) == int(s.true_label)


def evaluate_f1(predictions, truth) -> float:
    predictions = np.asarray(predictions, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predictions.shape != truth.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {truth.shape}")
    if predictions.size == 0:
        raise ValueError("need at least one sample")
    tp = int(np.sum(predictions & truth))
    fp = int(np.sum(predictions & ~truth))
    fn = int(np.sum(~predictions & truth))
    if tp == 0:
        return 0.0
    # kept in the 2PR/(P+R) form rather than 2TP/(2TP+FP+FN): the two round differently in the last ulp
    precision, recall = tp / (tp + fp), tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def confusion(predictions, truth) -> dict:
    predictions = np.asarray(predictions, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    return {
        "tp": int(np.sum(predictions & truth)),
        "fp": int(np.sum(predictions & ~truth)),
        "fn": int(np.sum(~predictions & truth)),
        "tn": int(np.sum(~predictions & ~truth)),
    }


# ---------------------------------------------------------------- thresholds


def _best_threshold(values: np.ndarray, members: np.ndarray) -> float:
    """Midpoint maximizing balanced accuracy of ``member iff value < threshold``.

    Ties go to the lowest midpoint. With fewer than two distinct values the only
    value itself is returned (nobody falls strictly below it).
    """
    uniq = np.unique(values)
    if len(uniq) < 2:
        return float(uniq[0]) if len(uniq) else 0.0
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    pos, neg = values[members], values[~members]
    if len(pos) == 0 or len(neg) == 0:
        return float(mids[0])
    tpr = np.searchsorted(np.sort(pos), mids, side="left") / len(pos)
    fpr = np.searchsorted(np.sort(neg), mids, side="left") / len(neg)
    bal = (tpr + (1.0 - fpr)) / 2.0
    return float(mids[int(np.argmax(bal))])


@dataclass
class ThresholdSet:
    entropy: np.ndarray  # one threshold per class
    mentropy: np.ndarray
    global_entropy: float = 0.0
    global_mentropy: float = 0.0

    def predict(self, metric: str, values: np.ndarray, labels: np.ndarray) -> np.ndarray:
        thresholds = getattr(self, metric)
        return np.asarray(values) < thresholds[np.asarray(labels)]


def _sample_arrays(samples):
    probs = np.stack([s.probs for s in samples])
    labels = np.array([s.true_label for s in samples], dtype=np.intp)
    members = np.array([s.is_member for s in samples], dtype=bool)
    return probs, labels, members


def calibrate_thresholds(shadow_samples, n_cls: int) -> ThresholdSet:
    """Per-class, per-metric thresholds maximizing balanced accuracy on shadow outputs.

    A class lacking members or non-members in the shadow data uses the global threshold.
    """
    if not len(shadow_samples):
        raise ValueError("no shadow samples to calibrate on")
    probs, labels, members = _sample_arrays(shadow_samples)
    values = {"entropy": entropy_batch(probs), "mentropy": modified_entropy_batch(probs, labels)}
    out = {}
    for metric, vals in values.items():
        global_t = _best_threshold(vals, members)
        per_class = np.full(n_cls, global_t)
        for c in range(n_cls):
            sel = labels == c
            if members[sel].any() and (~members[sel]).any():
                per_class[c] = _best_threshold(vals[sel], members[sel])
        out[metric] = per_class
        out[f"global_{metric}"] = global_t
    return ThresholdSet(**out)


# ---------------------------------------------------------------- shadow attack


def attack_features(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Descending-sorted probabilities, the cross-entropy loss, and the one-hot label."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    n_cls = probs.shape[1]
    sorted_probs = -np.sort(-probs, axis=1)
    loss = -np.log(np.maximum(probs[np.arange(len(probs)), labels], EPS))
    return np.hstack([sorted_probs, loss[:, None], np.eye(n_cls)[labels]])


@dataclass
class AttackModel:
    classifier: object
    shadow_samples: list = field(default_factory=list, repr=False)
    shadow_accuracy: list = field(default_factory=list)  # (train_acc, out_acc) per shadow

    def member_probability(self, probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
        return self.classifier.predict_proba(attack_features(probs, labels))[:, 1]

    def predict(self, probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
        return self.member_probability(probs, labels) >= 0.5


def fit_attack_classifier(samples, seed: int = 0):
    probs, labels, members = _sample_arrays(samples)
    clf = make_pipeline(StandardScaler(), LogisticRegression(max_iter=2000, random_state=seed))
    clf.fit(attack_features(probs, labels), members.astype(int))
    return clf


def train_shadow_attack(aux_images: np.ndarray, aux_labels: np.ndarray, arch_id: str, k_shadows: int,
                        cfg: TrainConfig, n_cls: int, normalizer=None, split_size: int | None = None,
                        init_seed: int = 0) -> AttackModel:
    """Train ``k_shadows`` shadow models on disjoint-per-shadow (train, out) halves of the aux data.

    Each shadow draws its own seeded permutation of the auxiliary pool; the first
    ``split_size`` samples train it (members) and the next ``split_size`` are held
    out (non-members). Their outputs supervise a logistic-regression attack model.
    """
    aux_images = np.asarray(aux_images, dtype=np.float64)
    aux_labels = np.asarray(aux_labels, dtype=np.intp)
    split_size = split_size or len(aux_images) // 2
    if k_shadows < 1 or split_size < 1 or len(aux_images) < 2 * split_size:
        raise ValueError(f"need at least {2 * max(split_size, 1)} auxiliary samples for the shadow split, "
                         f"got {len(aux_images)}")
    norm = normalizer or (lambda a: a)
    x_all = norm(aux_images)
    samples, accs = [], []
    for k in range(k_shadows):
        order = np.random.default_rng(derive_seed(cfg.seed, "shadow-split", k)).permutation(len(aux_images))
        tr, out = order[:split_size], order[split_size:2 * split_size]
        model = init_model(arch_id, n_cls, derive_seed(init_seed, "shadow-init", k), aux_images.shape[1:])
        model = train_local(model, x_all[tr], aux_labels[tr], replace(cfg, seed=derive_seed(cfg.seed, "shadow", k)))
        p_in = predict_batch(model, x_all[tr])
        p_out = predict_batch(model, x_all[out])
        accs.append((float(np.mean(p_in.argmax(1) == aux_labels[tr])), float(np.mean(p_out.argmax(1) == aux_labels[out]))))
        samples += [AttackSample(p, int(y), True) for p, y in zip(p_in, aux_labels[tr])]
        samples += [AttackSample(p, int(y), False) for p, y in zip(p_out, aux_labels[out])]
    return AttackModel(fit_attack_classifier(samples, seed=cfg.seed % (2**32)), samples, accs)


# ---------------------------------------------------------------- suite


@dataclass
class AttackReport:
    f1_binary: float
    f1_correctness: float
    f1_entropy: float
    f1_mentropy: float
    acc_train: float
    acc_test: float
    confusions: dict = field(default_factory=dict, repr=False)
    dataset: str = ""
    topology: str = ""
    defense: str = "no"

    @property
    def f1_vector(self) -> tuple:
        return (self.f1_binary, self.f1_correctness, self.f1_entropy, self.f1_mentropy)

    @property
    def deviation(self) -> float:
        return float(np.mean([abs(f - 0.5) for f in self.f1_vector]))

    def csv_row(self) -> list:
        return [self.dataset, self.topology, self.defense, f"{self.acc_train:.4f}", f"{self.acc_test:.4f}",
                *(f"{f:.4f}" for f in self.f1_vector)]


def write_report_csv(reports, path=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for r in reports:
        writer.writerow(r.csv_row())
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def attack_predictions(probs: np.ndarray, labels: np.ndarray, attack_model: AttackModel,
                       thresholds: ThresholdSet) -> dict:
    labels = np.asarray(labels, dtype=np.intp)
    return {
        "binary": attack_model.predict(probs, labels),
        "correctness": probs.argmax(axis=1) == labels,
        "entropy": thresholds.predict("entropy", entropy_batch(probs), labels),
        "mentropy": thresholds.predict("mentropy", modified_entropy_batch(probs, labels), labels),
    }


def score_attacks(member_probs, member_labels, nonmember_probs, nonmember_labels,
                  attack_model: AttackModel, thresholds: ThresholdSet, **meta) -> AttackReport:
    """Run all four attacks on already-computed prediction vectors."""
    probs = np.vstack([member_probs, nonmember_probs])
    labels = np.concatenate([member_labels, nonmember_labels]).astype(np.intp)
    truth = np.concatenate([np.ones(len(member_probs), bool), np.zeros(len(nonmember_probs), bool)])
    preds = attack_predictions(probs, labels, attack_model, thresholds)
    f1 = {k: evaluate_f1(v, truth) for k, v in preds.items()}
    return AttackReport(
        f1["binary"], f1["correctness"], f1["entropy"], f1["mentropy"],
        acc_train=float(np.mean(member_probs.argmax(1) == member_labels)),
        acc_test=float(np.mean(nonmember_probs.argmax(1) == nonmember_labels)),
        confusions={k: confusion(v, truth) for k, v in preds.items()},
        **meta,
    )


def run_attack_suite(model: ModelParams, defended: bool, members, nonmembers, attack_model: AttackModel,
                     thresholds: ThresholdSet, normalizer, defense_cfg=None, gallery=None, **meta) -> AttackReport:
    """Query the target with both evaluation sets and score every attack.

    ``members`` and ``nonmembers`` are :class:`~augmixcloak.defense.QueryBatch`
    objects paired with labels: ``(batch, labels)``. When ``defended`` the queries
    go through the defense transform; otherwise the raw images are predicted.
    """
    cfg = defense_cfg if defended else None
    (mb, ml), (nb, nl) = members, nonmembers
    mp = mb.predict(model, normalizer, cfg, gallery)
    npr = nb.predict(model, normalizer, cfg, gallery)
    meta.setdefault("defense", "yes" if defended else "no")
    return score_attacks(mp, np.asarray(ml), npr, np.asarray(nl), attack_model, thresholds, **meta)
