"""End-to-end experiment orchestration and report emission.

Every stochastic stage draws its seed from ``derive_seed(cfg.seed, <stage name>, ...)``;
nothing reads ambient randomness, so a config and master seed fully determine
every output file.
"""

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .classifier import init_model, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .datasets import LabeledDataset, load_dataset, partition_indices
from .defense import DefenseConfig, QueryBatch, clip_confidence
from .dfl import build_topology, derive_seed, make_participants, open_round_log, run_federated_training
from .imaging import Normalizer
from .mia import AttackReport, calibrate_thresholds, run_attack_suite, score_attacks, train_shadow_attack, write_report_csv
from .pca_fusion import PcaGallery, build_gallery
from .phash import build_hash_index, compute_phash, duplicate_stats
from .tuner import SearchSpace, TunerResult, default_intensities, search_defense_params, sweep_row, write_rows, write_sweep_csv

log = logging.getLogger(__name__)


class ExperimentError(RuntimeError):
    pass


@contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError(f"stage '{name}' failed: {exc}") from exc


def _stratified_take(ds: LabeledDataset, k: int, seed: int) -> np.ndarray:
    """Indices of ``k`` samples, spread across classes as evenly as the data allows."""
    rng = np.random.default_rng(seed)
    per_class = [rng.permutation(np.flatnonzero(ds.labels == c)) for c in range(ds.n_cls)]
    order = [idx for rnd in range(max((len(p) for p in per_class), default=0))
             for p in per_class if rnd < len(p) for idx in [p[rnd]]]
    return np.sort(np.array(order[:k], dtype=np.intp))


def load_splits(cfg: ExperimentConfig):
    """Return ``(train_pool, test_pool)`` as configured."""
    ds = load_dataset(cfg.dataset, cfg.dataset_format)
    if cfg.test_dataset:
        test = load_dataset(cfg.test_dataset, cfg.dataset_format, split="test", n_cls=ds.n_cls)
        train = ds
        if cfg.train_size:
            train = ds.subset(_stratified_take(ds, cfg.train_size, derive_seed(cfg.seed, "train-subset")))
        return train, test
    size = cfg.train_size or int(round(0.8 * len(ds)))
    if size >= len(ds):
        raise ValueError(f"train_size {size} leaves no test samples out of {len(ds)}")
    idx = _stratified_take(ds, size, derive_seed(cfg.seed, "train-split"))
    rest = np.setdiff1d(np.arange(len(ds)), idx)
    return ds.subset(idx, "train"), ds.subset(rest, "test")


@dataclass
class TrainedNetwork:
    cfg: ExperimentConfig
    train: LabeledDataset
    test: LabeledDataset
    normalizer: Normalizer
    topology: object
    participants: list
    gallery: PcaGallery
    train_hashes: list = field(repr=False, default_factory=list)  # aligned with ``train``

    @property
    def entry_id(self) -> int:
        return self.cfg.entry_id

    @property
    def target_model(self):
        return self.participants[self.entry_id].model


def build_network(cfg: ExperimentConfig, train: LabeledDataset, test: LabeledDataset, out_dir: Path | None = None,
                  train_models: bool = True) -> TrainedNetwork:
    """Partition, hash, build the gallery and (optionally) run federated training."""
    with stage("partition"):
        part_idx = partition_indices(train, cfg.n_participants, derive_seed(cfg.seed, "partition"))
        parts = [train.subset(idx) for idx in part_idx]
        normalizer = Normalizer.fit(train.images)
    with stage("hash-index"):
        train_hashes = [compute_phash(img) for img in train.images]
        part_hashes = [[train_hashes[i] for i in idx] for idx in part_idx]
        topology = build_topology(cfg.topology, cfg.n_participants)
        base = init_model(cfg.arch, train.n_cls, derive_seed(cfg.seed, "init"), train.images.shape[1:])
        participants = make_participants(topology, [(p.images, p.labels) for p in parts],
                                         [base] * cfg.n_participants, part_hashes)
    with stage("pca-gallery"):
        entry = participants[cfg.entry_id]
        gallery = build_gallery(entry.images, entry.labels, train.n_cls, cfg.pca_scalar_stats)
    if train_models:
        with stage("federated-training"):
            fh = writer = None
            if out_dir is not None:
                fh, writer = open_round_log(out_dir / "rounds.csv")
            try:
                eval_idx = _stratified_take(test, min(len(test), 500), derive_seed(cfg.seed, "round-eval"))
                participants = run_federated_training(
                    topology, participants, cfg.rounds, cfg.train_config(),
                    eval_set=(test.images[eval_idx], test.labels[eval_idx]) if writer else None,
                    log=writer, normalizer=_float32(normalizer))
            finally:
                if fh is not None:
                    fh.close()
    return TrainedNetwork(cfg, train, test, normalizer, topology, participants, gallery, train_hashes)


def _float32(normalizer: Normalizer):
    # training runs in float32 for speed; evaluation stays in float64
    return lambda images: normalizer(images).astype(np.float32)


def save_network(net: TrainedNetwork, out_dir: Path) -> None:
    ckpt = out_dir / "checkpoints"
    ckpt.mkdir(parents=True, exist_ok=True)
    for p in net.participants:
        save_checkpoint(p.model, ckpt / f"participant_{p.id}.ckpt")
    net.gallery.save(out_dir / "gallery")
    (out_dir / "normalizer.json").write_text(json.dumps(net.normalizer.to_dict(), indent=2))


def restore_network(cfg: ExperimentConfig) -> TrainedNetwork:
    """Rebuild a trained network from the artifacts of an earlier ``train`` run."""
    out_dir = Path(cfg.output_dir)
    with stage("ingest"):
        train, test = load_splits(cfg)
    net = build_network(cfg, train, test, train_models=False)
    with stage("restore"):
        for p in net.participants:
            p.model = load_checkpoint(out_dir / "checkpoints" / f"participant_{p.id}.ckpt")
        net.gallery = PcaGallery.load(out_dir / "gallery")
        net.normalizer = Normalizer.from_dict(json.loads((out_dir / "normalizer.json").read_text()))
    return net


@dataclass
class EvalSets:
    members: tuple  # (QueryBatch, labels)
    nonmembers: tuple
    aux: LabeledDataset


def build_eval_sets(net: TrainedNetwork) -> EvalSets:
    """Balanced member/non-member evaluation sets plus the attacker's disjoint auxiliary pool."""
    cfg = net.cfg
    n_eval = min(cfg.eval_members, cfg.eval_nonmembers, len(net.train), len(net.test) // 2)
    if n_eval < 1:
        raise ValueError("not enough data for a balanced evaluation set")
    m_idx = _stratified_take(net.train, n_eval, derive_seed(cfg.seed, "eval-members"))
    n_idx = _stratified_take(net.test, n_eval, derive_seed(cfg.seed, "eval-nonmembers"))
    aux_idx = np.setdiff1d(np.arange(len(net.test)), n_idx)
    kw = dict(topology=net.topology, participants=net.participants, entry_id=net.entry_id)
    members = QueryBatch(net.train.images[m_idx], hashes=[net.train_hashes[i] for i in m_idx], **kw)
    nonmembers = QueryBatch(net.test.images[n_idx], **kw)
    return EvalSets((members, net.train.labels[m_idx]), (nonmembers, net.test.labels[n_idx]),
                    net.test.subset(aux_idx, "aux"))


def build_attacks(net: TrainedNetwork, aux: LabeledDataset):
    cfg = net.cfg
    split = cfg.shadow_split or len(net.participants[0].labels)
    split = min(split, len(aux) // 2)
    shadow_cfg = replace(net.cfg.train_config(), epochs=cfg.shadow_epochs or cfg.rounds * cfg.epochs,
                         seed=derive_seed(cfg.seed, "shadow-train"))
    attack = train_shadow_attack(aux.images.astype(np.float32), aux.labels, cfg.arch, cfg.k_shadows, shadow_cfg,
                                 net.train.n_cls, normalizer=_float32(net.normalizer), split_size=split,
                                 init_seed=derive_seed(cfg.seed, "shadow-init"))
    thresholds = calibrate_thresholds(attack.shadow_samples, net.train.n_cls)
    return attack, thresholds


@dataclass
class ExperimentResult:
    undefended: AttackReport
    defended: AttackReport
    defense: DefenseConfig
    tuner: TunerResult | None = None
    duplicates: object = None
    network: TrainedNetwork | None = field(default=None, repr=False)
    evals: EvalSets | None = field(default=None, repr=False)
    attack: object = field(default=None, repr=False)
    thresholds: object = field(default=None, repr=False)

    def __iter__(self):
        return iter((self.undefended, self.defended))

    def evaluate(self, defense: DefenseConfig | None) -> AttackReport:
        """Re-run the attack suite on the trained state under another defense setting."""
        net = self.network
        return run_attack_suite(net.target_model, defense is not None, self.evals.members, self.evals.nonmembers,
                                self.attack, self.thresholds, net.normalizer, defense, net.gallery,
                                dataset=net.cfg.dataset_name, topology=net.cfg.topology_label)


def tuner_space(cfg: ExperimentConfig) -> SearchSpace:
    return SearchSpace(tuple(cfg.alpha_grid), tuple(default_intensities()), cfg.refinement_steps)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """ingest -> partition -> indexes + gallery -> DFL training -> attacks (no defense)
    -> optional tuning -> attacks (defended) -> reports."""
    out_dir = Path(cfg.output_dir)
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(out_dir / "config.json")
    with stage("ingest"):
        train, test = load_splits(cfg)
    net = build_network(cfg, train, test, out_dir if write else None)
    if write:
        with stage("checkpoint"):
            save_network(net, out_dir)
    return attack_network(net, write=write)


def attack_network(net: TrainedNetwork, defend: bool = True, tune: bool | None = None,
                   write: bool = True) -> ExperimentResult:
    """Everything after training: shadow attacks, optional tuning, both report rows."""
    cfg = net.cfg
    out_dir = Path(cfg.output_dir)
    tune = cfg.defense == "tune" if tune is None else tune
    with stage("eval-sets"):
        evals = build_eval_sets(net)
    with stage("shadow-attack"):
        attack, thresholds = build_attacks(net, evals.aux)
    result = ExperimentResult(None, None, None, network=net, evals=evals, attack=attack, thresholds=thresholds)
    with stage("attack-undefended"):
        result.undefended = result.evaluate(None)
    if defend:
        with stage("tune"):
            if tune:
                result.tuner = search_defense_params(tuner_space(cfg), result.evaluate)
                result.defense = result.tuner.best
            else:
                result.defense = cfg.defense_config()
        with stage("attack-defended"):
            result.defended = result.evaluate(result.defense)
    with stage("duplicates"):
        index = build_hash_index(None, owner=-1, hashes=net.train_hashes)
        result.duplicates = duplicate_stats(index, evals.nonmembers[0].hashes)
    if write:
        with stage("report"):
            out_dir.mkdir(parents=True, exist_ok=True)
            reports = [r for r in (result.undefended, result.defended) if r is not None]
            write_report_csv(reports, out_dir / "report.csv")
            (out_dir / "duplicates.csv").write_text(result.duplicates.to_csv())
            if result.defense is not None:
                (out_dir / "defense.json").write_text(json.dumps(result.defense.to_dict(), indent=2))
            if result.tuner is not None:
                write_sweep_csv(result.tuner.evaluations, out_dir / "sweep.csv")
                (out_dir / "tuner.json").write_text(json.dumps(result.tuner.to_dict(), indent=2))
    return result


def train_network(cfg: ExperimentConfig) -> TrainedNetwork:
    """Ingest, train and checkpoint without running any attack."""
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "config.json")
    with stage("ingest"):
        train, test = load_splits(cfg)
    net = build_network(cfg, train, test, out_dir)
    with stage("checkpoint"):
        save_network(net, out_dir)
    return net


def max_conf_sweep(result: ExperimentResult, grid) -> list:
    """Confidence clipping applied to the undefended outputs, one sweep row per cap."""
    net, ev = result.network, result.evals
    (mb, ml), (nb, nl) = ev.members, ev.nonmembers
    mp = mb.predict(net.target_model, net.normalizer)
    npr = nb.predict(net.target_model, net.normalizer)
    rows = []
    for cap in grid:
        cap = max(float(cap), 1.0 / net.train.n_cls)
        rep = score_attacks(clip_confidence(mp, cap), ml, clip_confidence(npr, cap), nl, result.attack, result.thresholds)
        rows.append(sweep_row("max_conf", f"max_conf={cap:.4f}", rep.f1_vector, rep.acc_train, rep.acc_test))
    return rows


def weight_decay_sweep(cfg: ExperimentConfig, grid) -> list:
    """Retrain the undefended pipeline once per L2 strength; one sweep row each."""
    rows = []
    for wd in grid:
        sub = replace(cfg, weight_decay=float(wd), defense={"n": [0], "w": [1.0], "alpha": 1.0})
        res = run_experiment(sub, write=False)
        rep = res.undefended
        rows.append(sweep_row("weight_decay", f"weight_decay={float(wd):g}", rep.f1_vector, rep.acc_train, rep.acc_test))
    return rows


def run_baseline_sweeps(cfg: ExperimentConfig, write: bool = True) -> list:
    """Weight-decay and max_conf baselines; rows go to ``sweep.csv``."""
    rows = weight_decay_sweep(cfg, cfg.weight_decay_grid)
    base = run_experiment(replace(cfg, defense={"n": [0], "w": [1.0], "alpha": 1.0}), write=False)
    rows += max_conf_sweep(base, cfg.max_conf_grid)
    if write:
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_rows(rows, out_dir / "sweep.csv")
    return rows
