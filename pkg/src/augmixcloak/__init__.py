"""Hash-keyed data augmentation and PCA fusion against membership inference in
decentralized federated learning.

A query image is answered by the network only after it has been transformed:
its perceptual hash picks a fixed chain of augmentations and a class image
from the PCA gallery, and the two are blended. Exact training samples short
circuit the transform so members still get their own prediction.
"""

from .augmentation import AugIntensity, apply_augmentations, derive_aug_key, derive_aug_num, select_augmentations
from .classifier import TrainConfig, init_model, predict, train_local
from .config import ConfigError, ExperimentConfig, load_config
from .datasets import IngestionError, load_dataset, write_garment_idx
from .defense import DefenseConfig, answer_query, clip_confidence, transform_query
from .dfl import build_topology, flood_query, run_federated_training
from .experiment import ExperimentError, attack_network, run_baseline_sweeps, run_experiment
from .mia import AttackReport, evaluate_f1, run_attack_suite
from .pca_fusion import DegenerateDataError, PcaGallery, build_gallery, fuse
from .phash import build_hash_index, compute_phash, duplicate_stats
from .tuner import SearchSpace, TunerResult, search_defense_params

__version__ = "0.1.0"

__all__ = [
    "AttackReport",
    "AugIntensity",
    "ConfigError",
    "DefenseConfig",
    "DegenerateDataError",
    "ExperimentConfig",
    "ExperimentError",
    "IngestionError",
    "PcaGallery",
    "SearchSpace",
    "TrainConfig",
    "TunerResult",
    "answer_query",
    "apply_augmentations",
    "attack_network",
    "build_gallery",
    "build_hash_index",
    "build_topology",
    "clip_confidence",
    "compute_phash",
    "derive_aug_key",
    "derive_aug_num",
    "duplicate_stats",
    "evaluate_f1",
    "flood_query",
    "fuse",
    "init_model",
    "load_config",
    "load_dataset",
    "predict",
    "run_attack_suite",
    "run_baseline_sweeps",
    "run_experiment",
    "run_federated_training",
    "search_defense_params",
    "select_augmentations",
    "train_local",
    "transform_query",
    "write_garment_idx",
]
