"""Command line interface: ``augmix train|attack|defend|tune|hash-stats|ops|synth|sweep``.

Every subcommand takes ``--config FILE`` plus one override flag per config key,
named after the key (``--rounds 8``, ``--defense tune``, ``--alpha_grid "[0.5,0.7]"``).
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .augmentation import AugIntensity, apply_augmentations, derive_aug_key, derive_aug_num, operator_names, select_augmentations
from .config import ConfigError, ExperimentConfig, load_config
from .datasets import IngestionError, write_garment_idx
from .experiment import (
    ExperimentError,
    attack_network,
    load_splits,
    restore_network,
    run_baseline_sweeps,
    run_experiment,
    train_network,
)
from .imaging import as_image
from .phash import build_hash_index, compute_phash, duplicate_stats


def _parse_value(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise argparse.ArgumentTypeError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, (list, dict)):
        if raw == "tune":
            return raw
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise argparse.ArgumentTypeError(f"expected JSON, got {raw!r}") from exc
    return raw


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat JSON experiment config")
    defaults = ExperimentConfig()
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(ExperimentConfig):
        default = getattr(defaults, f.name)
        group.add_argument(f"--{f.name}", dest=f"cfg_{f.name}", metavar=f.name.upper(),
                           type=lambda raw, d=default: _parse_value(raw, d))


def _config(args, check_paths: bool = True) -> ExperimentConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return load_config(args.config, overrides, check_paths=check_paths)


def _print_reports(result) -> None:
    for rep in (result.undefended, result.defended):
        if rep is None:
            continue
        f1 = " ".join(f"{x:.4f}" for x in rep.f1_vector)
        print(f"defense={rep.defense:<3} acc1={rep.acc_train:.4f} acc2={rep.acc_test:.4f} "
              f"f1[binary m1 m2 m3]={f1} deviation={rep.deviation:.4f}")
    if result.tuner is not None:
        t = result.tuner
        print(f"tuned: {json.dumps(t.best.to_dict())} in_range={t.in_range} evaluations={len(t.evaluations)}")


def cmd_train(args) -> int:
    cfg = _config(args)
    net = train_network(cfg)
    print(f"trained {cfg.n_participants} participants ({cfg.topology}); checkpoints in {cfg.output_dir}")
    print(f"target accuracy on its own partition: {_partition_accuracy(net):.4f}")
    return 0


def _partition_accuracy(net) -> float:
    from .classifier import accuracy

    p = net.participants[net.entry_id]
    return accuracy(p.model, net.normalizer(p.images), p.labels)


def cmd_attack(args) -> int:
    result = attack_network(restore_network(_config(args)), defend=False)
    _print_reports(result)
    return 0


def cmd_defend(args) -> int:
    cfg = _config(args)
    net = restore_network(cfg)
    _print_reports(attack_network(net))
    return 0


def cmd_tune(args) -> int:
    cfg = _config(args)
    _print_reports(attack_network(restore_network(cfg), tune=True))
    return 0


def cmd_run(args) -> int:
    _print_reports(run_experiment(_config(args)))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    rows = run_baseline_sweeps(cfg)
    print(f"{len(rows)} baseline rows written to {Path(cfg.output_dir) / 'sweep.csv'}")
    return 0


def cmd_hash_stats(args) -> int:
    cfg = _config(args)
    train, test = load_splits(cfg)
    index = build_hash_index(train.images)
    report = duplicate_stats(index, [compute_phash(img) for img in test.images])
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "duplicates.csv").write_text(report.to_csv())
    print(report.to_csv(), end="")
    return 0


def cmd_ops(args) -> int:
    if args.list or args.image is None:
        for i, name in enumerate(operator_names()):
            print(f"{i:2d} {name}")
        return 0
    cfg = _config(args, check_paths=False)
    defense = cfg.defense if isinstance(cfg.defense, dict) else {"n": [0, 1], "w": [0.7, 0.3]}
    from PIL import Image

    with Image.open(args.image) as im:
        img = as_image(np.asarray(im.convert("L" if im.mode in ("L", "1", "P") else "RGB")))
    h = compute_phash(img)
    intensity = AugIntensity(defense["n"], defense["w"])
    ops = select_augmentations(derive_aug_key(h), derive_aug_num(h, intensity))
    print(f"phash={h:016x} aug_key={derive_aug_key(h)} aug_num={len(ops)} ops={[op.name for op in ops]}")
    if args.out:
        out = np.round(apply_augmentations(img, ops) * 255).astype(np.uint8)
        Image.fromarray(out[:, :, 0] if out.shape[2] == 1 else out).save(args.out)
    return 0


def cmd_synth(args) -> int:
    for split, n, seed in (("train", args.per_class, args.seed), ("test", args.test_per_class, args.seed + 1)):
        paths = write_garment_idx(Path(args.out) / split, n, seed=seed, prefix=f"garments-{split}")
        print(f"{split}: {paths[0]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="augmix", description="Hash-keyed augmentation defense against MIAs in DFL")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "train": (cmd_train, "train the federated network and write checkpoints"),
        "attack": (cmd_attack, "attack a trained network without the defense"),
        "defend": (cmd_defend, "attack a trained network with and without the configured defense"),
        "tune": (cmd_tune, "search the defense setting that puts every attack near chance"),
        "run": (cmd_run, "train, attack, (tune) and defend in one go"),
        "sweep": (cmd_sweep, "weight-decay and confidence-clipping baselines"),
        "hash-stats": (cmd_hash_stats, "pHash duplicate statistics of a dataset"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        p.set_defaults(func=fn)
    ops = sub.add_parser("ops", help="list augmentation operators or show those a given image selects")
    ops.add_argument("--list", action="store_true")
    ops.add_argument("--image", type=Path)
    ops.add_argument("--out", type=Path)
    _add_config_flags(ops)
    ops.set_defaults(func=cmd_ops)
    synth = sub.add_parser("synth", help="write the synthetic garment dataset as IDX files")
    synth.add_argument("--out", required=True)
    synth.add_argument("--per_class", type=int, default=650)
    synth.add_argument("--test_per_class", type=int, default=200)
    synth.add_argument("--seed", type=int, default=0)
    synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IngestionError, ExperimentError, FileNotFoundError) as exc:
        print(f"augmix {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
