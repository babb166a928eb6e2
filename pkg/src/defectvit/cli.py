"""Command-line harness wiring data -> model -> optimizer -> metrics.

Subcommands: train, eval, predict, inspect. Default hyperparameters:
batch 32, 100 epochs, AdamW lr 0.001 / decay 0.0001, dropout 0.5,
8 layers, 8 heads, width 64, image 72 / patch 8 (pass --image-size 256
--patch-size 16 for the large-image variant).
Config precedence: built-in defaults < --config file < command-line
flags. Every training run writes a manifest that reproduces it exactly
when passed back as --config. Exit codes: 0 success, 1 usage/config,
2 data, 3 I/O.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, checkpoint as ckpt_mod
from .data import (
    AugmentConfig,
    Dataset,
    decode_image,
    channel_stats,
    load_dataset,
    read_manifest,
    resize,
    resize_pixels,
    split,
    standardize,
    write_manifest,
)
from .errors import ConfigError, ContractError, DataError, ParameterError, ShapeError
from .metrics import confusion, render_report, score, write_curves_csv
from .model import ModelConfig, forward, init_params
from .optim import AdamWConfig, AdamWState, evaluate, train_epoch
from .tensor import no_grad


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings of one training run."""

    data_dir: str = ""
    out_dir: str = ""
    image_size: int = 72
    patch_size: int = 8
    channels: int = 3
    model_dim: int = 64
    num_heads: int = 8
    num_layers: int = 8
    ffn_dim: Optional[int] = None
    dropout: float = 0.5
    head_hidden: Optional[tuple[int, ...]] = None
    ln_eps: float = 1e-5
    batch_size: int = 32
    epochs: int = 100
    lr: float = 0.001
    weight_decay: float = 0.0001
    seed: int = 0
    train_fraction: float = 0.75
    flip_horizontal: bool = True
    rotation_factor: float = 0.02
    zoom_height: float = 0.2
    zoom_width: float = 0.2

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        # architecture invariants, independent of the dataset's class count
        self.model_config(num_classes=2)

    def model_config(self, num_classes: int) -> ModelConfig:
        return ModelConfig(
            image_size=self.image_size,
            patch_size=self.patch_size,
            num_classes=num_classes,
            channels=self.channels,
            model_dim=self.model_dim,
            num_heads=self.num_heads,
            num_layers=self.num_layers,
            ffn_dim=self.ffn_dim,
            dropout_rate=self.dropout,
            head_hidden=self.head_hidden,
            ln_eps=self.ln_eps,
        )

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            flip_horizontal=self.flip_horizontal,
            rotation_factor=self.rotation_factor,
            zoom_height=self.zoom_height,
            zoom_width=self.zoom_width,
            seed=self.seed,
        )


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def _parse_optional_int(value: str) -> Optional[int]:
    stripped = value.strip().lower()
    return None if stripped in ("", "none") else int(value)


def _parse_int_list(value: str) -> Optional[tuple[int, ...]]:
    stripped = value.strip().lower()
    if stripped in ("", "none"):
        return None
    return tuple(int(part) for part in value.split(","))


_FIELD_PARSERS = {
    "data_dir": str,
    "out_dir": str,
    "image_size": int,
    "patch_size": int,
    "channels": int,
    "model_dim": int,
    "num_heads": int,
    "num_layers": int,
    "ffn_dim": _parse_optional_int,
    "dropout": float,
    "head_hidden": _parse_int_list,
    "ln_eps": float,
    "batch_size": int,
    "epochs": int,
    "lr": float,
    "weight_decay": float,
    "seed": int,
    "train_fraction": float,
    "flip_horizontal": _parse_bool,
    "rotation_factor": float,
    "zoom_height": float,
    "zoom_width": float,
}

# manifest keys that describe a finished run rather than configure one
_INFO_KEYS = {"class_names", "norm_mean", "norm_std", "format_version", "package_version", "command"}


def load_config_file(path) -> dict:
    entries = read_manifest(path)
    resolved = {}
    for key, raw in entries.items():
        if key in _INFO_KEYS:
            continue
        if key not in _FIELD_PARSERS:
            raise ConfigError(f"unknown config key '{key}' in {path}")
        try:
            resolved[key] = _FIELD_PARSERS[key](raw)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"bad value for '{key}' in {path}: {exc}") from None
    return resolved


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    values = {f.name: f.default for f in dataclasses.fields(RunConfig)}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for name in _FIELD_PARSERS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def _load_resized(data_dir: str, image_size: int) -> Dataset:
    dataset = load_dataset(data_dir)
    images = [resize(img, image_size) for img in dataset.images]
    return Dataset(images=images, class_names=dataset.class_names)


def _manifest_entries(cfg: RunConfig, class_names, norm_mean, norm_std) -> dict:
    entries = {}
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if value is None:
            value = "none"
        elif isinstance(value, float):
            value = repr(value)
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        entries[f.name] = value
    entries["class_names"] = ",".join(class_names)
    entries["norm_mean"] = ",".join(repr(float(x)) for x in norm_mean)
    entries["norm_std"] = ",".join(repr(float(x)) for x in norm_std)
    entries["format_version"] = ckpt_mod.FORMAT_VERSION
    entries["package_version"] = __version__
    return entries


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_run_config(args)
    if not cfg.data_dir:
        raise ConfigError("train requires --data (or data_dir in the config file)")
    if not cfg.out_dir:
        raise ConfigError("train requires --out (or out_dir in the config file)")

    dataset = _load_resized(cfg.data_dir, cfg.image_size)
    model_cfg = cfg.model_config(num_classes=len(dataset.class_names))
    train_set, val_set = split(dataset, cfg.train_fraction, cfg.seed)
    norm_mean, norm_std = channel_stats(train_set.images)

    params = init_params(model_cfg, cfg.seed)
    state = AdamWState(params, AdamWConfig(lr=cfg.lr, weight_decay=cfg.weight_decay))
    augment_cfg = cfg.augment_config()

    val_pixels = val_set.pixel_array()
    val_labels = val_set.labels()
    print(
        f"training on {len(train_set.images)} images / validating on {len(val_set.images)} "
        f"({len(dataset.class_names)} classes, {params.count()} parameters)"
    )

    curves = []
    for epoch in range(1, cfg.epochs + 1):
        train_loss, train_acc = train_epoch(
            params, train_set, state,
            config=model_cfg, augment_cfg=augment_cfg,
            norm_mean=norm_mean, norm_std=norm_std,
            batch_size=cfg.batch_size, seed=cfg.seed, epoch=epoch,
        )
        val_loss, val_acc, _ = evaluate(
            params, model_cfg, val_pixels, val_labels,
            norm_mean=norm_mean, norm_std=norm_std, batch_size=cfg.batch_size,
        )
        curves.append({
            "epoch": epoch,
            "train_loss": train_loss, "train_acc": train_acc,
            "val_loss": val_loss, "val_acc": val_acc,
        })
        print(
            f"epoch {epoch}/{cfg.epochs}  train_loss={train_loss:.6f} train_acc={train_acc:.4f}  "
            f"val_loss={val_loss:.6f} val_acc={val_acc:.4f}",
            flush=True,
        )

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest_entries(cfg, dataset.class_names, norm_mean, norm_std)
    write_manifest(out_dir / "manifest.txt", manifest)
    write_curves_csv(out_dir / "curves.csv", curves)
    ckpt_mod.save_checkpoint(
        out_dir / "checkpoint.dvit",
        params,
        class_names=dataset.class_names,
        norm_mean=norm_mean,
        norm_std=norm_std,
        optimizer=state.to_dict(),
        rng={"seed": cfg.seed, "epochs_completed": cfg.epochs},
        # out_dir is where the artifacts land, not part of the run identity;
        # keeping it out makes checkpoints of identical runs byte-identical
        run={k: str(v) for k, v in manifest.items() if k != "out_dir"},
    )

    _, _, val_logits = evaluate(
        params, model_cfg, val_pixels, val_labels,
        norm_mean=norm_mean, norm_std=norm_std, batch_size=cfg.batch_size,
    )
    cm = confusion(val_labels, val_logits.argmax(axis=1), dataset.class_names)
    render_report(score(cm), cm, out_dir)
    print(f"wrote checkpoint, manifest, curves, and validation report to {out_dir}")
    return 0


def _select_split(dataset: Dataset, which: str, seed: int, train_fraction: float) -> Dataset:
    if which == "all":
        return dataset
    train_set, val_set = split(dataset, train_fraction, seed)
    return train_set if which == "train" else val_set


def cmd_eval(args: argparse.Namespace) -> int:
    loaded = ckpt_mod.load_checkpoint(args.checkpoint)
    dataset = _load_resized(args.data, loaded.config.image_size)
    if dataset.class_names != loaded.class_names:
        if len(dataset.class_names) != len(loaded.class_names):
            raise ConfigError(
                f"dataset has {len(dataset.class_names)} classes, checkpoint was trained on "
                f"{len(loaded.class_names)}"
            )
        raise ConfigError(
            f"dataset classes {list(dataset.class_names)} do not match checkpoint classes "
            f"{list(loaded.class_names)}"
        )

    run = loaded.run or {}
    seed = args.seed if args.seed is not None else int(run.get("seed", 0))
    fraction = args.train_fraction if args.train_fraction is not None else float(run.get("train_fraction", 0.75))
    subset = _select_split(dataset, args.split, seed, fraction)

    loss, accuracy, logits = evaluate(
        loaded.params, loaded.config, subset.pixel_array(), subset.labels(),
        norm_mean=loaded.norm_mean, norm_std=loaded.norm_std,
    )
    cm = confusion(subset.labels(), logits.argmax(axis=1), dataset.class_names)
    report = score(cm)
    render_report(report, cm, args.out)
    print(f"evaluated {len(subset.images)} images (split={args.split})")
    print(f"loss={loss:.6f} accuracy={report.accuracy:.4f} precision_macro={report.precision_macro:.4f}")
    print(f"recall_macro={report.recall_macro:.4f} f1_macro={report.f1_macro:.4f}")
    print(f"cohen_kappa={report.cohen_kappa:.4f} mcc={report.mcc:.4f}")
    print(f"wrote scores, per-class table, and confusion matrix to {args.out}")
    return 0


def _softmax_1d(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def cmd_predict(args: argparse.Namespace) -> int:
    loaded = ckpt_mod.load_checkpoint(args.checkpoint)
    failures = 0
    for path in args.images:
        try:
            pixels = decode_image(path)
        except DataError as exc:
            print(f"error: {exc}", file=sys.stderr)
            failures += 1
            continue
        pixels = resize_pixels(pixels, loaded.config.image_size, loaded.config.image_size)
        batch = standardize(pixels[None], loaded.norm_mean, loaded.norm_std)
        with no_grad():
            logits = forward(batch, loaded.params, loaded.config, training=False).data
        probs = _softmax_1d(logits[0])
        ranked = np.argsort(probs)[::-1]
        top = ", ".join(f"{loaded.class_names[i]}={probs[i]:.4f}" for i in ranked[:3])
        print(f"{path}\t{loaded.class_names[ranked[0]]}\tp={probs[ranked[0]]:.4f}\ttop3: {top}")
    return 2 if failures else 0


def cmd_inspect(args: argparse.Namespace) -> int:
    target = Path(args.target)
    if target.is_dir():
        dataset = load_dataset(target)
        counts = dataset.class_counts()
        print(f"dataset: {target}")
        print(f"classes: {len(dataset.class_names)}  images: {len(dataset.images)}")
        for name, count in zip(dataset.class_names, counts):
            print(f"  {name}: {count}")
        fraction = args.train_fraction if args.train_fraction is not None else 0.75
        seed = args.seed if args.seed is not None else 0
        train_set, val_set = split(dataset, fraction, seed)
        tc, vc = train_set.class_counts(), val_set.class_counts()
        print(f"split preview (train_fraction={fraction}, seed={seed}): "
              f"{len(train_set.images)} train / {len(val_set.images)} val")
        for name, t, v in zip(dataset.class_names, tc, vc):
            print(f"  {name}: {t} train / {v} val")
        return 0

    loaded = ckpt_mod.load_checkpoint(target)
    print(f"checkpoint: {target}")
    for key, value in sorted(loaded.config.to_dict().items()):
        print(f"  {key}: {value}")
    print(f"parameters: {loaded.params.count()}")
    print(f"classes: {', '.join(loaded.class_names)}")
    print(f"norm_mean: {np.array2string(loaded.norm_mean, precision=6)}")
    print(f"norm_std: {np.array2string(loaded.norm_std, precision=6)}")
    if loaded.optimizer is not None:
        print(f"optimizer: AdamW t={loaded.optimizer['t']} lr={loaded.optimizer['lr']} "
              f"weight_decay={loaded.optimizer['weight_decay']}")
    if loaded.rng is not None:
        print(f"rng: seed={loaded.rng.get('seed')} epochs_completed={loaded.rng.get('epochs_completed')}")
    return 0


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1 here
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="defectvit", description="Surface-defect image classification")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a classifier on an image directory tree")
    train.add_argument("--data", dest="data_dir", help="dataset root: one subdirectory per class")
    train.add_argument("--out", dest="out_dir", help="output directory for checkpoint/manifest/curves")
    train.add_argument("--config", help="key=value config file (a run manifest also works)")
    for name, kind in (
        ("--image-size", int), ("--patch-size", int), ("--channels", int),
        ("--model-dim", int), ("--num-heads", int), ("--num-layers", int),
        ("--dropout", float), ("--ln-eps", float),
        ("--batch-size", int), ("--epochs", int), ("--lr", float),
        ("--weight-decay", float), ("--seed", int), ("--train-fraction", float),
        ("--rotation-factor", float), ("--zoom-height", float), ("--zoom-width", float),
    ):
        train.add_argument(name, type=kind)
    train.add_argument("--ffn-dim", type=_parse_optional_int)
    train.add_argument("--head-hidden", type=_parse_int_list, metavar="W1,W2,...")
    train.add_argument("--flip-horizontal", action=argparse.BooleanOptionalAction, default=None)
    train.set_defaults(func=cmd_train)

    evaluate_p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    evaluate_p.add_argument("--checkpoint", required=True)
    evaluate_p.add_argument("--data", required=True)
    evaluate_p.add_argument("--out", required=True, help="directory for score/report files")
    evaluate_p.add_argument("--split", choices=("all", "train", "val"), default="all")
    evaluate_p.add_argument("--seed", type=int, help="split seed (default: recorded in checkpoint)")
    evaluate_p.add_argument("--train-fraction", type=float, help="split fraction (default: recorded)")
    evaluate_p.set_defaults(func=cmd_eval)

    predict = sub.add_parser("predict", help="classify individual image files")
    predict.add_argument("--checkpoint", required=True)
    predict.add_argument("images", nargs="+", metavar="IMAGE")
    predict.set_defaults(func=cmd_predict)

    inspect = sub.add_parser("inspect", help="summarize a checkpoint or a dataset directory")
    inspect.add_argument("target", help="checkpoint file or dataset root")
    inspect.add_argument("--seed", type=int)
    inspect.add_argument("--train-fraction", type=float)
    inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigError, ShapeError, ParameterError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
