"""Command-line entry points.

Subcommands: synth-data, pretrain, finetune, evaluate, kfold, ablate.
Every run writes a manifest (resolved config, seed, version, config hash)
into the output directory so results can be reproduced bit-for-bit.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 checkpoint
error, 1 any other failure.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .byol import init_byol, pretrain
from .checkpoint import load_checkpoint, load_into, save_checkpoint
from .config import ExperimentConfig
from .data import (
    Dataset,
    LabeledImage,
    export_dataset,
    kfold_plan,
    load_directory_dataset,
    resize_bilinear,
    split_dataset,
    synth_thermal_dataset,
)
from .errors import (
    CheckpointError,
    ClassCountMismatch,
    ConfigInvalid,
    EmptyDataset,
    EngineError,
    MissingClassDir,
    TooFewSamples,
    UnreadableImage,
)
from .metrics import evaluate_predictions, inference_timing
from .models import (
    ClassifierModel,
    build_classifier,
    build_imnet_encoder,
    count_parameters,
)
from .rng import derive_rng, derive_seed
from .supervised import predict, train_classifier

log = logging.getLogger("thermobyol")

DATA_ERRORS = (
    EmptyDataset,
    MissingClassDir,
    UnreadableImage,
    ClassCountMismatch,
    TooFewSamples,
)

# Component-ablation grid: every row shares the data split and init seeds
# with the complete configuration so differences come from the toggle alone.
ABLATION_GRID = [
    ("complete", {}),
    ("no_target", {"byol.use_target_network": False}),
    ("no_momentum", {"byol.use_momentum": False}),
    ("no_predictor", {"byol.use_predictor": False}),
    ("proj_128", {"byol.projection_dim": 128}),
    ("proj_512", {"byol.projection_dim": 512}),
    ("tau_0.90", {"byol.tau": 0.90}),
    ("tau_0.999", {"byol.tau": 0.999}),
    ("limited_aug", {"augment.preset": "limited"}),
    ("extended_aug", {"augment.preset": "extended"}),
]


# ---------------------------------------------------------------------------
# Output helpers


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig):
    text = (
        f"command = {command}\n"
        f"version = {__version__}\n"
        f"config_sha256 = {cfg.digest()}\n"
        f"{cfg.render()}"
    )
    (out / "manifest.txt").write_text(text)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, payload):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Config / data plumbing


def _resolve_config(args, extra_overrides=None) -> ExperimentConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "image_size", None) is not None:
        overrides["data.image_size"] = args.image_size
    if getattr(args, "classes", None) is not None:
        overrides["data.num_classes"] = args.classes
    if extra_overrides:
        overrides.update(extra_overrides)
    return ExperimentConfig(file=getattr(args, "config", None), overrides=overrides)


def _load_dataset(path, cfg: ExperimentConfig) -> Dataset:
    ds = load_directory_dataset(path, cfg["data.num_classes"])
    if not ds.images:
        raise EmptyDataset(f"no images under {path}")
    size = cfg["data.image_size"]
    images = []
    for im in ds.images:
        pixels = im.pixels
        if pixels.shape[1:] != (size, size):
            pixels = resize_bilinear(pixels, (size, size))
        images.append(LabeledImage(pixels, im.label, im.source_id))
    return Dataset(images, ds.class_names)


def _subset(ds: Dataset, indices):
    return [ds.images[i] for i in indices]


def _build_model(cfg: ExperimentConfig, seed):
    enc = build_imnet_encoder(cfg.encoder_config(), derive_rng(seed, "encoder-init"))
    head = build_classifier(
        cfg.classifier_config(), enc.feature_dim, derive_rng(seed, "classifier-init")
    )
    return enc, head


def _encoder_checkpoint_arrays(online_encoder):
    """Strip the online-branch prefix so fine-tuning can load the records."""
    return {
        name.replace("online.", "", 1): p.data
        for name, p in online_encoder.named_parameters().items()
    }


def _model_checkpoint_arrays(encoder, head):
    arrays = {name: p.data for name, p in encoder.named_parameters().items()}
    arrays.update({name: p.data for name, p in head.named_parameters().items()})
    return arrays


# ---------------------------------------------------------------------------
# Shared training/evaluation building blocks


def _run_pretrain(cfg: ExperimentConfig, images, seed):
    state = init_byol(
        cfg.encoder_config(), cfg.mlp_config(), cfg.byol_config(),
        derive_rng(seed, "byol-init"),
    )
    encoder, history = pretrain(
        state, images, cfg.augment_spec(),
        cfg.adam_config("byol.learning_rate"), derive_rng(seed, "byol-train"),
    )
    return encoder, history


def _run_finetune(cfg: ExperimentConfig, train_set, val_set, seed, init_arrays=None):
    enc, head = _build_model(cfg, seed)
    if init_arrays is not None:
        load_into(enc, init_arrays, strict=True)
    spec = cfg.augment_spec() if cfg["train.augment"] else None
    (enc, head), history = train_classifier(
        enc, head, train_set, val_set, cfg.train_config(),
        cfg.adam_config("train.learning_rate"), spec, derive_rng(seed, "finetune"),
    )
    return enc, head, history


def _evaluate_model(enc, head, samples, num_classes, batch_size):
    pixels = np.stack([s.pixels for s in samples])
    labels = np.array([s.label for s in samples])
    probs, _ = predict(enc, head, pixels, batch_size)
    return evaluate_predictions(probs, labels, num_classes), probs, labels


def _metric_row(report):
    return [
        f"{report.accuracy:.6f}",
        f"{report.macro_precision:.6f}",
        f"{report.macro_recall:.6f}",
        f"{report.macro_f1:.6f}",
        f"{report.auc_macro_ovr:.6f}",
    ]


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth_data(args) -> int:
    cfg = _resolve_config(args, {
        k: v for k, v in {
            "data.synth_per_class": args.per_class,
            "data.synth_size": args.size,
        }.items() if v is not None
    })
    out = _out_dir(args)
    size = cfg["data.synth_size"]
    ds = synth_thermal_dataset(
        num_classes=cfg["data.num_classes"],
        per_class=cfg["data.synth_per_class"],
        size=(size, size),
        seed=derive_seed(cfg["seed"], "synth-data"),
    )
    export_dataset(ds, out)
    _write_manifest(out, "synth-data", cfg)
    log.info("wrote %d images (%d classes) to %s", len(ds), ds.num_classes, out)
    return 0


def cmd_pretrain(args) -> int:
    extra = {}
    if args.epochs is not None:
        extra["byol.epochs"] = args.epochs
    if args.batch_size is not None:
        extra["byol.batch_size"] = args.batch_size
    if args.lr is not None:
        extra["byol.learning_rate"] = args.lr
    if args.tau is not None:
        extra["byol.tau"] = args.tau
    if args.proj_dim is not None:
        extra["byol.projection_dim"] = args.proj_dim
    if args.no_target:
        extra["byol.use_target_network"] = False
    if args.no_momentum:
        extra["byol.use_momentum"] = False
    if args.no_predictor:
        extra["byol.use_predictor"] = False
    if args.symmetrize:
        extra["byol.symmetrize_loss"] = True
    if args.augment_preset is not None:
        extra["augment.preset"] = args.augment_preset
    cfg = _resolve_config(args, extra)
    out = _out_dir(args)
    ds = _load_dataset(args.data, cfg)
    images = [im.pixels for im in ds.images]  # labels never consulted
    encoder, history = _run_pretrain(cfg, images, cfg["seed"])
    save_checkpoint(_encoder_checkpoint_arrays(encoder), out / "encoder.ckpt")
    _write_csv(out / "pretrain_loss.csv", ["epoch", "mean_loss"],
               [[e + 1, f"{loss:.6f}"] for e, loss in enumerate(history)])
    _write_manifest(out, "pretrain", cfg)
    log.info("pretraining done: %d epochs, final mean loss %.4f",
             len(history), history[-1])
    return 0


def cmd_finetune(args) -> int:
    extra = {}
    if args.epochs is not None:
        extra["train.max_epochs"] = args.epochs
    if args.batch_size is not None:
        extra["train.batch_size"] = args.batch_size
    if args.lr is not None:
        extra["train.learning_rate"] = args.lr
    if args.patience is not None:
        extra["train.early_stop_patience"] = args.patience
    if args.freeze_encoder:
        extra["train.freeze_encoder"] = True
    if args.no_augment:
        extra["train.augment"] = False
    cfg = _resolve_config(args, extra)
    out = _out_dir(args)
    ds = _load_dataset(args.data, cfg)
    split = split_dataset(
        ds, cfg.split_fractions(),
        seed=derive_seed(cfg["seed"], "split"),
        stratified=cfg["split.stratified"],
    )
    init_arrays = load_checkpoint(args.init_from) if args.init_from else None
    enc, head, history = _run_finetune(
        cfg, _subset(ds, split.train), _subset(ds, split.val), cfg["seed"], init_arrays
    )
    save_checkpoint(_model_checkpoint_arrays(enc, head), out / "model.ckpt")
    _write_csv(out / "history.csv",
               ["epoch", "train_loss", "val_loss", "val_accuracy"],
               [[e, f"{tl:.6f}", f"{vl:.6f}", f"{va:.6f}"] for e, tl, vl, va in history])
    if split.test:
        report, _, _ = _evaluate_model(
            enc, head, _subset(ds, split.test), ds.num_classes, cfg["train.batch_size"]
        )
        _write_json(out / "test_metrics.json", report.to_dict())
        log.info("test accuracy %.4f", report.accuracy)
    _write_manifest(out, "finetune", cfg)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    ds = _load_dataset(args.data, cfg)
    if args.split != "all":
        split = split_dataset(
            ds, cfg.split_fractions(),
            seed=derive_seed(cfg["seed"], "split"),
            stratified=cfg["split.stratified"],
        )
        samples = _subset(ds, getattr(split, args.split))
        if not samples:
            raise EmptyDataset(f"split {args.split!r} holds no samples")
    else:
        samples = ds.images
    enc, head = _build_model(cfg, cfg["seed"])
    arrays = load_checkpoint(args.ckpt)
    load_into(enc, arrays, strict=True)
    load_into(head, arrays, strict=True)
    batch_size = cfg["train.batch_size"]
    report, probs, labels = _evaluate_model(enc, head, samples, ds.num_classes, batch_size)

    cm_rows = np.zeros((ds.num_classes, ds.num_classes), dtype=np.int64)
    np.add.at(cm_rows, (labels, probs.argmax(axis=1)), 1)
    _write_csv(out / "confusion_matrix.csv",
               ["true\\pred"] + ds.class_names,
               [[ds.class_names[i]] + cm_rows[i].tolist() for i in range(ds.num_classes)])

    roc_rows = []
    from .metrics import roc_curve_points

    for cls in range(ds.num_classes):
        positives = labels == cls
        if positives.all() or not positives.any():
            continue
        for fpr, tpr in roc_curve_points(probs[:, cls], positives):
            roc_rows.append([cls, f"{fpr:.6f}", f"{tpr:.6f}"])
    _write_csv(out / "roc.csv", ["class", "fpr", "tpr"], roc_rows)

    payload = report.to_dict()
    payload["num_samples"] = len(samples)
    payload["num_parameters"] = count_parameters(ClassifierModel(enc, head))
    payload["checkpoint_bytes"] = Path(args.ckpt).stat().st_size
    if args.timing_batches > 0:
        pixels = np.stack([s.pixels for s in samples])

        def forward(batch):
            return predict(enc, head, batch, batch_size=len(batch))

        timing = inference_timing(
            forward, pixels, batch_size=min(batch_size, len(samples)),
            min_batches=args.timing_batches,
        )
        payload["timing"] = {
            "mean_ms_per_image": timing.mean_ms_per_image,
            "p50_ms_per_image": timing.p50,
            "p95_ms_per_image": timing.p95,
            "batch_size": timing.batch_size,
        }
    _write_json(out / "metrics.json", payload)
    _write_manifest(out, "evaluate", cfg)
    log.info("accuracy %.4f over %d samples", report.accuracy, len(samples))
    return 0


def cmd_kfold(args) -> int:
    extra = {}
    if args.k is not None:
        extra["kfold.k"] = args.k
    if args.epochs is not None:
        extra["train.max_epochs"] = args.epochs
    if args.pretrain_epochs is not None:
        extra["byol.epochs"] = max(args.pretrain_epochs, 1)
    cfg = _resolve_config(args, extra)
    out = _out_dir(args)
    ds = _load_dataset(args.data, cfg)
    plan = kfold_plan(len(ds), cfg["kfold.k"], seed=derive_seed(cfg["seed"], "kfold"))
    pretrain_epochs = args.pretrain_epochs if args.pretrain_epochs is not None else 0

    reports = []
    for fi, fold in enumerate(plan.folds):
        held = set(fold)
        pool = [ds.images[i] for i in range(len(ds)) if i not in held]
        fold_seed = derive_seed(cfg["seed"], "fold", fi)
        split = split_dataset(
            np.array([s.label for s in pool]),
            (0.9, 0.1, 0.0), seed=derive_seed(fold_seed, "val-split"),
            stratified=cfg["split.stratified"],
        )
        train_set = [pool[i] for i in split.train]
        val_set = [pool[i] for i in split.val]
        if not val_set:  # tiny pools can round the val share down to zero
            train_set, val_set = train_set[:-1], train_set[-1:]
        init_arrays = None
        if pretrain_epochs > 0:
            encoder, _ = _run_pretrain(cfg, [s.pixels for s in pool], fold_seed)
            init_arrays = _encoder_checkpoint_arrays(encoder)
        enc, head, _ = _run_finetune(cfg, train_set, val_set, fold_seed, init_arrays)
        report, _, _ = _evaluate_model(
            enc, head, _subset(ds, fold), ds.num_classes, cfg["train.batch_size"]
        )
        reports.append(report)
        log.info("fold %d: accuracy %.4f", fi + 1, report.accuracy)

    from .metrics import average_report

    avg = average_report(reports)
    rows = [[f"{fi + 1}"] + _metric_row(r) for fi, r in enumerate(reports)]
    rows.append(["Average"] + _metric_row(avg))
    _write_csv(out / "kfold.csv",
               ["Fold", "Accuracy", "Precision", "Recall", "F1", "AUC"], rows)
    _write_manifest(out, "kfold", cfg)
    log.info("k-fold average accuracy %.4f", avg.accuracy)
    return 0


def cmd_ablate(args) -> int:
    extra = {}
    if args.epochs is not None:
        extra["train.max_epochs"] = args.epochs
    if args.pretrain_epochs is not None:
        extra["byol.epochs"] = args.pretrain_epochs
    base_cfg = _resolve_config(args, extra)
    out = _out_dir(args)
    ds = _load_dataset(args.data, base_cfg)
    split = split_dataset(
        ds, base_cfg.split_fractions(),
        seed=derive_seed(base_cfg["seed"], "split"),
        stratified=base_cfg["split.stratified"],
    )
    train_set = _subset(ds, split.train)
    val_set = _subset(ds, split.val)
    test_set = _subset(ds, split.test) or val_set

    rows = []
    for name, overrides in ABLATION_GRID:
        cfg = base_cfg.with_overrides(overrides)
        encoder, _ = _run_pretrain(cfg, [s.pixels for s in train_set], cfg["seed"])
        enc, head, _ = _run_finetune(
            cfg, train_set, val_set, cfg["seed"],
            _encoder_checkpoint_arrays(encoder),
        )
        report, _, _ = _evaluate_model(
            enc, head, test_set, ds.num_classes, cfg["train.batch_size"]
        )
        rows.append([name] + _metric_row(report))
        log.info("ablation %-14s accuracy %.4f", name, report.accuracy)

    _write_csv(out / "ablation.csv",
               ["Configuration", "Accuracy", "Precision", "Recall", "F1", "AUC"], rows)
    _write_manifest(out, "ablate", base_cfg)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _add_common(sub, data=True):
    sub.add_argument("--config", help="path to a key = value config file")
    sub.add_argument("--seed", type=int, help="root random seed")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--image-size", type=int, help="square input resolution")
    sub.add_argument("--classes", type=int, help="number of classes")
    if data:
        sub.add_argument("--data", required=True, help="dataset root directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermobyol",
        description="Self-supervised thermal-image state classification toolkit.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("synth-data", help="generate a synthetic dataset")
    _add_common(s, data=False)
    s.add_argument("--per-class", type=int, help="images per class")
    s.add_argument("--size", type=int, help="square image size")
    s.set_defaults(func=cmd_synth_data)

    s = subs.add_parser("pretrain", help="self-supervised encoder pretraining")
    _add_common(s)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--tau", type=float, help="target EMA momentum")
    s.add_argument("--proj-dim", type=int, help="projection dimension")
    s.add_argument("--no-target", action="store_true", help="disable the target network")
    s.add_argument("--no-momentum", action="store_true", help="copy instead of EMA")
    s.add_argument("--no-predictor", action="store_true", help="drop the predictor head")
    s.add_argument("--symmetrize", action="store_true", help="average the swapped-view loss")
    s.add_argument("--augment-preset", choices=["limited", "extended"])
    s.set_defaults(func=cmd_pretrain)

    s = subs.add_parser("finetune", help="supervised training with early stopping")
    _add_common(s)
    s.add_argument("--init-from", help="encoder checkpoint to start from")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--patience", type=int)
    s.add_argument("--freeze-encoder", action="store_true")
    s.add_argument("--no-augment", action="store_true")
    s.set_defaults(func=cmd_finetune)

    s = subs.add_parser("evaluate", help="score a trained model checkpoint")
    _add_common(s)
    s.add_argument("--ckpt", required=True, help="model checkpoint")
    s.add_argument("--split", choices=["all", "train", "val", "test"], default="all")
    s.add_argument("--timing-batches", type=int, default=30,
                   help="batches for inference timing (0 disables)")
    s.set_defaults(func=cmd_evaluate)

    s = subs.add_parser("kfold", help="k-fold cross-validated training")
    _add_common(s)
    s.add_argument("--k", type=int)
    s.add_argument("--epochs", type=int, help="fine-tuning epochs per fold")
    s.add_argument("--pretrain-epochs", type=int,
                   help="self-supervised epochs per fold (0 = supervised only)")
    s.set_defaults(func=cmd_kfold)

    s = subs.add_parser("ablate", help="run the component-ablation grid")
    _add_common(s)
    s.add_argument("--epochs", type=int, help="fine-tuning epochs per configuration")
    s.add_argument("--pretrain-epochs", type=int)
    s.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        log.error("configuration error: %s", exc)
        return 2
    except DATA_ERRORS as exc:
        log.error("data error: %s", exc)
        return 3
    except CheckpointError as exc:
        log.error("checkpoint error: %s", exc)
        return 4
    except EngineError as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:
        log.error("i/o failure: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
