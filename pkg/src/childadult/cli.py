"""Command line entry point: ``childadult <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import torch

from .checkpoint import CheckpointError, load_encoder, load_head, save_encoder, save_head
from .corpus import CorpusError, load_manifest, synth_corpus
from .encoder import init_encoder
from .harness import plots
from .harness.pipeline import SegmentFeatures, evaluate_head, finetune_on_splits, split_corpus, write_report
from .harness.training import FinetuneConfig, PretrainConfig, TrainingDivergence, pretrain
from .harness.tsne import tsne_export
from .heads import HeadConfig

logger = logging.getLogger("childadult")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3


def cmd_synth(args) -> int:
    sessions = synth_corpus(args.out, args.sessions, args.duration, args.seed)
    print(f"wrote {len(sessions)} sessions to {Path(args.out) / 'manifest.json'}")
    return EXIT_OK


def cmd_init(args) -> int:
    encoder = init_encoder(args.seed)
    save_encoder(args.out, encoder, {"source": "random-init", "seed": args.seed})
    print(f"wrote randomly initialized backbone to {args.out}")
    return EXIT_OK


def _pretrain_sessions(sessions, split_seed):
    if len(sessions) >= 3:
        splits = split_corpus(sessions, split_seed)
        return splits["train"], splits["val"]
    return sessions, sessions


def cmd_pretrain(args) -> int:
    sessions = load_manifest(args.manifest)
    train, val = _pretrain_sessions(sessions, args.split_seed)
    config = PretrainConfig(
        lr=args.lr, batch_size=args.batch, temperature=args.temp, max_epochs=args.epochs,
        patience=args.patience, trainable_top_k=args.layers, steps_per_epoch=args.steps_per_epoch,
        seed=args.seed,
    )
    result = pretrain(train, config, val_sessions=val)
    out = Path(args.out)
    history = {
        "train_loss": result.train_losses,
        "val_loss": result.val_losses,
        "initial_val_loss": result.initial_val_loss,
        "best_epoch": result.best_epoch,
    }
    save_encoder(out, result.encoder, {"source": "contrastive-pretrain", "seed": args.seed,
                                       "lr": args.lr, "history": history})
    curve = out.with_suffix(".loss.csv")
    with curve.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (a, b) in enumerate(zip(result.train_losses, result.val_losses)):
            w.writerow([i, repr(a), repr(b)])
    plots.loss_curves(result.train_losses, result.val_losses, out.with_suffix(".loss.png"), result.best_epoch)
    print(f"best epoch {result.best_epoch}, validation loss {min(result.val_losses):.4f}; wrote {out}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    sessions = load_manifest(args.manifest)
    encoder, _ = load_encoder(args.backbone)
    splits = split_corpus(sessions, args.split_seed)
    config = FinetuneConfig(
        lr=args.lr, weight_decay=args.weight_decay, max_epochs=args.epochs, batch_size=args.batch,
        head=HeadConfig(kind=args.head, input_dim=encoder.config.model_dim, n_layers=encoder.config.n_layers),
        seed=args.seed,
    )
    result = finetune_on_splits(encoder, splits, config)
    save_head(args.out, result.head, args.backbone, {
        "seed": args.seed, "best_epoch": result.best_epoch, "best_val_macro_f1": result.best_val_f1,
        "train_loss": result.train_losses, "val_macro_f1": result.val_f1,
    })
    print(f"best epoch {result.best_epoch}, validation macro-F1 {result.best_val_f1:.4f}; wrote {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    sessions = load_manifest(args.manifest)
    encoder, _ = load_encoder(args.backbone)
    head, _ = load_head(args.head, args.backbone)
    splits = split_corpus(sessions, args.split_seed)
    report = evaluate_head(encoder, head, splits[args.split], args.split)
    paths = write_report(report, args.report)
    print(json.dumps({"macro_f1": report.macro_f1, **{k: str(v) for k, v in paths.items()}}))
    return EXIT_OK


def cmd_tsne(args) -> int:
    sessions = load_manifest(args.manifest)
    encoder, _ = load_encoder(args.backbone)
    splits = split_corpus(sessions, args.split_seed)
    features = SegmentFeatures(encoder, splits[args.split])
    labels = ["child" if y else "adult" for y in features.labels]
    result = tsne_export(features.pooled(), labels, args.out, seed=args.seed)
    print(json.dumps({"silhouette": result.silhouette, "csv": str(result.csv_path),
                      "image": str(result.image_path)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="childadult", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic two-speaker corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--sessions", type=int, required=True)
    s.add_argument("--duration", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("init", help="write a randomly initialized backbone checkpoint")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("pretrain", help="contrastive pre-training of the top transformer layers")
    s.add_argument("--manifest", required=True)
    s.add_argument("--layers", type=int, required=True, help="number of top transformer layers to train")
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--temp", type=float, default=0.1)
    s.add_argument("--lr", type=float, default=1e-5)
    s.add_argument("--patience", type=int, default=5)
    s.add_argument("--steps-per-epoch", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("finetune", help="train a classifier head on a frozen backbone")
    s.add_argument("--manifest", required=True)
    s.add_argument("--backbone", required=True)
    s.add_argument("--head", choices=("rnn", "cnn"), required=True)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--lr", type=float, default=2e-4)
    s.add_argument("--weight-decay", type=float, default=1e-4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("evaluate", help="macro-F1 report with demographic subgroups")
    s.add_argument("--manifest", required=True)
    s.add_argument("--backbone", required=True)
    s.add_argument("--head", required=True)
    s.add_argument("--split", choices=("train", "val", "test"), default="test")
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("tsne", help="export a 2-D t-SNE of pooled segment embeddings")
    s.add_argument("--backbone", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", choices=("train", "val", "test"), default="test")
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tsne)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.use_deterministic_algorithms(True)
    try:
        return args.func(args)
    except TrainingDivergence as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (CorpusError, CheckpointError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
