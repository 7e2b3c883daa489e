#!/usr/bin/env python3
"""Train every model on one synthetic corpus and print a comparison table.

Generates a corpus, ingests it, then runs the five classifiers with a
shared split so the accuracy column is directly comparable.  The CNN
defaults here are smaller than the package defaults (shorter sequence,
fewer epochs) to keep the run interactive; raise them via flags for a
closer look.
"""

import argparse
import io
import sys
import time
from pathlib import Path

from opclass.cli import cmd_ingest, cmd_synth, train_from_config
from opclass.config import RunConfig, override_config

MODELS = ("svm", "knn", "tree", "voting", "cnn")


def parse_args(argv):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="benchmark_run", help="working directory (created if missing)")
    ap.add_argument("--classes", type=int, default=3)
    ap.add_argument("--samples", type=int, default=30, help="samples per class")
    ap.add_argument("--seq-len", type=int, default=120)
    ap.add_argument("--vocab", type=int, default=24)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--order", choices=("paper-faithful", "leak-free"), default="paper-faithful")
    ap.add_argument("--cnn-seq-len", type=int, default=64)
    ap.add_argument("--cnn-epochs", type=int, default=40)
    ap.add_argument("--cnn-lr", type=float, default=3e-3)
    return ap.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    root = Path(args.out)
    base = override_config(
        RunConfig(),
        corpus_dir=str(root / "corpus"),
        artifact_dir=str(root / "artifacts"),
        seed=args.seed,
        pipeline_order=args.order,
        synth_classes=args.classes,
        synth_samples=args.samples,
        synth_seq_len=args.seq_len,
        synth_vocab=args.vocab,
        cnn_seq_len=args.cnn_seq_len,
        cnn_epochs=args.cnn_epochs,
        cnn_lr=args.cnn_lr,
    )

    sink = io.StringIO()
    cmd_synth(base, stream=sink)
    cmd_ingest(base, stream=sink)
    print(
        f"corpus: {args.classes} families x {args.samples} samples, "
        f"seq len {args.seq_len}, vocab {args.vocab}, seed {args.seed}, {args.order} order"
    )

    rows = []
    details = {}
    for name in MODELS:
        t0 = time.perf_counter()
        result = train_from_config(override_config(base, model=name))
        elapsed = time.perf_counter() - t0
        doc = result["doc"]
        rows.append((name, doc["accuracy"], doc["weighted"]["f1"], elapsed))
        if "member_accuracy" in doc:
            details[name] = doc["member_accuracy"]

    print()
    print(f"{'model':<8} {'accuracy':>10} {'weighted f1':>12} {'seconds':>9}")
    for name, acc, f1, elapsed in rows:
        print(f"{name:<8} {100 * acc:>9.2f}% {100 * f1:>11.2f}% {elapsed:>9.2f}")
    for name, members in details.items():
        parts = ", ".join(f"{m}={100 * a:.2f}%" for m, a in sorted(members.items()))
        print(f"{name} members: {parts}")
    print(f"\nartifacts for the last model trained are in {root / 'artifacts'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
