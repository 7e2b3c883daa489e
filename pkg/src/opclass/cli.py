"""Command line front end.

Four subcommands: `ingest` parses a corpus directory into a manifest plus
a tokenized cache, `train` runs the configured pipeline and persists the
model with its metrics, `predict` scores opcode files against a saved
artifact, and `synth` materializes a synthetic corpus.

Exit codes: 0 success, 1 configuration or IO failure, 2 data error.
Artifacts carry no timestamps or absolute paths, so identical configs
produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import MODEL_NAMES, PIPELINE_ORDERS, RunConfig, load_config, override_config
from .corpus import (
    Corpus,
    LabeledSample,
    OpcodeSequence,
    generate_synthetic_corpus,
    load_corpus,
    make_corpus,
    parse_opcode_file,
    render_opcode_file,
    stratified_split,
)
from .errors import (
    ConfigError,
    IncompatibleArtifactError,
    NoSamplesError,
    OpclassError,
)
from .features import (
    FeatureMatrix,
    NGramVocabulary,
    ScalerParams,
    apply_scaler,
    build_token_index,
    build_vocabulary,
    encode_sequences,
    encode_token_row,
    fit_scaler,
    load_featurizer,
    random_oversample,
    save_featurizer,
    vectorize,
    vectorize_all,
)
from .metrics import compute_report, confusion, render_report, report_to_dict
from .neural import CnnTrainConfig, forward, load_checkpoint, save_checkpoint, softmax, train_cnn
from .shallow import (
    model_from_json,
    model_to_json,
    predict_all,
    predict_scored,
    train_knn,
    train_svm,
    train_tree,
    train_voting,
)

MANIFEST_NAME = "manifest.json"
CACHE_NAME = "corpus.json"
FEATURIZER_NAME = "features.json"
MODEL_NAME = "model.json"
CHECKPOINT_NAME = "model.ckpt"
METRICS_NAME = "metrics.json"
SIDECAR_VERSION = 1


def _dump_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Ingest
# ---------------------------------------------------------------------------


def corpus_to_cache(corpus: Corpus) -> dict:
    return {
        "samples": [
            {"family": s.family, "sample_id": s.sample_id, "tokens": list(s.sequence.tokens)}
            for s in corpus.samples
        ],
        "skipped": corpus.skipped,
    }


def corpus_from_cache(doc: dict) -> Corpus:
    samples = [
        LabeledSample(
            family=entry["family"],
            sample_id=entry["sample_id"],
            sequence=OpcodeSequence(tuple(entry["tokens"])),
        )
        for entry in doc["samples"]
    ]
    return make_corpus(samples, skipped=int(doc.get("skipped", 0)))


def build_manifest(corpus: Corpus) -> dict:
    families: dict[str, int] = {}
    for sample in corpus.samples:
        families[sample.family] = families.get(sample.family, 0) + 1
    return {"families": families, "total": len(corpus.samples), "skipped": corpus.skipped}


def cmd_ingest(config: RunConfig, json_out: bool = False, stream=None) -> int:
    stream = stream or sys.stdout
    corpus = load_corpus(config.corpus_dir)
    artifact_dir = Path(config.artifact_dir)
    artifact_dir.mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(corpus)
    (artifact_dir / MANIFEST_NAME).write_text(_dump_json(manifest), encoding="utf-8")
    (artifact_dir / CACHE_NAME).write_text(_dump_json(corpus_to_cache(corpus)), encoding="utf-8")
    if json_out:
        stream.write(_dump_json(manifest))
    else:
        stream.write(
            f"ingested {manifest['total']} samples across {len(manifest['families'])} families"
            f" ({manifest['skipped']} skipped) -> {config.artifact_dir}\n"
        )
    return 0


def load_cached_corpus(artifact_dir: str | Path) -> Corpus:
    path = Path(artifact_dir) / CACHE_NAME
    if not path.exists():
        raise ConfigError(f"no corpus cache at {path}; run ingest first")
    return corpus_from_cache(json.loads(path.read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------


def prepare_shallow(config: RunConfig, corpus: Corpus):
    """Featurize per the configured order; returns (train, test, vocab, scaler).

    paper-faithful fits the vocabulary, oversampler, and scaler on the full
    corpus before splitting (statistics leak across the split by design);
    leak-free splits first and fits everything on the training rows only.
    """
    sequences = corpus.sequences()
    labels = corpus.labels()
    n_classes = len(corpus.families)
    if config.pipeline_order == "paper-faithful":
        vocab = build_vocabulary(sequences, config.ngram_orders)
        matrix = vectorize_all(sequences, labels, vocab, n_classes)
        matrix = random_oversample(matrix, config.seed)
        scaler = fit_scaler(matrix)
        matrix = apply_scaler(matrix, scaler)
        split = stratified_split(matrix.labels, config.test_fraction, config.seed)
        return matrix.take(split.train), matrix.take(split.test), vocab, scaler
    split = stratified_split(labels, config.test_fraction, config.seed)
    train_rows = list(split.train)
    test_rows = list(split.test)
    vocab = build_vocabulary([sequences[i] for i in train_rows], config.ngram_orders)
    train = vectorize_all([sequences[i] for i in train_rows], labels[train_rows], vocab, n_classes)
    test = vectorize_all([sequences[i] for i in test_rows], labels[test_rows], vocab, n_classes)
    train = random_oversample(train, config.seed)
    scaler = fit_scaler(train)
    return apply_scaler(train, scaler), apply_scaler(test, scaler), vocab, scaler


def prepare_cnn(config: RunConfig, corpus: Corpus):
    """Encoded train/test arrays for the network, honoring the pipeline order.

    Sequence input encodes each sample as its fixed-length scaled-id row;
    ngram input reuses the shallow featurization.  Returns (train_x,
    train_y, test_x, test_y, extras) where extras holds whatever predict
    will need (token index or featurizer).
    """
    if config.cnn_input == "ngram":
        train, test, vocab, scaler = prepare_shallow(config, corpus)
        extras = {"vocab": vocab, "scaler": scaler}
        return train.values, train.labels, test.values, test.labels, extras
    n_classes = len(corpus.families)
    if config.pipeline_order == "paper-faithful":
        token_index = build_token_index(corpus.sequences())
        enc = encode_sequences(corpus.samples, token_index, config.cnn_seq_len, corpus.class_index)
        matrix = random_oversample(FeatureMatrix(enc.matrix, enc.labels, n_classes), config.seed)
        split = stratified_split(matrix.labels, config.test_fraction, config.seed)
        train = matrix.take(split.train)
        test = matrix.take(split.test)
        return train.values, train.labels, test.values, test.labels, {"token_index": token_index}
    labels = corpus.labels()
    split = stratified_split(labels, config.test_fraction, config.seed)
    train_samples = [corpus.samples[i] for i in split.train]
    test_samples = [corpus.samples[i] for i in split.test]
    token_index = build_token_index([s.sequence for s in train_samples])
    enc_train = encode_sequences(train_samples, token_index, config.cnn_seq_len, corpus.class_index)
    enc_test = encode_sequences(test_samples, token_index, config.cnn_seq_len, corpus.class_index)
    train = random_oversample(FeatureMatrix(enc_train.matrix, enc_train.labels, n_classes), config.seed)
    return train.values, train.labels, enc_test.matrix, enc_test.labels, {"token_index": token_index}


def _train_shallow_model(config: RunConfig, train: FeatureMatrix):
    if config.model == "svm":
        return train_svm(train, c=config.svm_c, epochs=config.svm_epochs, seed=config.seed)
    if config.model == "knn":
        return train_knn(train, k=config.knn_k)
    if config.model == "tree":
        return train_tree(train, max_depth=config.tree_max_depth, min_leaf=config.tree_min_leaf)
    return train_voting(
        train,
        svm_c=config.svm_c,
        svm_epochs=config.svm_epochs,
        knn_k=config.knn_k,
        tree_max_depth=config.tree_max_depth,
        tree_min_leaf=config.tree_min_leaf,
        seed=config.seed,
    )


def train_from_config(config: RunConfig) -> dict:
    """Run the full training pipeline; writes artifacts, returns a summary.

    The summary dict carries the metrics document, the rendered table text,
    and the artifact paths that were written.
    """
    corpus = load_cached_corpus(config.artifact_dir)
    families = corpus.families
    n_classes = len(families)
    artifact_dir = Path(config.artifact_dir)
    artifact_dir.mkdir(parents=True, exist_ok=True)

    extra_lines: list[str] = []
    doc: dict = {
        "model": config.model,
        "pipeline_order": config.pipeline_order,
        "seed": config.seed,
    }
    written: list[Path] = []

    if config.model == "cnn":
        train_x, train_y, test_x, test_y, extras = prepare_cnn(config, corpus)
        train_config = CnnTrainConfig(
            epochs=config.cnn_epochs,
            batch_size=config.cnn_batch_size,
            lr=config.cnn_lr,
            seed=config.seed,
            channels1=config.cnn_channels1,
            channels2=config.cnn_channels2,
            hidden=config.cnn_hidden,
            kernel_size=config.cnn_kernel,
            dropout_rate=config.cnn_dropout,
        )
        model, history = train_cnn(train_x, train_y, n_classes, train_config)
        predictions = np.argmax(forward(model, test_x), axis=1)
        checkpoint_path = artifact_dir / CHECKPOINT_NAME
        save_checkpoint(checkpoint_path, model)
        written.append(checkpoint_path)
        sidecar = {
            "version": SIDECAR_VERSION,
            "classes": families,
            "cnn_input": config.cnn_input,
            "input_dim": model.input_dim,
            "loss_history": history,
            "token_index": extras.get("token_index"),
        }
        sidecar_path = Path(str(checkpoint_path) + ".json")
        sidecar_path.write_text(_dump_json(sidecar), encoding="utf-8")
        written.append(sidecar_path)
        if "vocab" in extras:
            featurizer_path = artifact_dir / FEATURIZER_NAME
            save_featurizer(featurizer_path, extras["vocab"], extras["scaler"])
            written.append(featurizer_path)
        doc["loss_history"] = history
        test_labels = test_y
    else:
        train, test, vocab, scaler = prepare_shallow(config, corpus)
        model = _train_shallow_model(config, train)
        predictions = predict_all(model, test.values)
        featurizer_path = artifact_dir / FEATURIZER_NAME
        save_featurizer(featurizer_path, vocab, scaler)
        written.append(featurizer_path)
        model_path = artifact_dir / MODEL_NAME
        model_path.write_text(model_to_json(model, families), encoding="utf-8")
        written.append(model_path)
        if config.model == "voting":
            member_accuracy = {}
            for name, member in (("svm", model.svm), ("knn", model.knn), ("tree", model.tree)):
                member_predictions = predict_all(member, test.values)
                member_accuracy[name] = float(np.mean(member_predictions == test.labels))
            doc["member_accuracy"] = member_accuracy
            extra_lines.append("member accuracy:")
            for name in ("svm", "knn", "tree"):
                extra_lines.append(f"  {name:<6} {100.0 * member_accuracy[name]:.2f}%")
        test_labels = test.labels

    cm = confusion(test_labels, predictions, n_classes)
    report = compute_report(cm)
    doc.update(report_to_dict(report, families, cm))
    metrics_path = artifact_dir / METRICS_NAME
    metrics_path.write_text(_dump_json(doc), encoding="utf-8")
    written.append(metrics_path)

    table = render_report(report, families, cm)
    if extra_lines:
        table = table + "\n" + "\n".join(extra_lines)
    return {"doc": doc, "table": table, "written": written, "report": report}


def cmd_train(config: RunConfig, json_out: bool = False, stream=None) -> int:
    stream = stream or sys.stdout
    result = train_from_config(config)
    if json_out:
        stream.write(_dump_json(result["doc"]))
    else:
        stream.write(result["table"] + "\n")
        stream.write(f"artifacts written to {config.artifact_dir}\n")
    return 0


# ---------------------------------------------------------------------------
# Predict
# ---------------------------------------------------------------------------


class _ShallowScorer:
    def __init__(self, artifact: Path):
        model, classes = model_from_json(artifact.read_text(encoding="utf-8"))
        vocab, scaler = load_featurizer(artifact.parent / FEATURIZER_NAME)
        self.model = model
        self.classes = classes
        self.vocab = vocab
        self.scaler = scaler

    def score(self, sequence: OpcodeSequence) -> tuple[str, float]:
        row = vectorize(sequence, self.vocab)
        row = (row - self.scaler.mean) / self.scaler.scale
        label, score = predict_scored(self.model, row)
        return self.classes[label], score


class _CnnScorer:
    def __init__(self, artifact: Path):
        self.model = load_checkpoint(artifact)
        sidecar_path = Path(str(artifact) + ".json")
        if not sidecar_path.exists():
            raise IncompatibleArtifactError(f"missing checkpoint sidecar {sidecar_path}")
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        if sidecar.get("version") != SIDECAR_VERSION:
            raise IncompatibleArtifactError(f"sidecar version {sidecar.get('version')!r} unsupported")
        self.classes = sidecar["classes"]
        self.token_index = sidecar.get("token_index")
        if self.token_index is None:
            self.vocab, self.scaler = load_featurizer(artifact.parent / FEATURIZER_NAME)

    def score(self, sequence: OpcodeSequence) -> tuple[str, float]:
        if self.token_index is not None:
            row = encode_token_row(sequence.tokens, self.token_index, self.model.input_dim)
        else:
            row = vectorize(sequence, self.vocab)
            row = (row - self.scaler.mean) / self.scaler.scale
        probs = softmax(forward(self.model, row[None]))[0]
        label = int(np.argmax(probs))
        return self.classes[label], float(probs[label])


def load_scorer(artifact: str | Path):
    """A scorer for any persisted model: maps one sequence to (family, score)."""
    artifact = Path(artifact)
    if artifact.suffix == ".ckpt":
        return _CnnScorer(artifact)
    return _ShallowScorer(artifact)


def _collect_opcode_files(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.is_file() and p.name.endswith(".opcode"))
        if not files:
            raise NoSamplesError(f"no .opcode files in {path}")
        return files
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return [path]


def cmd_predict(artifact: str, target: str, json_out: bool = False, stream=None, err_stream=None) -> int:
    stream = stream or sys.stdout
    err_stream = err_stream or sys.stderr
    scorer = load_scorer(artifact)
    files = _collect_opcode_files(Path(target))
    results = []
    for path in files:
        try:
            sequence = parse_opcode_file(path.read_text(encoding="utf-8"))
            family, score = scorer.score(sequence)
        except (OpclassError, OSError, UnicodeDecodeError) as exc:
            err_stream.write(f"skip {path}: {exc}\n")
            continue
        results.append({"path": str(path), "family": family, "score": score})
    if not results:
        raise NoSamplesError(f"no predictable samples under {target}")
    if json_out:
        stream.write(_dump_json(results))
    else:
        for entry in results:
            stream.write(f"{entry['path']}\t{entry['family']}\t{entry['score']:.6f}\n")
    return 0


# ---------------------------------------------------------------------------
# Synth
# ---------------------------------------------------------------------------


def cmd_synth(config: RunConfig, json_out: bool = False, stream=None) -> int:
    stream = stream or sys.stdout
    corpus = generate_synthetic_corpus(
        n_classes=config.synth_classes,
        samples_per_class=config.synth_samples,
        seq_len=config.synth_seq_len,
        vocab_size=config.synth_vocab,
        seed=config.seed,
    )
    out_dir = Path(config.corpus_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sample in corpus.samples:
        name = f"{sample.family}_{sample.sample_id}.opcode"
        (out_dir / name).write_text(render_opcode_file(sample.sequence), encoding="utf-8")
    summary = {
        "directory": str(out_dir),
        "families": len(corpus.families),
        "samples": len(corpus.samples),
    }
    if json_out:
        stream.write(_dump_json(summary))
    else:
        stream.write(f"wrote {summary['samples']} files for {summary['families']} families to {out_dir}\n")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opclass",
        description="Malware-family classification over opcode sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a corpus directory into a manifest and token cache")
    p.add_argument("corpus_dir", nargs="?", default=None, help="directory of .opcode files")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--out", help="artifact directory (overrides config)")
    p.add_argument("--json", action="store_true", help="print the manifest as JSON")

    p = sub.add_parser("train", help="train the configured model and write artifacts")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--model", choices=MODEL_NAMES, help="model selector (overrides config)")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("--order", choices=PIPELINE_ORDERS, help="pipeline order (overrides config)")
    p.add_argument("--out", help="artifact directory (overrides config)")
    p.add_argument("--json", action="store_true", help="print the metrics document instead of the table")

    p = sub.add_parser("predict", help="score opcode files with a saved model")
    p.add_argument("target", help="an .opcode file or a directory of them")
    p.add_argument("--model", required=True, dest="artifact", help="model artifact path")
    p.add_argument("--json", action="store_true", help="emit predictions as JSON")

    p = sub.add_parser("synth", help="materialize a synthetic corpus")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("--out", help="output corpus directory (overrides config)")
    p.add_argument("--json", action="store_true", help="print a JSON summary")

    return parser


def _resolve_config(args, **overrides) -> RunConfig:
    config = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    return override_config(config, **overrides)


def _print_error(exc: BaseException, err_stream) -> None:
    err_stream.write(f"error: {exc}\n")
    cause = exc.__cause__
    while cause is not None:
        err_stream.write(f"  caused by: {cause}\n")
        cause = cause.__cause__


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "ingest":
            config = _resolve_config(args, corpus_dir=args.corpus_dir, artifact_dir=args.out)
            return cmd_ingest(config, json_out=args.json)
        if args.command == "train":
            config = _resolve_config(
                args,
                model=args.model,
                seed=args.seed,
                pipeline_order=args.order,
                artifact_dir=args.out,
            )
            return cmd_train(config, json_out=args.json)
        if args.command == "predict":
            return cmd_predict(args.artifact, args.target, json_out=args.json)
        config = _resolve_config(args, seed=args.seed, corpus_dir=args.out)
        return cmd_synth(config, json_out=args.json)
    except (ConfigError, IncompatibleArtifactError) as exc:
        _print_error(exc, sys.stderr)
        return 1
    except OSError as exc:
        _print_error(exc, sys.stderr)
        return 1
    except OpclassError as exc:
        _print_error(exc, sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
