"""Malware-family classification over opcode sequences.

Corpus parsing, n-gram featurization with scaling and oversampling,
from-scratch shallow classifiers (linear SVM, KNN, decision tree, hard
voting), a from-scratch 1D convolutional network, evaluation metrics,
and a deterministic CLI pipeline.
"""

from .config import RunConfig, load_config
from .corpus import (
    Corpus,
    LabeledSample,
    OpcodeSequence,
    generate_synthetic_corpus,
    load_corpus,
    parse_opcode_file,
    stratified_split,
)
from .errors import OpclassError
from .features import (
    FeatureMatrix,
    NGramVocabulary,
    ScalerParams,
    apply_scaler,
    build_vocabulary,
    encode_sequences,
    fit_scaler,
    generate_ngrams,
    random_oversample,
    vectorize,
    vectorize_all,
)
from .metrics import MetricsReport, compute_report, confusion, render_report
from .neural import (
    CnnModel,
    CnnTrainConfig,
    build_cnn,
    cross_entropy,
    forward,
    load_checkpoint,
    predict_cnn,
    save_checkpoint,
    train_cnn,
)
from .shallow import (
    DecisionTreeModel,
    KnnModel,
    LinearSvmModel,
    VotingModel,
    model_from_json,
    model_to_json,
    predict,
    predict_all,
    train_knn,
    train_svm,
    train_tree,
    train_voting,
)

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "CnnModel",
    "CnnTrainConfig",
    "DecisionTreeModel",
    "FeatureMatrix",
    "KnnModel",
    "LabeledSample",
    "LinearSvmModel",
    "MetricsReport",
    "NGramVocabulary",
    "OpclassError",
    "OpcodeSequence",
    "RunConfig",
    "ScalerParams",
    "VotingModel",
    "apply_scaler",
    "build_cnn",
    "build_vocabulary",
    "compute_report",
    "confusion",
    "cross_entropy",
    "encode_sequences",
    "fit_scaler",
    "forward",
    "generate_ngrams",
    "generate_synthetic_corpus",
    "load_checkpoint",
    "load_config",
    "load_corpus",
    "model_from_json",
    "model_to_json",
    "parse_opcode_file",
    "predict",
    "predict_all",
    "predict_cnn",
    "random_oversample",
    "render_report",
    "save_checkpoint",
    "stratified_split",
    "train_cnn",
    "train_knn",
    "train_svm",
    "train_tree",
    "train_voting",
    "vectorize",
    "vectorize_all",
]
