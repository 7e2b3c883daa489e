"""Classical classifiers implemented from scratch over dense feature rows.

Linear SVM trained by Pegasos-style stochastic subgradient descent
(one-vs-rest), k-nearest-neighbors with fully specified tie-breaking, a
depth-capped CART decision tree on Gini impurity, and a hard-voting
ensemble over the three.  Every train/predict path is deterministic given
its seed, and trained models are immutable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, IncompatibleArtifactError, SingleClassError
from .features import FeatureMatrix

MODEL_FORMAT_VERSION = 1


def _check_row(row, n_features: int) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (n_features,):
        raise DimensionMismatchError(f"row has shape {row.shape}, model expects ({n_features},)")
    return row


# ---------------------------------------------------------------------------
# Linear SVM
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearSvmModel:
    """One-vs-rest linear SVM: one (weight vector, bias) pair per class."""

    weights: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray  # (n_classes,)
    c: float
    epochs: int
    seed: int
    # Summed binary objectives after each epoch; index 0 is the
    # zero-weight starting point.
    objective_history: tuple[float, ...]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


def hinge_objective(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, c: float) -> float:
    """0.5*||w||^2 + C * sum of hinge losses for one binary problem."""
    margins = y * (x @ w + b)
    return float(0.5 * (w @ w) + c * np.maximum(0.0, 1.0 - margins).sum())


def _train_binary_svm(x, y, c, epochs, rng):
    """Binary hinge-loss SGD with the 1/(lambda*t) step schedule.

    lambda = 1/(C*N) makes the averaged subgradient objective proportional
    to 0.5*||w||^2 + C*sum(hinge).  The intercept rides along as an
    augmented unit feature, so it shrinks with the weights each step; an
    unshrunk intercept keeps a permanent offset from the first step (size
    C*N), which high-dimensional problems then interpolate around instead
    of correcting.  The per-epoch objective history is recorded in the
    unaugmented form, index 0 being the zero model.
    """
    n, dim = x.shape
    lam = 1.0 / (c * n)
    w = np.zeros(dim)
    b = 0.0
    t = 0
    history = [hinge_objective(w, b, x, y, c)]
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            shrink = 1.0 - eta * lam
            if y[i] * (x[i] @ w + b) < 1.0:
                w = shrink * w + (eta * y[i]) * x[i]
                b = shrink * b + eta * y[i]
            else:
                w = shrink * w
                b = shrink * b
        history.append(hinge_objective(w, b, x, y, c))
    return w, b, history


def train_svm(train: FeatureMatrix, c: float = 1.0, epochs: int = 200, seed: int = 0) -> LinearSvmModel:
    """Train one binary subproblem per class (labels mapped to +/-1)."""
    if c <= 0:
        raise ValueError(f"c must be positive, got {c}")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if len(np.unique(train.labels)) < 2:
        raise SingleClassError("SVM training needs at least 2 classes present")
    k = train.n_classes
    weights = np.zeros((k, train.n_features))
    bias = np.zeros(k)
    total = np.zeros(epochs + 1)
    for cls in range(k):
        y = np.where(train.labels == cls, 1.0, -1.0)
        rng = np.random.default_rng([seed, cls])
        weights[cls], bias[cls], history = _train_binary_svm(train.values, y, c, epochs, rng)
        total += np.asarray(history)
    return LinearSvmModel(
        weights=weights,
        bias=bias,
        c=c,
        epochs=epochs,
        seed=seed,
        objective_history=tuple(total.tolist()),
    )


def svm_decision_values(model: LinearSvmModel, row) -> np.ndarray:
    row = _check_row(row, model.n_features)
    return model.weights @ row + model.bias


def predict_svm(model: LinearSvmModel, row) -> int:
    """Argmax of per-class decision values; ties go to the lowest class id."""
    return int(np.argmax(svm_decision_values(model, row)))


# ---------------------------------------------------------------------------
# K-nearest neighbors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KnnModel:
    """Memorized training rows queried by Euclidean distance."""

    rows: np.ndarray
    labels: np.ndarray
    k: int
    n_classes: int

    def __post_init__(self):
        if not 1 <= self.k <= len(self.rows):
            raise ValueError(f"k={self.k} must be in [1, {len(self.rows)}]")


def train_knn(train: FeatureMatrix, k: int = 3) -> KnnModel:
    return KnnModel(
        rows=train.values.copy(),
        labels=train.labels.copy(),
        k=k,
        n_classes=train.n_classes,
    )


def predict_knn(model: KnnModel, row) -> int:
    """Majority label among the k nearest stored rows.

    Tie policy, applied in order: equal distances rank by lower stored-row
    index; equal vote counts prefer the class with the smaller mean distance
    among its voting neighbors; still-equal cases take the lowest class id.
    """
    row = _check_row(row, model.rows.shape[1])
    dists = np.sqrt(((model.rows - row) ** 2).sum(axis=1))
    nearest = np.argsort(dists, kind="stable")[: model.k]
    votes = np.bincount(model.labels[nearest], minlength=model.n_classes)
    tied = np.flatnonzero(votes == votes.max())
    if len(tied) == 1:
        return int(tied[0])
    mean_dist = [dists[nearest][model.labels[nearest] == cls].mean() for cls in tied]
    return int(tied[np.argmin(mean_dist)])


def knn_vote_fraction(model: KnnModel, row) -> float:
    """Share of the k votes cast for the predicted class."""
    row = _check_row(row, model.rows.shape[1])
    dists = np.sqrt(((model.rows - row) ** 2).sum(axis=1))
    nearest = np.argsort(dists, kind="stable")[: model.k]
    votes = np.bincount(model.labels[nearest], minlength=model.n_classes)
    return float(votes[predict_knn(model, row)] / model.k)


# ---------------------------------------------------------------------------
# Decision tree
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TreeLeaf:
    counts: np.ndarray  # per-class sample counts reaching this leaf


@dataclass(frozen=True)
class TreeNode:
    feature: int
    threshold: float
    left: "TreeNode | TreeLeaf"
    right: "TreeNode | TreeLeaf"


@dataclass(frozen=True)
class DecisionTreeModel:
    root: "TreeNode | TreeLeaf"
    max_depth: int | None
    min_leaf: int
    n_features: int
    n_classes: int


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p @ p))


def _best_split(values, labels, rows, n_classes, min_leaf):
    """Best (feature, threshold) by Gini reduction, or None.

    Candidates are midpoints between consecutive distinct sorted values.
    Ties keep the first candidate found, i.e. lowest feature index then
    lowest threshold.  Zero-gain splits are allowed: any impure node with
    non-constant features keeps splitting, which is what lets the tree
    reach exact fits on distinct rows.
    """
    node_labels = labels[rows]
    parent = _gini(np.bincount(node_labels, minlength=n_classes))
    n = len(rows)
    best = None  # (gain, feature, threshold)
    for feature in range(values.shape[1]):
        col = values[rows, feature]
        order = np.argsort(col, kind="stable")
        sorted_vals = col[order]
        sorted_labels = node_labels[order]
        boundaries = np.flatnonzero(sorted_vals[:-1] != sorted_vals[1:])
        if len(boundaries) == 0:
            continue
        n_left = boundaries + 1
        n_right = n - n_left
        valid = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        one_hot = np.zeros((n, n_classes))
        one_hot[np.arange(n), sorted_labels] = 1.0
        cum = np.cumsum(one_hot, axis=0)
        left_counts = cum[boundaries]
        right_counts = cum[-1] - left_counts
        gini_left = 1.0 - ((left_counts / n_left[:, None]) ** 2).sum(axis=1)
        gini_right = 1.0 - ((right_counts / n_right[:, None]) ** 2).sum(axis=1)
        gains = parent - (n_left * gini_left + n_right * gini_right) / n
        gains[~valid] = -np.inf
        b = int(np.argmax(gains))  # first max: lowest threshold wins ties
        if best is None or gains[b] > best[0]:
            threshold = (sorted_vals[boundaries[b]] + sorted_vals[boundaries[b] + 1]) / 2.0
            best = (gains[b], feature, threshold)
    if best is None:
        return None
    return best[1], best[2]


def _grow(values, labels, rows, depth, max_depth, min_leaf, n_classes):
    counts = np.bincount(labels[rows], minlength=n_classes)
    if (
        np.count_nonzero(counts) <= 1
        or (max_depth is not None and depth >= max_depth)
        or len(rows) < 2 * min_leaf
    ):
        return TreeLeaf(counts=counts)
    split = _best_split(values, labels, rows, n_classes, min_leaf)
    if split is None:
        return TreeLeaf(counts=counts)
    feature, threshold = split
    mask = values[rows, feature] <= threshold
    left = _grow(values, labels, rows[mask], depth + 1, max_depth, min_leaf, n_classes)
    right = _grow(values, labels, rows[~mask], depth + 1, max_depth, min_leaf, n_classes)
    return TreeNode(feature=feature, threshold=threshold, left=left, right=right)


def train_tree(train: FeatureMatrix, max_depth: int | None = 20, min_leaf: int = 1) -> DecisionTreeModel:
    """Grow a CART classifier; max_depth=None means unlimited."""
    if max_depth is not None and max_depth < 0:
        raise ValueError(f"max_depth must be >= 0 or None, got {max_depth}")
    if min_leaf < 1:
        raise ValueError(f"min_leaf must be >= 1, got {min_leaf}")
    rows = np.arange(train.n_rows)
    root = _grow(train.values, train.labels, rows, 0, max_depth, min_leaf, train.n_classes)
    return DecisionTreeModel(
        root=root,
        max_depth=max_depth,
        min_leaf=min_leaf,
        n_features=train.n_features,
        n_classes=train.n_classes,
    )


def _find_leaf(model: DecisionTreeModel, row: np.ndarray) -> TreeLeaf:
    node = model.root
    while isinstance(node, TreeNode):
        node = node.left if row[node.feature] <= node.threshold else node.right
    return node


def predict_tree(model: DecisionTreeModel, row) -> int:
    """Leaf majority class; ties go to the lowest class id."""
    row = _check_row(row, model.n_features)
    return int(np.argmax(_find_leaf(model, row).counts))


def tree_leaf_fraction(model: DecisionTreeModel, row) -> float:
    """Share of the reached leaf's samples belonging to the predicted class."""
    row = _check_row(row, model.n_features)
    counts = _find_leaf(model, row).counts
    return float(counts.max() / counts.sum())


def tree_depth(model: DecisionTreeModel) -> int:
    """Maximum number of internal nodes on any root-to-leaf path."""

    def walk(node):
        if isinstance(node, TreeLeaf):
            return 0
        return 1 + max(walk(node.left), walk(node.right))

    return walk(model.root)


# ---------------------------------------------------------------------------
# Hard voting ensemble
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VotingModel:
    """Hard-voting ensemble over the three classical models."""

    svm: LinearSvmModel
    knn: KnnModel
    tree: DecisionTreeModel

    def __post_init__(self):
        dims = {self.svm.n_features, self.knn.rows.shape[1], self.tree.n_features}
        classes = {self.svm.n_classes, self.knn.n_classes, self.tree.n_classes}
        if len(dims) != 1 or len(classes) != 1:
            raise DimensionMismatchError("voting members disagree on feature space or class set")

    @property
    def n_classes(self) -> int:
        return self.svm.n_classes


def train_voting(
    train: FeatureMatrix,
    svm_c: float = 1.0,
    svm_epochs: int = 200,
    knn_k: int = 3,
    tree_max_depth: int | None = 20,
    tree_min_leaf: int = 1,
    seed: int = 0,
) -> VotingModel:
    return VotingModel(
        svm=train_svm(train, c=svm_c, epochs=svm_epochs, seed=seed),
        knn=train_knn(train, k=knn_k),
        tree=train_tree(train, max_depth=tree_max_depth, min_leaf=tree_min_leaf),
    )


def member_votes(model: VotingModel, row) -> tuple[int, int, int]:
    return (
        predict_svm(model.svm, row),
        predict_knn(model.knn, row),
        predict_tree(model.tree, row),
    )


def predict_voting(model: VotingModel, row) -> int:
    """Majority of the members' votes; a 1-1-1 tie takes the lowest class id."""
    counts = np.bincount(member_votes(model, row), minlength=model.n_classes)
    return int(np.argmax(counts))


def voting_vote_fraction(model: VotingModel, row) -> float:
    votes = member_votes(model, row)
    counts = np.bincount(votes, minlength=model.n_classes)
    return float(counts[predict_voting(model, row)] / len(votes))


# ---------------------------------------------------------------------------
# Prediction dispatch and persistence
# ---------------------------------------------------------------------------

ShallowModel = LinearSvmModel | KnnModel | DecisionTreeModel | VotingModel

_PREDICT = {
    LinearSvmModel: predict_svm,
    KnnModel: predict_knn,
    DecisionTreeModel: predict_tree,
    VotingModel: predict_voting,
}


def predict(model: ShallowModel, row) -> int:
    return _PREDICT[type(model)](model, row)


def predict_all(model: ShallowModel, values: np.ndarray) -> np.ndarray:
    fn = _PREDICT[type(model)]
    return np.array([fn(model, row) for row in values], dtype=np.int64)


def predict_scored(model: ShallowModel, row) -> tuple[int, float]:
    """Predicted class id plus a confidence score.

    The score is the winning decision value for the SVM and the vote or
    leaf fraction for the other models.
    """
    if isinstance(model, LinearSvmModel):
        scores = svm_decision_values(model, row)
        cls = int(np.argmax(scores))
        return cls, float(scores[cls])
    if isinstance(model, KnnModel):
        return predict_knn(model, row), knn_vote_fraction(model, row)
    if isinstance(model, DecisionTreeModel):
        return predict_tree(model, row), tree_leaf_fraction(model, row)
    return predict_voting(model, row), voting_vote_fraction(model, row)


def _tree_node_to_doc(node):
    if isinstance(node, TreeLeaf):
        return {"counts": node.counts.tolist()}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _tree_node_to_doc(node.left),
        "right": _tree_node_to_doc(node.right),
    }


def _tree_node_from_doc(doc):
    if "counts" in doc:
        return TreeLeaf(counts=np.asarray(doc["counts"], dtype=np.int64))
    return TreeNode(
        feature=int(doc["feature"]),
        threshold=float(doc["threshold"]),
        left=_tree_node_from_doc(doc["left"]),
        right=_tree_node_from_doc(doc["right"]),
    )


def _model_to_doc(model) -> dict:
    if isinstance(model, LinearSvmModel):
        return {
            "model_type": "svm",
            "c": model.c,
            "epochs": model.epochs,
            "seed": model.seed,
            "weights": model.weights.tolist(),
            "bias": model.bias.tolist(),
            "objective_history": list(model.objective_history),
        }
    if isinstance(model, KnnModel):
        return {
            "model_type": "knn",
            "k": model.k,
            "n_classes": model.n_classes,
            "rows": model.rows.tolist(),
            "labels": model.labels.tolist(),
        }
    if isinstance(model, DecisionTreeModel):
        return {
            "model_type": "tree",
            "max_depth": model.max_depth,
            "min_leaf": model.min_leaf,
            "n_features": model.n_features,
            "n_classes": model.n_classes,
            "root": _tree_node_to_doc(model.root),
        }
    if isinstance(model, VotingModel):
        return {
            "model_type": "voting",
            "members": {
                "svm": _model_to_doc(model.svm),
                "knn": _model_to_doc(model.knn),
                "tree": _model_to_doc(model.tree),
            },
        }
    raise TypeError(f"not a serializable model: {type(model).__name__}")


def _model_from_doc(doc) -> ShallowModel:
    kind = doc.get("model_type")
    if kind == "svm":
        return LinearSvmModel(
            weights=np.asarray(doc["weights"], dtype=np.float64),
            bias=np.asarray(doc["bias"], dtype=np.float64),
            c=float(doc["c"]),
            epochs=int(doc["epochs"]),
            seed=int(doc["seed"]),
            objective_history=tuple(doc["objective_history"]),
        )
    if kind == "knn":
        return KnnModel(
            rows=np.asarray(doc["rows"], dtype=np.float64),
            labels=np.asarray(doc["labels"], dtype=np.int64),
            k=int(doc["k"]),
            n_classes=int(doc["n_classes"]),
        )
    if kind == "tree":
        return DecisionTreeModel(
            root=_tree_node_from_doc(doc["root"]),
            max_depth=doc["max_depth"],
            min_leaf=int(doc["min_leaf"]),
            n_features=int(doc["n_features"]),
            n_classes=int(doc["n_classes"]),
        )
    if kind == "voting":
        members = doc["members"]
        return VotingModel(
            svm=_model_from_doc(members["svm"]),
            knn=_model_from_doc(members["knn"]),
            tree=_model_from_doc(members["tree"]),
        )
    raise IncompatibleArtifactError(f"unknown model_type {kind!r}")


def model_to_json(model: ShallowModel, classes) -> str:
    """Versioned JSON for a trained model, carrying the class-name order."""
    doc = _model_to_doc(model)
    doc["version"] = MODEL_FORMAT_VERSION
    doc["classes"] = list(classes)
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def model_from_json(text: str) -> tuple[ShallowModel, list[str]]:
    doc = json.loads(text)
    version = doc.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise IncompatibleArtifactError(
            f"model format version {version!r}, expected {MODEL_FORMAT_VERSION}"
        )
    return _model_from_doc(doc), list(doc["classes"])
