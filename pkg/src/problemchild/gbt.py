"""Gradient-boosted tree ensemble with logistic loss.

Implemented from scratch so the whole model artifact stays
self-contained, deterministic, and serializable to plain JSON.

Per boosting round a regression tree is fit to first/second-order loss
statistics (g = p - y, h = p(1-p)). Splits are exact greedy over
midpoints of consecutive distinct feature values with L2-regularized
gain

    gain = 1/2 * [GL^2/(HL+l) + GR^2/(HR+l) - (GL+GR)^2/(HL+HR+l)]

and leaf value -G/(H+l). A split is kept only if gain > 0. Raw scores
pass through a sigmoid: predict = sigmoid(base_score + lr * sum(leaf)).

Training is deterministic for a fixed seed regardless of record storage
order: records are canonically re-ordered by a content digest first.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import LayoutMismatchError, ModelFormatError, TrainingError
from .features import LAYOUT_VERSION, EdgeFeatureVector, FeatureVocabulary

MODEL_FORMAT = "pcmodel"
MODEL_FORMAT_VERSION = 1

_PROB_EPS = 1e-12


@dataclass
class GbtParams:
    n_rounds: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 5
    subsample: float = 1.0
    reg_lambda: float = 1.0


@dataclass
class LabeledEdge:
    features: EdgeFeatureVector
    label: int
    group_id: str = ""


@dataclass
class TreeNode:
    """Axis-aligned split node; a node with left=None is a leaf.
    Routing: x[feature] < threshold goes left."""

    feature: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    leaf_value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"leaf": self.leaf_value}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "leaf" in d:
            return cls(leaf_value=float(d["leaf"]))
        return cls(
            feature=int(d["feature"]),
            threshold=float(d["threshold"]),
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )


@dataclass
class GbtModel:
    trees: list
    learning_rate: float
    base_score: float
    vocab: Optional[FeatureVocabulary] = None
    training_meta: dict = field(default_factory=dict)


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _sigmoid_vec(margins: np.ndarray) -> np.ndarray:
    out = np.empty_like(margins)
    pos = margins >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-margins[pos]))
    e = np.exp(margins[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _record_digest(edge: LabeledEdge) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(edge.features.values, dtype=np.float64).tobytes())
    h.update(bytes([edge.label & 0xFF]))
    h.update(edge.group_id.encode("utf-8"))
    return h.hexdigest()


def _tree_leaf_values(node: TreeNode, X: np.ndarray, idx: np.ndarray,
                      out: np.ndarray) -> None:
    if node.is_leaf:
        out[idx] = node.leaf_value
        return
    go_left = X[idx, node.feature] < node.threshold
    _tree_leaf_values(node.left, X, idx[go_left], out)
    _tree_leaf_values(node.right, X, idx[~go_left], out)


def _predict_tree(node: TreeNode, x: np.ndarray) -> float:
    while not node.is_leaf:
        node = node.left if x[node.feature] < node.threshold else node.right
    return node.leaf_value


class _TreeBuilder:
    """Grows one regression tree from gradient/hessian statistics using
    per-feature global presort, shared across all trees of a fit."""

    def __init__(self, X: np.ndarray, presort: np.ndarray, params: GbtParams):
        self.X = X
        self.presort = presort
        self.p = params

    def build(self, grad: np.ndarray, hess: np.ndarray,
              in_node: np.ndarray) -> TreeNode:
        self.grad = grad
        self.hess = hess
        return self._grow(in_node, depth=0)

    def _grow(self, in_node: np.ndarray, depth: int) -> TreeNode:
        lam = self.p.reg_lambda
        g_sum = float(self.grad[in_node].sum())
        h_sum = float(self.hess[in_node].sum())
        n_node = int(in_node.sum())
        if depth >= self.p.max_depth or n_node < 2 * self.p.min_leaf:
            return TreeNode(leaf_value=-g_sum / (h_sum + lam))

        best_gain = 0.0
        best_feature = -1
        best_threshold = 0.0
        parent_score = g_sum * g_sum / (h_sum + lam)
        for f in range(self.X.shape[1]):
            order = self.presort[f]
            idx = order[in_node[order]]
            xs = self.X[idx, f]
            if xs[0] == xs[-1]:
                continue
            gs = np.cumsum(self.grad[idx])
            hs = np.cumsum(self.hess[idx])
            cut = np.nonzero(xs[:-1] != xs[1:])[0]
            n_left = cut + 1
            cut = cut[(n_left >= self.p.min_leaf)
                      & (n_node - n_left >= self.p.min_leaf)]
            if cut.size == 0:
                continue
            gl = gs[cut]
            hl = hs[cut]
            gr = g_sum - gl
            hr = h_sum - hl
            gains = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam)
                           - parent_score)
            j = int(np.argmax(gains))
            if gains[j] > best_gain:
                lo = xs[cut[j]]
                hi = xs[cut[j] + 1]
                threshold = (lo + hi) / 2.0
                if not lo < threshold:  # midpoint underflow on adjacent floats
                    threshold = hi
                best_gain = float(gains[j])
                best_feature = f
                best_threshold = float(threshold)

        if best_feature < 0:
            return TreeNode(leaf_value=-g_sum / (h_sum + lam))
        go_left = in_node & (self.X[:, best_feature] < best_threshold)
        go_right = in_node & ~(self.X[:, best_feature] < best_threshold)
        return TreeNode(
            feature=best_feature,
            threshold=best_threshold,
            left=self._grow(go_left, depth + 1),
            right=self._grow(go_right, depth + 1),
        )


def _log_loss(y: np.ndarray, margins: np.ndarray) -> float:
    p = np.clip(_sigmoid_vec(margins), _PROB_EPS, 1.0 - _PROB_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def train(data: Sequence[LabeledEdge], params: Optional[GbtParams] = None,
          seed: int = 0, vocab: Optional[FeatureVocabulary] = None) -> GbtModel:
    """Boost `params.n_rounds` regression trees with logistic loss."""
    params = params or GbtParams()
    if not data:
        raise TrainingError("training requires both classes")
    labels = {edge.label for edge in data}
    if labels - {0, 1}:
        raise TrainingError(f"labels must be 0/1, got {sorted(labels)}")
    if labels != {0, 1}:
        raise TrainingError("training requires both classes")

    layout_version = data[0].features.layout_version
    for edge in data:
        if edge.features.layout_version != layout_version:
            raise TrainingError("mixed feature layout versions in training data")

    ordered = sorted(data, key=_record_digest)
    X = np.ascontiguousarray(
        np.stack([edge.features.values for edge in ordered]), dtype=np.float64)
    y = np.array([edge.label for edge in ordered], dtype=np.float64)
    n, d = X.shape

    pos_rate = float(y.mean())
    base_score = math.log(pos_rate / (1.0 - pos_rate))

    presort = np.argsort(X, axis=0, kind="stable").T.copy()
    builder = _TreeBuilder(X, presort, params)
    rng = random.Random(seed)

    margins = np.full(n, base_score, dtype=np.float64)
    round_losses = [_log_loss(y, margins)]
    trees = []
    for _ in range(params.n_rounds):
        p = _sigmoid_vec(margins)
        grad = p - y
        hess = p * (1.0 - p)
        in_node = np.ones(n, dtype=bool)
        if params.subsample < 1.0:
            k = max(1, int(round(params.subsample * n)))
            keep = rng.sample(range(n), k)
            in_node = np.zeros(n, dtype=bool)
            in_node[keep] = True
        tree = builder.build(grad, hess, in_node)
        trees.append(tree)
        leaf_out = np.zeros(n, dtype=np.float64)
        _tree_leaf_values(tree, X, np.arange(n), leaf_out)
        margins += params.learning_rate * leaf_out
        round_losses.append(_log_loss(y, margins))

    meta = {
        "n_samples": n,
        "n_features": d,
        "n_pos": int(y.sum()),
        "n_neg": int(n - y.sum()),
        "seed": seed,
        "params": asdict(params),
        "layout_version": layout_version,
        "round_losses": round_losses,
    }
    return GbtModel(trees=trees, learning_rate=params.learning_rate,
                    base_score=base_score, vocab=vocab, training_meta=meta)


def predict_margin(model: GbtModel, x: np.ndarray) -> float:
    total = model.base_score
    for tree in model.trees:
        total += model.learning_rate * _predict_tree(tree, x)
    return total


def predict_weight(model: GbtModel, features: EdgeFeatureVector) -> float:
    """Class probability of the malicious label, in the open interval (0,1)."""
    if features.layout_version != model.training_meta.get("layout_version"):
        raise LayoutMismatchError("feature layout incompatible with model")
    p = sigmoid(predict_margin(model, features.values))
    return min(max(p, _PROB_EPS), 1.0 - _PROB_EPS)


def predict_weights(model: GbtModel, X: np.ndarray) -> np.ndarray:
    """Vectorized predict_weight over a (n, d) feature matrix."""
    margins = np.full(X.shape[0], model.base_score, dtype=np.float64)
    idx = np.arange(X.shape[0])
    leaf_out = np.zeros(X.shape[0], dtype=np.float64)
    for tree in model.trees:
        leaf_out.fill(0.0)
        _tree_leaf_values(tree, X, idx, leaf_out)
        margins += model.learning_rate * leaf_out
    return np.clip(_sigmoid_vec(margins), _PROB_EPS, 1.0 - _PROB_EPS)


def save_model(model: GbtModel) -> bytes:
    doc = {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "layout_version": model.training_meta.get("layout_version",
                                                  LAYOUT_VERSION),
        "learning_rate": model.learning_rate,
        "base_score": model.base_score,
        "meta": model.training_meta,
        "vocab": model.vocab.to_json_dict() if model.vocab else None,
        "trees": [tree.to_dict() for tree in model.trees],
    }
    return json.dumps(doc, separators=(",", ":")).encode("utf-8")


def load_model(data: bytes) -> GbtModel:
    try:
        doc = json.loads(data.decode("utf-8") if isinstance(data, bytes) else data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"corrupt model document: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("corrupt model document: missing format marker")
    version = doc.get("layout_version")
    if version != LAYOUT_VERSION:
        raise ModelFormatError(
            f"model layout_version {version} incompatible with current "
            f"layout_version {LAYOUT_VERSION}")
    try:
        vocab = (FeatureVocabulary.from_json_dict(doc["vocab"])
                 if doc.get("vocab") else None)
        return GbtModel(
            trees=[TreeNode.from_dict(t) for t in doc["trees"]],
            learning_rate=float(doc["learning_rate"]),
            base_score=float(doc["base_score"]),
            vocab=vocab,
            training_meta=dict(doc["meta"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model document: {exc}") from None


def save_model_file(model: GbtModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_model(model))


def load_model_file(path) -> GbtModel:
    with open(path, "rb") as fh:
        return load_model(fh.read())


def model_digest(model: GbtModel) -> str:
    return hashlib.sha256(save_model(model)).hexdigest()


def labeled_edges_from_instances(instances, vocab: FeatureVocabulary) -> list:
    """Featurize every parent->child pair (stub parents included) with the
    child event's label. Every CREATE event feeding an edge must be
    labeled."""
    from .features import featurize_edge
    from .ingest import Label, iter_edges

    edges = []
    for parent, child, _ in iter_edges(instances, vocab.delta_t_cap):
        event = child.create_event
        if event.label is None:
            where = (f"line {event.source_line}" if event.source_line
                     else f"event {event.event_id}")
            raise TrainingError(f"unlabeled event at {where}")
        edges.append(LabeledEdge(
            features=featurize_edge(parent, child, vocab),
            label=1 if event.label is Label.MALICIOUS else 0,
            group_id=child.create_event.group_id or "",
        ))
    return edges


def train_from_instances(instances, params: Optional[GbtParams] = None,
                         seed: int = 0, k_tfidf: int = 200,
                         ngram_range: tuple = (1, 2),
                         delta_t_cap: float = None) -> GbtModel:
    """Fit the vocabulary on a labeled training corpus, featurize its
    edges, and train; the vocabulary travels inside the model."""
    from .features import fit_vocabulary
    from .ingest import DEFAULT_DELTA_T_CAP

    cap = DEFAULT_DELTA_T_CAP if delta_t_cap is None else delta_t_cap
    vocab = fit_vocabulary(instances, k_tfidf=k_tfidf,
                           ngram_range=ngram_range, delta_t_cap=cap)
    edges = labeled_edges_from_instances(instances, vocab)
    return train(edges, params=params, seed=seed, vocab=vocab)
