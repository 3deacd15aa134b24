"""Gradient boosted regression trees, written from first principles.

Second-order boosting: each round fits a depth-limited tree to the
gradient/hessian of the loss at the current prediction, with leaf values
-sum(g) / (sum(h) + l2_lambda). The split search is exact greedy over
the sorted unique values of every feature; ties break toward the lowest
feature index, then the lowest threshold. Sort orders are computed once
per fit and partitioned down the tree, so each round costs O(depth * n * p).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .glm import EstimationError, PROB_FLOOR, sigmoid

SQUARED = "squared"
LOGISTIC = "logistic"


@dataclass(frozen=True)
class GbtParams:
    n_trees: int = 300
    learning_rate: float = 0.05
    max_depth: int = 3
    min_child_weight: float = 10.0
    l2_lambda: float = 1.0
    subsample: float = 1.0

    def validate(self) -> None:
        if self.n_trees < 0 or self.max_depth < 1:
            raise EstimationError("n_trees must be >= 0 and max_depth >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise EstimationError("learning_rate must be in (0, 1]")
        if self.min_child_weight < 0 or self.l2_lambda < 0:
            raise EstimationError("min_child_weight and l2_lambda must be >= 0")
        if not 0.0 < self.subsample <= 1.0:
            raise EstimationError("subsample must be in (0, 1]")


@dataclass
class GbtTree:
    """Flat node arrays; feature == -1 marks a leaf."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray


@dataclass
class GbtModel:
    objective: str
    base_score: float
    trees: list
    loss_trace: list
    params: GbtParams
    n_features: int
    seed: int = 0


class _TreeBuilder:
    def __init__(self, X, g, h, params):
        self.X = X
        self.g = g
        self.h = h
        self.prm = params
        self.n = X.shape[0]
        self.feature, self.threshold = [], []
        self.left, self.right, self.value = [], [], []
        self._mask = np.zeros(self.n, dtype=bool)

    def _best_split(self, sorted_idx, G, H, parent_score):
        lam = self.prm.l2_lambda
        mcw = self.prm.min_child_weight
        best_gain, best_f, best_thr, best_pos = 0.0, -1, 0.0, -1
        for f, idx in enumerate(sorted_idx):
            vals = self.X[idx, f]
            if vals[0] == vals[-1]:
                continue
            cut = np.nonzero(vals[1:] != vals[:-1])[0]
            gl = np.cumsum(self.g[idx])[cut]
            hl = np.cumsum(self.h[idx])[cut]
            hr = H - hl
            ok = (hl >= mcw) & (hr >= mcw)
            if not ok.any():
                continue
            gr = G - gl
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam)
                              - parent_score)
            gain[~ok | ~np.isfinite(gain)] = -np.inf
            j = int(np.argmax(gain))
            if gain[j] > best_gain:
                best_gain = float(gain[j])
                best_f = f
                best_thr = 0.5 * (vals[cut[j]] + vals[cut[j] + 1])
                best_pos = int(cut[j])
        return best_gain, best_f, best_thr, best_pos

    def grow(self, sorted_idx, depth):
        nid = len(self.feature)
        for lst in (self.feature, self.threshold, self.left, self.right, self.value):
            lst.append(0)
        rows = sorted_idx[0]
        G = float(self.g[rows].sum())
        H = float(self.h[rows].sum())
        lam = self.prm.l2_lambda
        leaf_val = 0.0 if H + lam <= 0.0 else -G / (H + lam)
        split = None
        if depth < self.prm.max_depth and rows.size >= 2:
            parent_score = 0.0 if H + lam <= 0.0 else G * G / (H + lam)
            gain, f, thr, pos = self._best_split(sorted_idx, G, H, parent_score)
            if f >= 0:
                split = (f, thr, pos)
        if split is None:
            self.feature[nid] = -1
            self.threshold[nid] = 0.0
            self.left[nid] = self.right[nid] = -1
            self.value[nid] = leaf_val
            return nid
        f, thr, pos = split
        left_rows = sorted_idx[f][:pos + 1]
        self._mask[left_rows] = True
        left_lists, right_lists = [], []
        for idx in sorted_idx:
            sel = self._mask[idx]
            left_lists.append(idx[sel])
            right_lists.append(idx[~sel])
        self._mask[left_rows] = False
        self.feature[nid] = f
        self.threshold[nid] = thr
        self.value[nid] = leaf_val
        self.left[nid] = self.grow(left_lists, depth + 1)
        self.right[nid] = self.grow(right_lists, depth + 1)
        return nid

    def to_tree(self) -> GbtTree:
        return GbtTree(
            np.asarray(self.feature, dtype=np.int32),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.int32),
            np.asarray(self.right, dtype=np.int32),
            np.asarray(self.value, dtype=np.float64),
        )


def _tree_predict(tree: GbtTree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.int32)
    rows = np.arange(X.shape[0])
    while True:
        feat = tree.feature[node]
        active = feat >= 0
        if not active.any():
            break
        r = rows[active]
        nd = node[active]
        goes_left = X[r, feat[active]] < tree.threshold[nd]
        node[r] = np.where(goes_left, tree.left[nd], tree.right[nd])
    return tree.value[node]


def _loss(objective, y, raw):
    if objective == SQUARED:
        d = y - raw
        return 0.5 * float(np.mean(d * d))
    return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


def fit_gbt(X, y, objective, params: GbtParams = None, seed: int = 0) -> GbtModel:
    """Boost `params.n_trees` rounds; records full-data training loss per round."""
    params = params or GbtParams()
    params.validate()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise EstimationError("bad training shapes for gbt")
    if objective == LOGISTIC:
        if not np.isin(np.unique(y), (0.0, 1.0)).all():
            raise EstimationError("logistic gbt response must be 0/1")
        prev = min(max(float(y.mean()), PROB_FLOOR), 1.0 - PROB_FLOOR)
        base = math.log(prev / (1.0 - prev))
    elif objective == SQUARED:
        base = float(y.mean())
    else:
        raise EstimationError(f"unknown gbt objective {objective!r}")

    n, p = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    full_lists = [order[:, f] for f in range(p)]
    rng = np.random.default_rng(seed)
    raw = np.full(n, base)
    trees, trace = [], []
    for _ in range(params.n_trees):
        if objective == SQUARED:
            g = raw - y
            h = np.ones(n)
        else:
            prob = sigmoid(raw)
            g = prob - y
            h = prob * (1.0 - prob)
        if params.subsample < 1.0:
            smask = rng.random(n) < params.subsample
            if not smask.any():
                smask[rng.integers(n)] = True
            lists = [idx[smask[idx]] for idx in full_lists]
        else:
            lists = full_lists
        builder = _TreeBuilder(X, g, h, params)
        builder.grow(lists, 0)
        tree = builder.to_tree()
        trees.append(tree)
        raw = raw + params.learning_rate * _tree_predict(tree, X)
        cur = _loss(objective, y, raw)
        if not math.isfinite(cur):
            raise EstimationError(
                f"non-finite training loss at round {len(trees)} "
                f"(base={base}, last finite loss={trace[-1] if trace else 'none'})")
        trace.append(cur)
    return GbtModel(objective, base, trees, trace, params, p, seed)


def predict_gbt(model: GbtModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise EstimationError("prediction design has wrong number of features")
    raw = np.full(X.shape[0], model.base_score)
    for tree in model.trees:
        raw += model.params.learning_rate * _tree_predict(tree, X)
    if model.objective == LOGISTIC:
        return np.clip(sigmoid(raw), PROB_FLOOR, 1.0 - PROB_FLOOR)
    return raw


def gbt_to_json_obj(model: GbtModel) -> dict:
    return {
        "objective": model.objective,
        "base_score": model.base_score,
        "seed": model.seed,
        "n_features": model.n_features,
        "params": {
            "n_trees": model.params.n_trees,
            "learning_rate": model.params.learning_rate,
            "max_depth": model.params.max_depth,
            "min_child_weight": model.params.min_child_weight,
            "l2_lambda": model.params.l2_lambda,
            "subsample": model.params.subsample,
        },
        "loss_trace": list(model.loss_trace),
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
            }
            for t in model.trees
        ],
    }


def gbt_from_json_obj(obj: dict) -> GbtModel:
    params = GbtParams(**obj["params"])
    trees = [
        GbtTree(
            np.asarray(t["feature"], dtype=np.int32),
            np.asarray(t["threshold"], dtype=np.float64),
            np.asarray(t["left"], dtype=np.int32),
            np.asarray(t["right"], dtype=np.int32),
            np.asarray(t["value"], dtype=np.float64),
        )
        for t in obj["trees"]
    ]
    return GbtModel(obj["objective"], obj["base_score"], trees,
                    list(obj["loss_trace"]), params, obj["n_features"], obj["seed"])
