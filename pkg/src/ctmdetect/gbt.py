"""Gradient-boosted decision trees for multiclass classification.

Second-order (Newton) boosting on the softmax cross-entropy objective with
K parallel tree sequences per round, exact greedy splits over presorted
feature values (no histogram approximation), and the standard regularized
gain G²/(H+λ).  Determinism: for a fixed seed, training is bit-reproducible;
inference goes through one jit kernel shared by the batch and streaming
paths.

Model files are versioned JSON; floats are serialized via their shortest
round-tripping representation, so save/load is bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from numba import njit, prange

from .errors import ConfigError, DataError, ModelFormatError

MODEL_FORMAT = "ctmdetect-gbt"
MODEL_VERSION = 1

HP_BOUNDS = {
    "n_rounds": (10, 500),
    "max_depth": (2, 8),
    "learning_rate": (0.01, 0.5),
    "min_child_weight": (0.0, math.inf),
    "l2_lambda": (0.0, math.inf),
    "subsample": (0.0, 1.0),
    "colsample": (0.0, 1.0),
}

_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class GbtHyperParams:
    n_rounds: int = 50
    max_depth: int = 3
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    l2_lambda: float = 1.0
    subsample: float = 1.0
    colsample: float = 1.0

    def validate(self):
        for f in fields(self):
            lo, hi = HP_BOUNDS[f.name]
            v = getattr(self, f.name)
            if not lo <= v <= hi:
                raise ConfigError(f"{f.name}={v} outside [{lo}, {hi}]")
        if self.subsample <= 0 or self.colsample <= 0:
            raise ConfigError("subsample and colsample must be positive")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "GbtHyperParams":
        hp = cls(**d)
        hp.validate()
        return hp


@dataclass
class Tree:
    """One regression tree in flat-array form; klass is its margin column."""

    klass: int
    feature: np.ndarray    # int32, -1 at leaves
    threshold: np.ndarray  # float64, split rule: x < thr goes left
    left: np.ndarray       # int32 child ids, tree-local
    right: np.ndarray
    value: np.ndarray      # float64 leaf deltas (learning rate folded in)
    cover: np.ndarray      # float64 training weight mass per node


def balanced_weights(y, n_classes: Optional[int] = None) -> np.ndarray:
    """Per-sample weights equalizing total weight across present classes."""
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise DataError("empty label array")
    k = int(n_classes) if n_classes is not None else int(y.max()) + 1
    counts = np.bincount(y, minlength=k)
    present = counts > 0
    kp = int(present.sum())
    if kp <= 1:
        return np.ones(y.size)
    w_class = np.zeros(k)
    w_class[present] = y.size / (kp * counts[present])
    return w_class[y]


# ---------------------------------------------------------------------------
# jit kernels


@njit(cache=True)
def _slot_sums(g, h, w, slot_of, n_slots):
    G = np.zeros(n_slots)
    H = np.zeros(n_slots)
    W = np.zeros(n_slots)
    for i in range(g.shape[0]):
        s = slot_of[i]
        if s >= 0:
            G[s] += g[i]
            H[s] += h[i]
            W[s] += w[i]
    return G, H, W


@njit(cache=True, parallel=True)
def _scan_splits(vals, sort_idx, cols, g, h, slot_of, n_slots, lam, mcw,
                 slot_G, slot_H, out_gain, out_thr):
    """Best split per (candidate feature, frontier node slot).

    One pass per feature over the presorted sample order, accumulating
    left-side G/H per slot; thresholds are midpoints between distinct
    adjacent values.  ``vals`` holds the presorted feature values
    column-major so the hot loop streams memory sequentially.
    """
    n = vals.shape[0]
    for ci in prange(cols.shape[0]):
        f = cols[ci]
        gl = np.zeros(n_slots)
        hl = np.zeros(n_slots)
        lastv = np.zeros(n_slots)
        started = np.zeros(n_slots, np.uint8)
        for kk in range(n):
            i = sort_idx[kk, f]
            s = slot_of[i]
            if s < 0:
                continue
            v = vals[kk, f]
            if started[s] == 1 and v > lastv[s]:
                hls = hl[s]
                hrs = slot_H[s] - hls
                if hls >= mcw and hrs >= mcw:
                    gls = gl[s]
                    grs = slot_G[s] - gls
                    gain = 0.0
                    dl = hls + lam
                    dr = hrs + lam
                    dp = slot_H[s] + lam
                    if dl > 0.0:
                        gain += gls * gls / dl
                    if dr > 0.0:
                        gain += grs * grs / dr
                    if dp > 0.0:
                        gain -= slot_G[s] * slot_G[s] / dp
                    if gain > out_gain[ci, s]:
                        t = 0.5 * (lastv[s] + v)
                        if not lastv[s] < t:
                            # midpoint collapsed onto the left value
                            t = v
                        out_gain[ci, s] = gain
                        out_thr[ci, s] = t
            gl[s] += g[i]
            hl[s] += h[i]
            lastv[s] = v
            started[s] = 1


@njit(cache=True)
def _apply_splits(X, node_of, nfeat, nthr, nleft, nright):
    for i in range(node_of.shape[0]):
        nd = node_of[i]
        if nd >= 0 and nfeat[nd] >= 0:
            if X[i, nfeat[nd]] < nthr[nd]:
                node_of[i] = nleft[nd]
            else:
                node_of[i] = nright[nd]


@njit(cache=True)
def _tree_margin_add(X, feat, thr, left, right, value, out_col):
    for i in range(X.shape[0]):
        nd = 0
        while feat[nd] >= 0:
            if X[i, feat[nd]] < thr[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out_col[i] += value[nd]


@njit(cache=True)
def forest_margins(X, feat, thr, left, right, value, tree_off, tree_cls, base, out):
    """Per-class margins of the whole ensemble; shared by batch and rt."""
    n = X.shape[0]
    n_trees = tree_off.shape[0] - 1
    k = base.shape[0]
    for i in range(n):
        for c in range(k):
            out[i, c] = base[c]
        for t in range(n_trees):
            o = tree_off[t]
            nd = 0
            while feat[o + nd] >= 0:
                if X[i, feat[o + nd]] < thr[o + nd]:
                    nd = left[o + nd]
                else:
                    nd = right[o + nd]
            out[i, tree_cls[t]] += value[o + nd]


@njit(cache=True)
def softmax_rows(m):
    """Row-wise softmax in place (max-shifted)."""
    for i in range(m.shape[0]):
        mx = m[i, 0]
        for k in range(1, m.shape[1]):
            if m[i, k] > mx:
                mx = m[i, k]
        s = 0.0
        for k in range(m.shape[1]):
            e = math.exp(m[i, k] - mx)
            m[i, k] = e
            s += e
        for k in range(m.shape[1]):
            m[i, k] /= s


# ---------------------------------------------------------------------------
# training


def _grow_tree(X, vals, sort_idx, g, h, w, node_of, cols, hp: GbtHyperParams, klass: int) -> Tree:
    feat = [-1]
    thr = [0.0]
    left = [-1]
    right = [-1]
    slot0 = np.where(node_of >= 0, 0, -1).astype(np.int32)
    G0, H0, W0 = _slot_sums(g, h, w, slot0, 1)
    node_G = [float(G0[0])]
    node_H = [float(H0[0])]
    node_W = [float(W0[0])]

    frontier = [0]
    for _ in range(hp.max_depth):
        n_slots = len(frontier)
        slot_map = np.full(len(feat), -1, dtype=np.int32)
        for s, nd in enumerate(frontier):
            slot_map[nd] = s
        slot_of = np.full(node_of.shape[0], -1, dtype=np.int32)
        mask = node_of >= 0
        slot_of[mask] = slot_map[node_of[mask]]

        slot_G = np.array([node_G[nd] for nd in frontier])
        slot_H = np.array([node_H[nd] for nd in frontier])
        out_gain = np.zeros((cols.shape[0], n_slots))
        out_thr = np.zeros((cols.shape[0], n_slots))
        _scan_splits(
            vals, sort_idx, cols, g, h, slot_of, n_slots,
            hp.l2_lambda, hp.min_child_weight, slot_G, slot_H, out_gain, out_thr,
        )

        best_ci = np.argmax(out_gain, axis=0)
        new_frontier = []
        for s, nd in enumerate(frontier):
            gain = out_gain[best_ci[s], s]
            if gain <= _MIN_GAIN:
                continue
            feat[nd] = int(cols[best_ci[s]])
            thr[nd] = float(out_thr[best_ci[s], s])
            for child in range(2):
                cid = len(feat)
                feat.append(-1)
                thr.append(0.0)
                left.append(-1)
                right.append(-1)
                node_G.append(0.0)
                node_H.append(0.0)
                node_W.append(0.0)
                if child == 0:
                    left[nd] = cid
                else:
                    right[nd] = cid
                new_frontier.append(cid)
        if not new_frontier:
            break

        nfeat = np.array(feat, dtype=np.int32)
        nthr = np.array(thr)
        nleft = np.array(left, dtype=np.int32)
        nright = np.array(right, dtype=np.int32)
        _apply_splits(X, node_of, nfeat, nthr, nleft, nright)

        slot_map2 = np.full(len(feat), -1, dtype=np.int32)
        for s, nd in enumerate(new_frontier):
            slot_map2[nd] = s
        slot_of2 = np.full(node_of.shape[0], -1, dtype=np.int32)
        mask = node_of >= 0
        slot_of2[mask] = slot_map2[node_of[mask]]
        Gc, Hc, Wc = _slot_sums(g, h, w, slot_of2, len(new_frontier))
        for s, nd in enumerate(new_frontier):
            node_G[nd] = float(Gc[s])
            node_H[nd] = float(Hc[s])
            node_W[nd] = float(Wc[s])
        frontier = new_frontier

    n_nodes = len(feat)
    value = np.zeros(n_nodes)
    for nd in range(n_nodes):
        if feat[nd] < 0:
            denom = node_H[nd] + hp.l2_lambda
            if denom > 0.0:
                value[nd] = -hp.learning_rate * node_G[nd] / denom
    return Tree(
        klass=klass,
        feature=np.array(feat, dtype=np.int32),
        threshold=np.array(thr),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=value,
        cover=np.array(node_W),
    )


def _softmax_np(margins):
    z = margins - margins.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _weighted_logloss(probs, y, w):
    p = np.clip(probs[np.arange(y.size), y], 1e-15, None)
    return float(-(w * np.log(p)).sum() / w.sum())


def presort(X) -> np.ndarray:
    """Stable per-column argsort, reusable across trainings on the same X.

    Column-major so the split scan walks each column sequentially.
    """
    return np.asfortranarray(np.argsort(X, axis=0, kind="stable").astype(np.int32))


def presorted_values(X, sort_idx) -> np.ndarray:
    """Feature values in presorted order, column-major (scan-friendly)."""
    return np.asfortranarray(np.take_along_axis(np.asarray(X), sort_idx, axis=0))


def train(
    X,
    y,
    w=None,
    hp: Optional[GbtHyperParams] = None,
    seed: int = 0,
    class_names: Optional[Sequence[str]] = None,
    feature_names: Optional[Sequence[str]] = None,
    sort_idx: Optional[np.ndarray] = None,
    sorted_vals: Optional[np.ndarray] = None,
) -> "GbtModel":
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError("X must be (n, d) with one label per row")
    if X.shape[1] == 0:
        raise DataError("X has no feature columns")
    if not np.isfinite(X).all():
        raise DataError("X contains non-finite values")
    if np.unique(y).size < 2:
        raise DataError("training needs at least two classes")
    hp = hp if hp is not None else GbtHyperParams()
    hp.validate()
    n, d = X.shape
    k = len(class_names) if class_names is not None else int(y.max()) + 1
    if y.min() < 0 or y.max() >= k:
        raise DataError("labels out of range for the class count")
    if feature_names is not None and len(feature_names) != d:
        raise DataError("feature name manifest does not match X")
    w = np.ones(n) if w is None else np.asarray(w, dtype=np.float64)
    if w.shape != (n,) or (w <= 0).any():
        raise DataError("weights must be positive, one per sample")
    if sort_idx is None:
        sort_idx = presort(X)
    elif not sort_idx.flags.f_contiguous:
        sort_idx = np.asfortranarray(sort_idx)
    if sorted_vals is None:
        sorted_vals = presorted_values(X, sort_idx)

    rng = np.random.default_rng(seed)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0
    base = np.zeros(k)
    margins = np.tile(base, (n, 1))
    trees: List[Tree] = []
    losses = []

    n_cols = max(1, int(round(hp.colsample * d)))
    for _ in range(hp.n_rounds):
        probs = _softmax_np(margins)
        losses.append(_weighted_logloss(probs, y, w))
        for klass in range(k):
            g = w * (probs[:, klass] - onehot[:, klass])
            h = w * 2.0 * probs[:, klass] * (1.0 - probs[:, klass])
            if hp.subsample < 1.0:
                keep = rng.random(n) < hp.subsample
                if keep.sum() < 2:
                    keep[:] = True
            else:
                keep = np.ones(n, dtype=bool)
            node_of = np.where(keep, 0, -1).astype(np.int32)
            if n_cols < d:
                cols = np.sort(rng.permutation(d)[:n_cols]).astype(np.int64)
            else:
                cols = np.arange(d, dtype=np.int64)
            tree = _grow_tree(X, sorted_vals, sort_idx, g, h, w, node_of, cols, hp, klass)
            trees.append(tree)
            _tree_margin_add(
                X, tree.feature, tree.threshold, tree.left, tree.right,
                tree.value, margins[:, klass],
            )
    losses.append(_weighted_logloss(_softmax_np(margins), y, w))

    names = tuple(class_names) if class_names is not None else tuple(
        f"class{i}" for i in range(k)
    )
    return GbtModel(
        hp=hp,
        class_names=names,
        feature_names=tuple(feature_names) if feature_names is not None else None,
        n_features=d,
        base_score=base,
        trees=trees,
        train_loss=losses,
    )


# ---------------------------------------------------------------------------
# model


class GbtModel:
    """Trained ensemble: immutable after construction, safe to share."""

    def __init__(self, hp, class_names, feature_names, n_features, base_score,
                 trees, train_loss):
        self.hp = hp
        self.class_names = tuple(class_names)
        self.feature_names = tuple(feature_names) if feature_names is not None else None
        self.n_features = int(n_features)
        self.base_score = np.asarray(base_score, dtype=np.float64)
        self.trees = list(trees)
        self.train_loss = list(train_loss)
        self._packed = None

    @property
    def n_classes(self) -> int:
        return self.base_score.shape[0]

    def packed(self):
        """Concatenated node arrays for the jit traversal kernels."""
        if self._packed is None:
            if self.trees:
                feat = np.concatenate([t.feature for t in self.trees])
                thr = np.concatenate([t.threshold for t in self.trees])
                left = np.concatenate([t.left for t in self.trees])
                right = np.concatenate([t.right for t in self.trees])
                value = np.concatenate([t.value for t in self.trees])
            else:
                feat = np.empty(0, np.int32)
                thr = np.empty(0)
                left = np.empty(0, np.int32)
                right = np.empty(0, np.int32)
                value = np.empty(0)
            off = np.zeros(len(self.trees) + 1, dtype=np.int64)
            for i, t in enumerate(self.trees):
                off[i + 1] = off[i] + t.feature.shape[0]
            cls = np.array([t.klass for t in self.trees], dtype=np.int64)
            self._packed = (feat, thr, left, right, value, off, cls)
        return self._packed

    def _check_matrix(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DataError(
                f"expected {self.n_features} features, got {X.shape[1]}"
            )
        return X

    def predict_margin(self, X) -> np.ndarray:
        X = self._check_matrix(X)
        feat, thr, left, right, value, off, cls = self.packed()
        out = np.empty((X.shape[0], self.n_classes))
        forest_margins(X, feat, thr, left, right, value, off, cls,
                       self.base_score, out)
        return out

    def predict_proba(self, X) -> np.ndarray:
        out = self.predict_margin(X)
        softmax_rows(out)
        return out

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def predict_proba_named(self, X, names: Sequence[str]) -> np.ndarray:
        """Predict from a matrix whose columns are named; order-free."""
        if self.feature_names is None:
            raise DataError("model carries no feature manifest")
        pos = {n: i for i, n in enumerate(names)}
        try:
            order = [pos[n] for n in self.feature_names]
        except KeyError as e:
            raise DataError(f"feature {e} missing from input") from e
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        return self.predict_proba(np.ascontiguousarray(X[:, order]))

    # -- serialization

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "hp": self.hp.to_dict(),
            "classes": list(self.class_names),
            "feature_names": None if self.feature_names is None else list(self.feature_names),
            "n_features": self.n_features,
            "base_score": [float(v) for v in self.base_score],
            "train_loss": [float(v) for v in self.train_loss],
            "trees": [
                {
                    "class": t.klass,
                    "feature": [int(v) for v in t.feature],
                    "threshold": [float(v) for v in t.threshold],
                    "left": [int(v) for v in t.left],
                    "right": [int(v) for v in t.right],
                    "value": [float(v) for v in t.value],
                    "cover": [float(v) for v in t.cover],
                }
                for t in self.trees
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        try:
            if d.get("format") != MODEL_FORMAT:
                raise ModelFormatError(f"not a {MODEL_FORMAT} file")
            if d.get("version") != MODEL_VERSION:
                raise ModelFormatError(
                    f"unsupported model version {d.get('version')!r}"
                )
            trees = [
                Tree(
                    klass=int(td["class"]),
                    feature=np.array(td["feature"], dtype=np.int32),
                    threshold=np.array(td["threshold"], dtype=np.float64),
                    left=np.array(td["left"], dtype=np.int32),
                    right=np.array(td["right"], dtype=np.int32),
                    value=np.array(td["value"], dtype=np.float64),
                    cover=np.array(td["cover"], dtype=np.float64),
                )
                for td in d["trees"]
            ]
            return cls(
                hp=GbtHyperParams.from_dict(d["hp"]),
                class_names=tuple(d["classes"]),
                feature_names=None if d["feature_names"] is None else tuple(d["feature_names"]),
                n_features=int(d["n_features"]),
                base_score=np.array(d["base_score"], dtype=np.float64),
                trees=trees,
                train_loss=[float(v) for v in d["train_loss"]],
            )
        except ModelFormatError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ModelFormatError(f"corrupt model file: {e}") from e

    @classmethod
    def load(cls, path) -> "GbtModel":
        p = Path(path)
        if not p.exists():
            raise DataError(f"no such model file: {p}")
        try:
            d = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ModelFormatError(f"corrupt model file: {e}") from e
        return cls.from_dict(d)
