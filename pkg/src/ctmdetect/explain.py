"""Per-class feature attributions for the tree ensemble.

Path-dependent TreeSHAP: feature absence is modeled by the training cover
distribution stored in each tree, so no background conditioning enters the
attribution itself.  Local accuracy holds exactly (up to float error): the
attributions for class c sum to that class margin minus the cover-weighted
expected margin.

ΔSHAP contrasts the compensatory-movement class against the clean-movement
class per sample; the separation score is the mean absolute ΔSHAP per
feature, aggregated by feature origin (wrist / trunk / interaction).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError
from .features import feature_origin
from .gbt import GbtModel, Tree
from .ingest import MOV_NO_TC, MOV_TC


@dataclass
class ShapAttribution:
    """phi[i, c, j]: contribution of feature j to class-c margin of sample i."""

    phi: np.ndarray          # (n, n_classes, n_features)
    base: np.ndarray         # (n_classes,) expected margin per class
    feature_names: Optional[Tuple[str, ...]]
    class_names: Tuple[str, ...]


@dataclass
class SeparationRanking:
    features: List[str]      # descending score, ties broken by name
    scores: np.ndarray
    origins: List[str]
    ranks: np.ndarray        # 1-based
    group_scores: dict       # origin -> summed score
    group_shares: dict       # origin -> fraction of total score

    def rows(self):
        for f, s, o, r in zip(self.features, self.scores, self.origins, self.ranks):
            yield f, float(s), o, int(r)


class _Path:
    """Subset-path bookkeeping for the EXTEND/UNWIND recursion."""

    __slots__ = ("d", "z", "o", "w", "n")

    def __init__(self, capacity: int):
        self.d = np.empty(capacity, dtype=np.int64)
        self.z = np.empty(capacity)
        self.o = np.empty(capacity)
        self.w = np.empty(capacity)
        self.n = 0

    def copy(self) -> "_Path":
        p = _Path(self.d.shape[0])
        p.d[: self.n] = self.d[: self.n]
        p.z[: self.n] = self.z[: self.n]
        p.o[: self.n] = self.o[: self.n]
        p.w[: self.n] = self.w[: self.n]
        p.n = self.n
        return p


def _extend(p: _Path, pz: float, po: float, pi: int) -> None:
    l = p.n
    p.d[l] = pi
    p.z[l] = pz
    p.o[l] = po
    p.w[l] = 1.0 if l == 0 else 0.0
    for i in range(l - 1, -1, -1):
        p.w[i + 1] += po * p.w[i] * (i + 1) / (l + 1)
        p.w[i] = pz * p.w[i] * (l - i) / (l + 1)
    p.n = l + 1


def _unwind(p: _Path, idx: int) -> None:
    l = p.n - 1
    o = p.o[idx]
    z = p.z[idx]
    nxt = p.w[l]
    if o != 0.0:
        for i in range(l - 1, -1, -1):
            tmp = p.w[i]
            p.w[i] = nxt * (l + 1) / ((i + 1) * o)
            nxt = tmp - p.w[i] * z * (l - i) / (l + 1)
    else:
        for i in range(l - 1, -1, -1):
            p.w[i] = p.w[i] * (l + 1) / (z * (l - i))
    for i in range(idx, l):
        p.d[i] = p.d[i + 1]
        p.z[i] = p.z[i + 1]
        p.o[i] = p.o[i + 1]
    p.n = l


def _unwound_sum(p: _Path, idx: int) -> float:
    l = p.n - 1
    o = p.o[idx]
    z = p.z[idx]
    total = 0.0
    if o != 0.0:
        nxt = p.w[l]
        for i in range(l - 1, -1, -1):
            tmp = nxt / ((i + 1) * o)
            total += tmp
            nxt = p.w[i] - tmp * z * (l - i)
    else:
        for i in range(l - 1, -1, -1):
            total += p.w[i] / (z * (l - i))
    return total * (l + 1)


def _shap_tree(tree: Tree, x: np.ndarray, phi: np.ndarray) -> None:
    feat = tree.feature
    thr = tree.threshold
    left = tree.left
    right = tree.right
    value = tree.value
    cover = tree.cover
    depth = _tree_depth(tree)

    def recurse(node: int, path: _Path, pz: float, po: float, pi: int) -> None:
        path = path.copy()
        _extend(path, pz, po, pi)
        if feat[node] < 0:
            for i in range(1, path.n):
                w = _unwound_sum(path, i)
                phi[path.d[i]] += w * (path.o[i] - path.z[i]) * value[node]
            return
        f = int(feat[node])
        if x[f] < thr[node]:
            hot, cold = int(left[node]), int(right[node])
        else:
            hot, cold = int(right[node]), int(left[node])
        iz = 1.0
        io = 1.0
        for i in range(1, path.n):
            if path.d[i] == f:
                iz = path.z[i]
                io = path.o[i]
                _unwind(path, i)
                break
        c = cover[node]
        recurse(hot, path, iz * cover[hot] / c, io, f)
        recurse(cold, path, iz * cover[cold] / c, 0.0, f)

    recurse(0, _Path(depth + 2), 1.0, 1.0, -1)


def _tree_depth(tree: Tree) -> int:
    depth = np.zeros(tree.feature.shape[0], dtype=np.int64)
    for nd in range(tree.feature.shape[0]):
        if tree.feature[nd] >= 0:
            depth[tree.left[nd]] = depth[nd] + 1
            depth[tree.right[nd]] = depth[nd] + 1
    return int(depth.max()) if depth.size else 0


def _tree_expectation(tree: Tree) -> float:
    def rec(nd: int) -> float:
        if tree.feature[nd] < 0:
            return float(tree.value[nd])
        l, r = int(tree.left[nd]), int(tree.right[nd])
        c = tree.cover[nd]
        return (tree.cover[l] * rec(l) + tree.cover[r] * rec(r)) / c
    return rec(0) if tree.feature.shape[0] else 0.0


def expected_margin(model: GbtModel) -> np.ndarray:
    """Cover-weighted expected margin per class (the SHAP base values)."""
    base = model.base_score.copy()
    for tree in model.trees:
        base[tree.klass] += _tree_expectation(tree)
    return base


def shap_values(model: GbtModel, X) -> ShapAttribution:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise DataError(
            f"expected {model.n_features} features, got {X.shape[1]}"
        )
    n = X.shape[0]
    phi = np.zeros((n, model.n_classes, model.n_features))
    for tree in model.trees:
        for i in range(n):
            _shap_tree(tree, X[i], phi[i, tree.klass])
    return ShapAttribution(
        phi=phi,
        base=expected_margin(model),
        feature_names=model.feature_names,
        class_names=model.class_names,
    )


def delta_shap(att: ShapAttribution, tc_class: int = MOV_TC,
               no_tc_class: int = MOV_NO_TC) -> np.ndarray:
    """Per-sample, per-feature attribution gap between the two movement
    classes."""
    k = att.phi.shape[1]
    if not (0 <= tc_class < k and 0 <= no_tc_class < k):
        raise DataError("class index out of range for the attribution")
    return att.phi[:, tc_class, :] - att.phi[:, no_tc_class, :]


def separation_scores(delta: np.ndarray,
                      feature_names: Sequence[str]) -> SeparationRanking:
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim != 2 or delta.shape[1] != len(feature_names):
        raise DataError("delta must be (n_samples, n_features) matching names")
    if delta.shape[0] == 0:
        raise DataError("no samples to score")
    scores = np.abs(delta).mean(axis=0)
    order = sorted(range(len(feature_names)),
                   key=lambda j: (-scores[j], feature_names[j]))
    feats = [feature_names[j] for j in order]
    sc = scores[order]
    origins = [feature_origin(f) for f in feats]
    groups = {}
    for o, s in zip(origins, sc):
        groups[o] = groups.get(o, 0.0) + float(s)
    total = sum(groups.values())
    shares = {o: (v / total if total > 0 else 0.0) for o, v in groups.items()}
    return SeparationRanking(
        features=feats,
        scores=sc,
        origins=origins,
        ranks=np.arange(1, len(feats) + 1),
        group_scores=groups,
        group_shares=shares,
    )


def stratified_indices(y, n: int, seed: int = 0) -> np.ndarray:
    """Deterministic class-stratified index subsample (proportions kept
    within one sample per class)."""
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise DataError("no samples to draw from")
    if n >= y.size:
        return np.arange(y.size)
    rng = np.random.default_rng(seed)
    classes = np.unique(y)
    picked = []
    remaining = n
    for i, c in enumerate(classes):
        idx = np.nonzero(y == c)[0]
        # proportional allocation, divvying the remainder to later classes
        quota = int(round(idx.size / y.size * n))
        quota = max(0, min(quota, remaining - (classes.size - 1 - i)))
        if i == classes.size - 1:
            quota = remaining
        quota = min(quota, idx.size)
        if quota > 0:
            picked.append(rng.choice(idx, size=quota, replace=False))
        remaining -= quota
    return np.sort(np.concatenate(picked)) if picked else np.empty(0, np.int64)


def sample_background(X, y, n: int, seed: int = 0) -> np.ndarray:
    """Deterministic class-stratified subsample used for summary exports."""
    X = np.asarray(X)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise DataError("X and y must be non-empty and aligned")
    if n >= X.shape[0]:
        return X.copy()
    return X[stratified_indices(y, n, seed)]
