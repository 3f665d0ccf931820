"""Nested leave-one-subject-out evaluation.

Outer loop: each subject is the test fold once.  Inner loop: 3-fold CV on
the remaining subjects (grouped by subject when at least three are present,
contiguous window blocks otherwise) scores hyperparameter candidates drawn
by seeded uniform random search; the best candidate by mean inner macro-F1
trains the fold model.  Consolidation takes the per-field median (lower
middle) across fold winners.

Window-level leakage control: windows of one subject never appear on both
sides of any split, and the outer test subject never enters the inner
search (asserted).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError
from .gbt import (GbtHyperParams, HP_BOUNDS, balanced_weights,
                  presort, presorted_values, train)
from .ingest import LABEL_NAMES
from .metrics import MetricsReport, compute_report, macro_f1
from .pipeline import Dataset

_INT_FIELDS = ("n_rounds", "max_depth")


@dataclass(frozen=True)
class HpSpace:
    """Inclusive sampling ranges, one per hyperparameter."""

    n_rounds: Tuple[int, int] = (20, 120)
    max_depth: Tuple[int, int] = (2, 5)
    learning_rate: Tuple[float, float] = (0.05, 0.3)
    min_child_weight: Tuple[float, float] = (0.5, 5.0)
    l2_lambda: Tuple[float, float] = (0.5, 5.0)
    subsample: Tuple[float, float] = (0.7, 1.0)
    colsample: Tuple[float, float] = (0.3, 1.0)

    def validate(self):
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if not lo <= hi:
                raise ConfigError(f"{f.name} range inverted: {lo} > {hi}")
            blo, bhi = HP_BOUNDS[f.name]
            if lo < blo or hi > bhi:
                raise ConfigError(
                    f"{f.name} range [{lo}, {hi}] outside [{blo}, {bhi}]"
                )

    def sample(self, rng: np.random.Generator) -> GbtHyperParams:
        kw = {}
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if f.name in _INT_FIELDS:
                kw[f.name] = int(rng.integers(lo, hi + 1))
            else:
                kw[f.name] = float(rng.uniform(lo, hi))
        return GbtHyperParams(**kw)

    @classmethod
    def singleton(cls, hp: GbtHyperParams) -> "HpSpace":
        return cls(**{f.name: (getattr(hp, f.name), getattr(hp, f.name))
                      for f in fields(hp)})


@dataclass
class EvalConfig:
    search_iters: int = 50
    inner_k: int = 3
    seed: int = 0
    space: HpSpace = field(default_factory=HpSpace)
    fixed_hp: Optional[GbtHyperParams] = None
    inner_max_windows: Optional[int] = None
    shuffle_labels: bool = False

    def validate(self):
        if self.fixed_hp is None:
            if self.search_iters < 1:
                raise ConfigError("search_iters must be >= 1")
            self.space.validate()
        else:
            self.fixed_hp.validate()
        if self.inner_k < 2:
            raise ConfigError("inner_k must be >= 2")
        if self.inner_max_windows is not None and self.inner_max_windows < 2:
            raise ConfigError("inner_max_windows must be >= 2")


def loso_folds(subjects: Sequence[str]) -> List[Tuple[str, List[str]]]:
    """(test subject, train subjects) per fold; order of first appearance."""
    uniq = list(dict.fromkeys(subjects))
    if len(uniq) < 2:
        raise DataError("leave-one-subject-out needs at least 2 subjects")
    return [(s, [o for o in uniq if o != s]) for s in uniq]


def inner_folds(groups: np.ndarray, k: int = 3) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Index splits for inner CV.

    Subject-grouped round robin when >= k subjects; otherwise contiguous
    window blocks (accepting some autocorrelation leakage on tiny data).
    """
    n = groups.shape[0]
    if n < 2 * k:
        raise DataError(f"too few windows ({n}) for {k}-fold inner CV")
    uniq = sorted(set(groups.tolist()))
    out = []
    idx = np.arange(n)
    if len(uniq) >= k:
        assign = {s: i % k for i, s in enumerate(uniq)}
        fold_of = np.array([assign[g] for g in groups.tolist()])
        for j in range(k):
            val = idx[fold_of == j]
            out.append((idx[fold_of != j], val))
    else:
        bounds = np.linspace(0, n, k + 1).astype(np.int64)
        for j in range(k):
            val = idx[bounds[j]:bounds[j + 1]]
            out.append((np.concatenate((idx[:bounds[j]], idx[bounds[j + 1]:])), val))
    for tr, va in out:
        if tr.size == 0 or va.size == 0:
            raise DataError("degenerate inner fold (empty side)")
    return out


def _mix(seed: int, a: int, b: int = 0) -> int:
    # stable scalar seed derivation, no hashing
    return (seed * 1000003 + a * 769 + b) % (2 ** 31 - 1)


def hp_search(
    X: np.ndarray,
    y: np.ndarray,
    groups: np.ndarray,
    space: HpSpace = HpSpace(),
    iters: int = 50,
    k: int = 3,
    seed: int = 0,
    inner_max_windows: Optional[int] = None,
) -> Tuple[GbtHyperParams, float]:
    """Random search scored by mean inner-CV macro-F1.

    Returns (best hp, best mean score).  Ties keep the earliest candidate.
    """
    if iters < 1:
        raise ConfigError("iters must be >= 1")
    space.validate()
    rng = np.random.default_rng(seed)
    candidates = [space.sample(rng) for _ in range(iters)]
    folds = inner_folds(groups, k)
    scores = np.zeros(iters)
    for fi, (tr, va) in enumerate(folds):
        if inner_max_windows is not None and tr.size > inner_max_windows:
            sub_rng = np.random.default_rng(_mix(seed, fi, 500009))
            tr = np.sort(sub_rng.choice(tr, size=inner_max_windows, replace=False))
        X_tr = np.ascontiguousarray(X[tr])
        y_tr = y[tr]
        if np.unique(y_tr).size < 2:
            raise DataError("inner training fold has a single class")
        w_tr = balanced_weights(y_tr, len(LABEL_NAMES))
        sort_idx = presort(X_tr)
        sorted_vals = presorted_values(X_tr, sort_idx)
        X_va = np.ascontiguousarray(X[va])
        y_va = y[va]
        for ci, hp in enumerate(candidates):
            model = train(
                X_tr, y_tr, w=w_tr, hp=hp, seed=_mix(seed, fi, ci),
                class_names=LABEL_NAMES, sort_idx=sort_idx,
                sorted_vals=sorted_vals,
            )
            scores[ci] += macro_f1(y_va, model.predict(X_va), len(LABEL_NAMES))
    scores /= len(folds)
    best = int(np.argmax(scores))
    return candidates[best], float(scores[best])


def consolidate(hps: Sequence[GbtHyperParams]) -> GbtHyperParams:
    """Per-field median across fold winners (lower middle for even counts)."""
    if not hps:
        raise DataError("nothing to consolidate")
    kw = {}
    for f in fields(GbtHyperParams):
        vals = sorted(getattr(hp, f.name) for hp in hps)
        kw[f.name] = vals[(len(vals) - 1) // 2]
    return GbtHyperParams(**kw)


@dataclass
class FoldResult:
    subject: str
    hp: GbtHyperParams
    inner_score: Optional[float]
    metrics: MetricsReport
    y_test: np.ndarray
    probs: np.ndarray

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "hp": self.hp.to_dict(),
            "inner_score": self.inner_score,
            "metrics": self.metrics.to_dict(),
        }


@dataclass
class LosoReport:
    folds: List[FoldResult]
    summary: dict
    pooled_confusion: np.ndarray
    consolidated_hp: GbtHyperParams
    seed: int

    def to_dict(self) -> dict:
        return {
            "folds": [f.to_dict() for f in self.folds],
            "summary": self.summary,
            "pooled_confusion": self.pooled_confusion.tolist(),
            "consolidated_hp": self.consolidated_hp.to_dict(),
            "seed": self.seed,
            "classes": list(LABEL_NAMES),
        }

    def format(self) -> str:
        lines = ["per-subject results:"]
        for f in self.folds:
            m = f.metrics
            auc = "  ".join(
                "nan" if v is None else f"{v:.3f}"
                for v in (m.auc.tolist() if m.auc is not None else [])
            )
            lines.append(
                f"  {f.subject:<8s} macroF1 {m.macro_f1:.4f}  mcc {m.mcc:.4f}"
                f"  acc {m.accuracy:.4f}  auc [{auc}]"
            )
        lines.append("summary (mean +/- std across subjects):")
        for k, v in self.summary.items():
            lines.append(f"  {k:<10s} {v['mean']:.4f} +/- {v['std']:.4f}")
        return "\n".join(lines)


def run_loso(ds: Dataset, cfg: Optional[EvalConfig] = None) -> LosoReport:
    cfg = cfg if cfg is not None else EvalConfig()
    cfg.validate()
    y = ds.y
    if cfg.shuffle_labels:
        y = np.random.default_rng(cfg.seed).permutation(y)
    plan = loso_folds(ds.groups.tolist())
    results: List[FoldResult] = []
    for fold_i, (test_subject, _) in enumerate(plan):
        test_mask = ds.groups == test_subject
        tr_idx = np.nonzero(~test_mask)[0]
        te_idx = np.nonzero(test_mask)[0]
        tr_groups = ds.groups[tr_idx]
        assert test_subject not in set(tr_groups.tolist())
        X_tr = np.ascontiguousarray(ds.X[tr_idx])
        y_tr = y[tr_idx]
        if cfg.fixed_hp is not None:
            hp, inner_score = cfg.fixed_hp, None
        else:
            hp, inner_score = hp_search(
                X_tr, y_tr, tr_groups, cfg.space, cfg.search_iters,
                cfg.inner_k, _mix(cfg.seed, fold_i),
                cfg.inner_max_windows,
            )
        model = train(
            X_tr, y_tr, w=balanced_weights(y_tr, len(LABEL_NAMES)), hp=hp,
            seed=_mix(cfg.seed, fold_i, 900001), class_names=LABEL_NAMES,
            feature_names=ds.feature_names,
        )
        probs = model.predict_proba(np.ascontiguousarray(ds.X[te_idx]))
        y_te = y[te_idx]
        report = compute_report(
            y_te, np.argmax(probs, axis=1), probs, class_names=LABEL_NAMES,
        )
        results.append(FoldResult(
            subject=test_subject, hp=hp, inner_score=inner_score,
            metrics=report, y_test=y_te, probs=probs,
        ))

    def agg(name):
        vals = [getattr(f.metrics, name) for f in results
                if getattr(f.metrics, name) is not None]
        a = np.asarray(vals, dtype=np.float64)
        return {"mean": float(a.mean()), "std": float(a.std())}

    summary = {name: agg(name) for name in
               ("macro_f1", "mcc", "accuracy", "macro_auc")}
    pooled = np.zeros_like(results[0].metrics.confusion)
    for f in results:
        pooled += f.metrics.confusion
    return LosoReport(
        folds=results,
        summary=summary,
        pooled_confusion=pooled,
        consolidated_hp=consolidate([f.hp for f in results]),
        seed=cfg.seed,
    )
