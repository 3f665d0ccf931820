"""Offline pipeline: recordings to windowed feature datasets and batch
predictions.

Per recording: fit the session calibration from its static phase, derive
the 42 channel streams, cut hop-strided windows, extract features.  The
streaming engine shares every numeric kernel with this path, which is what
makes replayed predictions bit-identical to batch ones.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .calib import CalibConfig, SessionCalib, fit_session
from .errors import DataError
from .features import (FEATURE_NAMES, WindowSpec, extract_matrix, segment,
                       window_labels)
from .gbt import GbtModel
from .ingest import LABEL_NAMES, Recording
from .streams import derive_streams


@dataclass
class Dataset:
    X: np.ndarray                  # (n_windows, n_features)
    y: np.ndarray                  # int64 window labels
    groups: np.ndarray             # subject id per window
    window_t: np.ndarray           # timestamp of each window's last sample
    feature_names: Tuple[str, ...]
    class_names: Tuple[str, ...] = LABEL_NAMES

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def subjects(self) -> List[str]:
        seen = dict.fromkeys(self.groups.tolist())
        return list(seen)


def windows_of(rec: Recording, cfg: Optional[CalibConfig] = None,
               spec: Optional[WindowSpec] = None,
               session: Optional[SessionCalib] = None):
    """Feature matrix + window timestamps for one recording."""
    cfg = cfg if cfg is not None else CalibConfig()
    spec = spec if spec is not None else WindowSpec()
    if cfg.arm != rec.arm:
        # the recording's own metadata wins over the config default
        cfg = replace(cfg, arm=rec.arm)
    if session is None:
        session = fit_session(rec, cfg)
    ss = derive_streams(rec, session, cfg)
    starts = segment(rec.n, spec)
    X = extract_matrix(ss.channels, starts, spec)
    t_end = rec.t[starts + spec.length - 1]
    return X, starts, t_end, ss


def build_dataset(recs: Sequence[Recording],
                  cfg: Optional[CalibConfig] = None,
                  spec: Optional[WindowSpec] = None) -> Dataset:
    if not recs:
        raise DataError("no recordings given")
    spec = spec if spec is not None else WindowSpec()
    xs, ys, gs, ts = [], [], [], []
    for rec in recs:
        if rec.labels is None:
            raise DataError(f"recording {rec.subject!r} has no labels")
        X, starts, t_end, _ = windows_of(rec, cfg, spec)
        xs.append(X)
        ys.append(window_labels(rec.labels, starts, spec))
        gs.append(np.full(starts.shape[0], rec.subject, dtype=object))
        ts.append(t_end)
    return Dataset(
        X=np.concatenate(xs),
        y=np.concatenate(ys).astype(np.int64),
        groups=np.concatenate(gs),
        window_t=np.concatenate(ts),
        feature_names=FEATURE_NAMES,
    )


def batch_predict(rec: Recording, model: GbtModel,
                  cfg: Optional[CalibConfig] = None,
                  spec: Optional[WindowSpec] = None,
                  session: Optional[SessionCalib] = None):
    """Offline predictions: (window end times, probabilities, classes)."""
    X, _, t_end, _ = windows_of(rec, cfg, spec, session)
    probs = model.predict_proba(X)
    return t_end, probs, np.argmax(probs, axis=1)


def export_features(ds: Dataset, path) -> None:
    df = pd.DataFrame(ds.X, columns=list(ds.feature_names))
    df.insert(0, "label", ds.y)
    df.insert(0, "t", ds.window_t)
    df.insert(0, "subject", ds.groups)
    df.to_csv(path, index=False)


def predictions_frame(t, probs, classes,
                      class_names: Sequence[str] = LABEL_NAMES) -> pd.DataFrame:
    df = pd.DataFrame({"t": t, "class": classes})
    df["class_name"] = [class_names[c] for c in classes]
    for i, name in enumerate(class_names):
        df[f"p_{name}"] = probs[:, i]
    return df
