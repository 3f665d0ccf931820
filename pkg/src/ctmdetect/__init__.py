"""Real-time detection of compensatory trunk movements from a wrist + trunk
IMU pair.

Pipeline: attitude estimation and anatomical calibration -> 42 derived
kinematic channels -> sliding-window features -> gradient-boosted trees,
with a ring-buffer streaming engine that reproduces the offline pipeline
bit for bit, SHAP-based attribution, and a nested leave-one-subject-out
evaluation harness.
"""

__version__ = "0.1.0"

from .calib import AttitudeFilter, CalibConfig, SessionCalib, fit_session
from .errors import ConfigError, CtmError, DataError, ModelFormatError
from .evaluate import (EvalConfig, HpSpace, LosoReport, consolidate,
                       hp_search, loso_folds, run_loso)
from .explain import (ShapAttribution, delta_shap, sample_background,
                      separation_scores, shap_values)
from .features import (FEATURE_NAMES, N_FEATURES, WindowSpec, dtw_norm,
                       extract, extract_matrix, ldj, max_norm_xcorr, segment,
                       window_labels)
from .gbt import GbtHyperParams, GbtModel, balanced_weights, train
from .ingest import (CALIB, LABEL_NAMES, MOV_NO_TC, MOV_TC, Recording,
                     SynthConfig, estimate_lag, generate_synthetic,
                     load_recording, resample_labels, save_recording)
from .metrics import (auc_ovr, binary_auc, compute_report, confusion_matrix,
                      holm_bonferroni, macro_f1, mcc, precision_recall_f1,
                      roc_curve, wilcoxon_signed_rank)
from .pipeline import Dataset, batch_predict, build_dataset, export_features
from .rt import LatencyReport, Prediction, StreamEngine, replay
from .streams import CHANNELS, N_CHANNELS, StreamSet, derive_streams

__all__ = [
    "__version__",
    "AttitudeFilter", "CalibConfig", "SessionCalib", "fit_session",
    "ConfigError", "CtmError", "DataError", "ModelFormatError",
    "EvalConfig", "HpSpace", "LosoReport", "consolidate", "hp_search",
    "loso_folds", "run_loso",
    "ShapAttribution", "delta_shap", "sample_background",
    "separation_scores", "shap_values",
    "FEATURE_NAMES", "N_FEATURES", "WindowSpec", "dtw_norm", "extract",
    "extract_matrix", "ldj", "max_norm_xcorr", "segment", "window_labels",
    "GbtHyperParams", "GbtModel", "balanced_weights", "train",
    "CALIB", "LABEL_NAMES", "MOV_NO_TC", "MOV_TC", "Recording",
    "SynthConfig", "estimate_lag", "generate_synthetic", "load_recording",
    "resample_labels", "save_recording",
    "auc_ovr", "binary_auc", "compute_report", "confusion_matrix",
    "holm_bonferroni", "macro_f1", "mcc", "precision_recall_f1", "roc_curve",
    "wilcoxon_signed_rank",
    "Dataset", "batch_predict", "build_dataset", "export_features",
    "LatencyReport", "Prediction", "StreamEngine", "replay",
    "CHANNELS", "N_CHANNELS", "StreamSet", "derive_streams",
]
