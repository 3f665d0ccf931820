"""Command-line interface.

Commands: synthgen, train, eval-loso, predict, replay, explain, report.
Every command resolves its settings from defaults, an optional JSON config
file (``--config``), and explicit flags, in that order of increasing
precedence.  Outputs land in ``<outdir>/<command>-<confighash>/`` together
with a ``manifest.json``; the hash covers the resolved settings, so
re-running the same configuration overwrites the same directory.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .calib import CalibConfig
from .errors import ConfigError, CtmError, DataError
from .evaluate import EvalConfig, HpSpace, run_loso
from .explain import delta_shap, separation_scores, shap_values, stratified_indices
from .features import WindowSpec
from .gbt import GbtHyperParams, GbtModel, balanced_weights, train
from .ingest import (LABEL_NAMES, Recording, SynthConfig, generate_synthetic,
                     load_recording, save_recording)
from .metrics import holm_bonferroni, roc_curve, wilcoxon_signed_rank
from .pipeline import batch_predict, build_dataset, predictions_frame
from .rt import replay

_COMMANDS = ("synthgen", "train", "eval-loso", "predict", "replay",
             "explain", "report")


def _default_outdir() -> str:
    return os.environ.get("CTMDETECT_OUT", "runs")


def _run_dir(args, payload: dict) -> Path:
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode("utf-8")
    ).hexdigest()[:8]
    d = Path(args.outdir) / f"{args.command}-{digest}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_manifest(run_dir: Path, args, payload: dict, outputs: List[str]) -> None:
    manifest = {
        "command": args.command,
        "config": payload,
        "version": __version__,
        "outputs": sorted(outputs),
    }
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _payload(args, keys) -> dict:
    out = {"command": args.command}
    for k in keys:
        v = getattr(args, k)
        out[k] = str(v) if isinstance(v, Path) else v
    return out


def _window_spec(args) -> WindowSpec:
    spec = WindowSpec(length=args.window_length, hop=args.window_hop,
                      rate=args.rate)
    spec.validate()
    return spec


def _calib_config(args) -> CalibConfig:
    cfg = CalibConfig(settle_s=args.settle)
    cfg.validate()
    return cfg


def _recording_paths(data: str) -> List[Path]:
    p = Path(data)
    if p.is_dir():
        paths = sorted(p.glob("*.csv"))
        if not paths:
            raise DataError(f"no .csv recordings under {p}")
        return paths
    if not p.exists():
        raise DataError(f"no such file or directory: {p}")
    return [p]


def _load_recordings(data: str) -> List[Recording]:
    return [load_recording(p) for p in _recording_paths(data)]


def _load_hp(path: Optional[str]) -> Optional[GbtHyperParams]:
    if path is None:
        return None
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise DataError(f"no such hp file: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"bad hp file {path}: {e}") from e
    try:
        return GbtHyperParams.from_dict(d)
    except TypeError as e:
        raise ConfigError(f"bad hp file {path}: {e}") from e


def _space_from(args) -> HpSpace:
    if args.space is None:
        return HpSpace()
    try:
        d = json.loads(Path(args.space).read_text(encoding="utf-8"))
        space = HpSpace(**{k: tuple(v) for k, v in d.items()})
    except FileNotFoundError as e:
        raise DataError(f"no such space file: {args.space}") from e
    except (json.JSONDecodeError, TypeError, ValueError) as e:
        raise ConfigError(f"bad space file {args.space}: {e}") from e
    space.validate()
    return space


# ---------------------------------------------------------------------------
# commands


def cmd_synthgen(args) -> int:
    cfg = SynthConfig(
        n_subjects=args.subjects,
        duration_s=args.duration,
        seed=args.seed,
        intensity=args.intensity,
        rate=args.rate,
    )
    payload = _payload(args, ("subjects", "duration", "seed", "intensity", "rate"))
    run_dir = _run_dir(args, payload)
    rec_dir = run_dir / "recordings"
    rec_dir.mkdir(exist_ok=True)
    recs = generate_synthetic(cfg)
    outputs = []
    for rec in recs:
        path = rec_dir / f"{rec.subject}.csv"
        save_recording(rec, path)
        outputs.append(str(path.relative_to(run_dir)))
    _write_manifest(run_dir, args, payload, outputs)
    print(f"wrote {len(recs)} recordings to {rec_dir}")
    return 0


def cmd_train(args) -> int:
    spec = _window_spec(args)
    calib_cfg = _calib_config(args)
    hp = GbtHyperParams(
        n_rounds=args.n_rounds,
        max_depth=args.max_depth,
        learning_rate=args.learning_rate,
        min_child_weight=args.min_child_weight,
        l2_lambda=args.l2_lambda,
        subsample=args.subsample,
        colsample=args.colsample,
    )
    hp.validate()
    payload = _payload(args, (
        "data", "seed", "n_rounds", "max_depth", "learning_rate",
        "min_child_weight", "l2_lambda", "subsample", "colsample",
        "window_length", "window_hop", "rate", "settle",
    ))
    run_dir = _run_dir(args, payload)
    ds = build_dataset(_load_recordings(args.data), calib_cfg, spec)
    model = train(
        ds.X, ds.y, w=balanced_weights(ds.y, len(LABEL_NAMES)), hp=hp,
        seed=args.seed, class_names=LABEL_NAMES, feature_names=ds.feature_names,
    )
    model_path = run_dir / "model.json"
    model.save(model_path)
    _write_manifest(run_dir, args, payload, ["model.json"])
    print(f"trained on {ds.n} windows "
          f"({len(ds.subjects())} subjects); model at {model_path}")
    print(f"final training log-loss: {model.train_loss[-1]:.6f}")
    return 0


def cmd_eval_loso(args) -> int:
    spec = _window_spec(args)
    calib_cfg = _calib_config(args)
    eval_cfg = EvalConfig(
        search_iters=args.iters,
        inner_k=args.inner_k,
        seed=args.seed,
        space=_space_from(args),
        fixed_hp=_load_hp(args.fixed_hp),
        inner_max_windows=args.inner_max_windows,
        shuffle_labels=args.shuffle_labels,
    )
    eval_cfg.validate()
    payload = _payload(args, (
        "data", "iters", "inner_k", "seed", "inner_max_windows",
        "shuffle_labels", "fixed_hp", "space",
        "window_length", "window_hop", "rate", "settle",
    ))
    run_dir = _run_dir(args, payload)
    ds = build_dataset(_load_recordings(args.data), calib_cfg, spec)
    report = run_loso(ds, eval_cfg)
    report_path = run_dir / "report.json"
    report_path.write_text(
        json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    outputs = ["report.json"]
    for f in report.folds:
        for c, cname in enumerate(LABEL_NAMES):
            pos = (f.y_test == c).astype(np.int64)
            if pos.sum() in (0, pos.size):
                continue
            fpr, tpr, thr = roc_curve(pos, f.probs[:, c])
            roc_name = f"roc_{f.subject}_{cname}.csv"
            with open(run_dir / roc_name, "w", encoding="utf-8") as fh:
                fh.write("fpr,tpr,threshold\n")
                fh.write("\n".join(
                    f"{a!r},{b!r},{t!r}"
                    for a, b, t in zip(fpr, tpr, np.append(np.inf, thr))
                ) + "\n")
            outputs.append(roc_name)
    _write_manifest(run_dir, args, payload, outputs)
    print(report.format())
    print(f"report at {report_path}")
    return 0


def cmd_predict(args) -> int:
    spec = _window_spec(args)
    calib_cfg = _calib_config(args)
    payload = _payload(args, (
        "data", "model", "window_length", "window_hop", "rate", "settle",
    ))
    run_dir = _run_dir(args, payload)
    model = GbtModel.load(args.model)
    outputs = []
    for path in _recording_paths(args.data):
        rec = load_recording(path)
        t, probs, classes = batch_predict(rec, model, calib_cfg, spec)
        df = predictions_frame(t, probs, classes, model.class_names)
        out_name = f"predictions_{rec.subject}.csv"
        df.to_csv(run_dir / out_name, index=False)
        outputs.append(out_name)
        print(f"{rec.subject}: {len(df)} windows -> {run_dir / out_name}")
    _write_manifest(run_dir, args, payload, outputs)
    return 0


def cmd_replay(args) -> int:
    spec = _window_spec(args)
    calib_cfg = _calib_config(args)
    payload = _payload(args, (
        "data", "model", "window_length", "window_hop", "rate", "settle",
    ))
    run_dir = _run_dir(args, payload)
    model = GbtModel.load(args.model)
    outputs = []
    for path in _recording_paths(args.data):
        rec = load_recording(path)
        preds, latency = replay(rec, model, calib_cfg, spec)
        t = np.array([p.t for p in preds])
        probs = (np.array([p.probs for p in preds])
                 if preds else np.zeros((0, model.n_classes)))
        classes = np.array([p.klass for p in preds], dtype=np.int64)
        df = predictions_frame(t, probs, classes, model.class_names)
        pred_name = f"predictions_{rec.subject}.csv"
        df.to_csv(run_dir / pred_name, index=False)
        lat_name = f"latency_{rec.subject}.json"
        (run_dir / lat_name).write_text(
            json.dumps(latency.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
        outputs += [pred_name, lat_name]
        print(f"{rec.subject}: {len(preds)} predictions")
        print(latency.format())
    _write_manifest(run_dir, args, payload, outputs)
    return 0


def cmd_explain(args) -> int:
    spec = _window_spec(args)
    calib_cfg = _calib_config(args)
    payload = _payload(args, (
        "data", "model", "max_windows", "seed", "top",
        "window_length", "window_hop", "rate", "settle",
    ))
    run_dir = _run_dir(args, payload)
    model = GbtModel.load(args.model)
    ds = build_dataset(_load_recordings(args.data), calib_cfg, spec)
    idx = stratified_indices(ds.y, args.max_windows, args.seed)
    att = shap_values(model, ds.X[idx])
    ranking = separation_scores(delta_shap(att), list(ds.feature_names))
    rank_name = "separation.csv"
    with open(run_dir / rank_name, "w", encoding="utf-8") as fh:
        fh.write("feature,score,origin,rank\n")
        for feat, score, origin, rank in ranking.rows():
            fh.write(f"{feat},{score!r},{origin},{rank}\n")
    _write_manifest(run_dir, args, payload, [rank_name])
    print(f"attributed {len(idx)} windows; ranking at {run_dir / rank_name}")
    print(f"top {args.top} separating features:")
    for feat, score, origin, rank in list(ranking.rows())[:args.top]:
        print(f"  {rank:3d}. {feat:<44s} {score:.6f}  [{origin}]")
    print("origin shares of total separation:")
    for origin in sorted(ranking.group_shares, key=ranking.group_shares.get,
                         reverse=True):
        print(f"  {origin:<12s} {100.0 * ranking.group_shares[origin]:6.2f}%")
    return 0


def _fold_series(report: dict, metric: str):
    subjects = [f["subject"] for f in report["folds"]]
    vals = [f["metrics"][metric] for f in report["folds"]]
    return subjects, np.array(vals, dtype=np.float64)


def cmd_report(args) -> int:
    try:
        rep = json.loads(Path(args.input).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise DataError(f"no such report: {args.input}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"bad report file {args.input}: {e}") from e
    print(f"report: {args.input}")
    print(f"{'subject':<10s} {'macroF1':>8s} {'mcc':>8s} {'acc':>8s} {'macroAUC':>9s}")
    for f in rep["folds"]:
        m = f["metrics"]
        auc = m.get("macro_auc")
        print(f"{f['subject']:<10s} {m['macro_f1']:8.4f} {m['mcc']:8.4f} "
              f"{m['accuracy']:8.4f} "
              + (f"{auc:9.4f}" if auc is not None else f"{'-':>9s}"))
    print("summary (mean +/- std):")
    for k, v in rep["summary"].items():
        print(f"  {k:<10s} {v['mean']:.4f} +/- {v['std']:.4f}")
    print("pooled confusion (rows = true):")
    for row in rep["pooled_confusion"]:
        print("  " + " ".join(f"{int(v):8d}" for v in row))

    if args.compare is not None:
        try:
            other = json.loads(Path(args.compare).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise DataError(f"no such report: {args.compare}") from e
        except json.JSONDecodeError as e:
            raise DataError(f"bad report file {args.compare}: {e}") from e
        metrics = ("macro_f1", "mcc", "accuracy")
        pvals = []
        ws = []
        for metric in metrics:
            subj_a, a = _fold_series(rep, metric)
            subj_b, b = _fold_series(other, metric)
            if subj_a != subj_b:
                raise DataError("reports cover different subjects; "
                                "cannot pair folds")
            w, p = wilcoxon_signed_rank(a, b)
            ws.append(w)
            pvals.append(p)
        adj = holm_bonferroni(pvals)
        print(f"paired comparison vs {args.compare} "
              "(Wilcoxon signed-rank, Holm-adjusted):")
        for metric, w, p, q in zip(metrics, ws, pvals, adj):
            print(f"  {metric:<10s} W={w:8.1f}  p={p:.4f}  p_adj={q:.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_window_flags(p):
    p.add_argument("--window-length", type=int, default=60,
                   help="window length in samples")
    p.add_argument("--window-hop", type=int, default=15,
                   help="hop between windows in samples")
    p.add_argument("--rate", type=float, default=120.0,
                   help="sample rate in Hz")
    p.add_argument("--settle", type=float, default=2.0,
                   help="still-phase seconds used for calibration")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ctmdetect",
        description="Compensatory trunk movement detection from "
                    "wrist + trunk IMU streams.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    parser.add_argument("--config", default=None,
                        help="JSON file with per-command flag defaults")
    parser.add_argument("--outdir", default=_default_outdir(),
                        help="output root (env CTMDETECT_OUT)")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("synthgen", help="generate synthetic recordings")
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--duration", type=float, default=600.0,
                   help="seconds per subject")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--intensity", type=float, default=0.8,
                   help="compensation intensity in [0, 1]")
    p.add_argument("--rate", type=float, default=120.0)
    p.set_defaults(func=cmd_synthgen)
    subparsers["synthgen"] = p

    p = sub.add_parser("train", help="train a model on labeled recordings")
    p.add_argument("--data", required=True,
                   help="recording CSV or directory of them")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-rounds", type=int, default=50)
    p.add_argument("--max-depth", type=int, default=3)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--min-child-weight", type=float, default=1.0)
    p.add_argument("--l2-lambda", type=float, default=1.0)
    p.add_argument("--subsample", type=float, default=1.0)
    p.add_argument("--colsample", type=float, default=1.0)
    _add_window_flags(p)
    p.set_defaults(func=cmd_train)
    subparsers["train"] = p

    p = sub.add_parser("eval-loso",
                       help="nested leave-one-subject-out evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--iters", type=int, default=50,
                   help="hyperparameter search candidates")
    p.add_argument("--inner-k", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inner-max-windows", type=int, default=None)
    p.add_argument("--shuffle-labels", action="store_true",
                   help="permute labels (chance-level control)")
    p.add_argument("--fixed-hp", default=None,
                   help="JSON hyperparameter file; skips the search")
    p.add_argument("--space", default=None,
                   help="JSON file of [lo, hi] ranges per hyperparameter")
    _add_window_flags(p)
    p.set_defaults(func=cmd_eval_loso)
    subparsers["eval-loso"] = p

    p = sub.add_parser("predict", help="batch-label recordings")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    _add_window_flags(p)
    p.set_defaults(func=cmd_predict)
    subparsers["predict"] = p

    p = sub.add_parser("replay",
                       help="stream recordings through the realtime engine")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    _add_window_flags(p)
    p.set_defaults(func=cmd_replay)
    subparsers["replay"] = p

    p = sub.add_parser("explain",
                       help="attribution ranking of separating features")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--max-windows", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top", type=int, default=15)
    _add_window_flags(p)
    p.set_defaults(func=cmd_explain)
    subparsers["explain"] = p

    p = sub.add_parser("report", help="render evaluation reports")
    p.add_argument("--input", required=True, help="report.json path")
    p.add_argument("--compare", default=None,
                   help="second report.json for a paired comparison")
    p.set_defaults(func=cmd_report)
    subparsers["report"] = p

    return parser, subparsers


def _apply_config(subparsers, config_path: str) -> None:
    try:
        cfg = json.loads(Path(config_path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"no such config file: {config_path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"bad config file {config_path}: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    for section, values in cfg.items():
        if section == "common":
            for p in subparsers.values():
                p.set_defaults(**values)
        elif section in subparsers:
            subparsers[section].set_defaults(**values)
        else:
            raise ConfigError(f"unknown config section {section!r}")


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        parser, subparsers = build_parser()
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config", default=None)
        known, _ = pre.parse_known_args(argv)
        if known.config is not None:
            _apply_config(subparsers, known.config)
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except CtmError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {e!r}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
