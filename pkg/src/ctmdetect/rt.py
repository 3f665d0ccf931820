"""Streaming inference engine.

A fixed ring buffer holds the last window of derived channel rows; every
hop-th sample triggers feature extraction and model inference on the
buffered window.  All numeric work goes through the same jit kernels as the
offline pipeline (one row of channel derivation, one feature vector, one
forest traversal), so replaying a recording reproduces the batch
predictions bit for bit.

Cadence is tied to the sample counter, not the wall clock: after the buffer
first fills (window length samples), one prediction is emitted every hop
samples.  Out-of-order samples are dropped and counted.

Wire format for future live sources: little-endian frames of 56 bytes,
`t` as f64 followed by 12 f32 (wrist accel xyz, wrist gyro xyz, trunk accel
xyz, trunk gyro xyz).  Only the file replayer ships here.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, replace
from typing import BinaryIO, Iterator, List, Optional, Tuple

import numpy as np

from .calib import CalibConfig, SessionCalib, fit_session
from .errors import DataError
from .features import N_FEATURES, WindowSpec, extract
from .gbt import GbtModel
from .ingest import LABEL_NAMES, Recording
from .streams import N_CHANNELS, sample_row

FRAME_STRUCT = struct.Struct("<d12f")
FRAME_SIZE = FRAME_STRUCT.size  # 56 bytes

STAGES = ("preprocess", "features", "inference")

_MS = 1e-6  # ns -> ms


@dataclass
class Prediction:
    t: float
    klass: int
    class_name: str
    probs: np.ndarray
    latency_ms: dict
    window_index: int

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "class": self.klass,
            "class_name": self.class_name,
            "probs": [float(p) for p in self.probs],
            "latency_ms": dict(self.latency_ms),
            "window_index": self.window_index,
        }


@dataclass
class LatencyReport:
    n: int
    stages: dict            # stage -> {mean, std, max} in ms
    end_to_end: dict        # {mean, std, max} in ms
    dropped: int = 0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "stages": {k: dict(v) for k, v in self.stages.items()},
            "end_to_end": dict(self.end_to_end),
            "dropped": self.dropped,
        }

    def format(self) -> str:
        lines = [f"predictions: {self.n}   dropped samples: {self.dropped}"]
        for name in STAGES:
            s = self.stages.get(name)
            if s is None:
                continue
            lines.append(
                f"  {name:<10s} mean {s['mean']:8.3f} ms   "
                f"std {s['std']:8.3f} ms   max {s['max']:8.3f} ms"
            )
        e = self.end_to_end
        if e:
            lines.append(
                f"  {'total':<10s} mean {e['mean']:8.3f} ms   "
                f"std {e['std']:8.3f} ms   max {e['max']:8.3f} ms"
            )
        return "\n".join(lines)


def _stats(samples: List[float]) -> dict:
    a = np.asarray(samples)
    return {"mean": float(a.mean()), "std": float(a.std()), "max": float(a.max())}


class StreamEngine:
    """One producer; feed samples in time order, collect predictions."""

    def __init__(self, model: GbtModel, session: SessionCalib,
                 cfg: Optional[CalibConfig] = None,
                 spec: Optional[WindowSpec] = None):
        cfg = cfg if cfg is not None else CalibConfig()
        spec = spec if spec is not None else WindowSpec()
        cfg.validate()
        spec.validate()
        if model.n_features != N_FEATURES:
            raise DataError(
                f"model expects {model.n_features} features, "
                f"pipeline produces {N_FEATURES}"
            )
        self.model = model
        self.session = session
        self.cfg = cfg
        self.spec = spec
        self._bias = cfg.bias_vector()
        self._mirror = session.mirrored
        self._qpre = np.concatenate([session.q_pre_wrist, session.q_pre_trunk])
        self._state_w = np.zeros(7)
        self._state_t = np.zeros(7)
        self._ring = np.zeros((spec.length, N_CHANNELS))
        self._raw = np.empty(12)
        self.count = 0
        self.dropped = 0
        self.last_t = -np.inf
        self._timings = {name: [] for name in STAGES}
        self._totals: List[float] = []
        self.predictions: List[Prediction] = []

    def warmup(self) -> None:
        """Compile/load every kernel on scratch buffers; engine state
        untouched."""
        scratch_w = np.zeros(7)
        scratch_t = np.zeros(7)
        row = np.empty(N_CHANNELS)
        sample_row(np.zeros(12), 0.0, scratch_w, scratch_t, self._bias,
                   self._mirror, self.cfg.tau, self.cfg.accel_lp_tau,
                   self._qpre, row)
        feats = extract(np.zeros((self.spec.length, N_CHANNELS)), self.spec)
        self.model.predict_proba(feats[None, :])

    def on_sample(self, t: float, wrist_accel, wrist_gyro,
                  trunk_accel, trunk_gyro) -> Optional[Prediction]:
        if self.count > 0 and t <= self.last_t:
            self.dropped += 1
            return None

        t0 = time.perf_counter_ns()
        dt = t - self.last_t if self.count > 0 else 0.0
        raw = self._raw
        raw[0:3] = wrist_accel
        raw[3:6] = wrist_gyro
        raw[6:9] = trunk_accel
        raw[9:12] = trunk_gyro
        sample_row(raw, dt, self._state_w, self._state_t, self._bias,
                   self._mirror, self.cfg.tau, self.cfg.accel_lp_tau,
                   self._qpre, self._ring[self.count % self.spec.length])
        self.count += 1
        self.last_t = t
        t1 = time.perf_counter_ns()

        length, hop = self.spec.length, self.spec.hop
        if self.count < length or (self.count - length) % hop != 0:
            return None

        head = self.count % length
        window = np.ascontiguousarray(
            np.concatenate((self._ring[head:], self._ring[:head]))
        )
        feats = extract(window, self.spec)
        t2 = time.perf_counter_ns()

        probs = self.model.predict_proba(feats[None, :])[0]
        t3 = time.perf_counter_ns()

        klass = int(np.argmax(probs))
        lat = {
            "preprocess": (t1 - t0) * _MS,
            "features": (t2 - t1) * _MS,
            "inference": (t3 - t2) * _MS,
            "total": (t3 - t0) * _MS,
        }
        pred = Prediction(
            t=float(t),
            klass=klass,
            class_name=self.model.class_names[klass]
            if klass < len(self.model.class_names) else LABEL_NAMES[klass],
            probs=probs,
            latency_ms=lat,
            window_index=(self.count - length) // hop,
        )
        for name in STAGES:
            self._timings[name].append(lat[name])
        self._totals.append(lat["total"])
        self.predictions.append(pred)
        return pred

    def latency_report(self) -> LatencyReport:
        if not self._totals:
            return LatencyReport(n=0, stages={}, end_to_end={}, dropped=self.dropped)
        return LatencyReport(
            n=len(self._totals),
            stages={k: _stats(v) for k, v in self._timings.items()},
            end_to_end=_stats(self._totals),
            dropped=self.dropped,
        )


def replay(rec: Recording, model: GbtModel,
           cfg: Optional[CalibConfig] = None,
           spec: Optional[WindowSpec] = None,
           session: Optional[SessionCalib] = None,
           warm: bool = True) -> Tuple[List[Prediction], LatencyReport]:
    """Stream a recording through the engine as fast as possible.

    Calibration is fitted from the recording itself (deterministic static
    phase at the start) unless a session is supplied.
    """
    cfg = cfg if cfg is not None else CalibConfig()
    spec = spec if spec is not None else WindowSpec()
    if cfg.arm != rec.arm:
        cfg = replace(cfg, arm=rec.arm)
    if session is None:
        session = fit_session(rec, cfg)
    engine = StreamEngine(model, session, cfg, spec)
    if warm:
        engine.warmup()
    for i in range(rec.n):
        engine.on_sample(
            rec.t[i], rec.wrist_accel[i], rec.wrist_gyro[i],
            rec.trunk_accel[i], rec.trunk_gyro[i],
        )
    return engine.predictions, engine.latency_report()


# ---------------------------------------------------------------------------
# wire format


def encode_frame(t: float, wrist_accel, wrist_gyro, trunk_accel, trunk_gyro) -> bytes:
    vals = [float(v) for part in (wrist_accel, wrist_gyro, trunk_accel, trunk_gyro)
            for v in part]
    if len(vals) != 12:
        raise DataError("each sensor part must have three components")
    return FRAME_STRUCT.pack(t, *vals)


def decode_frame(buf: bytes) -> Tuple[float, np.ndarray]:
    if len(buf) != FRAME_SIZE:
        raise DataError(f"frame must be exactly {FRAME_SIZE} bytes")
    vals = FRAME_STRUCT.unpack(buf)
    return float(vals[0]), np.array(vals[1:], dtype=np.float64)


def read_frames(stream: BinaryIO) -> Iterator[Tuple[float, np.ndarray]]:
    """Yield (t, 12-vector) until EOF; trailing partial frame is an error."""
    while True:
        buf = stream.read(FRAME_SIZE)
        if not buf:
            return
        if len(buf) != FRAME_SIZE:
            raise DataError("truncated frame at end of stream")
        yield decode_frame(buf)
