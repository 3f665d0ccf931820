"""Recording I/O, stream synchronization, and synthetic recording generation.

A recording is a pair of time-aligned six-axis IMU streams (wrist and trunk)
with an optional per-sample class label track.  On-disk format is CSV, one
row per sample::

    t,w_ax,w_ay,w_az,w_gx,w_gy,w_gz,t_ax,t_ay,t_az,t_gx,t_gy,t_gz[,label]

UTF-8, '.' decimal separator, header row required.  Units: seconds, m/s²,
rad/s.  Labels are serialized as ``calib|mov_no_tc|mov_tc``.

The synthetic generator renders alternating still/movement segments with an
optional compensatory trunk component whose magnitude is controlled by an
intensity knob.  It exists because no clinical data ships with this package;
its output is synthetic by construction and must never be presented as
patient data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

__all__ = [
    "LABEL_NAMES",
    "CALIB",
    "MOV_NO_TC",
    "MOV_TC",
    "Recording",
    "load_recording",
    "save_recording",
    "estimate_lag",
    "resample_labels",
    "SynthConfig",
    "generate_synthetic",
]

LABEL_NAMES = ("calib", "mov_no_tc", "mov_tc")
CALIB, MOV_NO_TC, MOV_TC = 0, 1, 2

_G = 9.80665

_SENSOR_COLUMNS = (
    "w_ax", "w_ay", "w_az", "w_gx", "w_gy", "w_gz",
    "t_ax", "t_ay", "t_az", "t_gx", "t_gy", "t_gz",
)


@dataclass
class Recording:
    """Time-aligned wrist + trunk IMU streams with an optional label track.

    All arrays share the sample timeline ``t``; sensor data is in the raw
    sensor frame.  ``labels`` holds one class index per sample when present.
    """

    subject: str
    t: np.ndarray
    wrist_accel: np.ndarray
    wrist_gyro: np.ndarray
    trunk_accel: np.ndarray
    trunk_gyro: np.ndarray
    labels: Optional[np.ndarray] = None
    arm: str = "right"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        if self.t.ndim != 1 or self.t.shape[0] < 2:
            raise DataError("recording needs at least two samples")
        if not np.isfinite(self.t).all():
            raise DataError("non-finite timestamps")
        if not np.all(np.diff(self.t) > 0):
            raise DataError("timestamps must be strictly increasing")
        n = self.t.shape[0]
        for name in ("wrist_accel", "wrist_gyro", "trunk_accel", "trunk_gyro"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != (n, 3):
                raise DataError(f"{name} must have shape ({n}, 3)")
            if not np.isfinite(a).all():
                raise DataError(f"non-finite values in {name}")
            setattr(self, name, a)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int8)
            if lab.shape != (n,):
                raise DataError("labels must align with the sample timeline")
            if lab.min() < 0 or lab.max() >= len(LABEL_NAMES):
                raise DataError("label values out of range")
            self.labels = lab
        if self.arm not in ("right", "left"):
            raise DataError("arm must be 'right' or 'left'")

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @property
    def rate(self) -> float:
        return float((self.n - 1) / (self.t[-1] - self.t[0]))

    def sensor_matrix(self) -> np.ndarray:
        """(n, 12) layout: wrist accel, wrist gyro, trunk accel, trunk gyro."""
        return np.hstack(
            [self.wrist_accel, self.wrist_gyro, self.trunk_accel, self.trunk_gyro]
        )


def save_recording(rec: Recording, path) -> None:
    cols = {"t": rec.t}
    mat = rec.sensor_matrix()
    for i, name in enumerate(_SENSOR_COLUMNS):
        cols[name] = mat[:, i]
    df = pd.DataFrame(cols)
    if rec.labels is not None:
        df["label"] = [LABEL_NAMES[k] for k in rec.labels]
    df.to_csv(path, index=False)


def load_recording(path, subject: Optional[str] = None, arm: str = "right") -> Recording:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such recording file: {path}")
    try:
        df = pd.read_csv(path)
    except Exception as e:
        raise DataError(f"cannot parse {path}: {e}") from e
    missing = [c for c in ("t",) + _SENSOR_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"{path} is missing columns {missing}")
    labels = None
    if "label" in df.columns:
        name_to_idx = {n: i for i, n in enumerate(LABEL_NAMES)}
        try:
            labels = np.array([name_to_idx[v] for v in df["label"]], dtype=np.int8)
        except KeyError as e:
            raise DataError(f"{path} contains unknown label {e}") from e
    vals = df[list(_SENSOR_COLUMNS)].to_numpy(dtype=np.float64)
    return Recording(
        subject=subject if subject is not None else path.stem,
        t=df["t"].to_numpy(dtype=np.float64),
        wrist_accel=vals[:, 0:3],
        wrist_gyro=vals[:, 3:6],
        trunk_accel=vals[:, 6:9],
        trunk_gyro=vals[:, 9:12],
        labels=labels,
        arm=arm,
    )


def estimate_lag(a, b, max_lag: int) -> int:
    """Lag (in samples) by which ``b`` trails ``a``.

    Maximizes the Pearson correlation of the overlapping segments over lags
    in [-max_lag, max_lag]; a positive result means ``b`` is delayed.  Ties
    resolve to the smallest |lag| (positive before negative).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if max_lag < 0:
        raise ConfigError("max_lag must be non-negative")
    if min(a.size, b.size) < max(2 * max_lag, 2):
        raise DataError("series too short for the requested lag range")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DataError("constant input has no correlation structure")

    best_lag, best_r = 0, -np.inf
    lags = sorted(range(-max_lag, max_lag + 1), key=lambda l: (abs(l), l < 0))
    for lag in lags:
        i0 = max(0, -lag)
        i1 = min(a.size, b.size - lag)
        if i1 - i0 < 2:
            continue
        x = a[i0:i1]
        y = b[i0 + lag:i1 + lag]
        dx = x - x.mean()
        dy = y - y.mean()
        sx = float(dx @ dx)
        sy = float(dy @ dy)
        r = 0.0 if sx <= 0 or sy <= 0 else float(dx @ dy) / math.sqrt(sx * sy)
        if r > best_r:
            best_lag, best_r = lag, r
    return best_lag


def resample_labels(label_t, label_cls, timeline) -> np.ndarray:
    """Map a sparse label track onto a sample timeline by nearest neighbor.

    Exact midpoint ties take the earlier label.
    """
    label_t = np.asarray(label_t, dtype=np.float64).ravel()
    label_cls = np.asarray(label_cls).ravel()
    timeline = np.asarray(timeline, dtype=np.float64).ravel()
    if label_t.size == 0:
        raise DataError("empty label track")
    if label_t.size != label_cls.size:
        raise DataError("label track times and classes differ in length")
    d = np.diff(label_t)
    if np.any(d < 0):
        raise DataError("label timestamps must be non-decreasing")
    same_t = d == 0
    if np.any(same_t & (label_cls[1:] != label_cls[:-1])):
        raise DataError("conflicting classes at one label timestamp")

    idx = np.searchsorted(label_t, timeline, side="right")
    left = np.clip(idx - 1, 0, label_t.size - 1)
    right = np.clip(idx, 0, label_t.size - 1)
    d_left = np.abs(timeline - label_t[left])
    d_right = np.abs(label_t[right] - timeline)
    pick = np.where(d_left <= d_right, left, right)
    return label_cls[pick]


# ---------------------------------------------------------------------------
# Synthetic generator


@dataclass
class SynthConfig:
    """Knobs for the synthetic recording generator.

    ``intensity`` in [0, 1] scales the compensatory trunk component: at 0 the
    trunk behaves identically in both movement classes, at 1 compensation is
    maximal.  ``class_shares`` is the target time share of
    (calib, mov_no_tc, mov_tc); the segment scheduler tracks it greedily.
    """

    n_subjects: int = 10
    duration_s: float = 600.0
    seed: int = 0
    intensity: float = 0.8
    rate: float = 120.0
    accel_noise_std: float = 0.05
    gyro_noise_std: float = 0.005
    class_shares: tuple = (0.3451, 0.4884, 0.1665)
    calib_dur_s: tuple = (2.5, 3.5)
    mov_dur_s: tuple = (5.0, 7.0)

    def validate(self):
        if not 0.0 <= self.intensity <= 1.0:
            raise ConfigError("intensity must lie in [0, 1]")
        if self.n_subjects < 1:
            raise ConfigError("n_subjects must be >= 1")
        if self.duration_s <= self.calib_dur_s[1] + self.mov_dur_s[1]:
            raise ConfigError("duration too short for one calib/mov cycle")
        if self.rate <= 0:
            raise ConfigError("rate must be positive")
        if len(self.class_shares) != 3 or min(self.class_shares) <= 0:
            raise ConfigError("class_shares needs three positive entries")


# Vectorized scalar-first Hamilton quaternion helpers for (n, 4) arrays.

def _vq_mul(a, b):
    aw, ax, ay, az = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    bw, bx, by, bz = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=1,
    )


def _vq_conj(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _vq_rot(q, v):
    w = q[:, 0:1]
    qv = q[:, 1:4]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def _vq_axis(angle, axis: int):
    """Axis-angle quaternions about a coordinate axis, angle per row."""
    q = np.zeros((angle.shape[0], 4))
    q[:, 0] = np.cos(0.5 * angle)
    q[:, 1 + axis] = np.sin(0.5 * angle)
    return q


def _vq_from_euler(e):
    """Intrinsic z-y-x composition of per-row (roll, pitch, yaw)."""
    qz = _vq_axis(e[:, 2], 2)
    qy = _vq_axis(e[:, 1], 1)
    qx = _vq_axis(e[:, 0], 0)
    return _vq_mul(_vq_mul(qz, qy), qx)


def _vq_rates(q, dt: float) -> np.ndarray:
    """Sensor-frame angular rates whose exact integration reproduces q.

    Row i holds the mean rate over (t[i-1], t[i]]; row 0 is zero.
    """
    rel = _vq_mul(_vq_conj(q[:-1]), q[1:])
    rel = np.where(rel[:, 0:1] < 0, -rel, rel)
    vn = np.linalg.norm(rel[:, 1:4], axis=1)
    ang = 2.0 * np.arctan2(vn, rel[:, 0])
    out = np.zeros((q.shape[0], 3))
    nz = vn > 1e-15
    out[1:][nz] = rel[nz, 1:4] / vn[nz, None] * (ang[nz] / dt)[:, None]
    return out


def _qz(angle: float) -> np.ndarray:
    return np.array([math.cos(0.5 * angle), 0.0, 0.0, math.sin(0.5 * angle)])


def _small_tilt(rng, max_deg: float) -> np.ndarray:
    ax = math.radians(rng.uniform(-max_deg, max_deg))
    ay = math.radians(rng.uniform(-max_deg, max_deg))
    qx = np.array([math.cos(0.5 * ax), math.sin(0.5 * ax), 0.0, 0.0])
    qy = np.array([math.cos(0.5 * ay), 0.0, math.sin(0.5 * ay), 0.0])
    return _vq_mul(qx[None, :], qy[None, :])[0]


def _schedule(cfg: SynthConfig, rng) -> list:
    """Greedy segment scheduler tracking the target class time shares.

    Returns [(class, t0, t1)] covering [0, duration].  The first segment is
    always a still one so a session can calibrate from it.
    """
    shares = np.asarray(cfg.class_shares, dtype=np.float64)
    shares = shares / shares.sum()
    mean_dur = np.array(
        [
            0.5 * (cfg.calib_dur_s[0] + cfg.calib_dur_s[1]),
            0.5 * (cfg.mov_dur_s[0] + cfg.mov_dur_s[1]),
            0.5 * (cfg.mov_dur_s[0] + cfg.mov_dur_s[1]),
        ]
    )
    segs = []
    done = np.zeros(3)
    t = 0.0
    cls = CALIB
    while t < cfg.duration_s:
        rng_lo, rng_hi = cfg.calib_dur_s if cls == CALIB else cfg.mov_dur_s
        dur = min(rng.uniform(rng_lo, rng_hi), cfg.duration_s - t)
        segs.append((cls, t, t + dur))
        done[cls] += dur
        t += dur
        # next class: minimize squared share error after a mean-length segment
        best_err, best_cls = np.inf, CALIB
        for c in (CALIB, MOV_NO_TC, MOV_TC):
            after = done.copy()
            after[c] += mean_dur[c]
            err = float(np.sum((after / after.sum() - shares) ** 2))
            if err < best_err:
                best_err, best_cls = err, c
        cls = best_cls
    return segs


def _envelope(n_seg: int, dt: float, ramp_s: float = 0.6) -> np.ndarray:
    """Cosine-ramped trapezoid: 0 at both segment ends, 1 in the middle."""
    tl = np.arange(n_seg) * dt
    total = n_seg * dt
    r = max(min(ramp_s, total / 4.0), dt)
    env = np.ones(n_seg)
    head = tl < r
    env[head] = 0.5 - 0.5 * np.cos(np.pi * tl[head] / r)
    tail = tl > total - r
    env[tail] = 0.5 - 0.5 * np.cos(np.pi * (total - tl[tail]) / r)
    return env


def _synth_subject(cfg: SynthConfig, subject: str, rng) -> Recording:
    n = int(round(cfg.duration_s * cfg.rate))
    dt = 1.0 / cfg.rate
    t = np.arange(n) * dt

    heading = rng.uniform(-math.pi, math.pi)
    mount_w = _vq_mul(
        _vq_mul(_qz(heading)[None, :], _qz(0.5 * math.pi)[None, :]),
        _small_tilt(rng, 5.0)[None, :],
    )[0]
    mount_t = _vq_mul(_qz(heading)[None, :], _small_tilt(rng, 5.0)[None, :])[0]

    segs = _schedule(cfg, rng)
    labels = np.zeros(n, dtype=np.int8)
    eul_w = np.zeros((n, 3))
    eul_t = np.zeros((n, 3))
    lin_w = np.zeros((n, 3))

    for cls, t0, t1 in segs:
        i0 = int(round(t0 * cfg.rate))
        i1 = min(int(round(t1 * cfg.rate)), n)
        if i1 <= i0:
            continue
        labels[i0:i1] = cls
        if cls == CALIB:
            continue
        tc = cls == MOV_TC
        m = i1 - i0
        env = _envelope(m, dt)
        tl = np.arange(m) * dt

        # one draw block per movement segment, identical for both classes so
        # the two label distributions coincide exactly at intensity 0
        f0 = rng.uniform(0.45, 0.8)
        w_amp = np.radians(
            [rng.uniform(20, 40), rng.uniform(12, 25), rng.uniform(10, 30)]
        )
        w_freq = np.array(
            [f0, f0 * rng.uniform(0.7, 1.0), f0 * rng.uniform(0.4, 0.7)]
        )
        w_phase = rng.uniform(0, 2 * math.pi, 3)
        t_base = np.radians(
            [rng.uniform(0.5, 2.0), rng.uniform(1.0, 4.0), rng.uniform(0.5, 1.5)]
        )
        t_extra = np.radians(
            [rng.uniform(4, 8), rng.uniform(8, 15), rng.uniform(2, 5)]
        )
        t_freq = f0 * rng.uniform(0.9, 1.1)
        t_dphase = rng.uniform(-0.5, 0.5)
        a_amp = rng.uniform(1.0, 3.0, 3) * np.array([1.0, 0.7, 0.5])
        a_phase = rng.uniform(0, 2 * math.pi, 3)

        atten = 1.0 - 0.4 * cfg.intensity if tc else 1.0
        t_amp = t_base + (cfg.intensity * t_extra if tc else 0.0)

        for ax in range(3):
            # euler columns are (roll, pitch, yaw); amplitude vectors are
            # ordered the same way
            eul_w[i0:i1, ax] = (
                atten * w_amp[ax] * env
                * np.sin(2 * math.pi * w_freq[ax] * tl + w_phase[ax])
            )
            eul_t[i0:i1, ax] = (
                t_amp[ax] * env
                * np.sin(2 * math.pi * t_freq * tl + w_phase[1] + t_dphase)
            )
            lin_w[i0:i1, ax] = (
                a_amp[ax] * env
                * np.sin(2 * math.pi * f0 * tl + a_phase[ax])
            )

    q_w = _vq_mul(np.broadcast_to(mount_w, (n, 4)), _vq_from_euler(eul_w))
    q_t = _vq_mul(np.broadcast_to(mount_t, (n, 4)), _vq_from_euler(eul_t))

    gyro_w = _vq_rates(q_w, dt)
    gyro_t = _vq_rates(q_t, dt)
    g_up = np.array([0.0, 0.0, _G])
    acc_w = _vq_rot(_vq_conj(q_w), g_up + lin_w)
    acc_t = _vq_rot(_vq_conj(q_t), np.broadcast_to(g_up, (n, 3)))

    acc_w = acc_w + rng.normal(0.0, cfg.accel_noise_std, (n, 3))
    gyro_w = gyro_w + rng.normal(0.0, cfg.gyro_noise_std, (n, 3))
    acc_t = acc_t + rng.normal(0.0, cfg.accel_noise_std, (n, 3))
    gyro_t = gyro_t + rng.normal(0.0, cfg.gyro_noise_std, (n, 3))

    return Recording(
        subject=subject,
        t=t,
        wrist_accel=acc_w,
        wrist_gyro=gyro_w,
        trunk_accel=acc_t,
        trunk_gyro=gyro_t,
        labels=labels,
    )


def generate_synthetic(cfg: SynthConfig) -> list:
    """Deterministic per-seed list of synthetic recordings, one per subject."""
    cfg.validate()
    recs = []
    for s in range(cfg.n_subjects):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, s]))
        recs.append(_synth_subject(cfg, f"S{s:02d}", rng))
    return recs
