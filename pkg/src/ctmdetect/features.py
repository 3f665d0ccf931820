"""Sliding-window segmentation and per-window feature extraction.

Windows are 60 samples (500 ms at 120 Hz) with a 15-sample hop (125 ms);
the window label is the class of its last sample.  Each window yields a
fixed-order feature vector:

  * 10 statistics per channel (42 channels): mean, population std, min,
    max, range, RMS, mean absolute deviation, least-squares trend per
    second, skewness, excess kurtosis;
  * wrist-vs-trunk similarity on matching body-frame channels of linear
    acceleration, angular rate, and orientation (11 pairs): maximum
    normalized cross-correlation and normalized DTW distance;
  * logarithmic dimensionless jerk of the wrist and trunk linear
    acceleration magnitude, plus their ratio.

Orientation channels are unwrapped within the window before any metric.
Feature names follow ``<sensor|pair>.<stream>.<channel>.<metric>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numba import njit, prange

from . import streams
from .errors import ConfigError, DataError

STAT_NAMES = ("mean", "std", "min", "max", "range", "rms", "mad", "trend", "skew", "kurt")
SIMILARITY_NAMES = ("xcorr_max", "dtw")

LDJ_VELOCITY, LDJ_ACCELERATION = 0, 1

_EPS = 1e-12
_LDJ_CAP = 60.0


@dataclass(frozen=True)
class WindowSpec:
    length: int = 60
    hop: int = 15
    rate: float = 120.0

    def validate(self):
        if self.length < 3 or self.hop < 1 or self.hop > self.length:
            raise ConfigError("window length/hop out of range")
        if self.rate <= 0:
            raise ConfigError("rate must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.rate


def _similarity_pairs():
    """(wrist_idx, trunk_idx, name) for every matched body-frame channel."""
    pairs = []
    for stream, comps in (
        ("accel_calib", ("x", "y", "z", "mag")),
        ("gyro_calib", ("x", "y", "z", "mag")),
        ("orient", ("roll", "pitch", "yaw")),
    ):
        for c in comps:
            wi = streams.CHANNELS.index(f"wrist.{stream}.{c}")
            ti = streams.CHANNELS.index(f"trunk.{stream}.{c}")
            pairs.append((wi, ti, f"{stream}.{c}"))
    return pairs

_PAIRS = _similarity_pairs()
_PAIR_A = np.array([p[0] for p in _PAIRS], dtype=np.int64)
_PAIR_B = np.array([p[1] for p in _PAIRS], dtype=np.int64)
_ANGLE_IDX = np.array(streams.ANGLE_CHANNELS, dtype=np.int64)
_LDJ_WRIST = streams.CHANNELS.index("wrist.accel_calib.mag")
_LDJ_TRUNK = streams.CHANNELS.index("trunk.accel_calib.mag")


def _build_feature_names() -> Tuple[str, ...]:
    names = []
    for ch in streams.CHANNELS:
        names.extend(f"{ch}.{s}" for s in STAT_NAMES)
    for _, _, pname in _PAIRS:
        names.extend(f"pair.{pname}.{m}" for m in SIMILARITY_NAMES)
    names.append("wrist.accel_calib.mag.ldj")
    names.append("trunk.accel_calib.mag.ldj")
    names.append("pair.accel_calib.mag.ldj_ratio")
    return tuple(names)


FEATURE_NAMES: Tuple[str, ...] = _build_feature_names()
N_FEATURES = len(FEATURE_NAMES)


def feature_origin(name: str) -> str:
    """Coarse origin tag of a feature: wrist, trunk, or interaction."""
    head = name.split(".", 1)[0]
    return "interaction" if head == "pair" else head


def segment(n_samples: int, spec: WindowSpec) -> np.ndarray:
    """Window start indices 0, hop, 2*hop, ... over a stream of n samples."""
    spec.validate()
    if n_samples < spec.length:
        raise DataError(
            f"stream of {n_samples} samples is shorter than one window ({spec.length})"
        )
    count = (n_samples - spec.length) // spec.hop + 1
    return np.arange(count, dtype=np.int64) * spec.hop


def window_labels(labels: np.ndarray, starts: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Per-window class: the label of the window's last sample."""
    return np.asarray(labels)[starts + spec.length - 1]


# ---------------------------------------------------------------------------
# jit kernels


@njit(cache=True)
def _unwrap_inplace(x):
    offs = 0.0
    prev = x[0]
    for i in range(1, x.shape[0]):
        raw = x[i]
        d = raw - prev
        dd = (d + math.pi) % (2.0 * math.pi) - math.pi
        if dd == -math.pi and d > 0.0:
            dd = math.pi
        offs += dd - d
        x[i] = raw + offs
        prev = raw


@njit(cache=True)
def _stats10(x, rate, out, off):
    n = x.shape[0]
    s = 0.0
    s2 = 0.0
    mn = x[0]
    mx = x[0]
    for i in range(n):
        v = x[i]
        s += v
        s2 += v * v
        if v < mn:
            mn = v
        if v > mx:
            mx = v
    mean = s / n
    m2 = 0.0
    m3 = 0.0
    m4 = 0.0
    mad = 0.0
    sxy = 0.0
    ibar = 0.5 * (n - 1)
    for i in range(n):
        d = x[i] - mean
        d2 = d * d
        m2 += d2
        m3 += d2 * d
        m4 += d2 * d2
        mad += abs(d)
        sxy += (i - ibar) * d
    m2 /= n
    m3 /= n
    m4 /= n
    mad /= n
    std = math.sqrt(m2)
    sxx = n * (n * n - 1.0) / 12.0
    trend = sxy / sxx * rate
    if std < 1e-9:
        skew = 0.0
        kurt = 0.0
    else:
        skew = m3 / (std * std * std)
        kurt = m4 / (m2 * m2) - 3.0
    out[off + 0] = mean
    out[off + 1] = std
    out[off + 2] = mn
    out[off + 3] = mx
    out[off + 4] = mx - mn
    out[off + 5] = math.sqrt(s2 / n)
    out[off + 6] = mad
    out[off + 7] = trend
    out[off + 8] = skew
    out[off + 9] = kurt


@njit(cache=True)
def _xcorr_max(x, y):
    n = x.shape[0]
    maxlag = n // 2
    best = -2.0
    evaluated = False
    for lag in range(-maxlag, maxlag + 1):
        i0 = -lag if lag < 0 else 0
        i1 = n if lag < 0 else n - lag
        m = i1 - i0
        if m < 4:
            continue
        evaluated = True
        mx = 0.0
        my = 0.0
        for i in range(i0, i1):
            mx += x[i]
            my += y[i + lag]
        mx /= m
        my /= m
        sxx = 0.0
        syy = 0.0
        sxy = 0.0
        for i in range(i0, i1):
            dx = x[i] - mx
            dy = y[i + lag] - my
            sxx += dx * dx
            syy += dy * dy
            sxy += dx * dy
        if sxx <= 1e-24 or syy <= 1e-24:
            r = 0.0
        else:
            r = sxy / math.sqrt(sxx * syy)
            if r > 1.0:
                r = 1.0
            elif r < -1.0:
                r = -1.0
        if r > best:
            best = r
    if not evaluated:
        return 0.0
    return best


@njit(cache=True)
def _dtw_norm(x, y):
    n = x.shape[0]
    m = y.shape[0]
    cost = np.empty((n, m))
    plen = np.empty((n, m))
    cost[0, 0] = abs(x[0] - y[0])
    plen[0, 0] = 1.0
    for j in range(1, m):
        cost[0, j] = cost[0, j - 1] + abs(x[0] - y[j])
        plen[0, j] = j + 1.0
    for i in range(1, n):
        cost[i, 0] = cost[i - 1, 0] + abs(x[i] - y[0])
        plen[i, 0] = i + 1.0
        for j in range(1, m):
            bc = cost[i - 1, j - 1]
            bl = plen[i - 1, j - 1]
            if cost[i - 1, j] < bc or (cost[i - 1, j] == bc and plen[i - 1, j] < bl):
                bc = cost[i - 1, j]
                bl = plen[i - 1, j]
            if cost[i, j - 1] < bc or (cost[i, j - 1] == bc and plen[i, j - 1] < bl):
                bc = cost[i, j - 1]
                bl = plen[i, j - 1]
            cost[i, j] = bc + abs(x[i] - y[j])
            plen[i, j] = bl + 1.0
    return cost[n - 1, m - 1] / plen[n - 1, m - 1]


@njit(cache=True)
def _central_diff(x, dt, out):
    n = x.shape[0]
    out[0] = (x[1] - x[0]) / dt
    for i in range(1, n - 1):
        out[i] = (x[i + 1] - x[i - 1]) / (2.0 * dt)
    out[n - 1] = (x[n - 1] - x[n - 2]) / dt


@njit(cache=True)
def _ldj(x, dt, kind):
    n = x.shape[0]
    T = n * dt
    d1 = np.empty(n)
    _central_diff(x, dt, d1)
    if kind == 0:
        d2 = np.empty(n)
        _central_diff(d1, dt, d2)
        integ = 0.0
        for i in range(n - 1):
            integ += 0.5 * (d2[i] * d2[i] + d2[i + 1] * d2[i + 1]) * dt
        scale = T * T * T
    else:
        integ = 0.0
        for i in range(n - 1):
            integ += 0.5 * (d1[i] * d1[i] + d1[i + 1] * d1[i + 1]) * dt
        scale = T
    peak = 0.0
    for i in range(n):
        a = abs(x[i])
        if a > peak:
            peak = a
    pk2 = peak * peak
    if pk2 < _EPS:
        pk2 = _EPS
    arg = scale * integ / pk2
    if arg < _EPS:
        arg = _EPS
    val = -math.log(arg)
    if val > _LDJ_CAP:
        val = _LDJ_CAP
    elif val < -_LDJ_CAP:
        val = -_LDJ_CAP
    return val


@njit(cache=True)
def feature_row(win, dt, rate, angle_idx, pair_a, pair_b, ldj_a, ldj_b, out):
    """Fill one feature vector from a (length, channels) window slice."""
    L = win.shape[0]
    C = win.shape[1]
    work = np.empty((C, L))
    for c in range(C):
        for i in range(L):
            work[c, i] = win[i, c]
    for k in range(angle_idx.shape[0]):
        _unwrap_inplace(work[angle_idx[k]])
    for c in range(C):
        _stats10(work[c], rate, out, 10 * c)
    off = 10 * C
    for p in range(pair_a.shape[0]):
        out[off + 2 * p] = _xcorr_max(work[pair_a[p]], work[pair_b[p]])
        out[off + 2 * p + 1] = _dtw_norm(work[pair_a[p]], work[pair_b[p]])
    off += 2 * pair_a.shape[0]
    lw = _ldj(work[ldj_a], dt, 1)
    lt = _ldj(work[ldj_b], dt, 1)
    out[off] = lw
    out[off + 1] = lt
    out[off + 2] = lw / lt if abs(lt) > 1e-9 else 0.0


@njit(cache=True, parallel=True)
def _feature_matrix(channels, starts, length, dt, rate,
                    angle_idx, pair_a, pair_b, ldj_a, ldj_b, out):
    for w in prange(starts.shape[0]):
        s = starts[w]
        feature_row(
            channels[s:s + length], dt, rate,
            angle_idx, pair_a, pair_b, ldj_a, ldj_b, out[w],
        )


# ---------------------------------------------------------------------------
# public API


def extract(window: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Feature vector of one (length, channels) window."""
    spec.validate()
    win = np.ascontiguousarray(window, dtype=np.float64)
    if win.shape != (spec.length, streams.N_CHANNELS):
        raise DataError(
            f"window must have shape ({spec.length}, {streams.N_CHANNELS})"
        )
    out = np.empty(N_FEATURES)
    feature_row(
        win, spec.dt, spec.rate,
        _ANGLE_IDX, _PAIR_A, _PAIR_B, _LDJ_WRIST, _LDJ_TRUNK, out,
    )
    return out


def extract_matrix(channels: np.ndarray, starts: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Feature matrix for all windows given by ``starts``."""
    spec.validate()
    ch = np.ascontiguousarray(channels, dtype=np.float64)
    if ch.ndim != 2 or ch.shape[1] != streams.N_CHANNELS:
        raise DataError(f"channel matrix must have {streams.N_CHANNELS} columns")
    starts = np.asarray(starts, dtype=np.int64)
    if starts.size and starts.max() + spec.length > ch.shape[0]:
        raise DataError("window exceeds stream length")
    out = np.empty((starts.shape[0], N_FEATURES))
    _feature_matrix(
        ch, starts, spec.length, spec.dt, spec.rate,
        _ANGLE_IDX, _PAIR_A, _PAIR_B, _LDJ_WRIST, _LDJ_TRUNK, out,
    )
    return out


def max_norm_xcorr(x, y) -> float:
    """Best Pearson correlation over lags up to half the series length."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 4:
        raise DataError("series must be 1-D, equal length, and length >= 4")
    return float(_xcorr_max(x, y))


def dtw_norm(x, y) -> float:
    """DTW distance with |.| cost, normalized by the optimal path length.

    Ties between equal-cost alignments resolve to the shorter path.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.size == 0 or y.size == 0:
        raise DataError("series must be non-empty")
    return float(_dtw_norm(x, y))


def ldj(x, kind: str, dt: float) -> float:
    """Logarithmic dimensionless jerk of a velocity or acceleration series."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.size < 3:
        raise DataError("series must have at least 3 samples")
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if kind == "velocity":
        k = LDJ_VELOCITY
    elif kind == "acceleration":
        k = LDJ_ACCELERATION
    else:
        raise ConfigError("kind must be 'velocity' or 'acceleration'")
    return float(_ldj(x, dt, k))


def ldj_ratio(w: float, t: float) -> float:
    return w / t if abs(t) > 1e-9 else 0.0


def stats(x, rate: float = 120.0) -> np.ndarray:
    """The 10 per-channel window statistics, in STAT_NAMES order."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.size < 2:
        raise DataError("series must have at least 2 samples")
    out = np.empty(10)
    _stats10(x, rate, out, 0)
    return out
