"""Kinematic channel derivation from calibrated sensor data.

Per sample, 42 channels are derived at the sensor rate:

  per sensor (wrist, trunk):
    accel_local   x y z mag   raw specific force, sensor frame (bias-corrected)
    accel_calib   x y z mag   linear acceleration, body frame (gravity removed)
    gyro_local    x y z mag   angular rate, sensor frame
    gyro_calib    x y z mag   angular rate, body frame
    orient        roll pitch yaw   body-frame orientation, intrinsic z-y-x
  pair:
    rel_orient    roll pitch yaw angle   wrist orientation relative to trunk

The body ("calibrated") frame keeps world z up, so gravity removal carries
over unchanged.  The per-sample derivation lives in one jit kernel that both
the offline pipeline and the streaming engine call, which makes the two
paths bit-identical.

Optical-capture-only channel groups (linear velocity, marker distances) have
no derivation path here; ``StreamSet.extra`` reserves a slot for them so the
feature stage stays generic if such data ever gets ingested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from numba import njit

from . import core
from .calib import G, CalibConfig, SessionCalib, att_init, att_step
from .core import nb_qmul, nb_qrot, nb_qtoeuler
from .errors import DataError


def _sensor_channels(prefix: str):
    names = []
    for stream in ("accel_local", "accel_calib", "gyro_local", "gyro_calib"):
        for ch in ("x", "y", "z", "mag"):
            names.append(f"{prefix}.{stream}.{ch}")
    for ch in ("roll", "pitch", "yaw"):
        names.append(f"{prefix}.orient.{ch}")
    return names


CHANNELS: Tuple[str, ...] = tuple(
    _sensor_channels("wrist")
    + _sensor_channels("trunk")
    + [f"pair.rel_orient.{ch}" for ch in ("roll", "pitch", "yaw", "angle")]
)
N_CHANNELS = len(CHANNELS)

# orientation angle channels (unwrapped per analysis window downstream)
ANGLE_CHANNELS: Tuple[int, ...] = tuple(
    i for i, n in enumerate(CHANNELS)
    if n.endswith((".roll", ".pitch", ".yaw"))
)


@dataclass
class StreamSet:
    """Derived channel matrix plus carried-through labels."""

    t: np.ndarray
    channels: np.ndarray  # (n, N_CHANNELS)
    labels: Optional[np.ndarray]
    subject: str
    names: Tuple[str, ...] = CHANNELS
    extra: Dict[str, np.ndarray] = field(default_factory=dict)


def relative_orientation(q_a: np.ndarray, q_b: np.ndarray):
    """Orientation of a relative to b: q_b^-1 * q_a, as Euler plus angle."""
    q_rel = core.quat_mul(core.quat_inverse(q_b), q_a)
    angle = 2.0 * math.acos(min(1.0, abs(float(q_rel[0]))))
    return core.quat_to_euler(q_rel), angle


@njit(cache=True)
def sample_row(s, dt, state_w, state_t, bias, mirror, tau, lp_tau, qpre, out):
    """Derive one 42-channel row and advance both attitude states.

    ``s`` is the raw (12,) sample (wrist accel/gyro, trunk accel/gyro),
    ``bias`` the matching (12,) bias vector, ``qpre`` the stacked (8,)
    body-frame pre-rotations (wrist then trunk).  ``dt`` <= 0 marks the
    first sample: states are initialized instead of stepped.
    """
    qcw_w = 1.0
    qcx_w = 0.0
    qcy_w = 0.0
    qcz_w = 0.0
    for sensor in range(2):
        off = 6 * sensor
        ax = s[off + 0] - bias[off + 0]
        ay = s[off + 1] - bias[off + 1]
        az = s[off + 2] - bias[off + 2]
        gx = s[off + 3] - bias[off + 3]
        gy = s[off + 4] - bias[off + 4]
        gz = s[off + 5] - bias[off + 5]
        if mirror:
            ay = -ay
            gx = -gx
            gz = -gz

        state = state_w if sensor == 0 else state_t
        if dt <= 0.0:
            att_init(state, ax, ay, az)
        else:
            att_step(state, gx, gy, gz, ax, ay, az, dt, tau, lp_tau)
        qw, qx, qy, qz = state[0], state[1], state[2], state[3]
        pw, px, py, pz = qpre[4 * sensor], qpre[4 * sensor + 1], qpre[4 * sensor + 2], qpre[4 * sensor + 3]
        cw, cx, cy, cz = nb_qmul(pw, px, py, pz, qw, qx, qy, qz)

        # linear acceleration: world frame first, then into the body frame
        wx, wy, wz = nb_qrot(qw, qx, qy, qz, ax, ay, az)
        wz -= G
        bx, by, bz = nb_qrot(pw, px, py, pz, wx, wy, wz)
        # body-frame angular rate
        rx, ry, rz = nb_qrot(cw, cx, cy, cz, gx, gy, gz)

        base = 19 * sensor
        out[base + 0] = ax
        out[base + 1] = ay
        out[base + 2] = az
        out[base + 3] = math.sqrt(ax * ax + ay * ay + az * az)
        out[base + 4] = bx
        out[base + 5] = by
        out[base + 6] = bz
        out[base + 7] = math.sqrt(bx * bx + by * by + bz * bz)
        out[base + 8] = gx
        out[base + 9] = gy
        out[base + 10] = gz
        out[base + 11] = math.sqrt(gx * gx + gy * gy + gz * gz)
        out[base + 12] = rx
        out[base + 13] = ry
        out[base + 14] = rz
        out[base + 15] = math.sqrt(rx * rx + ry * ry + rz * rz)
        roll, pitch, yaw = nb_qtoeuler(cw, cx, cy, cz)
        out[base + 16] = roll
        out[base + 17] = pitch
        out[base + 18] = yaw

        if sensor == 0:
            qcw_w, qcx_w, qcy_w, qcz_w = cw, cx, cy, cz
        else:
            # relative orientation: wrist expressed in the trunk body frame
            rw, rxq, ryq, rzq = nb_qmul(cw, -cx, -cy, -cz, qcw_w, qcx_w, qcy_w, qcz_w)
            roll, pitch, yaw = nb_qtoeuler(rw, rxq, ryq, rzq)
            out[38] = roll
            out[39] = pitch
            out[40] = yaw
            aw = abs(rw)
            if aw > 1.0:
                aw = 1.0
            out[41] = 2.0 * math.acos(aw)


@njit(cache=True)
def derive_rows(t, samples, bias, mirror, tau, lp_tau, qpre, out):
    """Run sample_row over a whole recording (states start at sample 0)."""
    state_w = np.zeros(7)
    state_t = np.zeros(7)
    n = samples.shape[0]
    for i in range(n):
        dt = t[i] - t[i - 1] if i > 0 else 0.0
        sample_row(
            samples[i], dt, state_w, state_t, bias, mirror, tau, lp_tau,
            qpre, out[i],
        )


def derive_streams(rec, session: SessionCalib, cfg: CalibConfig) -> StreamSet:
    """Derive all channels for a recording under a fitted session frame."""
    cfg.validate()
    mat = rec.sensor_matrix()
    if mat.shape[1] != 12:
        raise DataError("recording sensor matrix must have 12 columns")
    qpre = np.concatenate([session.q_pre_wrist, session.q_pre_trunk])
    out = np.empty((rec.n, N_CHANNELS))
    derive_rows(
        rec.t, mat, cfg.bias_vector(), session.mirrored,
        cfg.tau, cfg.accel_lp_tau, qpre, out,
    )
    return StreamSet(
        t=rec.t,
        channels=out,
        labels=None if rec.labels is None else rec.labels.copy(),
        subject=rec.subject,
    )
