"""Attitude estimation and body-frame calibration.

Orientation comes from a complementary filter with a 6D (accel + gyro)
contract: exact gyro strapdown integration plus an inclination correction
that rotates the estimate about a horizontal axis toward agreement with the
low-passed accelerometer, with per-step gain dt/tau.  Heading is
unobservable without a magnetometer and is left untouched.

Frame conventions: world z is up, gravity magnitude g = 9.80665 m/s².  The
anatomical calibration maps each sensor's world frame into a body-aligned
frame derived from a known static pose: the sensor's lateral axis (local x
for the wrist, local y for the trunk) is projected into the horizontal plane
and becomes body y, world up stays z, and x completes the right-handed
basis.  Left-arm recordings are mirrored across the sagittal plane before
any processing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from . import core
from .core import nb_qexp, nb_qmul, nb_qnormalize, nb_qrot
from .errors import ConfigError, DataError

G = 9.80665

QZ_90 = np.array([math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4)])

WRIST, TRUNK = "wrist", "trunk"


@dataclass
class CalibConfig:
    """Session-level calibration settings.

    ``tau`` is the inclination correction time constant, ``accel_lp_tau``
    the accelerometer low-pass time constant, and ``settle_s`` how much
    still data the filter gets before the static pose snapshot is taken.
    Biases are subtracted from the raw signals axis-wise.
    """

    tau: float = 1.0
    accel_lp_tau: float = 0.05
    settle_s: float = 2.0
    bias_wrist_accel: tuple = (0.0, 0.0, 0.0)
    bias_wrist_gyro: tuple = (0.0, 0.0, 0.0)
    bias_trunk_accel: tuple = (0.0, 0.0, 0.0)
    bias_trunk_gyro: tuple = (0.0, 0.0, 0.0)
    arm: str = "right"
    patient_pose_adjust: bool = False
    q_ref_trunk: Optional[np.ndarray] = None
    align_threshold: float = 0.1

    def validate(self):
        if self.tau <= 0 or self.accel_lp_tau <= 0:
            raise ConfigError("filter time constants must be positive")
        if self.settle_s <= 0:
            raise ConfigError("settle_s must be positive")
        if self.arm not in ("right", "left"):
            raise ConfigError("arm must be 'right' or 'left'")
        if self.align_threshold < 0:
            raise ConfigError("align_threshold must be non-negative")

    def bias_vector(self) -> np.ndarray:
        """(12,) layout matching Recording.sensor_matrix columns."""
        return np.array(
            self.bias_wrist_accel
            + self.bias_wrist_gyro
            + self.bias_trunk_accel
            + self.bias_trunk_gyro,
            dtype=np.float64,
        )

    def q_ref(self) -> np.ndarray:
        if self.q_ref_trunk is None:
            return core.quat_identity()
        return core.quat_canonical(core.quat_normalize(np.asarray(self.q_ref_trunk, float)))


# ---------------------------------------------------------------------------
# Elementary operations


def bias_correct(accel, gyro, bias_accel, bias_gyro):
    """Subtract fixed axis-specific biases from raw sensor samples."""
    return (
        np.asarray(accel, float) - np.asarray(bias_accel, float),
        np.asarray(gyro, float) - np.asarray(bias_gyro, float),
    )


def mirror_kinematics(accel, gyro):
    """Reflect kinematics across the sagittal (x-z) plane.

    Proper vectors flip their y-component; angular rates are pseudovectors
    and flip the complementary components.  Exact involution.
    """
    a = np.asarray(accel, float)
    w = np.asarray(gyro, float)
    return a * np.array([1.0, -1.0, 1.0]), w * np.array([-1.0, 1.0, -1.0])


def remove_gravity(accel_sensor, q_world) -> np.ndarray:
    """World-frame linear acceleration of a sensor-frame specific force."""
    out = core.rotate_vec(q_world, np.asarray(accel_sensor, float))
    return out - np.array([0.0, 0.0, G])


@dataclass
class CalibFrame:
    """Body-aligned frame for one sensor: q_rot maps body to world."""

    q_rot: np.ndarray
    sensor_kind: str


def anatomical_calibration(q0: np.ndarray, sensor_kind: str) -> CalibFrame:
    """Body-aligned frame from the static-pose orientation ``q0``.

    The sensor's lateral axis is local x for the wrist and local y for the
    trunk.  Its world direction, projected to the horizontal plane, defines
    body y; world up is body z; body x completes the basis.  Degenerate when
    the lateral axis points (anti)parallel to vertical.
    """
    if sensor_kind not in (WRIST, TRUNK):
        raise ConfigError(f"unknown sensor kind {sensor_kind!r}")
    local = core.vec3(1, 0, 0) if sensor_kind == WRIST else core.vec3(0, 1, 0)
    y_lat = core.rotate_vec(q0, local)
    z = core.vec3(0, 0, 1)
    x = np.cross(y_lat, z)
    nx = float(np.linalg.norm(x))
    if nx <= 1e-6:
        raise DataError("lateral axis is vertical; calibration pose is degenerate")
    x = x / nx
    y = np.cross(z, x)
    R = np.column_stack([x, y, z])
    return CalibFrame(q_rot=core.quat_from_matrix(R), sensor_kind=sensor_kind)


def apply_calibration(q_world: np.ndarray, frame: CalibFrame) -> np.ndarray:
    """Map a world orientation into the body-aligned frame of ``frame``."""
    return core.quat_mul(core.quat_inverse(frame.q_rot), q_world)


def patient_pose_adjust(q_calib_wrist: np.ndarray) -> np.ndarray:
    """Rotate a calibrated wrist orientation 90 degrees about vertical.

    Accounts for seated patient sessions where the reach axis is rotated a
    quarter turn relative to the standing pose convention.
    """
    return core.quat_mul(QZ_90, q_calib_wrist)


def trunk_alignment_correction(
    q0: np.ndarray, q_ref: np.ndarray, threshold: float = 0.1
) -> Optional[np.ndarray]:
    """Correction for a misplaced trunk sensor.

    When the sign-stable quaternion distance between the initial trunk
    orientation and the reference exceeds the threshold, returns q_corr with
    q_corr * q0 == q_ref; otherwise None (placement accepted as is).
    """
    if core.quat_diff_norm(q0, q_ref) <= threshold:
        return None
    return core.quat_mul(q_ref, core.quat_inverse(q0))


# ---------------------------------------------------------------------------
# Attitude filter kernels

# filter state layout: [qw, qx, qy, qz, lp_ax, lp_ay, lp_az]
STATE_SIZE = 7


@njit(cache=True)
def att_init(state, ax, ay, az):
    """Initialize orientation from one accelerometer sample (tilt only)."""
    an = math.sqrt(ax * ax + ay * ay + az * az)
    if an < 1e-9:
        state[0] = 1.0
        state[1] = 0.0
        state[2] = 0.0
        state[3] = 0.0
    else:
        ux, uy, uz = ax / an, ay / an, az / an
        # rotation taking the measured up direction onto world +z
        cx, cy = uy, -ux
        s = math.sqrt(cx * cx + cy * cy)
        ang = math.atan2(s, uz)
        if s < 1e-12:
            if uz > 0.0:
                state[0] = 1.0
                state[1] = 0.0
            else:
                state[0] = 0.0
                state[1] = 1.0
            state[2] = 0.0
            state[3] = 0.0
        else:
            half = 0.5 * ang
            sh = math.sin(half) / s
            state[0] = math.cos(half)
            state[1] = cx * sh
            state[2] = cy * sh
            state[3] = 0.0
    state[4] = ax
    state[5] = ay
    state[6] = az


@njit(cache=True)
def att_step(state, gx, gy, gz, ax, ay, az, dt, tau, lp_tau):
    """Advance one sample: strapdown + horizontal-axis inclination pull."""
    qw, qx, qy, qz = state[0], state[1], state[2], state[3]

    dw, dx, dy, dz = nb_qexp(gx, gy, gz, dt)
    qw, qx, qy, qz = nb_qmul(qw, qx, qy, qz, dw, dx, dy, dz)

    alpha = dt / (lp_tau + dt)
    lx = state[4] + alpha * (ax - state[4])
    ly = state[5] + alpha * (ay - state[5])
    lz = state[6] + alpha * (az - state[6])
    state[4] = lx
    state[5] = ly
    state[6] = lz

    an = math.sqrt(lx * lx + ly * ly + lz * lz)
    if an > 1e-6:
        vx, vy, vz = nb_qrot(qw, qx, qy, qz, lx / an, ly / an, lz / an)
        # rotate about the horizontal axis v x z by a dt/tau fraction of the
        # misalignment angle; heading stays untouched
        cx, cy = vy, -vx
        s = math.sqrt(cx * cx + cy * cy)
        ang = math.atan2(s, vz)
        if s > 1e-12:
            half = 0.5 * ang * dt / tau
            sh = math.sin(half) / s
            cw, cx2, cy2 = math.cos(half), cx * sh, cy * sh
            qw, qx, qy, qz = nb_qmul(cw, cx2, cy2, 0.0, qw, qx, qy, qz)
        elif vz < 0.0:
            half = 0.5 * math.pi * dt / tau
            qw, qx, qy, qz = nb_qmul(
                math.cos(half), math.sin(half), 0.0, 0.0, qw, qx, qy, qz
            )

    qw, qx, qy, qz = nb_qnormalize(qw, qx, qy, qz)
    state[0] = qw
    state[1] = qx
    state[2] = qy
    state[3] = qz


@njit(cache=True)
def att_run(state, t, gyro, accel, i0, i1, tau, lp_tau):
    """Advance the filter over samples [max(i0, 1), i1)."""
    start = i0 if i0 > 1 else 1
    for i in range(start, i1):
        dt = t[i] - t[i - 1]
        att_step(
            state,
            gyro[i, 0], gyro[i, 1], gyro[i, 2],
            accel[i, 0], accel[i, 1], accel[i, 2],
            dt, tau, lp_tau,
        )


class AttitudeFilter:
    """Convenience wrapper around the jit state kernels for one sensor."""

    def __init__(self, tau: float = 1.0, accel_lp_tau: float = 0.05):
        if tau <= 0 or accel_lp_tau <= 0:
            raise ConfigError("filter time constants must be positive")
        self.tau = tau
        self.accel_lp_tau = accel_lp_tau
        self.state = np.zeros(STATE_SIZE)
        self._ready = False

    def init_from_accel(self, accel):
        a = np.asarray(accel, float)
        att_init(self.state, a[0], a[1], a[2])
        self._ready = True

    def update(self, gyro, accel, dt: float):
        if not 0.0 < dt <= 0.1:
            raise DataError(f"dt {dt} outside (0, 0.1]")
        g = np.asarray(gyro, float)
        a = np.asarray(accel, float)
        if not (np.isfinite(g).all() and np.isfinite(a).all()):
            raise DataError("non-finite sample")
        if not self._ready:
            self.init_from_accel(a)
            return
        att_step(
            self.state, g[0], g[1], g[2], a[0], a[1], a[2],
            dt, self.tau, self.accel_lp_tau,
        )

    @property
    def q_world(self) -> np.ndarray:
        return core.quat_canonical(self.state[:4].copy())


# ---------------------------------------------------------------------------
# Session fitting


@dataclass
class SessionCalib:
    """Per-session frame mapping for both sensors.

    ``q_pre_*`` left-multiplies a sensor's world orientation to give its
    body-frame orientation; it already folds in the anatomical frame, the
    optional patient pose adjustment (wrist) and the optional trunk
    placement correction.
    """

    q_pre_wrist: np.ndarray
    q_pre_trunk: np.ndarray
    q0_wrist: np.ndarray
    q0_trunk: np.ndarray
    trunk_corrected: bool
    mirrored: bool


def preprocess_raw(rec_matrix: np.ndarray, bias: np.ndarray, mirror: bool) -> np.ndarray:
    """Bias-correct (then mirror, for left-arm data) a (n, 12) sample matrix."""
    out = rec_matrix - bias[None, :]
    if mirror:
        sign = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0] * 2)
        out = out * sign[None, :]
    return out


def fit_session(rec, cfg: CalibConfig) -> SessionCalib:
    """Derive the session frame mapping from the initial still period.

    Runs the attitude filter over the first ``settle_s`` seconds (the
    recording is expected to start still), snapshots both orientations, and
    builds the anatomical frames plus optional adjustments from them.
    """
    cfg.validate()
    mirror = cfg.arm == "left"
    mat = preprocess_raw(rec.sensor_matrix(), cfg.bias_vector(), mirror)
    settle = int(round(cfg.settle_s * rec.rate))
    settle = max(1, min(settle, rec.n - 1))

    q0 = {}
    for kind, off in ((WRIST, 0), (TRUNK, 6)):
        state = np.zeros(STATE_SIZE)
        accel = np.ascontiguousarray(mat[:, off:off + 3])
        gyro = np.ascontiguousarray(mat[:, off + 3:off + 6])
        att_init(state, accel[0, 0], accel[0, 1], accel[0, 2])
        att_run(state, rec.t, gyro, accel, 1, settle + 1, cfg.tau, cfg.accel_lp_tau)
        q0[kind] = core.quat_canonical(state[:4].copy())

    frame_w = anatomical_calibration(q0[WRIST], WRIST)
    frame_t = anatomical_calibration(q0[TRUNK], TRUNK)

    q_pre_w = core.quat_inverse(frame_w.q_rot)
    if cfg.patient_pose_adjust:
        q_pre_w = core.quat_mul(QZ_90, q_pre_w)

    q_pre_t = core.quat_inverse(frame_t.q_rot)
    q_calib0_t = core.quat_mul(q_pre_t, q0[TRUNK])
    corr = trunk_alignment_correction(q_calib0_t, cfg.q_ref(), cfg.align_threshold)
    if corr is not None:
        q_pre_t = core.quat_mul(corr, q_pre_t)

    return SessionCalib(
        q_pre_wrist=q_pre_w,
        q_pre_trunk=q_pre_t,
        q0_wrist=q0[WRIST],
        q0_trunk=q0[TRUNK],
        trunk_corrected=corr is not None,
        mirrored=mirror,
    )
