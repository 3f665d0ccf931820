"""Quaternion and small-vector numerics shared by the whole pipeline.

Conventions (used everywhere, no exceptions):
  * quaternions are scalar-first ``[w, x, y, z]`` numpy arrays,
    Hamilton product, active rotations: ``rotate_vec(q, v)`` maps a
    sensor-frame vector into the world frame when ``q`` is the sensor's
    world orientation;
  * rotation matrices act on column vectors, ``R(q) @ v == rotate_vec(q, v)``;
  * Euler angles are intrinsic z-y-x (yaw, pitch, roll), with
    roll/yaw in (-pi, pi] and pitch in [-pi/2, pi/2];
  * outputs are canonicalized to w >= 0 so quaternion-difference norms
    are sign-stable.

All functions are pure and safe for unrestricted parallel use.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

__all__ = [
    "Euler",
    "vec3",
    "quat",
    "quat_identity",
    "quat_normalize",
    "quat_canonical",
    "quat_mul",
    "quat_inverse",
    "rotate_vec",
    "quat_from_axis_angle",
    "quat_to_matrix",
    "quat_from_matrix",
    "quat_to_euler",
    "euler_to_quat",
    "quat_angle",
    "quat_diff_norm",
]


class Euler(NamedTuple):
    """Intrinsic z-y-x Euler angles in radians."""

    roll: float
    pitch: float
    yaw: float


def vec3(x: float, y: float, z: float) -> np.ndarray:
    return np.array([x, y, z], dtype=np.float64)


def quat(w: float, x: float, y: float, z: float) -> np.ndarray:
    """Build a quaternion, normalized and canonicalized."""
    return quat_canonical(quat_normalize(np.array([w, x, y, z], dtype=np.float64)))


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if n == 0.0:
        raise ValueError("cannot normalize zero quaternion")
    return q / n


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip sign so w >= 0; at w == 0 the first nonzero vector component is > 0."""
    w = q[0]
    if w < 0.0:
        return -q
    if w == 0.0:
        for c in q[1:]:
            if c != 0.0:
                return q if c > 0.0 else -q
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b, renormalized and canonicalized."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    out = np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )
    return quat_canonical(quat_normalize(out))


def quat_inverse(q: np.ndarray) -> np.ndarray:
    """Conjugate (== inverse for unit quaternions), canonicalized."""
    return quat_canonical(np.array([q[0], -q[1], -q[2], -q[3]]))


def rotate_vec(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate v by q via the sandwich product q ⊗ [0, v] ⊗ q⁻¹.

    Uses the expanded cross-product form, which preserves ||v|| and needs
    no normalization of the intermediate pure quaternion.
    """
    w = q[0]
    qv = q[1:]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    n = math.sqrt(axis[0] ** 2 + axis[1] ** 2 + axis[2] ** 2)
    if n == 0.0:
        raise ValueError("zero rotation axis")
    half = 0.5 * angle
    s = math.sin(half) / n
    return quat_canonical(
        np.array([math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def quat_from_matrix(R: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Convert an orthonormal rotation matrix to a canonical unit quaternion.

    Rejects input whose RᵀR deviates from identity by more than ``tol`` or
    whose determinant is not +1 (reflections are not rotations).
    """
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ValueError("rotation matrix must be 3x3")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"matrix is not orthonormal (deviation {err:.3g})")
    if np.linalg.det(R) < 0.0:
        raise ValueError("matrix has negative determinant (not a rotation)")

    # Shepperd's method: pick the largest diagonal combination for stability.
    trace = R[0, 0] + R[1, 1] + R[2, 2]
    if trace > 0.0:
        s = math.sqrt(trace + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
             (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s,
             (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s,
             (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
             (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return quat_canonical(quat_normalize(q))


def _wrap_pi(a: float) -> float:
    """Wrap into (-pi, pi]."""
    a = math.atan2(math.sin(a), math.cos(a))
    return math.pi if a == -math.pi else a


def quat_to_euler(q: np.ndarray) -> Euler:
    """Decompose into intrinsic z-y-x angles.

    At gimbal lock (|pitch| == pi/2) the roll/yaw split is degenerate; the
    convention here is roll := 0 with yaw absorbing the free angle.
    """
    w, x, y, z = q
    sp = 2.0 * (w * y - x * z)
    if sp >= 1.0 - 1e-12:
        pitch = 0.5 * math.pi
    elif sp <= -1.0 + 1e-12:
        pitch = -0.5 * math.pi
    else:
        pitch = math.asin(sp)
    if abs(sp) >= 1.0 - 1e-12:
        r01 = 2.0 * (x * y - w * z)
        r11 = 1.0 - 2.0 * (x * x + z * z)
        return Euler(0.0, pitch, _wrap_pi(math.atan2(-r01, r11)))
    roll = math.atan2(2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y))
    yaw = math.atan2(2.0 * (x * y + w * z), 1.0 - 2.0 * (y * y + z * z))
    return Euler(_wrap_pi(roll), pitch, _wrap_pi(yaw))


def euler_to_quat(e: Euler) -> np.ndarray:
    qz = quat_from_axis_angle(vec3(0, 0, 1), e.yaw)
    qy = quat_from_axis_angle(vec3(0, 1, 0), e.pitch)
    qx = quat_from_axis_angle(vec3(1, 0, 0), e.roll)
    return quat_mul(quat_mul(qz, qy), qx)


def quat_angle(q: np.ndarray) -> float:
    """Total rotation angle in [0, pi]."""
    return 2.0 * math.acos(min(1.0, abs(q[0])))


def quat_diff_norm(a: np.ndarray, b: np.ndarray) -> float:
    """Sign-stable Euclidean distance: min(||a-b||, ||a+b||)."""
    return min(float(np.linalg.norm(a - b)), float(np.linalg.norm(a + b)))


# ---------------------------------------------------------------------------
# jit-compiled scalar helpers for the hot per-sample kernels.  These operate
# on unpacked components and mirror the array functions above; both the batch
# and the streaming path call exactly these, which is what makes their
# outputs bit-identical.

from numba import njit  # noqa: E402


@njit(cache=True)
def nb_qmul(aw, ax, ay, az, bw, bx, by, bz):
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


@njit(cache=True)
def nb_qnormalize(w, x, y, z):
    n = math.sqrt(w * w + x * x + y * y + z * z)
    return w / n, x / n, y / n, z / n


@njit(cache=True)
def nb_qrot(w, x, y, z, vx, vy, vz):
    # q [0,v] q^-1 in expanded cross-product form
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    ox = vx + w * tx + (y * tz - z * ty)
    oy = vy + w * ty + (z * tx - x * tz)
    oz = vz + w * tz + (x * ty - y * tx)
    return ox, oy, oz


@njit(cache=True)
def nb_qexp(wx, wy, wz, dt):
    """Unit quaternion of the rotation increment for body rate * dt."""
    wn = math.sqrt(wx * wx + wy * wy + wz * wz)
    if wn * dt < 1e-300:
        return 1.0, 0.0, 0.0, 0.0
    half = 0.5 * wn * dt
    s = math.sin(half) / wn
    return math.cos(half), wx * s, wy * s, wz * s


@njit(cache=True)
def nb_qtoeuler(w, x, y, z):
    """Intrinsic z-y-x angles; roll := 0 at gimbal lock."""
    sp = 2.0 * (w * y - x * z)
    if sp >= 1.0 - 1e-12:
        pitch = 0.5 * math.pi
    elif sp <= -1.0 + 1e-12:
        pitch = -0.5 * math.pi
    else:
        pitch = math.asin(sp)
    if sp >= 1.0 - 1e-12 or sp <= -1.0 + 1e-12:
        r01 = 2.0 * (x * y - w * z)
        r11 = 1.0 - 2.0 * (x * x + z * z)
        yaw = math.atan2(-r01, r11)
        return 0.0, pitch, yaw
    roll = math.atan2(2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y))
    yaw = math.atan2(2.0 * (x * y + w * z), 1.0 - 2.0 * (y * y + z * z))
    return roll, pitch, yaw
