"""Frame-tagged rigid-body math: quaternions, transforms, twists, wrenches.

Conventions (normative for every file format in this project):

- Quaternions are stored ``[qx, qy, qz, qw]`` and canonicalized so that
  ``qw >= 0`` (if ``qw == 0``, the first nonzero of ``qx, qy, qz`` is
  positive).  Hamilton product; ``R(q1 * q2) = R(q1) R(q2)``.
- A ``Transform`` named ``a_T_b`` carries ``from_frame='a'``,
  ``to_frame='b'`` and maps points expressed in ``b`` into ``a``:
  ``p_a = R @ p_b + t``.
- Positions in meters, angles in radians, forces in newtons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FrameMismatch",
    "Transform",
    "Twist",
    "Wrench",
    "quat_normalize",
    "quat_canonical",
    "quat_mul",
    "quat_conj",
    "quat_to_mat",
    "mat_to_quat",
    "quat_from_axis_angle",
    "quat_from_rotvec",
    "quat_rotate",
    "rotvec_from_mat",
    "compose",
    "invert",
    "relative_target",
    "rotate_twist_to_ee",
    "pose7",
    "transform_from_pose7",
]


class FrameMismatch(ValueError):
    """Raised when an operation chains transforms with incompatible frames."""


# ---------------------------------------------------------------------------
# quaternions (xyzw)
# ---------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = float(np.linalg.norm(q))
    if n == 0.0 or not math.isfinite(n):
        raise ValueError("cannot normalize zero or non-finite quaternion")
    return q / n


def quat_canonical(q) -> np.ndarray:
    """Normalize and fix the double-cover sign: qw >= 0, first nonzero
    of (qx,qy,qz) positive when qw == 0."""
    q = quat_normalize(q)
    if q[3] < 0.0:
        return -q
    if q[3] == 0.0:
        for c in q[:3]:
            if c != 0.0:
                return q if c > 0.0 else -q
    return q


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_mul(q1, q2) -> np.ndarray:
    x1, y1, z1, w1 = np.asarray(q1, dtype=float)
    x2, y2, z2, w2 = np.asarray(q2, dtype=float)
    return np.array(
        [
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        ]
    )


def quat_to_mat(q) -> np.ndarray:
    x, y, z, w = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def mat_to_quat(m) -> np.ndarray:
    """Rotation matrix -> canonical quaternion (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s, 0.25 * s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s, (m[2, 1] - m[1, 2]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s, (m[0, 2] - m[2, 0]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s, (m[1, 0] - m[0, 1]) / s]
        )
    return quat_canonical(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = float(np.linalg.norm(axis))
    if n == 0.0:
        raise ValueError("zero rotation axis")
    half = 0.5 * angle
    return np.concatenate([axis / n * math.sin(half), [math.cos(half)]])


def quat_from_rotvec(rv) -> np.ndarray:
    """exp map; safe for small angles."""
    rv = np.asarray(rv, dtype=float)
    angle = float(np.linalg.norm(rv))
    if angle < 1e-12:
        return np.array([0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2], 1.0]) / math.sqrt(
            1.0 + 0.25 * angle * angle
        )
    return quat_from_axis_angle(rv, angle)


def quat_rotate(q, v) -> np.ndarray:
    return quat_to_mat(q) @ np.asarray(v, dtype=float)


def rotvec_from_mat(m) -> np.ndarray:
    """log map of a rotation matrix, angle in [0, pi]."""
    m = np.asarray(m, dtype=float)
    cos_a = max(-1.0, min(1.0, 0.5 * (np.trace(m) - 1.0)))
    angle = math.acos(cos_a)
    if angle < 1e-10:
        return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    if math.pi - angle < 1e-6:
        # near pi: extract axis from the symmetric part
        a = np.sqrt(np.maximum(0.0, (np.diag(m) + 1.0) * 0.5))
        k = int(np.argmax(a))
        axis = np.zeros(3)
        axis[k] = a[k]
        for j in range(3):
            if j != k:
                axis[j] = (m[k, j] + m[j, k]) / (4.0 * a[k])
        axis /= np.linalg.norm(axis)
        # resolve sign so that exp(axis*angle) reproduces m's skew part
        skew = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
        if np.dot(axis, skew) < 0.0:
            axis = -axis
        return axis * angle
    scale = angle / (2.0 * math.sin(angle))
    return scale * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


# ---------------------------------------------------------------------------
# frame-tagged values
# ---------------------------------------------------------------------------

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Transform:
    """Rigid transform ``from_frame <- to_frame``: p_from = rot @ p_to + trans."""

    rot: np.ndarray
    trans: np.ndarray
    from_frame: str = "world"
    to_frame: str = "world"

    def __post_init__(self):
        object.__setattr__(self, "rot", np.asarray(self.rot, dtype=float).reshape(3, 3))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=float).reshape(3))
        if not np.all(np.isfinite(self.rot)) or not np.all(np.isfinite(self.trans)):
            raise ValueError("non-finite transform")

    @staticmethod
    def identity(frame: str = "world") -> "Transform":
        return Transform(np.eye(3), np.zeros(3), frame, frame)

    @staticmethod
    def from_quat(q, t, from_frame: str = "world", to_frame: str = "world") -> "Transform":
        return Transform(quat_to_mat(q), t, from_frame, to_frame)

    def quat(self) -> np.ndarray:
        return mat_to_quat(self.rot)

    def apply(self, p) -> np.ndarray:
        return self.rot @ np.asarray(p, dtype=float) + self.trans

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rot
        m[:3, 3] = self.trans
        return m

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.rot.T @ self.rot - np.eye(3))))


@dataclass
class Twist:
    """Linear [m/s] + angular [rad/s] velocity expressed in ``frame``."""

    linear: np.ndarray
    angular: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=float).reshape(3)
        self.angular = np.asarray(self.angular, dtype=float).reshape(3)

    @staticmethod
    def zero(frame: str = "world") -> "Twist":
        return Twist(np.zeros(3), np.zeros(3), frame)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


@dataclass
class Wrench:
    """Force [N] + torque [N*m] acting at the origin of ``frame``."""

    force: np.ndarray
    torque: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=float).reshape(3)
        self.torque = np.asarray(self.torque, dtype=float).reshape(3)

    @staticmethod
    def zero(frame: str = "world") -> "Wrench":
        return Wrench(np.zeros(3), np.zeros(3), frame)

    @staticmethod
    def from_array(a, frame: str = "world") -> "Wrench":
        a = np.asarray(a, dtype=float).reshape(6)
        return Wrench(a[:3], a[3:], frame)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def _reorthonormalize(rot: np.ndarray) -> np.ndarray:
    # nearest rotation via SVD; only invoked on accumulated drift
    u, _, vt = np.linalg.svd(rot)
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def compose(a: Transform, b: Transform) -> Transform:
    """a_T_b (*) b_T_c -> a_T_c.  Frames must chain."""
    if a.to_frame != b.from_frame:
        raise FrameMismatch(
            f"cannot compose {a.from_frame}->{a.to_frame} with {b.from_frame}->{b.to_frame}"
        )
    rot = a.rot @ b.rot
    if np.max(np.abs(rot.T @ rot - np.eye(3))) > _ORTHO_TOL:
        rot = _reorthonormalize(rot)
    return Transform(rot, a.rot @ b.trans + a.trans, a.from_frame, b.to_frame)


def invert(t: Transform) -> Transform:
    """a_T_b -> b_T_a; frame labels swap."""
    rt = t.rot.T
    return Transform(rt, -(rt @ t.trans), t.to_frame, t.from_frame)


def pose7(t: Transform) -> np.ndarray:
    """[x, y, z, qx, qy, qz, qw] with the canonical quaternion sign."""
    return np.concatenate([t.trans, quat_canonical(t.quat())])


def transform_from_pose7(p, from_frame: str = "world", to_frame: str = "world") -> Transform:
    p = np.asarray(p, dtype=float).reshape(7)
    return Transform(quat_to_mat(p[3:]), p[:3], from_frame, to_frame)


def relative_target(b_T_e: Transform, b_T_t: Transform):
    """Target pose seen from the moving end-effector frame.

    Returns ``(e_T_t, features7)`` where features7 is the pose-7 layout the
    skill model consumes.
    """
    if b_T_e.from_frame != b_T_t.from_frame:
        raise FrameMismatch(
            f"expected a common base frame, got {b_T_e.from_frame!r} and {b_T_t.from_frame!r}"
        )
    e_T_t = compose(invert(b_T_e), b_T_t)
    return e_T_t, pose7(e_T_t)


def rotate_twist_to_ee(e_R_b: np.ndarray, base_twist: Twist, ee_frame: str = "e") -> Twist:
    """Block-diagonal rotation of a base-frame twist into the end-effector frame."""
    e_R_b = np.asarray(e_R_b, dtype=float)
    return Twist(e_R_b @ base_twist.linear, e_R_b @ base_twist.angular, ee_frame)
