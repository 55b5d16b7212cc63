"""Quaternion helpers (w, x, y, z convention) and the Pose value type."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

QUAT_TOL = 1e-6


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize zero or non-finite quaternion")
    q = q / n
    # canonical hemisphere keeps serialization stable
    if q[0] < 0.0:
        q = -q
    return q


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    s = math.sin(angle / 2.0)
    return np.array([math.cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_from_yaw(yaw: float) -> np.ndarray:
    return np.array([math.cos(yaw / 2.0), 0.0, 0.0, math.sin(yaw / 2.0)])


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Extrinsic x-y-z (roll about world x first, yaw about world z last)."""
    qx = quat_from_axis_angle((1, 0, 0), roll)
    qy = quat_from_axis_angle((0, 1, 0), pitch)
    qz = quat_from_axis_angle((0, 0, 1), yaw)
    return quat_normalize(quat_mul(qz, quat_mul(qy, qx)))


def quat_to_rpy(q) -> tuple[float, float, float]:
    m = quat_to_matrix(q)
    pitch = math.asin(max(-1.0, min(1.0, -m[2, 0])))
    if abs(m[2, 0]) < 1.0 - 1e-9:
        roll = math.atan2(m[2, 1], m[2, 2])
        yaw = math.atan2(m[1, 0], m[0, 0])
    else:
        roll = 0.0
        yaw = math.atan2(-m[0, 1], m[1, 1])
    return roll, pitch, yaw


def yaw_of(q) -> float:
    """Heading of the body x-axis projected on the world xy-plane."""
    m = quat_to_matrix(q)
    return math.atan2(m[1, 0], m[0, 0])


def quat_slerp(a, b, t: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = float(np.dot(a, b))
    if d < 0.0:
        b = -b
        d = -d
    if d > 0.9995:
        out = a + t * (b - a)
        return out / np.linalg.norm(out)
    theta = math.acos(d)
    s = math.sin(theta)
    return (math.sin((1 - t) * theta) * a + math.sin(t * theta) * b) / s


def quat_integrate(q, omega, dt: float) -> np.ndarray:
    """First-order update q <- q + dt/2 * [0, w] * q, renormalized."""
    dq = 0.5 * dt * quat_mul(np.array([0.0, omega[0], omega[1], omega[2]]), q)
    out = q + dq
    return out / np.linalg.norm(out)


def _as_tuple(v, n: int) -> tuple[float, ...]:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise ValueError(f"expected {n} components, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite component")
    return tuple(float(x) for x in arr)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: position in meters, unit quaternion (w, x, y, z)."""

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, float, float, float] = field(default=(1.0, 0.0, 0.0, 0.0))

    def __post_init__(self):
        object.__setattr__(self, "position", _as_tuple(self.position, 3))
        q = quat_normalize(_as_tuple(self.orientation, 4))
        object.__setattr__(self, "orientation", tuple(float(x) for x in q))

    @property
    def p(self) -> np.ndarray:
        return np.array(self.position)

    @property
    def q(self) -> np.ndarray:
        return np.array(self.orientation)

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def homogeneous(self) -> np.ndarray:
        t = np.eye(4)
        t[:3, :3] = self.matrix()
        t[:3, 3] = self.position
        return t

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix().T + self.p

    def compose(self, other: "Pose") -> "Pose":
        """self * other: express ``other`` (given in self's frame) in the parent frame."""
        return Pose(self.apply(other.p), quat_mul(self.q, other.q))

    def inverse(self) -> "Pose":
        qi = quat_conj(self.q)
        return Pose(-(quat_to_matrix(qi) @ self.p), qi)

    @property
    def yaw(self) -> float:
        return yaw_of(self.orientation)

    def to_dict(self) -> dict:
        return {"position": list(self.position), "orientation": list(self.orientation)}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        pos = d.get("position", (0.0, 0.0, 0.0))
        if "orientation" in d:
            return cls(pos, d["orientation"])
        if "rpy_deg" in d:
            r, p, y = (math.radians(a) for a in d["rpy_deg"])
            return cls(pos, quat_from_rpy(r, p, y))
        if "yaw_deg" in d:
            return cls(pos, quat_from_yaw(math.radians(d["yaw_deg"])))
        return cls(pos)
