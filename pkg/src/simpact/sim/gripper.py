"""Finger geometry shared by every engine and the renderer.

The commanded end-effector pose is the midpoint between the two finger pads. Both
tools are modelled as two boxes offset along the tool's local y-axis by half the
opening width; a flat-plate tool simply authors larger ``finger_half_extents``.
The stored orientation is the tool heading about world z (the tool points down).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..transforms import Pose, quat_to_matrix


@dataclass(frozen=True)
class FingerBox:
    center: np.ndarray
    rotation: np.ndarray
    half_extents: np.ndarray

    def contains(self, points, pad: float = 0.0) -> np.ndarray:
        local = (np.asarray(points) - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.half_extents + pad, axis=-1)

    def corners(self) -> np.ndarray:
        s = np.array([[sx, sy, sz] for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)], dtype=float)
        return (s * self.half_extents) @ self.rotation.T + self.center


def finger_offsets(width: float, half_extents) -> tuple[np.ndarray, np.ndarray]:
    hy = half_extents[1]
    off = 0.5 * width + hy
    return np.array([0.0, off, 0.0]), np.array([0.0, -off, 0.0])


def finger_boxes(pose: Pose, width: float, half_extents) -> list[FingerBox]:
    r = quat_to_matrix(pose.orientation)
    he = np.asarray(half_extents, dtype=float)
    return [FingerBox(pose.p + r @ o, r, he) for o in finger_offsets(width, he)]


def closed_volume(pose: Pose, width: float, half_extents) -> FingerBox:
    """Box spanning the gap between the finger pads (the grasped region)."""
    r = quat_to_matrix(pose.orientation)
    hx, _, hz = half_extents
    return FingerBox(pose.p.copy(), r, np.array([hx, 0.5 * width, hz]))
