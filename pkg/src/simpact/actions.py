"""Symbolic action DSL, JSON parsing, and deterministic lowering to end-effector waypoints.

Seven primitives act on the running end-effector state: PUSH and MOVE translate,
LIFT and DESCEND move along z, ROTATE turns the tool about world z, GRASP sets the
opening width and RELEASE opens fully. Each lowers to exactly one waypoint whose
duration follows fixed quasi-static speeds (see module constants).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import InvalidParameter, NoJsonFound, SchemaError, WorkspaceViolation
from .scene import MAX_GRIPPER_WIDTH, Bounds
from .transforms import Pose, quat_from_yaw, quat_mul, quat_slerp

log = logging.getLogger(__name__)

TRANSLATION_SPEED = 0.05  # m/s
ROTATION_SPEED = 0.5  # rad/s
GRIPPER_DURATION = 0.5  # s
MIN_DURATION = 0.2  # s
MAX_ACTIONS = 30
CONTROL_RATE = 500.0  # Hz, one command per 2 ms physics step

ACTION_TYPES = ("PUSH", "LIFT", "DESCEND", "GRASP", "RELEASE", "ROTATE", "MOVE")
_REQUIRED = {
    "PUSH": ("delta_x", "delta_y"),
    "LIFT": ("delta_z",),
    "DESCEND": ("delta_z",),
    "GRASP": ("width",),
    "RELEASE": (),
    "ROTATE": ("delta_yaw",),
    "MOVE": ("delta_x", "delta_y", "delta_z"),
}


@dataclass(frozen=True)
class SymbolicAction:
    """One primitive; unused parameters stay at zero (``width`` is None except for GRASP)."""

    type: str
    delta_x: float = 0.0
    delta_y: float = 0.0
    delta_z: float = 0.0
    delta_yaw: float = 0.0
    width: float | None = None
    reasoning: str = ""

    def __post_init__(self):
        if self.type not in ACTION_TYPES:
            raise InvalidParameter(f"unknown action type {self.type!r}")
        for name in ("delta_x", "delta_y", "delta_z", "delta_yaw"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise InvalidParameter(f"{self.type}.{name} must be finite")
        if self.type in ("LIFT", "DESCEND") and self.delta_z < 0:
            raise InvalidParameter(f"{self.type} delta_z must be >= 0, got {self.delta_z}")
        if self.type == "GRASP":
            if self.width is None or not 0.0 <= self.width <= MAX_GRIPPER_WIDTH:
                raise InvalidParameter(f"GRASP width must lie in [0, {MAX_GRIPPER_WIDTH}], got {self.width}")

    # constructors mirroring the DSL spelling
    @classmethod
    def push(cls, dx: float, dy: float, reasoning: str = "") -> "SymbolicAction":
        return cls("PUSH", delta_x=float(dx), delta_y=float(dy), reasoning=reasoning)

    @classmethod
    def lift(cls, dz: float, reasoning: str = "") -> "SymbolicAction":
        return cls("LIFT", delta_z=float(dz), reasoning=reasoning)

    @classmethod
    def descend(cls, dz: float, reasoning: str = "") -> "SymbolicAction":
        return cls("DESCEND", delta_z=float(dz), reasoning=reasoning)

    @classmethod
    def grasp(cls, width: float, reasoning: str = "") -> "SymbolicAction":
        return cls("GRASP", width=float(width), reasoning=reasoning)

    @classmethod
    def release(cls, reasoning: str = "") -> "SymbolicAction":
        return cls("RELEASE", reasoning=reasoning)

    @classmethod
    def rotate(cls, dyaw: float, reasoning: str = "") -> "SymbolicAction":
        return cls("ROTATE", delta_yaw=float(dyaw), reasoning=reasoning)

    @classmethod
    def move(cls, dx: float, dy: float, dz: float, reasoning: str = "") -> "SymbolicAction":
        return cls("MOVE", delta_x=float(dx), delta_y=float(dy), delta_z=float(dz), reasoning=reasoning)

    def translation(self) -> np.ndarray:
        if self.type in ("PUSH",):
            return np.array([self.delta_x, self.delta_y, 0.0])
        if self.type == "MOVE":
            return np.array([self.delta_x, self.delta_y, self.delta_z])
        if self.type == "LIFT":
            return np.array([0.0, 0.0, self.delta_z])
        if self.type == "DESCEND":
            return np.array([0.0, 0.0, -self.delta_z])
        return np.zeros(3)

    def params(self) -> dict[str, float]:
        """Continuous parameters in schema order."""
        return {k: float(getattr(self, k)) for k in _REQUIRED[self.type]}

    def with_params(self, **values) -> "SymbolicAction":
        d = {k: getattr(self, k) for k in ("delta_x", "delta_y", "delta_z", "delta_yaw", "width")}
        d.update(values)
        return SymbolicAction(self.type, reasoning=self.reasoning, **d)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"type": self.type}
        out.update(self.params())
        out["reasoning"] = self.reasoning
        return out


@dataclass(frozen=True)
class ActionSequence:
    description: str
    actions: tuple[SymbolicAction, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise InvalidParameter("an action sequence needs at least one action")
        if len(self.actions) > MAX_ACTIONS:
            raise InvalidParameter(f"at most {MAX_ACTIONS} actions per sequence, got {len(self.actions)}")

    def __len__(self) -> int:
        return len(self.actions)

    def __add__(self, other: "ActionSequence") -> "ActionSequence":
        return ActionSequence(self.description, self.actions + other.actions)

    def to_json(self) -> dict[str, Any]:
        return {"description": self.description, "action_sequence": [a.to_json() for a in self.actions]}

    @classmethod
    def from_json(cls, d: dict, index: int = 0) -> "ActionSequence":
        return _parse_proposal(d, index)


def proposals_to_json(seqs: list[ActionSequence]) -> dict[str, Any]:
    return {"action_proposals": [s.to_json() for s in seqs]}


# ---------------------------------------------------------------------------
# parsing


def _number(d: dict, key: str, index: int, pos: int) -> float:
    if key not in d:
        raise SchemaError(index, f"action {pos} ({d.get('type')}): missing field {key!r}")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(index, f"action {pos}: field {key!r} must be a finite number")
    return float(v)


def _parse_action(d: Any, index: int, pos: int) -> list[SymbolicAction]:
    if not isinstance(d, dict) or "type" not in d:
        raise SchemaError(index, f"action {pos}: expected an object with a 'type'")
    raw_type = d["type"]
    if not isinstance(raw_type, str):
        raise SchemaError(index, f"action {pos}: 'type' must be a string")
    reasoning = d.get("reasoning", "")
    reasoning = reasoning if isinstance(reasoning, str) else str(reasoning)
    try:
        # optimizer output format: 6-DoF move and gripper_control
        if raw_type == "gripper_control":
            return [SymbolicAction.grasp(_number(d, "width", index, pos), reasoning)]
        if raw_type == "move" and any(k in d for k in ("delta_roll", "delta_pitch", "delta_yaw")):
            dx, dy, dz = (_number(d, k, index, pos) for k in ("delta_x", "delta_y", "delta_z"))
            roll = _number(d, "delta_roll", index, pos) if "delta_roll" in d else 0.0
            pitch = _number(d, "delta_pitch", index, pos) if "delta_pitch" in d else 0.0
            yaw = _number(d, "delta_yaw", index, pos) if "delta_yaw" in d else 0.0
            if abs(roll) > 1e-9 or abs(pitch) > 1e-9:
                raise SchemaError(index, f"action {pos}: the top-down tool only supports yaw; roll/pitch must be 0")
            out = []
            if dx or dy or dz or not yaw:
                out.append(SymbolicAction.move(dx, dy, dz, reasoning))
            if yaw:
                out.append(SymbolicAction.rotate(yaw, reasoning))
            return out
        typ = raw_type.upper()
        if typ not in ACTION_TYPES:
            raise SchemaError(index, f"action {pos}: unknown action type {raw_type!r}")
        vals = {k: _number(d, k, index, pos) for k in _REQUIRED[typ]}
        return [SymbolicAction(typ, reasoning=reasoning, **vals)]
    except InvalidParameter as exc:
        raise SchemaError(index, f"action {pos}: {exc}") from exc


def _parse_proposal(p: Any, index: int) -> ActionSequence:
    if not isinstance(p, dict):
        raise SchemaError(index, "proposal must be an object")
    if "action_sequence" not in p or not isinstance(p["action_sequence"], list):
        raise SchemaError(index, "missing 'action_sequence' list")
    desc = p.get("description", "")
    desc = desc if isinstance(desc, str) else str(desc)
    actions: list[SymbolicAction] = []
    for pos, a in enumerate(p["action_sequence"]):
        actions.extend(_parse_action(a, index, pos))
    if not actions:
        raise SchemaError(index, "empty action_sequence")
    if len(actions) > MAX_ACTIONS:
        raise SchemaError(index, f"more than {MAX_ACTIONS} actions")
    return ActionSequence(desc, tuple(actions))


def extract_json_object(text: str) -> dict:
    """First JSON object in ``text`` (preferring one with ``action_proposals``)."""
    decoder = json.JSONDecoder()
    first = None
    i = text.find("{")
    while i != -1:
        try:
            obj, _ = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            if "action_proposals" in obj:
                return obj
            if first is None:
                first = obj
        i = text.find("{", i + 1)
    if first is None:
        raise NoJsonFound("no JSON object found in the response")
    return first


def parse_action_json_detailed(text: str) -> tuple[list[ActionSequence], list[SchemaError]]:
    """Valid proposals plus one SchemaError per rejected proposal."""
    obj = extract_json_object(text)
    props = obj.get("action_proposals")
    if not isinstance(props, list):
        raise SchemaError(-1, "top-level object lacks an 'action_proposals' list")
    seqs: list[ActionSequence] = []
    errors: list[SchemaError] = []
    for i, p in enumerate(props):
        try:
            seqs.append(_parse_proposal(p, i))
        except SchemaError as exc:
            errors.append(exc)
    return seqs, errors


def parse_action_json(text: str) -> list[ActionSequence]:
    seqs, errors = parse_action_json_detailed(text)
    for e in errors:
        log.warning("rejected %s", e)
    return seqs


# ---------------------------------------------------------------------------
# lowering


@dataclass(frozen=True)
class Waypoint:
    pose: Pose
    width: float
    duration: float
    action_index: int = 0


def action_duration(action: SymbolicAction) -> float:
    if action.type in ("GRASP", "RELEASE"):
        return GRIPPER_DURATION
    if action.type == "ROTATE":
        return max(abs(action.delta_yaw) / ROTATION_SPEED, MIN_DURATION)
    return max(float(np.linalg.norm(action.translation())) / TRANSLATION_SPEED, MIN_DURATION)


def action_to_pose(seq: ActionSequence, start: Pose, start_width: float, bounds: Bounds | None = None,
                   index_offset: int = 0) -> list[Waypoint]:
    """Lower a sequence to one waypoint per action, relative to the running tool state."""
    if bounds is not None and not bounds.contains(start.position):
        raise WorkspaceViolation(-1, "start pose lies outside the workspace")
    pose = start
    width = float(start_width)
    out: list[Waypoint] = []
    for i, a in enumerate(seq.actions):
        idx = i + index_offset
        if a.type in ("PUSH", "MOVE", "LIFT", "DESCEND"):
            pose = Pose(pose.p + a.translation(), pose.orientation)
        elif a.type == "ROTATE":
            pose = Pose(pose.position, quat_mul(quat_from_yaw(a.delta_yaw), pose.q))
        elif a.type == "GRASP":
            width = float(a.width)
        elif a.type == "RELEASE":
            width = MAX_GRIPPER_WIDTH
        if not 0.0 <= width <= MAX_GRIPPER_WIDTH:
            raise InvalidParameter(f"action {idx}: width {width} out of range")
        if bounds is not None and not bounds.contains(pose.position):
            raise WorkspaceViolation(idx, f"{a.type} moves the end-effector to {np.round(pose.p, 4).tolist()}, "
                                          f"outside the workspace")
        out.append(Waypoint(pose, width, action_duration(a), idx))
    return out


@dataclass
class CommandStream:
    positions: np.ndarray  # (M, 3)
    orientations: np.ndarray  # (M, 4)
    widths: np.ndarray  # (M,)
    action_index: np.ndarray  # (M,) waypoint each command belongs to
    segment_ends: list[int]  # index of the last command of every waypoint

    def __len__(self) -> int:
        return len(self.widths)

    def pose(self, i: int) -> Pose:
        return Pose(self.positions[i], self.orientations[i])


def interpolate_waypoints(waypoints: list[Waypoint], control_rate: float = CONTROL_RATE, *,
                          start_pose: Pose, start_width: float) -> CommandStream:
    """Dense command stream: ceil(duration * rate) commands per waypoint, last one exact."""
    if not control_rate > 0:
        raise ValueError("control_rate must be positive")
    pos, quat, wid, seg, ends = [], [], [], [], []
    p0, q0, w0 = start_pose.p, start_pose.q, float(start_width)
    total = 0
    for k, wp in enumerate(waypoints):
        n = max(1, int(math.ceil(wp.duration * control_rate - 1e-9)))
        p1, q1, w1 = wp.pose.p, wp.pose.q, wp.width
        t = np.arange(1, n + 1) / n
        pos.append(p0 + t[:, None] * (p1 - p0))
        pos[-1][-1] = p1
        quat.append(np.array([quat_slerp(q0, q1, tj) for tj in t[:-1]] + [q1]).reshape(n, 4))
        ws = w0 + t * (w1 - w0)
        ws[-1] = w1
        wid.append(ws)
        seg.append(np.full(n, wp.action_index, dtype=np.int64))
        total += n
        ends.append(total - 1)
        p0, q0, w0 = p1, q1, w1
    if not pos:
        return CommandStream(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros(0, dtype=np.int64), [])
    return CommandStream(np.concatenate(pos), np.concatenate(quat), np.concatenate(wid), np.concatenate(seg), ends)
