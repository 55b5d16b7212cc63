import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simpact.actions import (
    ActionSequence,
    SymbolicAction as A,
    Waypoint,
    action_to_pose,
    interpolate_waypoints,
    parse_action_json,
    parse_action_json_detailed,
    proposals_to_json,
)
from simpact.errors import InvalidParameter, NoJsonFound, SchemaError, WorkspaceViolation
from simpact.scene import Bounds
from simpact.transforms import Pose, quat_from_yaw, yaw_of

START = Pose((0.0, 0.0, 0.2))


def test_lift_lowers_to_one_waypoint():
    (wp,) = action_to_pose(ActionSequence("", (A.lift(0.1),)), START, 0.1)
    assert np.allclose(wp.pose.p, [0.0, 0.0, 0.3])
    assert np.allclose(wp.pose.q, START.q)
    assert wp.duration == pytest.approx(2.0)


def test_move_then_inverse_returns_to_start():
    wps = action_to_pose(ActionSequence("", (A.move(0.05, 0, 0), A.move(-0.05, 0, 0))), START, 0.1)
    assert np.allclose(wps[-1].pose.p, START.p, atol=1e-15)


def test_grasp_sets_width_only():
    (wp,) = action_to_pose(ActionSequence("", (A.grasp(0.03),)), START, 0.1)
    assert wp.width == 0.03
    assert np.allclose(wp.pose.p, START.p)
    assert wp.duration == 0.5


def test_release_opens_fully():
    wps = action_to_pose(ActionSequence("", (A.grasp(0.0), A.release())), START, 0.1)
    assert [w.width for w in wps] == [0.0, 0.1]


def test_rotate_accumulates_yaw():
    wps = action_to_pose(ActionSequence("", (A.rotate(0.3), A.rotate(0.2))), START, 0.1)
    assert yaw_of(wps[-1].pose.q) == pytest.approx(0.5)


def test_workspace_violation_names_the_action():
    bounds = Bounds((-0.1, -0.1, 0.0), (0.1, 0.1, 0.3))
    with pytest.raises(WorkspaceViolation) as info:
        action_to_pose(ActionSequence("", (A.lift(0.05), A.move(0.5, 0, 0))), START, 0.1, bounds)
    assert info.value.index == 1


def test_invalid_actions_rejected():
    with pytest.raises(InvalidParameter):
        A.grasp(0.2)
    with pytest.raises(InvalidParameter):
        A.lift(-0.1)
    with pytest.raises(InvalidParameter):
        A("FLY")
    with pytest.raises(InvalidParameter):
        ActionSequence("empty", ())


def _payload(*proposals):
    return json.dumps({"action_proposals": list(proposals)})


PUSH = {"description": "push", "action_sequence": [{"type": "PUSH", "delta_x": 0.1, "delta_y": 0.0}]}
LIFT = {"description": "lift", "action_sequence": [{"type": "LIFT", "delta_z": 0.05, "reasoning": "up"}]}


def test_parse_two_proposals():
    seqs = parse_action_json(_payload(PUSH, LIFT))
    assert [s.actions[0].type for s in seqs] == ["PUSH", "LIFT"]


def test_parse_fenced_payload_matches_plain():
    plain = _payload(PUSH, LIFT)
    fenced = f"Here you go:\n```json\n{plain}\n```\nGood luck."
    assert parse_action_json(fenced) == parse_action_json(plain)


def test_unknown_type_rejects_only_that_proposal():
    bad = {"description": "fly", "action_sequence": [{"type": "FLY"}]}
    seqs, errors = parse_action_json_detailed(_payload(PUSH, bad, LIFT))
    assert len(seqs) == 2
    assert len(errors) == 1 and isinstance(errors[0], SchemaError) and errors[0].index == 1


def test_missing_field_is_schema_error():
    bad = {"action_sequence": [{"type": "MOVE", "delta_x": 0.1, "delta_z": 0.0}]}
    seqs, errors = parse_action_json_detailed(_payload(bad))
    assert not seqs and "delta_y" in str(errors[0])


def test_no_json_raises():
    with pytest.raises(NoJsonFound):
        parse_action_json("no braces here")
    with pytest.raises(SchemaError):
        parse_action_json('{"plans": []}')


def test_optimizer_move_format_lowers_to_primitives():
    text = _payload({"action_sequence": [
        {"type": "move", "delta_x": 0.1, "delta_y": 0, "delta_z": 0, "delta_roll": 0, "delta_pitch": 0,
         "delta_yaw": 0.2},
        {"type": "gripper_control", "width": 0.02}]})
    (seq,) = parse_action_json(text)
    assert [a.type for a in seq.actions] == ["MOVE", "ROTATE", "GRASP"]


def test_command_count_at_500_hz():
    wp = Waypoint(Pose((0.0, 0.0, 0.3)), 0.1, 2.0)
    stream = interpolate_waypoints([wp], 500.0, start_pose=START, start_width=0.1)
    assert len(stream) == 1000


def test_segment_endpoints_exact_and_midpoint_linear():
    seq = ActionSequence("", (A.move(0.1, 0, 0), A.lift(0.05), A.rotate(0.4)))
    wps = action_to_pose(seq, START, 0.1)
    stream = interpolate_waypoints(wps, 500.0, start_pose=START, start_width=0.1)
    for end, wp in zip(stream.segment_ends, wps):
        assert np.array_equal(stream.positions[end], wp.pose.p)
        assert np.array_equal(stream.orientations[end], wp.pose.q)
    half = stream.segment_ends[0] // 2
    assert stream.positions[half][0] - START.p[0] == pytest.approx(0.05, abs=1e-9)


finite = st.floats(-0.1, 0.1, allow_nan=False)


@st.composite
def sequences(draw):
    kinds = draw(st.lists(st.sampled_from(["PUSH", "MOVE", "LIFT", "DESCEND", "ROTATE", "GRASP", "RELEASE"]),
                          min_size=1, max_size=8))
    acts = []
    for k in kinds:
        if k == "PUSH":
            acts.append(A.push(draw(finite), draw(finite)))
        elif k == "MOVE":
            acts.append(A.move(draw(finite), draw(finite), draw(finite)))
        elif k in ("LIFT", "DESCEND"):
            acts.append(A(k, delta_z=draw(st.floats(0, 0.1))))
        elif k == "ROTATE":
            acts.append(A.rotate(draw(st.floats(-3, 3))))
        elif k == "GRASP":
            acts.append(A.grasp(draw(st.floats(0, 0.1))))
        else:
            acts.append(A.release())
    return ActionSequence("generated", tuple(acts))


@given(sequences())
def test_json_round_trip(seq):
    assert parse_action_json(json.dumps(proposals_to_json([seq]))) == [seq]


@given(sequences())
@settings(max_examples=50)
def test_lowering_is_deterministic_and_translation_adds_up(seq):
    a = action_to_pose(seq, START, 0.1)
    b = action_to_pose(seq, START, 0.1)
    assert a == b
    total = sum((x.translation() for x in seq.actions), np.zeros(3))
    assert np.allclose(a[-1].pose.p, START.p + total, atol=1e-12)
    assert all(w.duration >= 0.2 for w in a)


@given(sequences(), st.sampled_from([100.0, 500.0]))
@settings(max_examples=30, deadline=None)
def test_stream_hits_every_waypoint(seq, rate):
    wps = action_to_pose(seq, START, 0.1)
    stream = interpolate_waypoints(wps, rate, start_pose=START, start_width=0.1)
    assert len(stream.segment_ends) == len(wps)
    for end, wp in zip(stream.segment_ends, wps):
        assert np.array_equal(stream.positions[end], wp.pose.p)
        assert stream.widths[end] == wp.width
    assert len(stream) == sum(max(1, math.ceil(w.duration * rate - 1e-9)) for w in wps)


def test_yaw_quaternion_helper():
    assert yaw_of(quat_from_yaw(1.2)) == pytest.approx(1.2)
