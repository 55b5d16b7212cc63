import json

import pytest

from scenes import box_scene, dough_scene
from simpact.cli import RunManifest, cmd_bench, cmd_plan, cmd_render, cmd_simulate, main
from simpact.errors import NumericalDivergence
from simpact.scene import save_scene


def write(path, obj):
    path.write_text(json.dumps(obj))
    return path


def actions_file(tmp_path, actions):
    return write(tmp_path / "actions.json", {"action_proposals": [{"description": "t", "action_sequence": actions}]})


LIFT = [{"type": "LIFT", "delta_z": 0.02, "reasoning": "up"}]


@pytest.fixture
def box_file(tmp_path):
    path = tmp_path / "scene.json"
    save_scene(box_scene(), path)
    return path


def manifest(out):
    m = RunManifest.load(out / "manifest.json")
    assert m.finished is not None
    return m


def test_simulate_ok_then_render(tmp_path, box_file):
    out = tmp_path / "sim"
    assert main(["simulate", str(box_file), str(actions_file(tmp_path, LIFT)), "--out", str(out)]) == 0
    assert sorted(p.name for p in (out / "frames").iterdir()) == ["fig_0.png", "fig_1.png", "fig_2.png"]
    states = (out / "states.jsonl").read_text().splitlines()
    assert json.loads(states[-1])["primitive"] == "final"
    m = manifest(out)
    assert m.exit_code == 0 and m.command == "simulate" and m.config["action_sequence"]
    assert cmd_render(box_file, out) == 0
    assert len(list((out / "rerender").glob("fig_*.png"))) == len(states)


def test_simulate_rejects_unknown_action(tmp_path, box_file, capsys):
    bad = actions_file(tmp_path, [{"type": "FLY", "delta_z": 0.02}])
    assert cmd_simulate(box_file, bad, tmp_path / "o") == 1
    assert "error:" in capsys.readouterr().err
    assert manifest(tmp_path / "o").exit_code == 1


def test_simulate_missing_scene(tmp_path):
    assert cmd_simulate(tmp_path / "nope.json", actions_file(tmp_path, LIFT), tmp_path / "o") == 1


def test_simulate_divergence_exit_code(tmp_path, monkeypatch):
    import simpact.sim.mpm as mpm

    scene_file = tmp_path / "dough.json"
    save_scene(dough_scene("jelly"), scene_file)
    real, calls = mpm.mpm_step, []

    def failing_step(body, dt, boxes=None, apply_boundaries=True):
        calls.append(dt)
        if len(calls) > 40:
            raise NumericalDivergence("det(F) <= 0")
        return real(body, dt, boxes, apply_boundaries)

    monkeypatch.setattr(mpm, "mpm_step", failing_step)
    out = tmp_path / "o"
    assert cmd_simulate(scene_file, actions_file(tmp_path, LIFT), out, frames=False) == 2
    trace = json.loads((out / "trace.json").read_text())
    assert trace["diverged"] and 0 < trace["steps"]
    assert "NumericalDivergence" in manifest(out).error


def test_plan_stops_at_first_success(tmp_path, box_file):
    cfg = write(tmp_path / "b.json", {"evaluator": {"kind": "constant", "success": True}})
    out = tmp_path / "plan"
    assert cmd_plan(box_file, cfg, out, k=2, k_max=3) == 0
    saved = json.loads((out / "plan.json").read_text())
    assert saved["termination"] == "success" and saved["iterations_used"] == 3
    assert saved["calls"]["optimizer"] == 1 and len(saved["traces"]) == 3
    assert manifest(out).config["planner"] == {"K": 2, "K_max": 3, "seed": 0, "mode": "simpact"}


def test_plan_budget_exhausted(tmp_path, box_file):
    cfg = write(tmp_path / "b.json", {"evaluator": {"kind": "constant", "success": False},
                                      "optimizer": {"kind": "cem_optimizer", "population": 1, "iterations": 1},
                                      "planner": {"K": 1, "K_max": 2}})
    assert cmd_plan(box_file, cfg, tmp_path / "p") == 3


def test_plan_llm_without_key(tmp_path, box_file):
    cfg = write(tmp_path / "b.json", {"sampler": "llm"})
    out = tmp_path / "p"
    assert cmd_plan(box_file, cfg, out, environ={}) == 4
    assert not (out / "traces").exists()
    assert "BackendError" in manifest(out).error


def test_plan_bad_config(tmp_path, box_file):
    assert cmd_plan(box_file, write(tmp_path / "b.json", {"combo": "magic"}), tmp_path / "p") == 1
    assert cmd_plan(box_file, write(tmp_path / "c.json", {"sampelr": {}}), tmp_path / "q") == 1


def test_bench_unknown_combo(tmp_path):
    cfg = write(tmp_path / "bench.json", {"tasks": ["pivoting"], "trials": 1, "backend_matrix": ["magic"]})
    out = tmp_path / "r"
    assert cmd_bench(cfg, out) == 1
    assert "magic" in manifest(out).error


def test_bench_small_run(tmp_path, capsys):
    cfg = write(tmp_path / "bench.json", {"tasks": ["bowl_stacking"], "trials": 1, "backend_matrix": ["wo_rollout"]})
    out = tmp_path / "r"
    assert main(["bench", str(cfg), "--out", str(out), "--seed", "4"]) == 0
    assert (out / "report.json").exists() and (out / "report.txt").exists()
    assert "wo_rollout (K=10)" in capsys.readouterr().out
    assert manifest(out).config["bench"]["seeds"] == [4]


def test_usage_errors():
    assert main([]) == 1
    assert main(["simulate"]) == 1
