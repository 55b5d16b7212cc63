import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simpact.bench import (
    TASKS,
    BenchConfig,
    BenchReport,
    combo_config,
    default_bench_config_path,
    emit_report,
    load_bench_config,
    load_report,
    load_task_scene,
    perturb_scene,
    run_bench,
)
from simpact.scene import scene_to_dict


def test_config_validation():
    with pytest.raises(ValueError, match="unknown combo"):
        BenchConfig(backend_matrix=["magic"])
    with pytest.raises(ValueError):
        BenchConfig(tasks=["juggling"])
    with pytest.raises(ValueError):
        BenchConfig(trials=0)
    with pytest.raises(ValueError):
        BenchConfig(trials=3, seeds=[1, 2])
    with pytest.raises(ValueError, match="unknown bench config keys"):
        BenchConfig.from_dict({"trails": 3})


def test_shipped_config_loads():
    cfg = load_bench_config(default_bench_config_path())
    assert cfg.tasks == list(TASKS) and cfg.trials == 10 and cfg.trial_seeds() == list(range(10))
    assert BenchConfig.from_dict(cfg.to_dict()) == cfg


def test_combo_budgets():
    assert (combo_config("full", 10, 0).K, combo_config("full", 10, 0).K_max) == (10, 15)
    assert (combo_config("wo_sampler", 10, 0).K, combo_config("wo_sampler", 10, 0).K_max) == (50, 55)
    assert combo_config("cem_variant", 3, 0).K == 3


def test_single_cell_report_round_trip(tmp_path):
    cfg = BenchConfig(tasks=["bowl_stacking"], trials=1, backend_matrix=["wo_rollout"])
    report = run_bench(cfg)
    assert len(report.cells) == 1 and len(report.cells[0].trials) == 1
    table = report.table().splitlines()
    assert len(table) == 3 and "wo_rollout (K=10)" in table[2]
    jpath, tpath = emit_report(report, tmp_path / "r")
    again = load_report(jpath)
    assert again.to_dict() == report.to_dict()
    assert tpath.read_text() == report.table()


def test_k_grid_gives_one_cell_per_value():
    cfg = BenchConfig(tasks=["bowl_stacking"], trials=1, backend_matrix=["wo_rollout"], K_values=[1, 2, 3])
    report = run_bench(cfg)
    assert sorted(c.K for c in report.cells) == [1, 2, 3]
    assert len(report.table().splitlines()) == 5


def test_empty_report_table():
    assert BenchReport({}).table().splitlines()[0] == "method"


def test_zero_jitter_is_identity():
    scene = load_task_scene("pivoting")
    assert scene_to_dict(perturb_scene(scene, 3, 0.0, 0.0)) == scene_to_dict(scene)


def group_points(scene, group):
    pts = []
    for name in group:
        rigid = [o for o in scene.rigid_objects if o.name == name]
        if rigid:
            pts.append(rigid[0].pose.apply(rigid[0].mesh.vertices))
        else:
            pts.append(np.asarray([o for o in scene.deformable_objects if o.name == name][0].particles))
    return np.concatenate(pts)


@pytest.mark.parametrize("task", TASKS)
def test_perturbation_deterministic(task):
    scene = load_task_scene(task)
    assert scene_to_dict(perturb_scene(scene, 5)) == scene_to_dict(perturb_scene(scene, 5))
    assert scene_to_dict(perturb_scene(scene, 5)) != scene_to_dict(perturb_scene(scene, 6))


@given(st.integers(0, 10_000), st.sampled_from(TASKS))
@settings(max_examples=15, deadline=None)
def test_perturbation_moves_groups_rigidly(seed, task):
    scene = load_task_scene(task)
    moved = perturb_scene(scene, seed)
    for group in scene.perturbation_groups:
        a, b = group_points(scene, group), group_points(moved, group)
        # oracle: distances within the group are preserved and heights untouched
        i = np.random.default_rng(0).integers(0, len(a), (50, 2))
        da = np.linalg.norm(a[i[:, 0]] - a[i[:, 1]], axis=1)
        db = np.linalg.norm(b[i[:, 0]] - b[i[:, 1]], axis=1)
        assert np.allclose(da, db, atol=1e-9)
        assert np.allclose(a[:, 2], b[:, 2], atol=1e-9)
        # the group centroid moves by at most the xy shift
        shift = np.linalg.norm(b[:, :2].mean(axis=0) - a[:, :2].mean(axis=0))
        assert shift <= math.sqrt(2) * 0.03 + 0.05 * np.ptp(a[:, :2], axis=0).max()
