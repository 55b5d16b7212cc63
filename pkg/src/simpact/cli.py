"""Command-line entry point: ``simpact {simulate,plan,bench,render}``.

Exit codes:
    0  success (clean rollout, plan succeeded, report written)
    1  input error (bad scene, action, backend or bench config)
    2  numerical divergence during ``simulate``
    3  planning budget exhausted without success
    4  backend error (missing credentials, transport failure, malformed replies)

Flags override values from configuration files, which override defaults.
Every command writes ``manifest.json`` into its output directory before doing
any work and rewrites it with the end time and exit code on the way out.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import __version__
from .actions import ActionSequence, parse_action_json_detailed
from .errors import BackendError, SchemaError, SimpactError
from .planner import PlannerConfig, canonical_json, plan, plan_best_of_n, plan_without_rollout, save_run, sim_rollout

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_DIVERGED = 2
EXIT_BUDGET = 3
EXIT_BACKEND = 4
EXIT_CODES = (EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_BUDGET, EXIT_BACKEND)
MANIFEST = "manifest.json"
DEFAULT_OPTIMIZER_BUDGET = PlannerConfig.K_max - PlannerConfig.K


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclass
class RunManifest:
    """What ran, with which inputs and settings, and how it ended."""

    command: str
    config: dict[str, Any]
    seed: int
    out_dir: str
    tool_version: str = __version__
    started: str = field(default_factory=_now)
    finished: str | None = None
    exit_code: int | None = None
    error: str | None = None

    def write(self) -> Path:
        path = Path(self.out_dir) / MANIFEST
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def _read_json(path: str | Path, what: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} {path} is not valid JSON: {exc}") from exc


class InputError(SimpactError):
    """A command-line input could not be read."""


def _error_line(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}"


def _run(command: str, out: Path, seed: int, config: dict, body) -> int:
    """Write the manifest, run ``body``, map errors to exit codes and finalize the manifest."""
    manifest = RunManifest(command, config, seed, str(out))
    manifest.write()
    code = EXIT_INPUT
    try:
        code = body(manifest)
    except BackendError as exc:
        manifest.error = _error_line(exc)
        code = EXIT_BACKEND
    except (SimpactError, ValueError, KeyError, TypeError) as exc:
        manifest.error = _error_line(exc)
        code = EXIT_INPUT
    finally:
        manifest.finished = _now()
        manifest.exit_code = code
        manifest.write()
    if manifest.error:
        print(f"error: {manifest.error}", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# simulate


def load_actions(path: str | Path, index: int = 0) -> ActionSequence:
    """The ``index``-th proposal from an ``{"action_proposals": [...]}`` file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read action file {path}: {exc}") from exc
    seqs, errors = parse_action_json_detailed(text)
    if errors:
        raise errors[0]
    if not 0 <= index < len(seqs):
        raise SchemaError(index, f"action file holds {len(seqs)} proposals")
    return seqs[index]


def write_trace(trace, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.json").write_text(canonical_json(trace.to_dict(out)) + "\n", encoding="utf-8")
    with open(out / "states.jsonl", "w", encoding="utf-8") as fh:
        for i, s in trace.per_primitive_states:
            fh.write(canonical_json({"primitive": i, **s.to_dict()}) + "\n")
        if trace.final_state is not None and not trace.diverged:
            fh.write(canonical_json({"primitive": "final", **trace.final_state.to_dict()}) + "\n")


def cmd_simulate(scene_path: str | Path, actions_path: str | Path, out: str | Path, seed: int = 0,
                 index: int = 0, frames: bool = True) -> int:
    from .scene import load_scene

    out = Path(out)
    config = {"scene": str(scene_path), "actions": str(actions_path), "index": index, "frames": frames}

    def body(manifest: RunManifest) -> int:
        scene = load_scene(scene_path)
        seq = load_actions(actions_path, index)
        manifest.config["action_sequence"] = seq.to_json()
        if frames:
            (out / "frames").mkdir(parents=True, exist_ok=True)
        trace = sim_rollout(scene, seq, frame_dir=out / "frames" if frames else None, seed=seed)
        write_trace(trace, out)
        if trace.diverged:
            manifest.error = trace.failure
            return EXIT_DIVERGED
        if trace.failure:
            manifest.error = trace.failure
            return EXIT_INPUT
        return EXIT_OK

    return _run("simulate", out, seed, config, body)


# ---------------------------------------------------------------------------
# plan


def cmd_plan(scene_path: str | Path, backend_path: str | Path, out: str | Path, k: int | None = None,
             k_max: int | None = None, seed: int | None = None, environ: dict[str, str] | None = None) -> int:
    from .backends.factory import build_backends
    from .scene import load_scene

    out = Path(out)
    config: dict[str, Any] = {"scene": str(scene_path), "backend_config": str(backend_path)}

    def body(manifest: RunManifest) -> int:
        raw = _read_json(backend_path, "backend config")
        manifest.config["backends"] = raw
        file_planner = raw.get("planner", {}) if isinstance(raw, dict) else {}
        run_seed = seed if seed is not None else int(file_planner.get("seed", 0))
        manifest.seed = run_seed
        scene = load_scene(scene_path)
        setup = build_backends(raw, seed=run_seed, environ=environ)
        K = k if k is not None else int(setup.planner.get("K", PlannerConfig.K))
        K_max = k_max if k_max is not None else int(setup.planner.get("K_max", K + DEFAULT_OPTIMIZER_BUDGET))
        cfg = PlannerConfig(K=K, K_max=K_max, seed=run_seed)
        manifest.config["planner"] = {"K": K, "K_max": K_max, "seed": run_seed, "mode": setup.mode}
        manifest.write()
        if setup.mode == "best_of_n":
            result = plan_best_of_n(scene, setup.backends, cfg)
        elif setup.mode == "without_rollout":
            result = plan_without_rollout(scene, setup.backends, cfg)
        else:
            result = plan(scene, setup.backends, cfg, run_dir=out)
        save_run(result, out, setup.backends)
        print(f"termination={result.termination} rollouts={result.iterations_used}")
        if result.termination == "success":
            return EXIT_OK
        if result.termination == "backend_error":
            manifest.error = result.error
            return EXIT_BACKEND
        return EXIT_BUDGET

    return _run("plan", out, seed or 0, config, body)


# ---------------------------------------------------------------------------
# bench


def default_report_dir() -> Path:
    return Path("reports") / datetime.now().strftime("%Y%m%d-%H%M%S")


def cmd_bench(config_path: str | Path | None, out: str | Path | None, workers: int = 1, seed: int | None = None,
              trials: int | None = None) -> int:
    from .bench import BenchConfig, default_bench_config_path, emit_report, run_bench

    out = Path(out) if out is not None else default_report_dir()
    path = Path(config_path) if config_path is not None else default_bench_config_path()
    config: dict[str, Any] = {"bench_config": str(path), "workers": workers}

    def body(manifest: RunManifest) -> int:
        data = _read_json(path, "bench config")
        if seed is not None and isinstance(data, dict) and data.get("seeds") is None:
            n = trials if trials is not None else int(data.get("trials", 10))
            data["seeds"] = [seed + i for i in range(n)]
        if trials is not None and isinstance(data, dict):
            data["trials"] = trials
            if data.get("seeds") is not None:
                data["seeds"] = list(data["seeds"])[:trials]
        bench_cfg = BenchConfig.from_dict(data)
        manifest.config["bench"] = bench_cfg.to_dict()
        manifest.write()
        report = run_bench(bench_cfg, workers=workers)
        emit_report(report, out)
        print(report.table())
        return EXIT_OK

    return _run("bench", out, seed or 0, config, body)


# ---------------------------------------------------------------------------
# render


def cmd_render(scene_path: str | Path, trace_dir: str | Path, out: str | Path | None = None, seed: int = 0) -> int:
    from .render import frame_name, render_state, save_frame
    from .scene import load_scene
    from .sim.simulator import SimSnapshot

    trace_dir = Path(trace_dir)
    out = Path(out) if out is not None else trace_dir / "rerender"
    config = {"scene": str(scene_path), "trace_dir": str(trace_dir)}

    def body(manifest: RunManifest) -> int:
        scene = load_scene(scene_path)
        states = trace_dir / "states.jsonl"
        try:
            lines = [ln for ln in states.read_text(encoding="utf-8").splitlines() if ln.strip()]
        except OSError as exc:
            raise InputError(f"cannot read {states}: {exc}") from exc
        out.mkdir(parents=True, exist_ok=True)
        for n, line in enumerate(lines):
            snap = SimSnapshot.from_dict(json.loads(line))
            save_frame(render_state(snap, scene), out / frame_name(n))
        print(f"rendered {len(lines)} frames into {out}")
        return EXIT_OK

    return _run("render", out, seed, config, body)


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base random seed")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    ap = argparse.ArgumentParser(prog="simpact", description="Simulation-enabled action planning.",
                                 parents=[common])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="roll out one action sequence")
    p.add_argument("scene", type=Path)
    p.add_argument("actions", type=Path)
    p.add_argument("--index", type=int, default=0, help="which proposal in the action file")
    p.add_argument("--no-frames", action="store_true")

    p = sub.add_parser("plan", parents=[common], help="plan with sampled, simulated and refined proposals")
    p.add_argument("scene", type=Path)
    p.add_argument("backends", type=Path, help="backend config JSON")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--k-max", type=int, default=None)

    p = sub.add_parser("bench", parents=[common], help="run the benchmark matrix")
    p.add_argument("config", type=Path, nargs="?", default=None, help="bench config JSON (default: shipped)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--trials", type=int, default=None)

    p = sub.add_parser("render", parents=[common], help="re-render frames from a persisted trace")
    p.add_argument("scene", type=Path)
    p.add_argument("trace_dir", type=Path)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    seed = getattr(args, "seed", None)
    out = getattr(args, "out", None)
    t0 = time.perf_counter()
    if args.command == "simulate":
        code = cmd_simulate(args.scene, args.actions, out or Path("runs") / "simulate", seed or 0, args.index,
                            not args.no_frames)
    elif args.command == "plan":
        code = cmd_plan(args.scene, args.backends, out or Path("runs") / "plan", args.k, args.k_max, seed)
    elif args.command == "bench":
        code = cmd_bench(args.config, out, args.workers, seed, args.trials)
    else:
        code = cmd_render(args.scene, args.trace_dir, out, seed or 0)
    log.info("%s finished in %.1f s with exit code %d", args.command, time.perf_counter() - t0, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
