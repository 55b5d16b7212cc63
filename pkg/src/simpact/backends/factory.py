"""Build :class:`Backends` from a JSON backend configuration.

A configuration names either a benchmark ``combo`` or one kind per role::

    {
      "sampler": {"kind": "scripted"},
      "optimizer": {"kind": "cem_optimizer", "population": 8},
      "evaluator": {"kind": "constant", "success": true},
      "mode": "simpact",
      "llm": {"model_name": "...", "temperature": 0.7, "options": {"fixtures": ["corpus.jsonl"]}},
      "planner": {"K": 10, "K_max": 15, "seed": 0}
    }

Role kinds: sampler ``scripted | gaussian_sampler | llm``; optimizer
``cem_optimizer | llm | none``; evaluator ``programmatic_eval | constant |
kinematic_judge | llm``. ``mode`` selects the loop: ``simpact`` (optimize until
success), ``best_of_n`` or ``without_rollout``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..errors import IoError, ValidationError
from .base import BackendConfig, Backends
from .evaluate import ConstantEvaluator, ProgrammaticEvaluator
from .scripted import CEMOptimizer, GaussianSampler, KinematicJudge, ScriptedSampler

MODES = ("simpact", "best_of_n", "without_rollout")
SAMPLER_KINDS = ("scripted", "gaussian_sampler", "llm")
OPTIMIZER_KINDS = ("cem_optimizer", "llm", "none")
EVALUATOR_KINDS = ("programmatic_eval", "constant", "kinematic_judge", "llm")
COMBO_ROLES = {
    "full": ("scripted", "cem_optimizer", "programmatic_eval", "simpact"),
    "wo_sampler": ("gaussian_sampler", "cem_optimizer", "programmatic_eval", "simpact"),
    "cem_variant": ("gaussian_sampler", "cem_optimizer", "programmatic_eval", "simpact"),
    "wo_optimizer": ("scripted", "none", "programmatic_eval", "best_of_n"),
    "wo_rollout": ("scripted", "none", "kinematic_judge", "without_rollout"),
}
_TOP_KEYS = {"combo", "sampler", "optimizer", "evaluator", "mode", "llm", "planner"}


@dataclass
class BackendSetup:
    """Everything a plan run needs besides the scene."""

    backends: Backends
    mode: str = "simpact"
    planner: dict[str, Any] = field(default_factory=dict)
    uses_llm: bool = False


def _role(d: dict, role: str, default: str, allowed: tuple[str, ...]) -> tuple[str, dict]:
    spec = d.get(role)
    if spec is None:
        spec = {"kind": default}
    elif isinstance(spec, str):
        spec = {"kind": spec}
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValidationError(role, "expected an object with a 'kind' field")
    kind = spec["kind"]
    if kind not in allowed:
        raise ValidationError(f"{role}.kind", f"unknown kind {kind!r}; expected one of {allowed}")
    return kind, {k: v for k, v in spec.items() if k != "kind"}


def _options(role: str, opts: dict, allowed: set[str]) -> dict:
    extra = set(opts) - allowed
    if extra:
        raise ValidationError(role, f"unknown options {sorted(extra)}")
    return opts


def build_backends(config: dict, seed: int = 0, environ: dict[str, str] | None = None) -> BackendSetup:
    """Instantiate the configured roles.

    LLM roles share one client; a missing endpoint or key raises
    :class:`~simpact.errors.BackendError` here, before any rollout runs.
    """
    if not isinstance(config, dict):
        raise ValidationError("backend config", "expected a JSON object")
    unknown = set(config) - _TOP_KEYS
    if unknown:
        raise ValidationError("backend config", f"unknown keys {sorted(unknown)}")
    d = dict(config)
    combo = d.get("combo")
    if combo is not None:
        if combo not in COMBO_ROLES:
            raise ValidationError("combo", f"unknown combo {combo!r}; expected one of {tuple(COMBO_ROLES)}")
        s, o, e, m = COMBO_ROLES[combo]
        d.setdefault("sampler", {"kind": s, **({"inflation": 1} if s == "gaussian_sampler" else {})})
        d.setdefault("optimizer", {"kind": o})
        d.setdefault("evaluator", {"kind": e})
        d.setdefault("mode", m)
    mode = d.get("mode", "simpact")
    if mode not in MODES:
        raise ValidationError("mode", f"unknown mode {mode!r}; expected one of {MODES}")

    s_kind, s_opts = _role(d, "sampler", "scripted", SAMPLER_KINDS)
    o_kind, o_opts = _role(d, "optimizer", "cem_optimizer", OPTIMIZER_KINDS)
    e_kind, e_opts = _role(d, "evaluator", "programmatic_eval", EVALUATOR_KINDS)

    client = None
    uses_llm = "llm" in (s_kind, o_kind, e_kind)
    if uses_llm:
        from .llm import client_from_config

        llm = dict(d.get("llm") or {})
        try:
            cfg = BackendConfig(kind="llm", seed=seed, **llm)
        except TypeError as exc:
            raise ValidationError("llm", str(exc)) from exc
        client = client_from_config(cfg, environ)

    if s_kind == "scripted":
        sampler = ScriptedSampler(seed, **_options("sampler", s_opts, set()))
    elif s_kind == "gaussian_sampler":
        opts = _options("sampler", s_opts, {"sigma_xyz", "sigma_yaw", "length", "inflation"})
        sampler = GaussianSampler(seed=seed, **opts)
    else:
        from .llm import LLMSampler

        sampler = LLMSampler(client, **_options("sampler", s_opts, {"batch"}))

    if o_kind == "cem_optimizer":
        opts = _options("optimizer", o_opts, {"population", "elite_frac", "iterations"})
        optimizer = CEMOptimizer(seed=seed, **opts)
    elif o_kind == "llm":
        from .llm import LLMOptimizer

        optimizer = LLMOptimizer(client)
    else:
        optimizer = None

    if e_kind == "programmatic_eval":
        evaluator = ProgrammaticEvaluator()
    elif e_kind == "constant":
        evaluator = ConstantEvaluator(bool(_options("evaluator", e_opts, {"success"}).get("success", True)))
    elif e_kind == "kinematic_judge":
        evaluator = KinematicJudge()
    else:
        from .llm import LLMEvaluator

        evaluator = LLMEvaluator(client)

    if mode == "simpact" and optimizer is None:
        raise ValidationError("optimizer", "mode 'simpact' needs an optimizer")
    if mode == "without_rollout" and not hasattr(evaluator, "judge_plan"):
        raise ValidationError("evaluator", "mode 'without_rollout' needs an evaluator that judges plans")
    planner = d.get("planner") or {}
    if not isinstance(planner, dict):
        raise ValidationError("planner", "expected an object")
    return BackendSetup(Backends(sampler, optimizer, evaluator), mode, dict(planner), uses_llm)


def load_backend_config(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read backend config {path}: {exc}") from exc
