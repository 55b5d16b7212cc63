"""Chat-service backends: sampling, optimization, evaluation and parameter inference.

Requests use the common chat-completions shape (system and user messages, PNG
images inlined as base64 data URLs). A transport sends one request and returns the
reply text. :class:`HttpTransport` talks to a live endpoint configured through
``SIMPACT_LLM_ENDPOINT``, ``SIMPACT_LLM_API_KEY`` and ``SIMPACT_LLM_MODEL``;
:class:`FixtureTransport` replays recorded replies keyed by request hash, so the
test suite never needs the network.

When a reply cannot be parsed the client appends the reply and a short correction
request to the conversation and asks again, up to ``max_retries`` times.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from string import Template
from typing import Any, Callable, Protocol

from ..actions import ActionSequence, extract_json_object, parse_action_json_detailed
from ..errors import (BackendError, FixtureMiss, InvalidParameter, MalformedAfterRetries, NoJsonFound, SchemaError,
                      TransportError)
from ..scene import MATERIAL_CLASSES, PD_DEFAULTS, SceneDescription, default_params, scene_summary
from .base import BackendConfig, Verdict

log = logging.getLogger(__name__)

ENV_ENDPOINT = "SIMPACT_LLM_ENDPOINT"
ENV_API_KEY = "SIMPACT_LLM_API_KEY"
ENV_MODEL = "SIMPACT_LLM_MODEL"
DEFAULT_BATCH = 5
DEFAULT_MAX_TOKENS = 4096

SUCCESS_CONDITIONS = {
    "non_toppling_push": "the pushed object stays upright (tilted less than {tilt_threshold_deg:g} degrees) and its "
                         "x coordinate is within {align_tol:g} m of {target_x:g}, in line with the other objects",
    "bowl_stacking": "the small bowl sits at rest inside the large bowl: its centre is within {rim_radius:g} m "
                     "of the large bowl's axis and its base is on or above the large bowl's inner floor",
    "pivoting": "the target object stands upright, its long axis within {vertical_tol_deg:g} degrees of vertical",
    "shape_rope": "the rope forms a U: the gap between its two ends divided by the depth of the bend lies "
                  "between {ratio_min:g} and {ratio_max:g}",
    "shape_dough": "seen from above, the dough's longer side is at most {ratio_max:g} times its shorter side",
}

# physical bounds applied to inferred parameters; values outside are clamped with a warning
PARAM_BOUNDS: dict[str, tuple[float, float]] = {
    "mass": (1e-3, 50.0),
    "friction": (0.0, 2.0),
    "youngs_modulus": (1e2, 1e11),
    "poisson_ratio": (0.0, 0.49),
    "density": (10.0, 25000.0),
    "yield_stress": (1.0, 1e9),
    "friction_angle": (0.0, 60.0),
}


# ---------------------------------------------------------------------------
# prompts


def load_prompt(name: str) -> str:
    """Template text with its ``#`` header lines removed."""
    text = (resources.files("simpact") / "prompts" / f"{name}.txt").read_text(encoding="utf-8")
    return "\n".join(line for line in text.splitlines() if not line.startswith("# ")).strip() + "\n"


def render_prompt(name: str, **values: Any) -> str:
    return Template(load_prompt(name)).substitute({k: str(v) for k, v in values.items()})


def param_questions() -> dict[str, str]:
    """The five parameter questions keyed ``Q1`` .. ``Q5``."""
    parts = re.split(r"^## (Q\d)\s*$", load_prompt("params"), flags=re.M)
    return {parts[i]: parts[i + 1].strip() for i in range(1, len(parts) - 1, 2)}


def success_condition(scene: SceneDescription) -> str:
    from ..scene import TASK_CRITERIA

    tid = scene.task.task_id
    if tid not in SUCCESS_CONDITIONS:
        return scene.task.instruction
    params = {k: v for k, v in TASK_CRITERIA[tid].items() if v is not None}
    params.update(scene.task.criterion_params)
    return SUCCESS_CONDITIONS[tid].format(**params)


# ---------------------------------------------------------------------------
# transports


def image_part(path: str | Path) -> dict:
    data = base64.b64encode(Path(path).read_bytes()).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{data}"}}


def request_hash(request: dict) -> str:
    """SHA-256 of the canonical request with inline images replaced by their own digests."""

    def strip(o):
        if isinstance(o, dict):
            if o.get("type") == "image_url":
                url = o["image_url"]["url"]
                return {"type": "image_sha256", "sha256": hashlib.sha256(url.encode()).hexdigest()}
            return {k: strip(v) for k, v in o.items()}
        if isinstance(o, list):
            return [strip(v) for v in o]
        return o

    blob = json.dumps(strip(request), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Transport(Protocol):
    def send(self, request: dict) -> str: ...


class HttpTransport:
    """POSTs chat-completions requests and returns ``choices[0].message.content``."""

    def __init__(self, endpoint: str, api_key: str, timeout: float = 120.0, attempts: int = 3):
        import httpx

        self.endpoint = endpoint
        self.attempts = max(1, attempts)
        self._client = httpx.Client(timeout=timeout, headers={"Authorization": f"Bearer {api_key}"})

    def send(self, request: dict) -> str:
        import httpx

        last: Exception | None = None
        for _ in range(self.attempts):
            try:
                resp = self._client.post(self.endpoint, json=request)
            except httpx.HTTPError as exc:
                last = exc
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last = TransportError(f"HTTP {resp.status_code} from {self.endpoint}")
                continue
            if resp.status_code != 200:
                raise TransportError(f"HTTP {resp.status_code} from {self.endpoint}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"unexpected response body: {exc}") from exc
        raise TransportError(f"request to {self.endpoint} failed: {last}")


class FixtureTransport:
    """Replays replies from a JSONL file of ``{"request_hash", "response"}`` records."""

    def __init__(self, paths: str | Path | list[str | Path]):
        if isinstance(paths, (str, Path)):
            paths = [paths]
        self.replies: dict[str, str] = {}
        for p in paths:
            for line in Path(p).read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self.replies[rec["request_hash"]] = rec["response"]
        self.requests: list[dict] = []

    def send(self, request: dict) -> str:
        self.requests.append(request)
        h = request_hash(request)
        if h not in self.replies:
            raise FixtureMiss(f"no recorded reply for request {h[:12]}")
        return self.replies[h]


class RecordingTransport:
    """Forwards to ``inner`` (or a ``responder`` callable) and appends every exchange to ``path``."""

    def __init__(self, path: str | Path, inner: Transport | None = None,
                 responder: Callable[[dict], str] | None = None):
        if (inner is None) == (responder is None):
            raise ValueError("give exactly one of inner or responder")
        self.path = Path(path)
        self.inner = inner
        self.responder = responder

    def send(self, request: dict) -> str:
        reply = self.inner.send(request) if self.inner is not None else self.responder(request)
        rec = {"request_hash": request_hash(request), "response": reply}
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return reply


# ---------------------------------------------------------------------------
# client

# reply problems that trigger a corrective re-ask
_UNUSABLE = (NoJsonFound, SchemaError, InvalidParameter, ValueError, KeyError, TypeError)


@dataclass
class LLMClient:
    transport: Transport
    model: str = ""
    temperature: float = 0.7
    max_retries: int = 2
    max_tokens: int = DEFAULT_MAX_TOKENS
    log: list[dict] = field(default_factory=list)

    def request(self, messages: list[dict]) -> dict:
        return {"model": self.model, "temperature": self.temperature, "max_tokens": self.max_tokens,
                "messages": messages}

    def send(self, messages: list[dict]) -> str:
        req = self.request(messages)
        reply = self.transport.send(req)
        self.log.append({"request_hash": request_hash(req), "response": reply})
        return reply

    def ask(self, system: str, user: str, images: list[str | Path] = (), parse: Callable[[str], Any] = None):
        """Send one question; re-ask after unparseable replies. Returns ``parse(reply)``."""
        content: list[dict] = [{"type": "text", "text": user}] + [image_part(p) for p in images]
        messages = [{"role": "system", "content": system}, {"role": "user", "content": content}]
        last_error = "no reply"
        for attempt in range(self.max_retries + 1):
            reply = self.send(messages)
            if parse is None:
                return reply
            try:
                return parse(reply)
            except _UNUSABLE as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                log.warning("unusable reply (attempt %d/%d): %s", attempt + 1, self.max_retries + 1, last_error)
                messages = messages + [
                    {"role": "assistant", "content": reply},
                    {"role": "user", "content": f"That reply could not be used ({last_error}). "
                                                "Answer again with only the JSON object in the requested format."},
                ]
        raise MalformedAfterRetries(f"no usable reply after {self.max_retries + 1} attempts: {last_error}")


SYSTEM_PLANNER = "You are a careful robot manipulation planner. Reply with JSON exactly as requested."
SYSTEM_JUDGE = "You judge robot task outcomes from images and state readouts. Reply with JSON exactly as requested."
SYSTEM_PHYSICS = "You estimate physical simulation parameters for household objects. Reply with JSON only."


def _scene_context(scene: SceneDescription) -> str:
    return json.dumps(scene_summary(scene), sort_keys=True)


def _proposals_parser(reply: str) -> list[ActionSequence]:
    seqs, errors = parse_action_json_detailed(reply)
    for e in errors:
        log.warning("rejected proposal: %s", e)
    if not seqs:
        raise ValueError("reply held no valid proposal")
    return seqs


# ---------------------------------------------------------------------------
# operations


def llm_sample(client: LLMClient, scene: SceneDescription, frame: str | Path | None, n: int,
               batch: int = DEFAULT_BATCH, workers: int = 4) -> list[ActionSequence]:
    """Gather ``n`` proposals over ``ceil(n / batch)`` independent requests.

    Requests that stay malformed after retries are skipped; if that leaves fewer
    than ``n`` proposals, :class:`MalformedAfterRetries` carries the partial list.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    m = math.ceil(n / batch)
    sizes = [min(batch, n - i * batch) for i in range(m)]
    images = [frame] if frame is not None else []

    def one(i: int):
        text = render_prompt("sample", n_proposals=sizes[i], instruction=scene.task.instruction,
                             scene_context=_scene_context(scene), request_index=i + 1, request_count=m)
        try:
            return client.ask(SYSTEM_PLANNER, text, images, _proposals_parser)[: sizes[i]]
        except MalformedAfterRetries as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, min(workers, m))) as ex:
        results = list(ex.map(one, range(m)))
    out: list[ActionSequence] = []
    failures = []
    for r in results:
        if isinstance(r, BackendError):
            failures.append(r)
        else:
            out.extend(r)
    if failures:
        raise MalformedAfterRetries(f"{len(failures)} of {m} sampling requests failed", partial=out)
    return out


def format_rollouts(context) -> str:
    return json.dumps(context.to_dict()["rollouts"], sort_keys=True, indent=None)


def llm_optimize(client: LLMClient, context, scene: SceneDescription | None = None) -> ActionSequence:
    """One refined plan from the full rollout context (surplus proposals are dropped)."""
    if len(context) == 0:
        raise ValueError("optimization context is empty")
    scene = scene or context.scene
    figures = [f for r in context.records for f in r.figures]
    text = render_prompt("optimize", instruction=scene.task.instruction if scene else "",
                         scene_context=_scene_context(scene) if scene else "{}",
                         rollouts=format_rollouts(context), figure_list=", ".join(figures) or "(none)")
    seqs = client.ask(SYSTEM_PLANNER, text, context.frame_paths(), _proposals_parser)
    if len(seqs) > 1:
        log.warning("optimizer returned %d proposals; keeping the first", len(seqs))
    return seqs[0]


def _verdict_parser(reply: str) -> tuple[bool, str]:
    obj = extract_json_object(reply)
    ok = obj["success"]
    if not isinstance(ok, bool):
        raise ValueError("'success' must be a boolean")
    return ok, str(obj.get("rationale", ""))


def llm_evaluate(client: LLMClient, scene: SceneDescription, final_state, frame: str | Path | None) -> Verdict:
    """Verdict from the final frame and numeric state; unusable replies fail safe."""
    state = final_state.to_dict() if hasattr(final_state, "to_dict") else final_state
    text = render_prompt("evaluate", instruction=scene.task.instruction, success_condition=success_condition(scene),
                         final_state=json.dumps(state, sort_keys=True))
    try:
        ok, why = client.ask(SYSTEM_JUDGE, text, [frame] if frame else [], _verdict_parser)
    except MalformedAfterRetries as exc:
        return Verdict(False, f"evaluator reply unusable: {exc}", source="llm", flagged=True)
    return Verdict(ok, why, source="llm")


# ---------------------------------------------------------------------------
# physical parameter inference


def clamp_params(params: dict[str, float], label: str = "") -> dict[str, float]:
    out = {}
    for k, v in params.items():
        if v is None:
            continue
        v = float(v)
        if not math.isfinite(v):
            raise InvalidParameter(f"{label}{k} is not finite")
        lo, hi = PARAM_BOUNDS.get(k, (-math.inf, math.inf))
        c = min(max(v, lo), hi)
        if c != v:
            log.warning("clamped %s%s from %g to %g", label, k, v, c)
        out[k] = c
    return out


def _json_parser(keys: tuple[str, ...]):
    def parse(reply: str) -> dict:
        obj = extract_json_object(reply)
        missing = [k for k in keys if k not in obj]
        if missing:
            raise KeyError(f"reply lacks {missing}")
        return obj
    return parse


def _fallback(scene: SceneDescription | None, name: str) -> dict[str, Any] | None:
    if scene is None:
        return None
    for o in scene.rigid_objects:
        if o.name == name:
            return {"simulator": "rigid", "mass": o.mass, "friction": o.friction}
    for o in scene.deformable_objects:
        if o.name == name:
            rec = {"simulator": "deformable", "engine": o.engine, "youngs_modulus": o.youngs_modulus,
                   "poisson_ratio": o.poisson_ratio, "density": o.density}
            if o.material_class:
                rec["material"] = o.material_class
            if o.yield_stress is not None:
                rec["yield_stress"] = o.yield_stress
            if o.friction_angle is not None:
                rec["friction_angle"] = o.friction_angle
            return rec
    return None


def infer_object_params(client: LLMClient, name: str, simulator: str, frame: str | Path | None = None,
                        fallback: dict | None = None) -> dict[str, Any]:
    """Q2 for rigid objects; Q3 then Q4 or Q5 for deformable ones."""
    q = param_questions()
    images = [frame] if frame else []
    ask = lambda key, keys: client.ask(  # noqa: E731
        SYSTEM_PHYSICS, Template(q[key]).substitute(object=name, instruction="",
                                                    materials=", ".join(MATERIAL_CLASSES)),
        images, _json_parser(keys))
    try:
        if simulator == "rigid":
            r = ask("Q2", ("mass", "friction"))
            return {"simulator": "rigid", **clamp_params({"mass": r["mass"], "friction": r["friction"]}, f"{name}.")}
        engine = ask("Q3", ("engine",))["engine"]
        if engine not in ("PD", "MPM"):
            raise InvalidParameter(f"unknown engine {engine!r}")
        if engine == "PD":
            r = ask("Q4", ("youngs_modulus", "poisson_ratio", "density"))
            vals = {k: r[k] for k in ("youngs_modulus", "poisson_ratio", "density")}
            return {"simulator": "deformable", "engine": "PD", **clamp_params(vals, f"{name}.")}
        r = ask("Q5", ("material", "youngs_modulus", "poisson_ratio", "density"))
        material = str(r["material"]).strip().lower()
        if material not in MATERIAL_CLASSES:
            raise InvalidParameter(f"unknown material {r['material']!r}; expected one of {MATERIAL_CLASSES}")
        base = default_params(material)
        vals = {k: r.get(k) for k in ("youngs_modulus", "poisson_ratio", "density", "friction_angle", "yield_stress")}
        vals = {k: v for k, v in vals.items() if v is not None}
        return {"simulator": "deformable", "engine": "MPM", "material": material,
                **clamp_params({**base, **vals}, f"{name}.")}
    except (InvalidParameter, MalformedAfterRetries) as exc:
        log.warning("parameter inference for %s failed (%s); using fallback values", name, exc)
        if fallback is not None:
            return {**fallback, "fallback": True}
        if simulator == "rigid":
            return {"simulator": "rigid", "mass": None, "friction": 0.5, "fallback": True}
        return {"simulator": "deformable", "engine": "PD", **PD_DEFAULTS, "fallback": True}


def llm_infer_params(client: LLMClient, instruction: str, frame: str | Path | None = None,
                     scene: SceneDescription | None = None) -> dict[str, dict[str, Any]]:
    """Run the five-question protocol; returns ``{object name: parameters}``.

    Values outside :data:`PARAM_BOUNDS` are clamped; unknown materials or engines
    fall back to the values in ``scene`` when it has the object.
    """
    q = param_questions()
    q1 = Template(q["Q1"]).substitute(instruction=instruction, object="", materials="")
    r = client.ask(SYSTEM_PHYSICS, q1, [frame] if frame else [], _json_parser(("objects",)))
    out: dict[str, dict[str, Any]] = {}
    for obj in r["objects"]:
        name = str(obj["name"])
        sim = str(obj.get("simulator", "rigid")).lower()
        if sim not in ("rigid", "deformable"):
            log.warning("object %s: unknown simulator %r, treating as rigid", name, sim)
            sim = "rigid"
        out[name] = infer_object_params(client, name, sim, frame, _fallback(scene, name))
    return out


# ---------------------------------------------------------------------------
# backend adapters


class LLMSampler:
    def __init__(self, client: LLMClient, batch: int = DEFAULT_BATCH):
        self.client = client
        self.batch = batch

    def sample(self, scene: SceneDescription, n: int, frame=None, seed: int = 0) -> list[ActionSequence]:
        return llm_sample(self.client, scene, frame, n, self.batch)


class LLMOptimizer:
    needs_frames = True

    def __init__(self, client: LLMClient):
        self.client = client

    def optimize(self, context) -> ActionSequence:
        return llm_optimize(self.client, context)


class LLMEvaluator:
    needs_frames = True

    def __init__(self, client: LLMClient):
        self.client = client

    def evaluate(self, scene: SceneDescription, trace) -> Verdict:
        if trace.final_state is None:
            return Verdict(False, trace.failure or "rollout produced no state", source="llm")
        frame = trace.frames[-1] if trace.frames else None
        return llm_evaluate(self.client, scene, trace.final_state, frame)


def client_from_config(cfg: BackendConfig, environ: dict[str, str] | None = None) -> LLMClient:
    """Fixture replay when ``options.fixtures`` is set, otherwise the live endpoint from the environment."""
    env = os.environ if environ is None else environ
    fixtures = cfg.options.get("fixtures")
    if fixtures:
        transport: Transport = FixtureTransport(fixtures)
    else:
        endpoint = cfg.endpoint or env.get(ENV_ENDPOINT)
        key = env.get(ENV_API_KEY)
        if not endpoint or not key:
            raise BackendError(f"llm backend needs {ENV_ENDPOINT} and {ENV_API_KEY} in the environment")
        transport = HttpTransport(endpoint, key)
    model = cfg.model_name or env.get(ENV_MODEL, "")
    return LLMClient(transport, model=model, temperature=cfg.temperature, max_retries=cfg.max_retries)
