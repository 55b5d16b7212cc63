"""Backend roles shared by the planner: proposal sampling, optimization and success checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Protocol

if TYPE_CHECKING:
    from ..actions import ActionSequence
    from ..planner import OptimizationContext, RolloutTrace
    from ..scene import SceneDescription

BACKEND_KINDS = ("llm", "gaussian_sampler", "cem_optimizer", "best_of_n", "scripted", "programmatic_eval")


@dataclass(frozen=True)
class Verdict:
    """Outcome of a success check. ``score`` is a cost (lower is better) when available."""

    success: bool
    rationale: str
    source: str = "programmatic"
    score: float | None = None
    flagged: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"success": self.success, "rationale": self.rationale, "source": self.source,
                "score": self.score, "flagged": self.flagged}

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(bool(d["success"]), str(d.get("rationale", "")), str(d.get("source", "programmatic")),
                   d.get("score"), bool(d.get("flagged", False)))


@dataclass
class BackendConfig:
    kind: str
    endpoint: str | None = None
    model_name: str = ""
    temperature: float = 0.7
    max_retries: int = 2
    seed: int = 0
    options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}; expected one of {BACKEND_KINDS}")


class Sampler(Protocol):
    def sample(self, scene: "SceneDescription", n: int, frame: str | None = None,
               seed: int = 0) -> list["ActionSequence"]: ...


class Optimizer(Protocol):
    def optimize(self, context: "OptimizationContext") -> "ActionSequence": ...


class Evaluator(Protocol):
    def evaluate(self, scene: "SceneDescription", trace: "RolloutTrace") -> Verdict: ...


@dataclass
class Backends:
    sampler: Any
    optimizer: Any
    evaluator: Any
    log: list[dict] = field(default_factory=list)

    def record(self, role: str, **payload) -> None:
        """Append one backend decision to the run log."""
        self.log.append({"role": role, **payload})
