"""Triage stage: infer the task type and pick the specialist panel."""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .domain import MAX_SPECIALTIES, MIN_SPECIALTIES, Query, QueryKind, Specialty, TaskType, TriagePlan
from .errors import ConfigError, SchemaViolation, UnknownBackend
from .parsing import first_json_object

TRIAGE_SYSTEM_PROMPT = (
    "You are the medical triage coordinator for a panel of specialist physicians. "
    "You read a clinical task, decide what kind of task it is, and choose which "
    "specialists should analyse it."
)

DEFAULT_EXPERT_TEMPLATE = (
    "You are a board-certified {specialty} serving on a multidisciplinary panel. "
    "Reason strictly from the knowledge and priorities of your specialty."
)


def render_options(query: Query) -> str:
    return "\n".join(f"({label}) {text}" for label, text in query.options)


def build_triage_prompt(query: Query) -> str:
    parts = [
        "Assess the clinical task below.",
        "First identify the task type: one of \"diagnosis\", \"treatment\", "
        "\"basic-science\", or a short label of your own if none fits.",
        f"Then choose between {MIN_SPECIALTIES} and {MAX_SPECIALTIES} distinct medical "
        "specialties whose experts are best placed to answer it, most relevant first.",
        "",
        "TASK:",
        query.text,
    ]
    if query.kind is QueryKind.MULTIPLE_CHOICE:
        parts += ["", "ANSWER OPTIONS:", render_options(query)]
    parts += [
        "",
        "Reply with a single JSON object and nothing else, for example:",
        '{"task_type": "treatment", "specialties": ["hematologist", "nephrologist"]}',
    ]
    return "\n".join(parts)


def parse_triage_reply(text: str) -> TriagePlan:
    obj = first_json_object(text)
    task_type = obj.get("task_type")
    specialties = obj.get("specialties")
    if not isinstance(task_type, str) or not task_type.strip():
        raise SchemaViolation("triage reply needs a non-empty string 'task_type'")
    if not isinstance(specialties, list) or not all(isinstance(s, str) for s in specialties):
        raise SchemaViolation("triage reply needs 'specialties' as a list of strings")
    return TriagePlan(TaskType(task_type), tuple(Specialty(s) for s in specialties))


def serialize_plan(plan: TriagePlan) -> str:
    return json.dumps(plan.to_dict())


@dataclass(frozen=True)
class ExpertConfig:
    backend_id: str
    model_name: str
    system_prompt_template: str = DEFAULT_EXPERT_TEMPLATE
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.backend_id:
            raise ConfigError("expert config needs a backend_id")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")

    def system_prompt(self, specialty: Specialty) -> str:
        return self.system_prompt_template.replace("{specialty}", specialty.name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "backend_id": self.backend_id,
            "model_name": self.model_name,
            "system_prompt_template": self.system_prompt_template,
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExpertConfig:
        try:
            return cls(
                backend_id=data["backend_id"],
                model_name=data.get("model_name", ""),
                system_prompt_template=data.get("system_prompt_template", DEFAULT_EXPERT_TEMPLATE),
                temperature=float(data.get("temperature", 0.0)),
            )
        except KeyError as exc:
            raise ConfigError(f"expert config missing {exc.args[0]!r}") from None


@dataclass(frozen=True)
class RoutedExpert:
    """An expert config bound to the specialty it will play."""

    specialty: Specialty
    config: ExpertConfig

    @property
    def system_prompt(self) -> str:
        return self.config.system_prompt(self.specialty)


@dataclass(frozen=True)
class ExpertRegistry:
    default_config: ExpertConfig
    entries: Mapping[Specialty, ExpertConfig] = field(default_factory=dict)

    def check_backends(self, known: Any) -> None:
        """Raise if any config names a backend missing from ``known``."""
        for cfg in [self.default_config, *self.entries.values()]:
            if cfg.backend_id not in known:
                raise UnknownBackend(f"registry names unknown backend {cfg.backend_id!r}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExpertRegistry:
        if "default" not in data:
            raise ConfigError("expert registry needs a 'default' config")
        entries = {
            Specialty(name): ExpertConfig.from_dict(cfg)
            for name, cfg in (data.get("experts") or {}).items()
        }
        return cls(ExpertConfig.from_dict(data["default"]), entries)

    @classmethod
    def load(cls, path: str | Path) -> ExpertRegistry:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read expert registry {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        return {
            "default": self.default_config.to_dict(),
            "experts": {s.name: c.to_dict() for s, c in self.entries.items()},
        }


def route(plan: TriagePlan, registry: ExpertRegistry) -> list[RoutedExpert]:
    """Resolve each planned specialty to its config, falling back to the default."""
    return [
        RoutedExpert(s, registry.entries.get(s, registry.default_config))
        for s in plan.specialties
    ]
