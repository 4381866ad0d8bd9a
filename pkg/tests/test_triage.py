import pytest

from medconsensus.domain import Query, QueryKind, Specialty, TaskType, TriagePlan
from medconsensus.errors import ConfigError, NoJsonFound, SchemaViolation, SpecialtyCountOutOfBounds, UnknownBackend
from medconsensus.triage import (
    ExpertConfig,
    ExpertRegistry,
    build_triage_prompt,
    parse_triage_reply,
    route,
    serialize_plan,
)

MCQ = Query("q", "A 54-year-old presents with chest pain.", (("A", "Aspirin"), ("B", "Heparin")))
OPEN = Query("d", "Patient Information:\nAge: 40", (), QueryKind.OPEN_DIFFERENTIAL)


def test_prompt_shows_options_only_for_multiple_choice():
    mcq = build_triage_prompt(MCQ)
    assert "A 54-year-old presents with chest pain." in mcq
    assert "(A) Aspirin\n(B) Heparin" in mcq
    assert "ANSWER OPTIONS" not in build_triage_prompt(OPEN)


def test_parse_reply_with_surrounding_prose():
    plan = parse_triage_reply(
        'Task type is treatment.\n{"task_type": "Treatment", "specialties": ["Cardiologist", "hematologist"]}'
    )
    assert plan.task_type == TaskType("treatment")
    assert plan.specialties == (Specialty("cardiologist"), Specialty("hematologist"))
    assert parse_triage_reply(serialize_plan(plan)) == plan


def test_parse_reply_keeps_unknown_task_type():
    plan = parse_triage_reply('{"task_type": "ethics", "specialties": ["a", "b"]}')
    assert plan.task_type.is_other


@pytest.mark.parametrize(
    "text, error",
    [
        ("I cannot decide.", NoJsonFound),
        ('{"specialties": ["a", "b"]}', SchemaViolation),
        ('{"task_type": "diagnosis", "specialties": "a, b"}', SchemaViolation),
        ('{"task_type": "diagnosis", "specialties": ["a"]}', SpecialtyCountOutOfBounds),
        ('{"task_type": "diagnosis", "specialties": ["a","b","c","d","e","f","g"]}', SpecialtyCountOutOfBounds),
        ('{"task_type": "diagnosis", "specialties": ["a", "A"]}', SchemaViolation),
    ],
)
def test_parse_reply_errors(text, error):
    with pytest.raises(error):
        parse_triage_reply(text)


def registry():
    return ExpertRegistry.from_dict({
        "default": {"backend_id": "generic", "model_name": "base"},
        "experts": {
            "Cardiologist": {
                "backend_id": "cardio",
                "model_name": "heart-llm",
                "system_prompt_template": "You are a {specialty}. Focus on the heart.",
            }
        },
    })


def test_route_uses_registry_then_default():
    plan = TriagePlan(TaskType("diagnosis"), (Specialty("cardiologist"), Specialty("nephrologist")))
    routed = route(plan, registry())
    assert [r.config.backend_id for r in routed] == ["cardio", "generic"]
    assert routed[0].system_prompt == "You are a cardiologist. Focus on the heart."
    assert "nephrologist" in routed[1].system_prompt


def test_registry_round_trip_and_backend_check(tmp_path):
    reg = registry()
    assert ExpertRegistry.from_dict(reg.to_dict()) == reg
    reg.check_backends({"generic", "cardio"})
    with pytest.raises(UnknownBackend):
        reg.check_backends({"generic"})


def test_registry_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExpertRegistry.from_dict({"experts": {}})
    with pytest.raises(ConfigError):
        ExpertRegistry.from_dict({"default": {"model_name": "x"}})
    with pytest.raises(ConfigError):
        ExpertRegistry.load(tmp_path / "missing.json")
    with pytest.raises(ConfigError):
        ExpertConfig("b", "m", temperature=-1)
