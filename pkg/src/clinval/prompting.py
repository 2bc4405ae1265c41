"""Generator/validator prompt rendering and ``[[ ## field ## ]]`` response parsing."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from .taxonomy import (
    ErrorCategory,
    PerturbationLevel,
    RiskLevel,
    perturbation_instruction,
    risk_to_delta,
)

GENERATOR_TEMPLATE = "generator.txt"
VALIDATOR_TEMPLATE = "validator.txt"

_SCAFFOLD_END = "with the appropriate values\nfilled in.\n"
_MARKER_RE = re.compile(r"\[\[ ## (\w+) ## \]\]")
_ERROR_ITEM_RE = re.compile(r"^\s*Error\s*\d+\s*[:.)-]\s*(.*?)\s*$", re.IGNORECASE)
_RISK_TOKEN_RE = re.compile(r"^\s*(?:level\s*)?(-?\d+)(?![.\d])", re.IGNORECASE)


class ParseError(ValueError):
    """A model response that does not follow the field protocol.

    Parse errors are retry-eligible: the gateway re-asks the model on them.
    """


class MissingField(ParseError):
    pass


class EmptyField(MissingField):
    pass


class InvalidRiskLevel(ParseError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    instruction: str
    in_distribution: bool = True

    def __post_init__(self) -> None:
        if not self.task_id.strip():
            raise ValueError("task_id must be non-empty")
        if not self.instruction.strip():
            raise ValueError(f"task {self.task_id!r} has an empty instruction")


BUILTIN_TASKS: dict[str, TaskSpec] = {
    t.task_id: t
    for t in [
        TaskSpec("medication2answer", "Answer the following medication-related patient health question.", True),
        TaskSpec("query2question", "Summarize the patient health query into one question of 15 words or less.", True),
        TaskSpec("report2impression", "Summarize the radiology report findings into an impression with minimal text.", True),
        TaskSpec("report2simplified", "Create a simplified, patient-friendly version of the input.", True),
        TaskSpec("impression2simplified", "Create a simplified, patient-friendly version of the input.", False),
        TaskSpec("bhc2spanish", "Translate the brief hospital course into Spanish.", False),
        TaskSpec("dialogue2note", "Summarize the doctor/patient dialogue into an assessment and plan.", False),
    ]
}


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class PromptMessages:
    messages: tuple[Message, ...]

    def __post_init__(self) -> None:
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("a prompt needs at least one user message")

    def to_list(self) -> list[dict[str, str]]:
        return [m.to_dict() for m in self.messages]

    @property
    def text(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class ErrorItem:
    index: int
    description: str
    category: ErrorCategory | None = None

    @classmethod
    def from_description(cls, index: int, description: str) -> "ErrorItem":
        return cls(index, description, ErrorCategory.from_text(description))


@dataclass(frozen=True)
class ValidatorAssessment:
    reasoning: str
    errors: tuple[ErrorItem, ...]
    risk_level: RiskLevel
    raw: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "risk_level", RiskLevel(self.risk_level))
        object.__setattr__(self, "errors", tuple(self.errors))
        if [e.index for e in self.errors] != list(range(1, len(self.errors) + 1)):
            raise ValueError("error indices must run 1..n")

    @property
    def delta_hat(self) -> PerturbationLevel:
        return risk_to_delta(self.risk_level)

    def to_dict(self) -> dict:
        return {
            "reasoning": self.reasoning,
            "errors": [
                {
                    "index": e.index,
                    "description": e.description,
                    "category": e.category.value if e.category else None,
                }
                for e in self.errors
            ],
            "risk_level": self.risk_level.label,
            "delta_hat": self.delta_hat.delta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ValidatorAssessment":
        errors = tuple(
            ErrorItem(
                int(e["index"]),
                e["description"],
                ErrorCategory(e["category"]) if e.get("category") else None,
            )
            for e in d.get("errors", [])
        )
        return cls(d.get("reasoning", ""), errors, RiskLevel.parse(d["risk_level"]))


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("clinval.templates").joinpath(name).read_text(encoding="utf-8")


def template_hashes() -> dict[str, str]:
    return {
        name: hashlib.sha256(load_template(name).encode("utf-8")).hexdigest()
        for name in (GENERATOR_TEMPLATE, VALIDATOR_TEMPLATE)
    }


def _fill(template: str, values: dict[str, str]) -> str:
    # Single pass, so braces inside substituted text are never re-expanded.
    pattern = re.compile(r"\{(" + "|".join(map(re.escape, values)) + r")\}")
    return pattern.sub(lambda m: values[m.group(1)], template)


def _to_messages(text: str, split_system: bool) -> PromptMessages:
    if not split_system:
        return PromptMessages((Message("user", text),))
    cut = text.index(_SCAFFOLD_END) + len(_SCAFFOLD_END)
    return PromptMessages(
        (Message("system", text[:cut].rstrip("\n")), Message("user", text[cut:].lstrip("\n")))
    )


def generator_instruction(task: TaskSpec, perturb: PerturbationLevel | None = None) -> str:
    if perturb is None:
        return task.instruction
    return f"{task.instruction} {perturbation_instruction(perturb)}"


def render_generator_prompt(
    task: TaskSpec,
    input: str,
    perturb: PerturbationLevel | None = None,
    *,
    split_system: bool = False,
) -> PromptMessages:
    if not input.strip():
        raise ValueError("input must be non-empty")
    text = _fill(
        load_template(GENERATOR_TEMPLATE),
        {"instruction": generator_instruction(task, perturb), "input": input},
    )
    return _to_messages(text, split_system)


def render_validator_prompt(
    task: TaskSpec,
    input: str,
    output: str,
    *,
    reference: str | None = None,
    split_system: bool = False,
) -> PromptMessages:
    """Validator prompt for judging ``output`` against ``input``.

    If ``reference`` is given it is appended to the input field so the
    validator can use it as extra context.
    """
    if not input.strip():
        raise ValueError("input must be non-empty")
    if not output.strip():
        raise ValueError("output must be non-empty")
    if reference is not None and reference.strip():
        input = f"{input}\n\nReference output:\n{reference}"
    text = _fill(
        load_template(VALIDATOR_TEMPLATE),
        {"instruction": task.instruction, "input": input, "output": output},
    )
    return _to_messages(text, split_system)


def extract_fields(raw: str) -> dict[str, str]:
    """Map each ``[[ ## name ## ]]`` marker to the text up to the next marker.

    A repeated field keeps its last occurrence. The trailing ``completed``
    marker is optional.
    """
    fields: dict[str, str] = {}
    matches = list(_MARKER_RE.finditer(raw))
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        fields[m.group(1)] = raw[m.end():end].strip()
    return fields


def _require(fields: dict[str, str], name: str, allow_empty: bool = False) -> str:
    if name not in fields:
        raise MissingField(f"response has no [[ ## {name} ## ]] field")
    value = fields[name]
    if not value and not allow_empty:
        raise EmptyField(f"field {name!r} is empty")
    return value


def parse_generator_response(raw: str) -> str:
    return _require(extract_fields(raw), "output")


def parse_errors(text: str) -> tuple[ErrorItem, ...]:
    if text.strip().rstrip(".").lower() == "none":
        return ()
    items = []
    for line in text.splitlines():
        if not line.strip():
            continue
        m = _ERROR_ITEM_RE.match(line)
        desc = m.group(1) if m else line.strip()
        if desc:
            items.append(ErrorItem.from_description(len(items) + 1, desc))
    return tuple(items)


def parse_risk_level(token: str) -> RiskLevel:
    m = _RISK_TOKEN_RE.match(token)
    if not m or m.group(1) not in {"1", "2", "3", "4"}:
        raise InvalidRiskLevel(f"risk_level {token!r} is not one of 1, 2, 3, 4")
    return RiskLevel(int(m.group(1)))


def parse_validator_response(raw: str) -> ValidatorAssessment:
    fields = extract_fields(raw)
    reasoning = _require(fields, "reasoning", allow_empty=True)
    errors_text = _require(fields, "errors")
    risk = parse_risk_level(_require(fields, "risk_level"))
    return ValidatorAssessment(reasoning, parse_errors(errors_text), risk, raw=raw)


def format_validator_response(a: ValidatorAssessment) -> str:
    """Serialize an assessment in the same field protocol the validator answers in."""
    if a.errors:
        errors = "\n".join(f"Error {e.index}: {e.description}" for e in a.errors)
    else:
        errors = "None"
    return (
        f"[[ ## reasoning ## ]]\n{a.reasoning}\n\n"
        f"[[ ## errors ## ]]\n{errors}\n\n"
        f"[[ ## risk_level ## ]]\n{int(a.risk_level)}\n\n"
        "[[ ## completed ## ]]"
    )


def format_generator_response(output: str, reasoning: str = "") -> str:
    return f"[[ ## reasoning ## ]]\n{reasoning}\n\n[[ ## output ## ]]\n{output}\n\n[[ ## completed ## ]]"
