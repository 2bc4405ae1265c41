"""Test-time validation: grade candidate outputs, derive safety, ensemble validators."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .gateway import AuthError, CompletionResult, ExhaustedRetries, Gateway, GatewayError, ModelEndpoint
from .jsonl import DataError, read_jsonl, write_jsonl
from .prompting import (
    ErrorItem,
    ParseError,
    TaskSpec,
    ValidatorAssessment,
    parse_validator_response,
    render_validator_prompt,
)
from .taxonomy import PerturbationLevel, RiskLevel, SafetyLabel, safety_of

MEAN_RISK_THRESHOLD = "mean_risk_threshold"
MAJORITY_SAFETY = "majority_safety"


class CoverageMismatch(ValueError):
    """Ensemble members do not cover the same examples."""


@dataclass(frozen=True)
class AnnotatedExample:
    example_id: str
    task_id: str
    input: str
    output: str
    injected_delta: PerturbationLevel | None = None
    physician_risk: RiskLevel | None = None
    physician_errors: tuple[str, ...] | None = None
    # Extra independent physician grades, for inter-rater agreement.
    physician_ratings: tuple[RiskLevel | None, ...] | None = None
    reference_output: str | None = None

    def __post_init__(self) -> None:
        if (self.physician_risk is None) != (self.physician_errors is None):
            raise ValueError(f"{self.example_id}: physician_risk and physician_errors go together")

    @classmethod
    def from_dict(cls, d: Mapping) -> "AnnotatedExample":
        delta = d.get("injected_delta")
        risk = d.get("physician_risk")
        errors = d.get("physician_errors")
        if risk is not None and errors is None:
            errors = []
        ratings = d.get("physician_ratings")
        return cls(
            example_id=str(d["example_id"]),
            task_id=str(d["task_id"]),
            input=str(d["input"]),
            output=str(d["output"]),
            injected_delta=None if delta is None else PerturbationLevel(delta),
            physician_risk=None if risk is None else RiskLevel.parse(risk),
            physician_errors=None if errors is None else tuple(str(e) for e in errors),
            physician_ratings=None if ratings is None else tuple(
                None if r is None else RiskLevel.parse(r) for r in ratings
            ),
            reference_output=d.get("reference_output") or None,
        )

    def to_dict(self) -> dict:
        d: dict = {
            "example_id": self.example_id,
            "task_id": self.task_id,
            "input": self.input,
            "output": self.output,
        }
        if self.injected_delta is not None:
            d["injected_delta"] = self.injected_delta.delta
        if self.physician_risk is not None:
            d["physician_risk"] = self.physician_risk.label
            d["physician_errors"] = list(self.physician_errors or ())
        if self.physician_ratings is not None:
            d["physician_ratings"] = [None if r is None else r.label for r in self.physician_ratings]
        if self.reference_output is not None:
            d["reference_output"] = self.reference_output
        return d


@dataclass(frozen=True)
class ValidationVerdict:
    example_id: str
    model_name: str
    assessment: ValidatorAssessment | None
    task_id: str = ""
    error: str | None = None

    @property
    def valid(self) -> bool:
        return self.assessment is not None

    @property
    def risk_level(self) -> RiskLevel | None:
        return None if self.assessment is None else self.assessment.risk_level

    @property
    def safety(self) -> SafetyLabel | None:
        return None if self.assessment is None else safety_of(self.assessment.risk_level)

    def to_dict(self) -> dict:
        a = self.assessment
        return {
            "example_id": self.example_id,
            "task_id": self.task_id,
            "model_name": self.model_name,
            "risk_level": None if a is None else a.risk_level.label,
            "safety": None if a is None else self.safety.value,
            "errors": [] if a is None else [
                {"index": e.index, "description": e.description, "category": e.category.value if e.category else None}
                for e in a.errors
            ],
            "reasoning": "" if a is None else a.reasoning,
            "valid": self.valid,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ValidationVerdict":
        if d.get("valid", d.get("risk_level") is not None):
            a = ValidatorAssessment.from_dict(d)
            if d.get("safety") is not None and SafetyLabel(d["safety"]) != safety_of(a.risk_level):
                raise ValueError(f"{d.get('example_id')}: stored safety contradicts risk level")
        else:
            a = None
        return cls(str(d["example_id"]), str(d["model_name"]), a, str(d.get("task_id", "")), d.get("error"))


@dataclass(frozen=True)
class EnsemblePolicy:
    mode: str = MEAN_RISK_THRESHOLD
    threshold: float = 2.5

    def __post_init__(self) -> None:
        if self.mode not in (MEAN_RISK_THRESHOLD, MAJORITY_SAFETY):
            raise ValueError(f"unknown ensemble mode {self.mode!r}")
        if not 1.0 <= self.threshold <= 4.0:
            raise ValueError("threshold must lie in [1, 4]")


def _verdict_from_text(example_id: str, task_id: str, model: str, text: str) -> ValidationVerdict:
    return ValidationVerdict(example_id, model, parse_validator_response(text), task_id)


def _invalid(example_id: str, task_id: str, model: str, exc: BaseException) -> ValidationVerdict:
    cause = exc.cause if isinstance(exc, ExhaustedRetries) else exc
    kind = "unparseable_after_retries" if isinstance(cause, ParseError) else type(exc).__name__
    return ValidationVerdict(example_id, model, None, task_id, f"{kind}: {cause}")


def validate(
    gateway: Gateway,
    validator: ModelEndpoint,
    task: TaskSpec,
    x: str,
    output: str,
    *,
    example_id: str = "",
    reference: str | None = None,
    split_system: bool = False,
) -> ValidationVerdict:
    """Grade one output. Unusable responses yield an invalid verdict instead of raising."""
    prompt = render_validator_prompt(task, x, output, reference=reference, split_system=split_system)
    try:
        res = gateway.complete(validator, prompt, check=parse_validator_response, key=example_id or None)
    except AuthError:
        raise
    except GatewayError as exc:
        return _invalid(example_id, task.task_id, validator.name, exc)
    return _verdict_from_text(example_id, task.task_id, validator.name, res.text)


def validate_batch(
    gateway: Gateway,
    validator: ModelEndpoint,
    examples: Sequence[AnnotatedExample],
    tasks: Mapping[str, TaskSpec],
    parallelism: int = 4,
    *,
    use_reference: bool = False,
    split_system: bool = False,
) -> list[ValidationVerdict]:
    ids = [e.example_id for e in examples]
    if len(set(ids)) != len(ids):
        raise ValueError("example_id values must be unique")
    unknown = sorted({e.task_id for e in examples} - set(tasks))
    if unknown:
        raise ValueError(f"examples reference unknown tasks: {unknown}")
    for e in examples:
        if not e.input.strip() or not e.output.strip():
            raise ValueError(f"{e.example_id}: input and output must be non-empty")
    validator.api_key()  # fail fast on a missing secret
    batch = [
        (
            e.example_id,
            render_validator_prompt(
                tasks[e.task_id], e.input, e.output,
                reference=e.reference_output if use_reference else None,
                split_system=split_system,
            ),
        )
        for e in examples
    ]
    results = gateway.complete_many(validator, batch, parallelism, check=parse_validator_response)
    out = []
    for e in examples:
        r = results[e.example_id]
        if isinstance(r, AuthError):
            raise r
        if isinstance(r, CompletionResult):
            out.append(_verdict_from_text(e.example_id, e.task_id, validator.name, r.text))
        else:
            out.append(_invalid(e.example_id, e.task_id, validator.name, r))
    return sorted(out, key=lambda v: v.example_id)


def coverage(verdicts: Sequence[ValidationVerdict]) -> dict:
    n = len(verdicts)
    k = sum(v.valid for v in verdicts)
    return {"total": n, "valid": k, "invalid": n - k, "fraction": k / n if n else None}


def nearest_level(mean: float) -> int:
    """Round a mean risk level to the nearest integer level, halves going up."""
    return min(4, max(1, math.floor(mean + 0.5)))


def combine_levels(levels: Sequence[int], policy: EnsemblePolicy) -> tuple[RiskLevel, SafetyLabel]:
    """Ensemble decision for one example.

    The reported level is the rounded mean, pulled to the decided side of the
    safe/unsafe boundary so that the level and the safety label never disagree.
    """
    if not levels:
        raise ValueError("no levels to combine")
    mean = sum(levels) / len(levels)
    if policy.mode == MEAN_RISK_THRESHOLD:
        unsafe = mean > policy.threshold
    else:
        n_unsafe = sum(safety_of(r) is SafetyLabel.UNSAFE for r in levels)
        unsafe = 2 * n_unsafe >= len(levels)
    level = nearest_level(mean)
    level = max(level, 3) if unsafe else min(level, 2)
    return RiskLevel(level), SafetyLabel.UNSAFE if unsafe else SafetyLabel.SAFE


def ensemble(
    verdicts_by_model: Mapping[str, Sequence[ValidationVerdict]],
    policy: EnsemblePolicy = EnsemblePolicy(),
) -> list[ValidationVerdict]:
    if not verdicts_by_model:
        raise ValueError("no models to ensemble")
    names = list(verdicts_by_model)
    by_id = {m: {v.example_id: v for v in vs} for m, vs in verdicts_by_model.items()}
    ids = set(by_id[names[0]])
    for m in names[1:]:
        if set(by_id[m]) != ids:
            missing = sorted(ids.symmetric_difference(by_id[m]))
            raise CoverageMismatch(f"{m} covers different examples; mismatched ids: {missing[:10]}")
    label = f"ensemble({'+'.join(names)})"
    out = []
    for eid in sorted(ids):
        members = [by_id[m][eid] for m in names]
        task_id = members[0].task_id
        if not all(v.valid for v in members):
            bad = [v.model_name for v in members if not v.valid]
            out.append(ValidationVerdict(eid, label, None, task_id, f"invalid member verdicts: {bad}"))
            continue
        levels = [int(v.risk_level) for v in members]
        level, _ = combine_levels(levels, policy)
        errors, k = [], 0
        for v in members:
            for e in v.assessment.errors:
                k += 1
                errors.append(ErrorItem(k, e.description, e.category))
        reasoning = f"{policy.mode} over {', '.join(names)}: levels {levels}"
        out.append(ValidationVerdict(eid, label, ValidatorAssessment(reasoning, tuple(errors), level), task_id))
    return out


def read_bench(path: str | os.PathLike) -> list[AnnotatedExample]:
    out = []
    for lineno, row in read_jsonl(path):
        missing = [k for k in ("example_id", "task_id", "input", "output") if not isinstance(row.get(k), str) or not row[k].strip()]
        if missing:
            raise DataError(f"missing or empty field(s): {', '.join(missing)}", path, lineno)
        try:
            out.append(AnnotatedExample.from_dict(row))
        except (ValueError, TypeError) as exc:
            raise DataError(str(exc), path, lineno) from None
    ids = [e.example_id for e in out]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate example_id values", path)
    return out


def write_verdicts(verdicts: Sequence[ValidationVerdict], path: str | os.PathLike, overwrite: bool = True) -> Path:
    return write_jsonl(path, (v.to_dict() for v in sorted(verdicts, key=lambda v: v.example_id)), overwrite=overwrite)


def read_verdicts(path: str | os.PathLike) -> list[ValidationVerdict]:
    out = []
    for lineno, row in read_jsonl(path):
        try:
            out.append(ValidationVerdict.from_dict(row))
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"bad verdict: {exc}", path, lineno) from None
    return out
