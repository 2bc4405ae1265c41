"""Self-supervised training-data curation for validator models.

For every input a degradation level is drawn, a clean and a perturbed output
are produced, the teacher validator grades both, and the pair is kept only if
the generator and validator agree on the degradation (normalized consistency
score >= tau). Kept pairs become two chat-format SFT examples each.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .gateway import ContextLengthExceeded, Gateway, GatewayError, ModelEndpoint
from .jsonl import DataError, read_jsonl, write_jsonl
from .prompting import (
    TaskSpec,
    ValidatorAssessment,
    format_validator_response,
    parse_generator_response,
    parse_validator_response,
    render_generator_prompt,
    render_validator_prompt,
)
from .taxonomy import GRID, PerturbationLevel

log = logging.getLogger(__name__)

MAX_CONSISTENCY = 6.0


class DomainError(ValueError):
    pass


class CurationFailed(RuntimeError):
    def __init__(self, message: str, result: "CurationResult"):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class Sample:
    sample_id: str
    task_id: str
    input: str
    reference_output: str | None = None

    def __post_init__(self) -> None:
        if not self.input.strip():
            raise ValueError(f"sample {self.sample_id!r}: input must be non-empty")

    @classmethod
    def from_dict(cls, d: Mapping) -> "Sample":
        ref = d.get("reference_output")
        return cls(str(d["sample_id"]), str(d["task_id"]), str(d["input"]), ref if ref else None)


@dataclass(frozen=True)
class ConsistencyScore:
    absolute: float
    relative: float
    consistency: float
    normalized: float

    def to_dict(self) -> dict:
        return {
            "absolute": self.absolute,
            "relative": self.relative,
            "consistency": self.consistency,
            "normalized": self.normalized,
        }


def consistency_score(clean_hat: float, corrupt_hat: float, delta: float) -> ConsistencyScore:
    """Generator-validator agreement for one clean/perturbed pair.

    ``absolute`` penalizes a clean output graded away from 0 and a perturbed
    output graded away from ``delta``; ``relative`` penalizes a grade gap that
    differs from ``delta``. ``normalized`` maps the sum onto [0, 1], 1 being
    perfect agreement.
    """
    for name, v in (("clean_hat", clean_hat), ("corrupt_hat", corrupt_hat), ("delta", delta)):
        v = float(v)
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name}={v} outside [0, 1]")
    clean_hat, corrupt_hat, delta = float(clean_hat), float(corrupt_hat), float(delta)
    absolute = clean_hat**2 + (corrupt_hat - delta) ** 2
    relative = (corrupt_hat - clean_hat - delta) ** 2
    total = absolute + relative
    return ConsistencyScore(absolute, relative, total, 1.0 - total / MAX_CONSISTENCY)


@dataclass(frozen=True)
class FilterConfig:
    tau: float = 0.9
    seed: int = 0
    max_error_fraction: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau={self.tau} outside [0, 1]")


def sample_delta(rng: np.random.Generator) -> PerturbationLevel:
    return PerturbationLevel(GRID[int(rng.integers(len(GRID)))])


@dataclass(frozen=True)
class CurationRecord:
    sample_id: str
    task_id: str
    input: str
    delta: PerturbationLevel
    clean_output: str
    perturbed_output: str
    clean_assessment: ValidatorAssessment
    corrupt_assessment: ValidatorAssessment
    score: ConsistencyScore
    clean_from_reference: bool = False

    def passes(self, tau: float) -> bool:
        return self.score.normalized >= tau

    def to_dict(self, tau: float | None = None) -> dict:
        d = {
            "sample_id": self.sample_id,
            "task_id": self.task_id,
            "input": self.input,
            "delta": self.delta.delta,
            "clean_output": self.clean_output,
            "clean_from_reference": self.clean_from_reference,
            "perturbed_output": self.perturbed_output,
            "clean_assessment": self.clean_assessment.to_dict(),
            "corrupt_assessment": self.corrupt_assessment.to_dict(),
            "score": self.score.to_dict(),
        }
        if tau is not None:
            d["retained"] = self.passes(tau)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CurationRecord":
        clean = ValidatorAssessment.from_dict(d["clean_assessment"])
        corrupt = ValidatorAssessment.from_dict(d["corrupt_assessment"])
        delta = PerturbationLevel(d["delta"])
        return cls(
            str(d["sample_id"]),
            str(d["task_id"]),
            d["input"],
            delta,
            d["clean_output"],
            d["perturbed_output"],
            clean,
            corrupt,
            consistency_score(clean.delta_hat.delta, corrupt.delta_hat.delta, delta.delta),
            bool(d.get("clean_from_reference", False)),
        )


@dataclass(frozen=True)
class SFTExample:
    sample_id: str
    kind: str  # "clean" or "corrupt"
    task_id: str
    input: str
    output: str
    assessment: ValidatorAssessment

    def sort_key(self) -> tuple[str, int]:
        return (self.sample_id, 0 if self.kind == "clean" else 1)

    def to_chat(self, task: TaskSpec, split_system: bool = False) -> dict:
        prompt = render_validator_prompt(task, self.input, self.output, split_system=split_system)
        messages = prompt.to_list()
        messages.append({"role": "assistant", "content": format_validator_response(self.assessment)})
        return {"messages": messages}


@dataclass
class SkippedSample:
    sample_id: str
    stage: str
    error: str
    fatal: bool = True

    def to_dict(self) -> dict:
        return {"sample_id": self.sample_id, "stage": self.stage, "error": self.error, "counts_as_error": self.fatal}


@dataclass
class CurationResult:
    records: list[CurationRecord]
    train_set: list[SFTExample]
    skipped: list[SkippedSample] = field(default_factory=list)
    tau: float = 0.9
    n_samples: int = 0

    @property
    def retained(self) -> list[CurationRecord]:
        return [r for r in self.records if r.passes(self.tau)]

    def stats(self) -> dict:
        n_scored = len(self.records)
        n_kept = len(self.retained)
        return {
            "samples": self.n_samples,
            "scored": n_scored,
            "retained": n_kept,
            "rejected": n_scored - n_kept,
            "skipped": len(self.skipped),
            "retention": n_kept / n_scored if n_scored else None,
            "sft_examples": len(self.train_set),
        }


def generate_pair(
    gateway: Gateway,
    generator: ModelEndpoint,
    task: TaskSpec,
    sample: Sample,
    delta: PerturbationLevel,
    split_system: bool = False,
) -> tuple[str, str]:
    """Clean output (the reference when present) and the perturbed generation."""
    if sample.reference_output is not None:
        clean = sample.reference_output
    else:
        res = gateway.complete(
            generator,
            render_generator_prompt(task, sample.input, None, split_system=split_system),
            check=parse_generator_response,
            key=f"{sample.sample_id}/clean",
        )
        clean = parse_generator_response(res.text)
    res = gateway.complete(
        generator,
        render_generator_prompt(task, sample.input, delta, split_system=split_system),
        check=parse_generator_response,
        key=f"{sample.sample_id}/perturbed",
    )
    return clean, parse_generator_response(res.text)


def assess(
    gateway: Gateway,
    validator: ModelEndpoint,
    task: TaskSpec,
    input: str,
    output: str,
    key: str | None = None,
    split_system: bool = False,
) -> ValidatorAssessment:
    res = gateway.complete(
        validator,
        render_validator_prompt(task, input, output, split_system=split_system),
        check=parse_validator_response,
        key=key,
    )
    return parse_validator_response(res.text)


def _curate_one(gateway, generator, validator, task, sample, delta, split_system) -> CurationRecord:
    clean, perturbed = generate_pair(gateway, generator, task, sample, delta, split_system)
    a_clean = assess(gateway, validator, task, sample.input, clean, f"{sample.sample_id}/assess-clean", split_system)
    a_corrupt = assess(gateway, validator, task, sample.input, perturbed, f"{sample.sample_id}/assess-corrupt", split_system)
    score = consistency_score(a_clean.delta_hat.delta, a_corrupt.delta_hat.delta, delta.delta)
    return CurationRecord(
        sample.sample_id, sample.task_id, sample.input, delta, clean, perturbed,
        a_clean, a_corrupt, score, sample.reference_output is not None,
    )


def build_train_set(records: Sequence[CurationRecord], tau: float) -> list[SFTExample]:
    out = []
    for r in records:
        if not r.passes(tau):
            continue
        out.append(SFTExample(r.sample_id, "clean", r.task_id, r.input, r.clean_output, r.clean_assessment))
        out.append(SFTExample(r.sample_id, "corrupt", r.task_id, r.input, r.perturbed_output, r.corrupt_assessment))
    return sorted(out, key=SFTExample.sort_key)


def curate(
    dataset: Sequence[Sample],
    tasks: Mapping[str, TaskSpec],
    gateway: Gateway,
    generator: ModelEndpoint,
    validator: ModelEndpoint,
    cfg: FilterConfig = FilterConfig(),
    parallelism: int = 4,
    split_system: bool = False,
) -> CurationResult:
    if not dataset:
        raise ValueError("dataset is empty")
    ids = [s.sample_id for s in dataset]
    if len(set(ids)) != len(ids):
        raise ValueError("sample_id values must be unique")
    unknown = sorted({s.task_id for s in dataset} - set(tasks))
    if unknown:
        raise ValueError(f"samples reference unknown tasks: {unknown}")

    rng = np.random.default_rng(cfg.seed)
    deltas = [sample_delta(rng) for _ in dataset]

    def run(i: int):
        s = dataset[i]
        try:
            return _curate_one(gateway, generator, validator, tasks[s.task_id], s, deltas[i], split_system)
        except ContextLengthExceeded as exc:
            log.warning("skipping %s: context length exceeded", s.sample_id)
            return SkippedSample(s.sample_id, "context_length", str(exc), fatal=False)
        except GatewayError as exc:
            log.warning("skipping %s: %s", s.sample_id, exc)
            return SkippedSample(s.sample_id, type(exc).__name__, str(exc))

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        outcomes = list(pool.map(run, range(len(dataset))))

    records = sorted((o for o in outcomes if isinstance(o, CurationRecord)), key=lambda r: r.sample_id)
    skipped = sorted((o for o in outcomes if isinstance(o, SkippedSample)), key=lambda s: s.sample_id)
    result = CurationResult(records, build_train_set(records, cfg.tau), skipped, cfg.tau, len(dataset))
    n_err = sum(s.fatal for s in skipped)
    if n_err / len(dataset) > cfg.max_error_fraction:
        raise CurationFailed(f"{n_err}/{len(dataset)} samples failed", result)
    return result


def emit_sft_dataset(
    train_set: Sequence[SFTExample],
    path: str | os.PathLike,
    tasks: Mapping[str, TaskSpec],
    overwrite: bool = False,
    split_system: bool = False,
) -> Path:
    if not train_set:
        raise ValueError("training set is empty; nothing passed the consistency filter")
    rows = [ex.to_chat(tasks[ex.task_id], split_system) for ex in sorted(train_set, key=SFTExample.sort_key)]
    return write_jsonl(path, rows, overwrite=overwrite)


def write_records(records: Sequence[CurationRecord], path: str | os.PathLike, tau: float, overwrite: bool = True) -> Path:
    return write_jsonl(path, (r.to_dict(tau) for r in sorted(records, key=lambda r: r.sample_id)), overwrite=overwrite)


def read_records(path: str | os.PathLike) -> list[CurationRecord]:
    out = []
    for lineno, row in read_jsonl(path):
        try:
            out.append(CurationRecord.from_dict(row))
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"bad curation record: {exc}", path, lineno) from None
    return out


def read_dataset(path: str | os.PathLike) -> list[Sample]:
    out = []
    for lineno, row in read_jsonl(path):
        missing = [k for k in ("sample_id", "task_id", "input") if k not in row]
        if missing:
            raise DataError(f"missing field(s) {', '.join(missing)}", path, lineno)
        try:
            out.append(Sample.from_dict(row))
        except ValueError as exc:
            raise DataError(str(exc), path, lineno) from None
    ids = [s.sample_id for s in out]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate sample_id values", path)
    return out
