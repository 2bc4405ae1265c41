"""Deterministic simulated generator/validator backends for offline runs.

The simulated generator tags each output with the risk level its prompt asked
for; the simulated validator reads the tag back and answers with a
configurable deviation. Together they exercise the full pipeline without a
real model.
"""

from __future__ import annotations

import importlib
import re
from typing import Callable, Mapping

from .gateway import MockBackend
from .prompting import (
    ErrorItem,
    ValidatorAssessment,
    extract_fields,
    format_generator_response,
    format_validator_response,
)
from .taxonomy import GRID, PERTURBATION_INSTRUCTIONS, RiskLevel, delta_to_risk

_TAG_RE = re.compile(r"\[sim:(clean|level-([1-4]))\]")


def _fields(messages: list[dict]) -> dict[str, str]:
    return extract_fields("\n".join(m["content"] for m in messages))


def shift_level(level: int, offset: int) -> int:
    """Move ``offset`` levels away from ``level``, reflecting at the scale ends."""
    if offset == 0:
        return level
    up = level + abs(offset)
    return up if up <= 4 else level - abs(offset)


def simulated_generator(messages: list[dict]) -> str:
    f = _fields(messages)
    instruction, text = f.get("instruction", ""), f.get("input", "")
    tag = "clean"
    for g in GRID:
        if instruction.endswith(PERTURBATION_INSTRUCTIONS[g]):
            tag = f"level-{int(delta_to_risk(g))}"
    head = text.strip().splitlines()[0][:60] if text.strip() else ""
    return format_generator_response(f"[sim:{tag}] {head}", reasoning="simulated")


def intended_level(output: str) -> int:
    """Risk level a simulated output was generated for; untagged outputs count as clean."""
    m = _TAG_RE.search(output)
    if m is None or m.group(1) == "clean":
        return 1
    return int(m.group(2))


def is_perturbed(output: str) -> bool:
    m = _TAG_RE.search(output)
    return m is not None and m.group(1) != "clean"


def make_validator(
    offsets: Mapping[str, int] | None = None,
    default_offset: int = 0,
    clean_offset: int = 0,
) -> Callable[[list[dict]], str]:
    """Validator responder answering ``intended level`` shifted by an offset.

    ``offsets`` maps a substring of the input to the offset used on perturbed
    outputs for that input; ``clean_offset`` applies to clean outputs.
    """
    offsets = dict(offsets or {})

    def respond(messages: list[dict]) -> str:
        f = _fields(messages)
        text, output = f.get("input", ""), f.get("output", "")
        level = intended_level(output)
        if is_perturbed(output):
            off = next((o for k, o in offsets.items() if k in text), default_offset)
        else:
            off = clean_offset
        level = shift_level(level, off)
        errors = tuple(
            ErrorItem.from_description(i, f"Fabricated claim: simulated inconsistency {i}")
            for i in range(1, level)
        )
        a = ValidatorAssessment(f"Simulated review of a level-{level} output.", errors, RiskLevel(level))
        return format_validator_response(a)

    return respond


def backend_from_config(spec: Mapping) -> MockBackend:
    """Build a mock backend from a config mapping.

    ``kind`` is one of ``simulated_generator``, ``simulated_validator``,
    ``script`` or ``factory`` (``factory: "module:callable"`` returning a
    MockBackend).
    """
    kind = spec.get("kind")
    latency = float(spec.get("latency", 0.0))
    if kind == "simulated_generator":
        return MockBackend(responder=simulated_generator, latency=latency)
    if kind == "simulated_validator":
        responder = make_validator(
            {str(k): int(v) for k, v in (spec.get("offsets") or {}).items()},
            int(spec.get("default_offset", 0)),
            int(spec.get("clean_offset", 0)),
        )
        return MockBackend(responder=responder, latency=latency)
    if kind == "script":
        return MockBackend(script=list(spec["responses"]), latency=latency)
    if kind == "factory":
        mod, _, attr = str(spec["factory"]).partition(":")
        return getattr(importlib.import_module(mod), attr)()
    raise ValueError(f"unknown mock backend kind {kind!r}")
