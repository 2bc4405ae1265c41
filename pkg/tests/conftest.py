from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest
import yaml

from clinval.gateway import Gateway, MockBackend, ModelEndpoint
from clinval.simulate import make_validator, simulated_generator

GOLDEN = Path(__file__).parent / "golden"


def endpoint(name: str, key_env: str | None = None) -> ModelEndpoint:
    return ModelEndpoint(name, f"mock://{name}", f"{name}-model", api_key_ref=key_env)


def quiet_gateway(**kw) -> Gateway:
    kw.setdefault("sleep", lambda s: None)
    return Gateway(**kw)


def sim_gateway(offsets: dict[str, int] | None = None, **kw) -> Gateway:
    gw = quiet_gateway(**kw)
    gw.register_mock("gen", MockBackend(responder=simulated_generator))
    gw.register_mock("val", MockBackend(responder=make_validator(offsets)))
    return gw


def mixed_dataset(n_exact: int = 50, n_one: int = 30, n_two: int = 20, task: str = "report2impression") -> list[dict]:
    """Samples whose markers steer the simulated teacher: exact, off by one, off by two."""
    rows = []
    for kind, count in (("exact", n_exact), ("one", n_one), ("two", n_two)):
        for i in range(count):
            rows.append(
                {
                    "sample_id": f"{kind}-{i:03d}",
                    "task_id": task,
                    "input": f"<<{kind}>> Findings for case {i}: small nodule, stable.",
                }
            )
    return rows


MIXED_OFFSETS = {"<<one>>": 1, "<<two>>": 2}


def write_jsonl(path: Path, rows) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def mock_config(tmp: Path, extra: dict | None = None, validators=("teacher",)) -> Path:
    cfg = {
        "endpoints": {
            "gen": {"base_url": "mock://gen", "model_id": "sim-gen"},
            "teacher": {"base_url": "mock://teacher", "model_id": "sim-teacher"},
            "student": {"base_url": "mock://student", "model_id": "sim-student"},
        },
        "roles": {
            "generator": "gen",
            "validator_teacher": "teacher",
            "validator_under_test": list(validators),
        },
        "mock_backends": {
            "gen": {"kind": "simulated_generator"},
            "teacher": {"kind": "simulated_validator", "offsets": MIXED_OFFSETS},
            "student": {"kind": "simulated_validator", "default_offset": 1, "clean_offset": 1},
        },
        "filter": {"tau": 0.9, "seed": 11},
        "parallelism": 4,
    }
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k] = {**cfg[k], **v}
        else:
            cfg[k] = v
    path = tmp / "run.yaml"
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return path


@pytest.fixture
def fixed_epoch(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
