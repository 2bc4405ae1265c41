import pytest
import yaml

from clinval.config import ConfigError, interpolate, load_config, parse_config, redact

BASE = {
    "endpoints": {
        "g": {"base_url": "mock://g"},
        "v": {"base_url": "https://api.example.test/v1", "model_id": "m", "api_key_env": "CLINVAL_KEY"},
    },
    "roles": {"generator": "g", "validator_teacher": "v", "validator_under_test": ["v"]},
}


def test_minimal_parse():
    cfg = parse_config(BASE)
    assert cfg.endpoint("generator").name == "g"
    assert [e.name for e in cfg.validators_under_test()] == ["v"]
    assert cfg.filter.tau == 0.9 and len(cfg.tasks) == 7


def test_interpolation():
    assert interpolate({"a": ["x-${A}"]}, {"A": "1"}) == {"a": ["x-1"]}
    with pytest.raises(ConfigError):
        interpolate("${MISSING_VAR_X}", {})


@pytest.mark.parametrize(
    "patch",
    [
        {"roles": {"generator": "nope"}},
        {"roles": {"critic": "g"}},
        {"filter": {"tau": 1.5}},
        {"parallelism": 0},
        {"paths": {"dataset": "a.jsonl", "out": "a.jsonl"}},
        {"endpoints": {"g": {"model_id": "x"}}},
        {"tasks": ["not_a_task"]},
        {"ensemble": {"mode": "vote"}},
    ],
)
def test_rejections(patch):
    with pytest.raises(ConfigError):
        parse_config({**BASE, **patch})


def test_custom_tasks():
    cfg = parse_config({**BASE, "tasks": ["report2impression", {"task_id": "x2y", "instruction": "Do it."}]})
    assert sorted(cfg.tasks) == ["report2impression", "x2y"]


def test_redaction():
    raw = {"endpoints": {"v": {"api_key": "sk-123", "api_key_env": "KEY", "nested": [{"token": "t"}]}}}
    out = redact(raw)
    assert out["endpoints"]["v"]["api_key"] == "<redacted>"
    assert out["endpoints"]["v"]["api_key_env"] == "KEY"
    assert out["endpoints"]["v"]["nested"][0]["token"] == "<redacted>"


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [unclosed")
    with pytest.raises(ConfigError):
        load_config(bad)
    good = tmp_path / "ok.yaml"
    good.write_text(yaml.safe_dump(BASE))
    assert load_config(good).snapshot() == BASE
