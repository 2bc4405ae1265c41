"""Run configuration: one YAML file with ``${VAR}`` environment interpolation."""

from __future__ import annotations

import copy
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .curation import FilterConfig
from .gateway import GenParams, ModelEndpoint
from .prompting import BUILTIN_TASKS, TaskSpec
from .validation import EnsemblePolicy

ROLES = ("generator", "validator_teacher", "validator_under_test")
_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
_SECRET_KEY_RE = re.compile(r"(api[_-]?key|secret|token|password)", re.IGNORECASE)


class ConfigError(ValueError):
    pass


def interpolate(value: Any, env: Mapping[str, str] | None = None) -> Any:
    env = os.environ if env is None else env
    if isinstance(value, str):
        def sub(m):
            if m.group(1) not in env:
                raise ConfigError(f"environment variable {m.group(1)} is not set")
            return env[m.group(1)]
        return _ENV_RE.sub(sub, value)
    if isinstance(value, list):
        return [interpolate(v, env) for v in value]
    if isinstance(value, dict):
        return {k: interpolate(v, env) for k, v in value.items()}
    return value


def redact(value: Any) -> Any:
    """Copy of a raw config with any literal secret-looking values blanked."""
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if _SECRET_KEY_RE.search(str(k)) and not str(k).endswith(("_env", "_ref")) and isinstance(v, str):
                out[k] = "<redacted>"
            else:
                out[k] = redact(v)
        return out
    if isinstance(value, list):
        return [redact(v) for v in value]
    return value


@dataclass
class RunConfig:
    endpoints: dict[str, ModelEndpoint]
    roles: dict[str, Any]
    tasks: dict[str, TaskSpec]
    filter: FilterConfig = field(default_factory=FilterConfig)
    parallelism: int = 4
    paths: dict[str, str] = field(default_factory=dict)
    ensemble: EnsemblePolicy | None = None
    retry: dict[str, float] = field(default_factory=dict)
    mock_backends: dict[str, dict] = field(default_factory=dict)
    split_system: bool = False
    use_reference: bool = False
    evaluation: dict[str, int] = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    def endpoint(self, role: str) -> ModelEndpoint:
        name = self.roles.get(role)
        if not name or isinstance(name, list):
            raise ConfigError(f"role {role!r} is not bound to a single endpoint")
        return self.endpoints[name]

    def validators_under_test(self) -> list[ModelEndpoint]:
        names = self.roles.get("validator_under_test") or []
        if isinstance(names, str):
            names = [names]
        if not names:
            raise ConfigError("role 'validator_under_test' is not bound")
        return [self.endpoints[n] for n in names]

    def snapshot(self) -> dict:
        """Config as written (before interpolation), with literal secrets removed."""
        return redact(copy.deepcopy(self.raw))


def _endpoint(name: str, d: Mapping) -> ModelEndpoint:
    try:
        return ModelEndpoint(
            name=name,
            base_url=str(d["base_url"]),
            model_id=str(d.get("model_id", name)),
            api_key_ref=d.get("api_key_env"),
            gen_params=GenParams(float(d.get("temperature", 0.0)), int(d.get("max_tokens", 1024))),
        )
    except KeyError as exc:
        raise ConfigError(f"endpoint {name!r} is missing {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _tasks(spec) -> dict[str, TaskSpec]:
    if spec is None:
        return dict(BUILTIN_TASKS)
    out = {}
    for item in spec:
        if isinstance(item, str):
            if item not in BUILTIN_TASKS:
                raise ConfigError(f"unknown built-in task {item!r}")
            t = BUILTIN_TASKS[item]
        else:
            try:
                t = TaskSpec(str(item["task_id"]), str(item["instruction"]), bool(item.get("in_distribution", True)))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"bad task entry {item!r}: {exc}") from None
        if t.task_id in out:
            raise ConfigError(f"duplicate task {t.task_id!r}")
        out[t.task_id] = t
    return out


def parse_config(raw: Mapping) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a mapping")
    data = interpolate(dict(raw))
    endpoints = {n: _endpoint(n, d or {}) for n, d in (data.get("endpoints") or {}).items()}
    roles = dict(data.get("roles") or {})
    for role, names in roles.items():
        if role not in ROLES and role != "fine_tuned":
            raise ConfigError(f"unknown role {role!r}")
        for n in names if isinstance(names, list) else [names]:
            if n not in endpoints:
                raise ConfigError(f"role {role!r} refers to unknown endpoint {n!r}")
    f = data.get("filter") or {}
    try:
        filt = FilterConfig(float(f.get("tau", 0.9)), int(f.get("seed", 0)), float(f.get("max_error_fraction", 0.5)))
        ens = data.get("ensemble")
        ensemble = EnsemblePolicy(ens.get("mode", "mean_risk_threshold"), float(ens.get("threshold", 2.5))) if ens else None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    parallelism = int(data.get("parallelism", 4))
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    paths = {k: str(v) for k, v in (data.get("paths") or {}).items()}
    resolved = [str(Path(p).resolve()) for p in paths.values()]
    if len(set(resolved)) != len(resolved):
        raise ConfigError("configured paths must be distinct")
    prompt = data.get("prompt") or {}
    return RunConfig(
        endpoints=endpoints,
        roles=roles,
        tasks=_tasks(data.get("tasks")),
        filter=filt,
        parallelism=parallelism,
        paths=paths,
        ensemble=ensemble,
        retry=dict(data.get("retry") or {}),
        mock_backends=dict(data.get("mock_backends") or {}),
        split_system=bool(prompt.get("split_system", False)),
        use_reference=bool(prompt.get("use_reference", False)),
        evaluation=dict(data.get("evaluation") or {}),
        raw=dict(raw),
    )


def load_config(path: str | os.PathLike) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    return parse_config(raw or {})
