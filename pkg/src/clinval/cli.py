"""Command line: ``clinval {curate,validate,evaluate,ensemble,emit-sft}``.

Exit codes: 0 success, 2 config error, 3 data error, 4 backend exhaustion.
Failures print one JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .curation import (
    CurationFailed,
    FilterConfig,
    build_train_set,
    curate,
    emit_sft_dataset,
    read_dataset,
    read_records,
    write_records,
)
from .gateway import AuthError, ExhaustedRetries, Gateway, GatewayError
from .jsonl import DataError, atomic_write_text, sha256_file
from .prompting import template_hashes
from .report import AlignmentError, build_report, dumps_report, render_markdown
from .simulate import backend_from_config
from .validation import (
    CoverageMismatch,
    EnsemblePolicy,
    coverage,
    ensemble,
    read_bench,
    read_verdicts,
    validate_batch,
    write_verdicts,
)

log = logging.getLogger("clinval")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND = 0, 2, 3, 4

RECORDS_FILE = "curation_records.jsonl"
SFT_FILE = "sft_train.jsonl"
MANIFEST_FILE = "manifest.json"


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins timestamps for reproducible artifacts.
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = float(epoch) if epoch else time.time()
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def make_gateway(cfg: RunConfig | None, audit_log: str | None = None, gateway: Gateway | None = None) -> Gateway:
    if gateway is None:
        retry = cfg.retry if cfg else {}
        gateway = Gateway(
            max_attempts=int(retry.get("max_attempts", 4)),
            backoff_base=float(retry.get("backoff_base", 0.5)),
            backoff_cap=float(retry.get("backoff_cap", 16.0)),
            audit_path=audit_log,
        )
    if cfg is not None:
        for name, spec in cfg.mock_backends.items():
            gateway.register_mock(name, backend_from_config(spec))
    return gateway


def _digest_entry(path: Path) -> dict:
    return {"file": path.name, "sha256": sha256_file(path)}


def write_manifest(out_dir: Path, command: str, body: dict, started: str) -> Path:
    manifest = {
        "tool": {"name": "clinval", "version": __version__},
        "command": command,
        "started_at": started,
        **body,
        "finished_at": _timestamp(),
    }
    return atomic_write_text(out_dir / MANIFEST_FILE, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_curate(args, gateway: Gateway | None = None) -> int:
    started = _timestamp()
    cfg = load_config(args.config)
    dataset_path = args.dataset or cfg.paths.get("dataset")
    if not dataset_path:
        raise ConfigError("no dataset given (--dataset or paths.dataset)")
    out_dir = Path(args.out or cfg.paths.get("out", "curation_out"))
    filt = FilterConfig(
        cfg.filter.tau if args.tau is None else args.tau,
        cfg.filter.seed if args.seed is None else args.seed,
        cfg.filter.max_error_fraction,
    )
    parallelism = args.parallelism or cfg.parallelism
    generator, teacher = cfg.endpoint("generator"), cfg.endpoint("validator_teacher")
    generator.api_key()
    teacher.api_key()
    dataset = read_dataset(dataset_path)
    if not args.overwrite:
        existing = [n for n in (RECORDS_FILE, SFT_FILE) if (out_dir / n).exists()]
        if existing:
            raise FileExistsError(f"{out_dir} already holds {existing}; pass --overwrite")
    gw = make_gateway(cfg, args.audit_log, gateway)

    result = curate(dataset, cfg.tasks, gw, generator, teacher, filt, parallelism, cfg.split_system)

    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = write_records(result.records, out_dir / RECORDS_FILE, filt.tau, overwrite=args.overwrite)
    outputs = {"records": _digest_entry(records_path)}
    if result.train_set:
        sft_path = emit_sft_dataset(result.train_set, out_dir / SFT_FILE, cfg.tasks, overwrite=args.overwrite, split_system=cfg.split_system)
        outputs["sft"] = _digest_entry(sft_path)
    else:
        log.warning("no record passed tau=%s; SFT file not written", filt.tau)
    fine_tuned = cfg.roles.get("fine_tuned")
    write_manifest(
        out_dir,
        "curate",
        {
            "config": cfg.snapshot(),
            "seed": filt.seed,
            "tau": filt.tau,
            "parallelism": parallelism,
            "endpoints": {"generator": generator.to_dict(), "validator_teacher": teacher.to_dict()},
            "fine_tuned_endpoint": cfg.endpoints[fine_tuned].to_dict() if fine_tuned else None,
            "template_hashes": template_hashes(),
            "inputs": {"dataset": {"path": str(dataset_path), "sha256": sha256_file(dataset_path)}},
            "outputs": outputs,
            "counts": result.stats(),
            "skipped": [s.to_dict() for s in result.skipped],
        },
        started,
    )
    print(json.dumps(result.stats()))
    return EXIT_OK


def cmd_emit_sft(args, gateway: Gateway | None = None) -> int:
    cfg = load_config(args.config)
    records = read_records(args.records)
    tau = cfg.filter.tau if args.tau is None else args.tau
    FilterConfig(tau)  # range check
    train = build_train_set(records, tau)
    if not train:
        raise DataError(f"no record passes tau={tau}")
    path = emit_sft_dataset(train, args.out, cfg.tasks, overwrite=args.overwrite, split_system=cfg.split_system)
    print(json.dumps({"records": len(records), "retained": len(train) // 2, "sft_examples": len(train), "path": str(path)}))
    return EXIT_OK


def cmd_validate(args, gateway: Gateway | None = None) -> int:
    started = _timestamp()
    cfg = load_config(args.config)
    bench_path = args.bench or cfg.paths.get("bench")
    if not bench_path:
        raise ConfigError("no benchmark given (--bench or paths.bench)")
    out_dir = Path(args.out or cfg.paths.get("out", "validation_out"))
    validators = cfg.validators_under_test()
    if args.model:
        by_name = {v.name: v for v in validators}
        unknown = [m for m in args.model if m not in by_name]
        if unknown:
            raise ConfigError(f"--model {unknown} not among validator_under_test endpoints")
        validators = [by_name[m] for m in args.model]
    for v in validators:
        v.api_key()
    bench = read_bench(bench_path)
    gw = make_gateway(cfg, args.audit_log, gateway)
    parallelism = args.parallelism or cfg.parallelism
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs, cov = {}, {}
    for v in validators:
        verdicts = validate_batch(
            gw, v, bench, cfg.tasks, parallelism, use_reference=cfg.use_reference, split_system=cfg.split_system
        )
        path = write_verdicts(verdicts, out_dir / f"verdicts_{v.name}.jsonl", overwrite=True)
        outputs[v.name] = _digest_entry(path)
        cov[v.name] = coverage(verdicts)
    write_manifest(
        out_dir,
        "validate",
        {
            "config": cfg.snapshot(),
            "endpoints": {v.name: v.to_dict() for v in validators},
            "template_hashes": template_hashes(),
            "inputs": {"bench": {"path": str(bench_path), "sha256": sha256_file(bench_path)}},
            "outputs": outputs,
            "coverage": cov,
        },
        started,
    )
    print(json.dumps({"coverage": cov}))
    return EXIT_OK


def cmd_evaluate(args, gateway: Gateway | None = None) -> int:
    cfg = load_config(args.config) if args.config else None
    bench_path = args.bench or (cfg.paths.get("bench") if cfg else None)
    if not bench_path:
        raise ConfigError("no benchmark given (--bench or paths.bench)")
    bench = read_bench(bench_path)
    by_model = {}
    for p in args.verdicts:
        vs = read_verdicts(p)
        name = vs[0].model_name if vs else Path(p).stem
        if name in by_model:
            raise DataError(f"two verdict files for model {name!r}", p)
        by_model[name] = vs
    baseline = read_verdicts(args.baseline) if args.baseline else None
    ev = cfg.evaluation if cfg else {}
    n_resamples = args.n_resamples or int(ev.get("n_resamples", 1000))
    seed = args.seed if args.seed is not None else int(ev.get("seed", 0))
    report = build_report(by_model, bench, baseline, n_resamples=n_resamples, seed=seed)
    out_dir = Path(args.out)
    atomic_write_text(out_dir / "report.json", dumps_report(report))
    atomic_write_text(out_dir / "report.md", render_markdown(report))
    summary = {m: (s.get("overall") or {}).get("macro_f1") for m, s in report["models"].items()}
    print(json.dumps({"overall_macro_f1": summary}))
    return EXIT_OK


def cmd_ensemble(args, gateway: Gateway | None = None) -> int:
    cfg = load_config(args.config) if args.config else None
    base = cfg.ensemble if cfg and cfg.ensemble else EnsemblePolicy()
    policy = EnsemblePolicy(args.policy or base.mode, base.threshold if args.threshold is None else args.threshold)
    by_model = {}
    for p in args.verdicts:
        vs = read_verdicts(p)
        name = vs[0].model_name if vs else Path(p).stem
        by_model[name] = vs
    out = ensemble(by_model, policy)
    write_verdicts(out, args.out, overwrite=True)
    print(json.dumps({"model_name": out[0].model_name if out else None, "coverage": coverage(out)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clinval", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"clinval {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("curate", help="generate, grade and filter synthetic training pairs")
    c.add_argument("--config", required=True)
    c.add_argument("--dataset")
    c.add_argument("--out")
    c.add_argument("--tau", type=float)
    c.add_argument("--seed", type=int)
    c.add_argument("--parallelism", type=int)
    c.add_argument("--audit-log")
    c.add_argument("--overwrite", action="store_true")
    c.set_defaults(func=cmd_curate)

    e = sub.add_parser("emit-sft", help="re-emit the SFT file from stored curation records")
    e.add_argument("--config", required=True)
    e.add_argument("--records", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--tau", type=float)
    e.add_argument("--overwrite", action="store_true")
    e.set_defaults(func=cmd_emit_sft)

    v = sub.add_parser("validate", help="grade benchmark outputs with the validators under test")
    v.add_argument("--config", required=True)
    v.add_argument("--bench")
    v.add_argument("--out")
    v.add_argument("--model", action="append", help="restrict to this validator endpoint (repeatable)")
    v.add_argument("--parallelism", type=int)
    v.add_argument("--audit-log")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("evaluate", help="score verdict files against physician labels")
    r.add_argument("--config")
    r.add_argument("--bench")
    r.add_argument("--verdicts", nargs="+", required=True)
    r.add_argument("--baseline")
    r.add_argument("--out", required=True)
    r.add_argument("--n-resamples", type=int)
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_evaluate)

    n = sub.add_parser("ensemble", help="combine verdict files from several validators")
    n.add_argument("--config")
    n.add_argument("--verdicts", nargs="+", required=True)
    n.add_argument("--policy", choices=["mean_risk_threshold", "majority_safety"])
    n.add_argument("--threshold", type=float)
    n.add_argument("--out", required=True)
    n.set_defaults(func=cmd_ensemble)
    return p


def _exit_code(exc: BaseException) -> int | None:
    if isinstance(exc, (ConfigError, AuthError)):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, AlignmentError, CoverageMismatch, FileExistsError)):
        return EXIT_DATA
    if isinstance(exc, (CurationFailed, ExhaustedRetries, GatewayError)):
        return EXIT_BACKEND
    if isinstance(exc, ValueError):
        return EXIT_DATA
    return None


def main(argv: Sequence[str] | None = None, gateway: Gateway | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, gateway)
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        if isinstance(exc, DataError) and exc.line is not None:
            err["line"] = exc.line
        print(json.dumps(err), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
