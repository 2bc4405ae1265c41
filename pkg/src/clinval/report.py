"""Evaluation report: validator verdicts scored against physician labels."""

from __future__ import annotations

import json
from typing import Mapping, Sequence

import numpy as np

from . import stats
from .stats import LabeledPairSet
from .validation import AnnotatedExample, ValidationVerdict, coverage


class AlignmentError(ValueError):
    """Verdict ids do not line up with the benchmark."""


def _r(x):
    return None if x is None else round(float(x), 12)


def _pairset(verdicts: Sequence[ValidationVerdict], bench: Mapping[str, AnnotatedExample]) -> LabeledPairSet:
    rows = [
        (v.example_id, bench[v.example_id].task_id, int(v.risk_level), int(bench[v.example_id].physician_risk))
        for v in sorted(verdicts, key=lambda v: v.example_id)
        if v.valid and bench[v.example_id].physician_risk is not None
    ]
    if not rows:
        return LabeledPairSet([], [], [], [])
    ids, tasks, pred, ref = zip(*rows)
    return LabeledPairSet(ids, tasks, pred, ref)


def check_alignment(verdicts: Sequence[ValidationVerdict], bench: Mapping[str, AnnotatedExample], name: str) -> None:
    got = {v.example_id for v in verdicts}
    if len(got) != len(verdicts):
        raise AlignmentError(f"{name}: duplicate example ids in verdicts")
    missing = sorted(set(bench) - got)
    extra = sorted(got - set(bench))
    if missing or extra:
        raise AlignmentError(f"{name}: missing ids {missing[:20]}, unknown ids {extra[:20]}")


def _kappa(ps):
    return stats.weighted_kappa(ps) if len(ps) else None


def _binary_field(name):
    return lambda ps: getattr(stats.binary_metrics(ps), name)


def _model_section(ps: LabeledPairSet, verdicts, bench, n_resamples: int, seed: int) -> dict:
    cov = coverage(verdicts)
    cov_by_task = {}
    for t in sorted({e.task_id for e in bench.values()}):
        cov_by_task[t] = coverage([v for v in verdicts if bench[v.example_id].task_id == t])
    out: dict = {"coverage": {"overall": cov, "per_task": cov_by_task}, "n_scored": len(ps)}
    if len(ps) == 0:
        out.update(per_task={}, overall=None, binary=None)
        return out

    per_task = {}
    for t, sub in ps.by_task().items():
        f1s = stats.f1_by_class(sub)
        per_task[t] = {
            "n": len(sub),
            "f1_by_class": {f"level_{c}": (0.0 if v is None else _r(v)) for c, v in f1s.items()},
            "undefined_classes": [f"level_{c}" for c, v in f1s.items() if v is None],
            "macro_f1": _r(stats.task_macro_f1(sub)),
            "macro_f1_std": _r(stats.bootstrap_std(sub, stats.task_macro_f1, n_resamples, seed)),
            "kappa": _r(_kappa(sub)),
            "kappa_std": _r(stats.bootstrap_std(sub, stats.weighted_kappa, n_resamples, seed)),
        }
    _, overall_f1 = stats.macro_f1(ps)
    pooled = stats.f1_by_class(ps)
    out["per_task"] = per_task
    out["overall"] = {
        "n": len(ps),
        "macro_f1": _r(overall_f1),
        "macro_f1_std": _r(stats.bootstrap_std(ps, stats.overall_macro_f1, n_resamples, seed)),
        "kappa": _r(_kappa(ps)),
        "kappa_std": _r(stats.bootstrap_std(ps, stats.weighted_kappa, n_resamples, seed)),
        "f1_by_class_pooled": {f"level_{c}": (0.0 if v is None else _r(v)) for c, v in pooled.items()},
    }
    bm = stats.binary_metrics(ps)
    binary = {k: (_r(v) if isinstance(v, float) else v) for k, v in bm.to_dict().items()}
    for name in ("sensitivity", "specificity", "f1", "accuracy"):
        binary[f"{name}_std"] = _r(stats.bootstrap_std(ps, _binary_field(name), n_resamples, seed))
    out["binary"] = binary
    return out


def _mcnemar_section(cand: LabeledPairSet, base: LabeledPairSet) -> dict:
    common = sorted(set(cand.ids.tolist()) & set(base.ids.tolist()))
    ci = {e: i for i, e in enumerate(cand.ids.tolist())}
    bi = {e: i for i, e in enumerate(base.ids.tolist())}
    c_idx = np.array([ci[e] for e in common], dtype=np.int64)
    b_idx = np.array([bi[e] for e in common], dtype=np.int64)
    c, b = cand.take(c_idx), base.take(b_idx)
    ref = c.reference
    c_ok, b_ok = c.predicted == ref, b.predicted == ref
    c_bin = (c.predicted >= 3) == (ref >= 3)
    b_bin = (b.predicted >= 3) == (ref >= 3)
    sec = {
        "n_paired": len(common),
        "four_class": stats.mcnemar(b_ok, c_ok).to_dict(),
        "binary": stats.mcnemar(b_bin, c_bin).to_dict(),
        "per_level": {},
    }
    for lvl in stats.LEVELS:
        m = ref == lvl
        sec["per_level"][f"level_{lvl}"] = stats.mcnemar(b_ok[m], c_ok[m]).to_dict()
    return sec


def _apply_bonferroni(models: dict, family_alpha: float) -> dict:
    per_level = [(m, lvl) for m in sorted(models) if "mcnemar" in models[m] for lvl in sorted(models[m]["mcnemar"]["per_level"])]
    overall = [(m, kind) for m in sorted(models) if "mcnemar" in models[m] for kind in ("four_class", "binary")]
    if per_level:
        flags = stats.bonferroni([models[m]["mcnemar"]["per_level"][lvl]["p"] for m, lvl in per_level], family_alpha)
        for (m, lvl), (_, sig) in zip(per_level, flags):
            models[m]["mcnemar"]["per_level"][lvl]["significant"] = sig
    if overall:
        flags = stats.bonferroni([models[m]["mcnemar"][kind]["p"] for m, kind in overall], family_alpha)
        for (m, kind), (_, sig) in zip(overall, flags):
            models[m]["mcnemar"][kind]["significant"] = sig
    return {
        "family_alpha": family_alpha,
        "per_level_family": {"members": [f"{m}/{lvl}" for m, lvl in per_level], "size": len(per_level)},
        "overall_family": {"members": [f"{m}/{k}" for m, k in overall], "size": len(overall)},
    }


def _inter_rater(bench: Mapping[str, AnnotatedExample]) -> dict | None:
    rated = [e for e in bench.values() if e.physician_ratings and sum(r is not None for r in e.physician_ratings) >= 2]
    if not rated:
        return None

    def alpha(rows, binary=False):
        grid = [[None if r is None else (int(r) >= 3 if binary else int(r)) for r in e.physician_ratings] for e in rows]
        return _r(stats.krippendorff_alpha(grid, "interval" if binary else "ordinal"))

    tasks = sorted({e.task_id for e in rated})
    return {
        "metric": "ordinal",
        "n_items": len(rated),
        "per_task": {t: alpha([e for e in rated if e.task_id == t]) for t in tasks},
        "overall": alpha(rated),
        "binary": alpha(rated, binary=True),
    }


def build_report(
    verdicts_by_model: Mapping[str, Sequence[ValidationVerdict]],
    bench: Sequence[AnnotatedExample],
    baseline: Sequence[ValidationVerdict] | None = None,
    *,
    n_resamples: int = 1000,
    seed: int = 0,
    family_alpha: float = 0.05,
) -> dict:
    """Score every model; JSON-ready. McNemar tests appear only with a baseline."""
    bench_map = {e.example_id: e for e in bench}
    for name, vs in verdicts_by_model.items():
        check_alignment(vs, bench_map, name)
    if baseline is not None:
        check_alignment(baseline, bench_map, "baseline")
    models = {}
    base_ps = _pairset(baseline, bench_map) if baseline is not None else None
    for name in sorted(verdicts_by_model):
        vs = verdicts_by_model[name]
        ps = _pairset(vs, bench_map)
        models[name] = _model_section(ps, vs, bench_map, n_resamples, seed)
        if base_ps is not None:
            models[name]["mcnemar"] = _mcnemar_section(ps, base_ps)
    report = {
        "tasks": sorted({e.task_id for e in bench}),
        "models": models,
        "bootstrap": {"n_resamples": n_resamples, "seed": seed, "stratified_by": "task"},
        "inter_rater": _inter_rater(bench_map),
    }
    if baseline is not None:
        baseline_name = baseline[0].model_name if baseline else "baseline"
        report["baseline"] = {"model_name": baseline_name, "coverage": coverage(baseline)}
        report["bonferroni"] = _apply_bonferroni(models, family_alpha)
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def _fmt(x, std=None) -> str:
    if x is None:
        return "n/a"
    s = f"{x:.3f}"
    if std is not None:
        s += f" ± {std:.3f}"
    return s


def render_markdown(report: dict) -> str:
    """Plain markdown tables: task-wise F1, kappa, safe/unsafe metrics, significance."""
    tasks = report["tasks"]
    models = report["models"]
    lines = ["## Task-wise macro F1", ""]
    lines.append("| Model | " + " | ".join(tasks) + " | Overall |")
    lines.append("|---" * (len(tasks) + 2) + "|")
    for m in sorted(models):
        sec = models[m]
        cells = [_fmt(sec["per_task"].get(t, {}).get("macro_f1"), sec["per_task"].get(t, {}).get("macro_f1_std")) for t in tasks]
        ov = sec.get("overall") or {}
        cells.append(_fmt(ov.get("macro_f1"), ov.get("macro_f1_std")))
        lines.append(f"| {m} | " + " | ".join(cells) + " |")
    ir = report.get("inter_rater")
    if ir:
        cells = [_fmt(ir["per_task"].get(t)) for t in tasks] + [_fmt(ir["overall"])]
        lines.append("| Inter-rater alpha | " + " | ".join(cells) + " |")

    lines += ["", "## Weighted kappa (linear)", ""]
    lines.append("| Model | " + " | ".join(tasks) + " | Overall |")
    lines.append("|---" * (len(tasks) + 2) + "|")
    for m in sorted(models):
        sec = models[m]
        cells = [_fmt(sec["per_task"].get(t, {}).get("kappa")) for t in tasks]
        cells.append(_fmt((sec.get("overall") or {}).get("kappa")))
        lines.append(f"| {m} | " + " | ".join(cells) + " |")

    lines += ["", "## Safe/unsafe classification", ""]
    lines.append("| Model | Sensitivity | Specificity | F1 Score | Accuracy | Coverage |")
    lines.append("|---|---|---|---|---|---|")
    for m in sorted(models):
        b = models[m].get("binary") or {}
        cov = models[m]["coverage"]["overall"]["fraction"]
        cells = [_fmt(b.get(k), b.get(f"{k}_std")) for k in ("sensitivity", "specificity", "f1", "accuracy")]
        lines.append(f"| {m} | " + " | ".join(cells) + f" | {_fmt(cov)} |")
    if ir:
        lines.append(f"| Inter-rater alpha (binary) | {_fmt(ir['binary'])} | | | | |")

    if "bonferroni" in report:
        lines += ["", f"## McNemar vs {report['baseline']['model_name']}", ""]
        lines.append("| Model | Test | b | c | p | Significant |")
        lines.append("|---|---|---|---|---|---|")
        for m in sorted(models):
            mc = models[m]["mcnemar"]
            rows = [("four_class", mc["four_class"]), ("binary", mc["binary"])]
            rows += sorted(mc["per_level"].items())
            for name, t in rows:
                lines.append(f"| {m} | {name} | {t['b']} | {t['c']} | {t['p']:.4g} | {'yes' if t.get('significant') else 'no'} |")
        bf = report["bonferroni"]
        lines.append("")
        lines.append(
            f"Bonferroni family alpha {bf['family_alpha']}: per-level family size "
            f"{bf['per_level_family']['size']}, overall family size {bf['overall_family']['size']}."
        )
    return "\n".join(lines) + "\n"
