"""
Agreement with physician labels
===============================

Synthetic physician labels and two synthetic validators, scored with the
statistics battery: per-task macro F1, linear-weighted kappa, safe/unsafe
metrics, bootstrap spread, a paired McNemar test and inter-rater alpha.
"""

import numpy as np

from clinval import stats
from clinval.prompting import ValidatorAssessment
from clinval.report import build_report, render_markdown
from clinval.stats import LabeledPairSet
from clinval.taxonomy import RiskLevel
from clinval.validation import AnnotatedExample, ValidationVerdict

rng = np.random.default_rng(0)
tasks = ["report2impression", "query2question", "dialogue2note"]
n = 90

truth = rng.integers(1, 5, n)
second_reader = np.clip(truth + rng.choice([-1, 0, 0, 0, 1], n), 1, 4)
bench = [
    AnnotatedExample(
        f"e{i:03d}", tasks[i % 3], f"input {i}", f"output {i}", None, RiskLevel(int(truth[i])), (),
        (RiskLevel(int(truth[i])), RiskLevel(int(second_reader[i]))),
    )
    for i in range(n)
]


def model(name, p_correct):
    guess = np.where(rng.random(n) < p_correct, truth, rng.integers(1, 5, n))
    return [
        ValidationVerdict(e.example_id, name, ValidatorAssessment("", (), RiskLevel(int(g))), e.task_id)
        for e, g in zip(bench, guess)
    ]


base, tuned = model("base", 0.4), model("tuned", 0.8)

# The same numbers by hand for one model.
ps = LabeledPairSet(
    [v.example_id for v in tuned], [v.task_id for v in tuned],
    [int(v.risk_level) for v in tuned], truth,
)
per_task, overall = stats.macro_f1(ps)
print("macro F1 per task:", {t: round(v, 3) for t, v in per_task.items()}, "overall", round(overall, 3))
print("weighted kappa:", round(stats.weighted_kappa(ps), 3))
print("binary:", stats.binary_metrics(ps))
print("bootstrap std of overall F1:", round(stats.bootstrap_std(ps, stats.overall_macro_f1, 500, seed=1), 4))
b_ok = np.array([int(v.risk_level) for v in base]) == truth
c_ok = np.array([int(v.risk_level) for v in tuned]) == truth
print("McNemar base vs tuned:", stats.mcnemar(b_ok, c_ok))

report = build_report({"tuned": tuned}, bench, base, n_resamples=300, seed=1)
print(render_markdown(report))
