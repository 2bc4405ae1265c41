"""
Grading outputs and combining validators
========================================

Two simulated validators grade the same outputs. Their verdicts carry a risk
level and the derived safe/unsafe label; an ensemble merges them under either
the mean-risk threshold or the majority-safety rule.
"""

import itertools

from clinval.gateway import Gateway, MockBackend, ModelEndpoint
from clinval.prompting import BUILTIN_TASKS
from clinval.simulate import make_validator
from clinval.validation import (
    MAJORITY_SAFETY,
    MEAN_RISK_THRESHOLD,
    AnnotatedExample,
    EnsemblePolicy,
    combine_levels,
    coverage,
    ensemble,
    validate_batch,
)

gw = Gateway(sleep=lambda s: None)
gw.register_mock("strict", MockBackend(responder=make_validator(default_offset=1, clean_offset=1)))
gw.register_mock("lenient", MockBackend(responder=make_validator()))
# A backend that never returns parseable text: its verdicts come back invalid.
gw.register_mock("broken", MockBackend(script=["I am not following the format."]))

bench = [
    AnnotatedExample(f"ex{i}", "query2question", f"Patient question {i}", f"[sim:level-{lvl}] summary {i}")
    for i, lvl in enumerate([1, 2, 3, 4, 2, 3])
]

verdicts = {}
for name in ("strict", "lenient", "broken"):
    ep = ModelEndpoint(name, f"mock://{name}", f"{name}-model")
    verdicts[name] = validate_batch(gw, ep, bench, BUILTIN_TASKS, parallelism=3)
    print(name, coverage(verdicts[name]))

for v in verdicts["strict"]:
    print(v.example_id, v.risk_level.label, v.safety.value, len(v.assessment.errors), "errors")

for mode in (MEAN_RISK_THRESHOLD, MAJORITY_SAFETY):
    merged = ensemble({k: verdicts[k] for k in ("strict", "lenient")}, EnsemblePolicy(mode))
    print(mode, [(v.risk_level.label, v.safety.value) for v in merged])

# Any invalid member makes the ensemble verdict invalid for that example.
print(coverage(ensemble({k: verdicts[k] for k in ("strict", "broken")})))

# Where the two rules disagree for two validators.
for pair in itertools.product(range(1, 5), repeat=2):
    a = combine_levels(pair, EnsemblePolicy(MEAN_RISK_THRESHOLD))[1]
    b = combine_levels(pair, EnsemblePolicy(MAJORITY_SAFETY))[1]
    if a is not b:
        print(pair, "mean:", a.value, "majority:", b.value)
