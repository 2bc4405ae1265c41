"""
Curating validator training data offline
========================================

A simulated generator writes a clean and a deliberately degraded output for
each input; a simulated teacher grades both. Pairs where the teacher's grades
agree with the injected degradation survive the consistency filter and become
chat-format SFT examples.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from clinval.curation import FilterConfig, Sample, consistency_score, curate, emit_sft_dataset
from clinval.gateway import Gateway, MockBackend, ModelEndpoint
from clinval.prompting import BUILTIN_TASKS
from clinval.simulate import make_validator, simulated_generator
from clinval.taxonomy import GRID

# The score on the 4-point grid: clean graded 0, corrupt graded one step off.
print("one step off :", round(consistency_score(0, 1, 2 / 3).normalized, 4))
print("two steps off:", round(consistency_score(0, 1 / 3, 1).normalized, 4))

# Full table for a perfectly clean grade: rows = injected level, cols = corrupt grade.
table = np.array([[consistency_score(0, k, d).normalized for k in GRID] for d in GRID])
print(np.round(table, 3))

# Offline endpoints. The teacher is off by one level on inputs tagged <<one>>
# and off by two on inputs tagged <<two>>.
gw = Gateway(sleep=lambda s: None)
gw.register_mock("gen", MockBackend(responder=simulated_generator))
gw.register_mock("teacher", MockBackend(responder=make_validator({"<<one>>": 1, "<<two>>": 2})))
generator = ModelEndpoint("gen", "mock://gen", "sim-generator")
teacher = ModelEndpoint("teacher", "mock://teacher", "sim-teacher")

samples = []
for kind, n in (("exact", 5), ("one", 3), ("two", 2)):
    for i in range(n):
        samples.append(Sample(f"{kind}-{i}", "report2impression", f"<<{kind}>> FINDINGS: case {i}, small nodule."))

result = curate(samples, BUILTIN_TASKS, gw, generator, teacher, FilterConfig(tau=0.9, seed=0))
print(result.stats())
for r in result.records:
    print(f"{r.sample_id:8s} delta={r.delta.delta:.2f} graded={r.corrupt_assessment.delta_hat.delta:.2f} "
          f"score={r.score.normalized:.4f} kept={r.passes(0.9)}")

# Two SFT lines per retained pair: clean first, then corrupt.
out = Path(tempfile.mkdtemp()) / "sft_train.jsonl"
emit_sft_dataset(result.train_set, out, BUILTIN_TASKS)
first = json.loads(out.read_text().splitlines()[0])
print(out, "lines:", len(out.read_text().splitlines()))
print(first["messages"][-1]["content"])
