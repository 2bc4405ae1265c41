"""Agreement statistics for four-level risk grades.

Undefined quantities (zero denominators) come back as ``None``. The one
exception is per-class F1, which is 0 for a class that never occurs; use
:func:`class_represented` to tell the two cases apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as _sps

from .taxonomy import RiskLevel

LEVELS = (1, 2, 3, 4)
EXACT_MCNEMAR_LIMIT = 25


@dataclass(frozen=True)
class LabeledPair:
    example_id: str
    task_id: str
    predicted: RiskLevel
    reference: RiskLevel


class LabeledPairSet:
    """Column store of (id, task, predicted, reference) rows.

    Metric functions accept either this or any sequence of
    :class:`LabeledPair`.
    """

    def __init__(self, ids: Sequence[str], tasks: Sequence[str], predicted, reference):
        self.ids = np.asarray(ids, dtype=object)
        self.tasks = np.asarray(tasks, dtype=object)
        self.predicted = np.asarray(predicted, dtype=np.int64)
        self.reference = np.asarray(reference, dtype=np.int64)
        n = len(self.ids)
        if not (len(self.tasks) == len(self.predicted) == len(self.reference) == n):
            raise ValueError("columns must have equal length")
        bad = ~np.isin(np.concatenate([self.predicted, self.reference]), LEVELS)
        if bad.any():
            raise ValueError("risk levels must be in 1..4")

    @classmethod
    def from_pairs(cls, pairs: Iterable[LabeledPair]) -> "LabeledPairSet":
        pairs = list(pairs)
        ids = [p.example_id for p in pairs]
        if len(set(ids)) != len(ids):
            raise ValueError("example ids must be unique")
        return cls(ids, [p.task_id for p in pairs], [int(p.predicted) for p in pairs], [int(p.reference) for p in pairs])

    @classmethod
    def from_labels(cls, predicted: Sequence[int], reference: Sequence[int], task_id: str = "all") -> "LabeledPairSet":
        n = len(predicted)
        return cls([str(i) for i in range(n)], [task_id] * n, predicted, reference)

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, idx) -> "LabeledPairSet":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledPairSet(self.ids[idx], self.tasks[idx], self.predicted[idx], self.reference[idx])

    def by_task(self) -> dict[str, "LabeledPairSet"]:
        return {t: self.take(np.flatnonzero(self.tasks == t)) for t in sorted(set(self.tasks.tolist()))}

    def concat(self, other: "LabeledPairSet") -> "LabeledPairSet":
        return LabeledPairSet(
            np.concatenate([self.ids, other.ids]),
            np.concatenate([self.tasks, other.tasks]),
            np.concatenate([self.predicted, other.predicted]),
            np.concatenate([self.reference, other.reference]),
        )


def as_pairset(pairs) -> LabeledPairSet:
    if isinstance(pairs, LabeledPairSet):
        return pairs
    return LabeledPairSet.from_pairs(pairs)


def _nonempty(pairs) -> LabeledPairSet:
    ps = as_pairset(pairs)
    if len(ps) == 0:
        raise ValueError("metric needs at least one pair")
    return ps


def confusion_matrix(pairs) -> np.ndarray:
    """4x4 counts, rows = predicted level, columns = reference level."""
    ps = as_pairset(pairs)
    m = np.zeros((4, 4), dtype=np.int64)
    np.add.at(m, (ps.predicted - 1, ps.reference - 1), 1)
    return m


def _f1(tp: int, fp: int, fn: int) -> float:
    # Reduce first so scaling all counts by k gives a bit-identical score.
    g = math.gcd(tp, fp, fn) or 1
    tp, fp, fn = tp // g, fp // g, fn // g
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def per_class_f1(pairs, cls: RiskLevel | int) -> float:
    ps = _nonempty(pairs)
    c = int(cls)
    pred, ref = ps.predicted == c, ps.reference == c
    tp = int(np.sum(pred & ref))
    return _f1(tp, int(np.sum(pred)) - tp, int(np.sum(ref)) - tp)


def class_represented(pairs, cls: RiskLevel | int) -> bool:
    ps = as_pairset(pairs)
    c = int(cls)
    return bool(np.any(ps.predicted == c) or np.any(ps.reference == c))


def f1_by_class(pairs) -> dict[int, float | None]:
    """Per-class F1; ``None`` for classes absent from both predictions and references."""
    ps = _nonempty(pairs)
    return {c: per_class_f1(ps, c) if class_represented(ps, c) else None for c in LEVELS}


def task_macro_f1(pairs) -> float:
    """Unweighted mean of per-class F1 over the classes that occur in the slice."""
    vals = [v for v in f1_by_class(pairs).values() if v is not None]
    return float(np.mean(vals))


def macro_f1(groups) -> tuple[dict[str, float], float]:
    """Per-task macro F1 and their unweighted mean, so every task counts equally.

    ``groups`` is a mapping task -> pairs, or a single pair set that is split
    by its task column.
    """
    if not isinstance(groups, Mapping):
        groups = as_pairset(groups).by_task()
    if not groups:
        raise ValueError("need at least one task group")
    per_task = {t: task_macro_f1(p) for t, p in groups.items()}
    return per_task, float(np.mean(list(per_task.values())))


def overall_macro_f1(pairs) -> float:
    return macro_f1(pairs)[1]


def weight_matrix(kind: str = "linear") -> np.ndarray:
    i, j = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    if kind == "linear":
        return np.abs(i - j) / 3.0
    if kind == "quadratic":
        return (i - j) ** 2 / 9.0
    if kind == "unweighted":
        return (i != j).astype(float)
    raise ValueError(f"unknown weighting {kind!r}")


def weighted_kappa(pairs, weights: str = "linear") -> float | None:
    """Cohen's kappa with disagreement weights (linear by default)."""
    ps = _nonempty(pairs)
    obs = confusion_matrix(ps) / len(ps)
    exp = np.outer(obs.sum(axis=1), obs.sum(axis=0))
    w = weight_matrix(weights)
    chance = float(np.sum(w * exp))
    if chance == 0.0:
        return None
    return 1.0 - float(np.sum(w * obs)) / chance


def _ordinal_distance(values: np.ndarray, marginals: np.ndarray) -> np.ndarray:
    k = len(values)
    cum = np.concatenate([[0.0], np.cumsum(marginals)])
    d = np.zeros((k, k))
    for a in range(k):
        for b in range(a, k):
            s = cum[b + 1] - cum[a] - (marginals[a] + marginals[b]) / 2.0
            d[a, b] = d[b, a] = s * s
    return d


def coincidence_matrix(ratings: Sequence[Sequence[object]]) -> tuple[np.ndarray, np.ndarray]:
    """Coincidences over pairable values. Returns (values, matrix)."""
    units = [[float(r) for r in row if r is not None] for row in ratings]
    units = [u for u in units if len(u) >= 2]
    if not units:
        raise ValueError("need at least one item rated by two or more raters")
    values = np.array(sorted({v for u in units for v in u}))
    index = {v: i for i, v in enumerate(values)}
    o = np.zeros((len(values), len(values)))
    for u in units:
        counts = np.zeros(len(values))
        for v in u:
            counts[index[v]] += 1
        o += (np.outer(counts, counts) - np.diag(counts)) / (len(u) - 1)
    return values, o


def krippendorff_alpha(ratings: Sequence[Sequence[object]], metric: str = "ordinal") -> float | None:
    """Krippendorff's alpha for an items x raters grid; ``None`` entries are missing.

    Items with fewer than two ratings carry no pairable values and are ignored.
    When all pairable values are identical the result is 1.0.
    """
    values, o = coincidence_matrix(ratings)
    n_c = o.sum(axis=1)
    n = n_c.sum()
    if metric == "ordinal":
        d = _ordinal_distance(values, n_c)
    elif metric == "interval":
        d = np.subtract.outer(values, values) ** 2
    elif metric == "nominal":
        d = 1.0 - np.eye(len(values))
    else:
        raise ValueError(f"unknown metric {metric!r}")
    d_obs = float(np.sum(o * d)) / n
    d_exp = float(np.sum(np.outer(n_c, n_c) * d)) / (n * (n - 1))
    if d_exp == 0.0:
        # Every pairable value identical: no disagreement to explain.
        return 1.0 if d_obs == 0.0 else None
    return 1.0 - d_obs / d_exp


@dataclass(frozen=True)
class McNemarResult:
    p: float
    b: int
    c: int
    method: str
    statistic: float | None = None

    def to_dict(self) -> dict:
        return {"p": self.p, "b": self.b, "c": self.c, "method": self.method, "statistic": self.statistic}


def mcnemar(baseline_correct: Sequence[bool], candidate_correct: Sequence[bool]) -> McNemarResult:
    """Paired test on discordant counts.

    ``b`` counts examples only the baseline gets right, ``c`` those only the
    candidate gets right. Exact two-sided binomial below 25 discordant pairs,
    continuity-corrected chi-square otherwise.
    """
    base = np.asarray(baseline_correct, dtype=bool)
    cand = np.asarray(candidate_correct, dtype=bool)
    if base.shape != cand.shape:
        raise ValueError("correctness vectors must be paired (equal length)")
    b = int(np.sum(base & ~cand))
    c = int(np.sum(~base & cand))
    n = b + c
    if n == 0:
        return McNemarResult(1.0, 0, 0, "none")
    if n < EXACT_MCNEMAR_LIMIT:
        k = min(b, c)
        tail = sum(math.comb(n, i) for i in range(k + 1))
        return McNemarResult(min(1.0, 2 * tail / 2**n), b, c, "exact")
    stat = (abs(b - c) - 1) ** 2 / n
    return McNemarResult(float(_sps.chi2.sf(stat, 1)), b, c, "chi2", stat)


def bonferroni(pvalues: Sequence[float], family_alpha: float = 0.05) -> list[tuple[float, bool]]:
    if not pvalues:
        raise ValueError("no p-values")
    cut = family_alpha / len(pvalues)
    return [(float(p), bool(p < cut)) for p in pvalues]


@dataclass(frozen=True)
class BinaryMetrics:
    sensitivity: float | None
    specificity: float | None
    f1: float | None
    accuracy: float
    tp: int
    fn: int
    fp: int
    tn: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _ratio(a: int, b: int) -> float | None:
    return None if b == 0 else a / b


def binary_metrics(pairs) -> BinaryMetrics:
    """Safe/unsafe metrics with unsafe (levels 3-4) as the positive class."""
    ps = _nonempty(pairs)
    pred, ref = ps.predicted >= 3, ps.reference >= 3
    tp = int(np.sum(pred & ref))
    fn = int(np.sum(~pred & ref))
    fp = int(np.sum(pred & ~ref))
    tn = int(np.sum(~pred & ~ref))
    return BinaryMetrics(
        _ratio(tp, tp + fn),
        _ratio(tn, tn + fp),
        _ratio(2 * tp, 2 * tp + fp + fn),
        (tp + tn) / len(ps),
        tp, fn, fp, tn,
    )


def accuracy(pairs) -> float:
    ps = _nonempty(pairs)
    return float(np.mean(ps.predicted == ps.reference))


def bootstrap_std(
    pairs,
    metric_fn: Callable[[LabeledPairSet], float | None],
    n_resamples: int = 1000,
    seed: int = 0,
    stratify: bool = True,
) -> float | None:
    """Standard deviation of ``metric_fn`` over with-replacement resamples.

    Resampling is done per task when ``stratify`` is set. Each resample gets
    its own RNG stream spawned from ``seed``. Resamples on which the metric is
    undefined are dropped.
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    ps = _nonempty(pairs)
    if stratify:
        strata = [np.flatnonzero(ps.tasks == t) for t in sorted(set(ps.tasks.tolist()))]
    else:
        strata = [np.arange(len(ps))]
    streams = np.random.SeedSequence(seed).spawn(n_resamples)
    values = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        idx = np.concatenate([s[rng.integers(0, len(s), len(s))] for s in strata])
        v = metric_fn(ps.take(idx))
        if v is not None:
            values.append(v)
    if len(values) < 2:
        return None
    return float(np.std(values, ddof=1))


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("need two equal-length sequences of at least two values")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    return float(dx @ dy) / math.sqrt(sxx * syy)
