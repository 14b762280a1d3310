import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence

import numpy as np
from scipy import stats

from bdlab.util.conll import SpanSet


@dataclass
class F1Result:
    """Exact-match span counts and the derived micro-averaged scores.

    Precision and recall are 0 when undefined. F1 is 1 when there is nothing to
    find and nothing was predicted (tp = fp = fn = 0), and 0 when precision and
    recall are both 0 otherwise.

    """

    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp > 0 else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn > 0 else 0.0

    @property
    def f1(self) -> float:
        if self.tp == self.fp == self.fn == 0:
            return 1.0
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def __add__(self, other: "F1Result") -> "F1Result":
        return F1Result(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> Dict[str, float]:
        result = asdict(self)
        result.update(precision=self.precision, recall=self.recall, f1=self.f1)
        return result


def micro_f1(gold: Sequence[SpanSet], pred: Sequence[SpanSet]) -> F1Result:
    """Micro-averaged exact span matching over sentence-aligned span sets."""
    if len(gold) != len(pred):
        raise ValueError(
            "gold and predicted span lists differ in length ({} vs {})".format(
                len(gold), len(pred)
            )
        )
    tp = fp = fn = 0
    for gold_spans, pred_spans in zip(gold, pred):
        gold_spans, pred_spans = set(gold_spans), set(pred_spans)
        tp += len(gold_spans & pred_spans)
        fp += len(pred_spans - gold_spans)
        fn += len(gold_spans - pred_spans)
    return F1Result(tp, fp, fn)


@dataclass
class SeedAggregate:
    values: List[float]
    mean: float
    #: half-width of the 95% t-interval of the mean
    ci_halfwidth: float
    std: float

    def to_dict(self):
        return asdict(self)

    def __str__(self):
        return "{:.4f} ± {:.4f}".format(self.mean, self.ci_halfwidth)


def aggregate(values: Sequence[float], confidence: float = 0.95) -> SeedAggregate:
    """Mean and t-based confidence half-width t(q, n-1) * sd / sqrt(n)."""
    values = [float(v) for v in values]
    n = len(values)
    if n < 2:
        raise ValueError("need at least two values to aggregate, found {}".format(n))
    array = np.asarray(values, dtype=np.float64)
    mean = float(array.mean())
    std = 0.0 if np.all(array == array[0]) else float(array.std(ddof=1))
    t = float(stats.t.ppf(0.5 + confidence / 2, n - 1))
    return SeedAggregate(values, mean, t * std / math.sqrt(n), std)
