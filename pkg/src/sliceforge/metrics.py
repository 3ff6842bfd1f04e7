"""Confusion-matrix statistics and per-slice time-series export."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import PREDICTED_KINDS, SliceKind
from .errors import EmptyInputError, ValidationError

log = logging.getLogger(__name__)

_INDEX = {k: i for i, k in enumerate(PREDICTED_KINDS)}


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed by (true slice, predicted slice) in eMBB, mMTC, URLLC order."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __getitem__(self, key: tuple[SliceKind, SliceKind]) -> int:
        true, pred = key
        return int(self.counts[_INDEX[true], _INDEX[pred]])


def confusion(pairs: Iterable[tuple[SliceKind, SliceKind]]) -> ConfusionMatrix:
    counts = np.zeros((len(PREDICTED_KINDS), len(PREDICTED_KINDS)), dtype=np.int64)
    for true, pred in pairs:
        try:
            counts[_INDEX[true], _INDEX[pred]] += 1
        except KeyError:
            raise ValidationError(f"pair ({true}, {pred}) names a slice outside {[k.value for k in PREDICTED_KINDS]}") from None
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class ClassStats:
    precision: float
    recall: float
    f_score: float
    support: int


class Averaging(str, Enum):
    MACRO = "macro"
    MICRO = "micro"


@dataclass(frozen=True)
class MetricsReport:
    """Percentages in [0, 100]."""

    accuracy: float
    recall: float
    precision: float
    f_score: float
    per_class: dict[SliceKind, ClassStats]
    averaging: Averaging
    matrix: ConfusionMatrix

    def as_dict(self) -> dict:
        return {
            "averaging": self.averaging.value,
            "accuracy": round(self.accuracy, 2),
            "recall": round(self.recall, 2),
            "precision": round(self.precision, 2),
            "f_score": round(self.f_score, 2),
            "per_class": {
                k.value: {
                    "precision": round(s.precision, 2),
                    "recall": round(s.recall, 2),
                    "f_score": round(s.f_score, 2),
                    "support": s.support,
                }
                for k, s in self.per_class.items()
            },
            "confusion": {
                "order": [k.value for k in PREDICTED_KINDS],
                "counts": self.matrix.counts.tolist(),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def format_table(self) -> str:
        lines = [
            f"{'':<12}{'Accuracy':>10}{'Recall':>10}{'Precision':>11}{'F score':>10}",
            f"{'Output (%)':<12}{self.accuracy:>10.2f}{self.recall:>10.2f}{self.precision:>11.2f}{self.f_score:>10.2f}",
            "",
            f"{'class':<8}{'precision':>11}{'recall':>9}{'F':>9}{'support':>9}",
        ]
        for k, s in self.per_class.items():
            lines.append(f"{k.value:<8}{s.precision:>11.2f}{s.recall:>9.2f}{s.f_score:>9.2f}{s.support:>9d}")
        lines += ["", "confusion (rows = true, columns = predicted)"]
        lines.append(" " * 8 + "".join(f"{k.value:>8}" for k in PREDICTED_KINDS))
        for k, row in zip(PREDICTED_KINDS, self.matrix.counts):
            lines.append(f"{k.value:<8}" + "".join(f"{int(v):>8d}" for v in row))
        return "\n".join(lines)


def _ratio(num: float, den: float, what: str) -> float:
    if den == 0:
        log.warning("%s undefined (zero denominator); reporting 0", what)
        return 0.0
    return num / den


def metrics(m: ConfusionMatrix, averaging: Averaging | str = Averaging.MACRO) -> MetricsReport:
    """Accuracy plus averaged recall, precision and F score, all in percent.

    Per-class precision is diag / column sum and recall diag / row sum (0
    when the class is never predicted / never present). Macro averaging
    takes the unweighted mean of the per-class values, F included; micro
    pools the counts, which collapses all three onto accuracy.
    """
    averaging = Averaging(averaging)
    total = m.total
    if total == 0:
        raise EmptyInputError("metrics need at least one (true, predicted) pair")
    c = m.counts.astype(np.float64)
    diag = np.diag(c)
    rows = c.sum(axis=1)
    cols = c.sum(axis=0)
    per_class: dict[SliceKind, ClassStats] = {}
    for i, k in enumerate(PREDICTED_KINDS):
        p = _ratio(diag[i], cols[i], f"precision of {k.value}")
        r = _ratio(diag[i], rows[i], f"recall of {k.value}")
        f = _ratio(2 * p * r, p + r, f"F score of {k.value}")
        per_class[k] = ClassStats(100 * p, 100 * r, 100 * f, int(rows[i]))
    accuracy = 100 * float(diag.sum()) / total
    if averaging is Averaging.MACRO:
        n = len(PREDICTED_KINDS)
        recall = sum(s.recall for s in per_class.values()) / n
        precision = sum(s.precision for s in per_class.values()) / n
        f_score = sum(s.f_score for s in per_class.values()) / n
    else:
        recall = precision = f_score = accuracy
    return MetricsReport(accuracy, recall, precision, f_score, per_class, averaging, m)


class SeriesKind(str, Enum):
    ACTIVE_USERS = "active-users"
    UTILIZATION = "utilization"
    COUNTERS = "counters"


def export_series(result, kind: SeriesKind | str, path: str | Path, skip_warmup_hours: float = 1.0) -> int:
    """Write one per-slice time series as CSV; returns the number of data rows.

    ``result`` is a SimulationResult or a sequence of SampleRow. Rows before
    ``skip_warmup_hours`` are left out. Columns: ``time_s`` then one column
    per slice (eMBB, mMTC, URLLC, Master), or one per counter for
    ``counters``.
    """
    from .sim import COUNTER_NAMES

    kind = SeriesKind(kind)
    samples: Sequence = getattr(result, "samples", result)
    if not samples:
        raise EmptyInputError("simulation result has no samples to export")
    cutoff = skip_warmup_hours * 3600.0
    rows = [s for s in samples if s.time >= cutoff]
    kinds = tuple(SliceKind)
    if kind is SeriesKind.COUNTERS:
        header = ["time_s", *COUNTER_NAMES]
    else:
        header = ["time_s", *(k.value for k in kinds)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for s in rows:
            if kind is SeriesKind.ACTIVE_USERS:
                values = [s.active[k] for k in kinds]
            elif kind is SeriesKind.UTILIZATION:
                values = [repr(s.utilization[k]) for k in kinds]
            else:
                values = [s.counters[n] for n in COUNTER_NAMES]
            w.writerow([repr(s.time), *values])
    return len(rows)
