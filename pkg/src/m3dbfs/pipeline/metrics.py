"""Binary classification metrics and their mean ± std aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

METRIC_NAMES = ("ACC", "SEN", "SPE", "F1", "AUC")


@dataclass
class Metrics:
    acc: float
    sen: float
    spe: float
    f1: float
    auc: float
    undefined: tuple = field(default=())

    def as_dict(self) -> dict:
        return dict(zip(METRIC_NAMES, (self.acc, self.sen, self.spe, self.f1, self.auc)))


def _ratio(num, den):
    return num / den if den else math.nan


def auc_score(y_true, scores) -> float:
    """ROC-AUC as the Mann-Whitney statistic with midranks for ties; NaN for one class."""
    y = np.asarray(y_true, dtype=int)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(s, method="average")
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def confusion_metrics(y_true, y_pred, scores) -> Metrics:
    """Metrics from hard predictions plus class-1 scores. Undefined ratios are NaN and listed."""
    y = np.asarray(y_true, dtype=int)
    p = np.asarray(y_pred, dtype=int)
    if len(y) == 0:
        raise ValueError("cannot compute metrics on an empty set")
    tp = int(np.sum((y == 1) & (p == 1)))
    tn = int(np.sum((y == 0) & (p == 0)))
    fp = int(np.sum((y == 0) & (p == 1)))
    fn = int(np.sum((y == 1) & (p == 0)))
    m = Metrics(
        acc=(tp + tn) / len(y),
        sen=_ratio(tp, tp + fn),
        spe=_ratio(tn, tn + fp),
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        auc=auc_score(y, scores),
    )
    m.undefined = tuple(k for k, v in m.as_dict().items() if math.isnan(v))
    return m


def aggregate(runs) -> dict:
    """Mean and population std of each metric over runs, ignoring undefined entries."""
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([r.as_dict()[name] for r in runs], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        out[name] = (float(vals.mean()), float(vals.std())) if vals.size else (math.nan, math.nan)
    return out


def metrics_tsv(summary: dict) -> str:
    lines = ["metric\tmean\tstd"]
    for name in METRIC_NAMES:
        mean, std = summary[name]
        lines.append(f"{name}\t{mean:.6f}\t{std:.6f}")
    return "\n".join(lines) + "\n"


def table_row(summary: dict, label: str = "m3dbfs") -> str:
    """One results-table line: label, then each metric in percent as ``mean ± std`` to two decimals."""
    cells = [f"{100 * summary[n][0]:.2f} ± {100 * summary[n][1]:.2f}" for n in METRIC_NAMES]
    return "\t".join([label] + cells)
