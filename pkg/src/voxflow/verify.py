"""Continuous and categorical forecast verification per lead time.

Scores are micro-averaged: contingency counts and error sums are pooled
across samples first, then turned into metrics, which keeps empty-event
samples from destabilizing the averages. Volumetric fields are collapsed to
their column maximum before scoring. Degenerate denominators yield NaN
sentinels that aggregation simply skips.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NoOverlapError
from .grid import RainField, Space, cmax_field


@dataclass
class ContingencyTable:
    hits: int = 0
    misses: int = 0
    false_alarms: int = 0
    correct_negatives: int = 0
    threshold: float = 0.0
    lead: int = 0

    def __post_init__(self):
        for name in ("hits", "misses", "false_alarms", "correct_negatives"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.hits + self.misses + self.false_alarms + self.correct_negatives

    def merged(self, other: "ContingencyTable") -> "ContingencyTable":
        if (other.threshold, other.lead) != (self.threshold, self.lead):
            raise ValueError("can only merge tables of the same threshold and lead")
        return ContingencyTable(
            hits=self.hits + other.hits,
            misses=self.misses + other.misses,
            false_alarms=self.false_alarms + other.false_alarms,
            correct_negatives=self.correct_negatives + other.correct_negatives,
            threshold=self.threshold, lead=self.lead)


def _joint(pred: RainField, obs: RainField):
    if pred.space is not Space.MMH or obs.space is not Space.MMH:
        raise ValueError("verification operates on mm/h fields")
    if pred.data.shape != obs.data.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.data.shape} vs obs {obs.data.shape}")
    valid = pred.mask & obs.mask
    return pred.data[valid], obs.data[valid]


def continuous_metrics(pred: RainField, obs: RainField) -> tuple[float, float, float]:
    """(mean error, mean absolute error, mean squared error) over jointly
    valid cells."""
    p, o = _joint(pred, obs)
    if p.size == 0:
        raise NoOverlapError("no jointly valid cells")
    d = p - o
    return float(d.mean()), float(np.abs(d).mean()), float((d * d).mean())


def contingency(pred: RainField, obs: RainField, threshold: float,
                lead: int = 0) -> ContingencyTable:
    """Binarize both fields at value >= threshold and count the four
    categories over jointly valid cells."""
    p, o = _joint(pred, obs)
    py = p >= threshold
    oy = o >= threshold
    return ContingencyTable(
        hits=int(np.count_nonzero(py & oy)),
        misses=int(np.count_nonzero(~py & oy)),
        false_alarms=int(np.count_nonzero(py & ~oy)),
        correct_negatives=int(np.count_nonzero(~py & ~oy)),
        threshold=threshold, lead=lead)


def precision_recall_ets(t: ContingencyTable) -> tuple[float, float, float]:
    """Precision, recall, and the Equitable Threat Score.

    ETS corrects the hit count for hits expected by random chance:
    hits_rand = (h+fa)(h+m)/N, ets = (h - hits_rand)/(h + m + fa - hits_rand).
    Degenerate denominators return NaN (undefined-as-missing).
    """
    h, m, fa = t.hits, t.misses, t.false_alarms
    n = t.total
    precision = h / (h + fa) if (h + fa) > 0 else float("nan")
    recall = h / (h + m) if (h + m) > 0 else float("nan")
    if n == 0:
        return precision, recall, float("nan")
    hits_rand = (h + fa) * (h + m) / n
    denom = h + m + fa - hits_rand
    ets = (h - hits_rand) / denom if abs(denom) > 1e-12 else float("nan")
    return precision, recall, ets


@dataclass
class _LeadAccumulator:
    err_sum: float = 0.0
    abs_sum: float = 0.0
    sq_sum: float = 0.0
    count: int = 0


@dataclass
class VerificationReport:
    """Micro-averaged scores per lead time and per (lead, threshold)."""

    leads: list[int]
    thresholds: list[float]
    samples: int
    _continuous: dict[int, _LeadAccumulator] = field(default_factory=dict)
    tables: dict[tuple[int, float], ContingencyTable] = field(default_factory=dict)

    def continuous(self, lead: int) -> tuple[float, float, float]:
        acc = self._continuous[lead]
        if acc.count == 0:
            raise NoOverlapError(f"no valid cells accumulated at lead {lead}")
        return (acc.err_sum / acc.count, acc.abs_sum / acc.count,
                acc.sq_sum / acc.count)

    def categorical(self, lead: int, threshold: float) -> tuple[float, float, float]:
        return precision_recall_ets(self.tables[(lead, threshold)])


def _as_cmax_mmh(f: RainField) -> RainField:
    return cmax_field(f) if f.nz > 1 else f


def verify_nowcast(
    model_outputs: Sequence,
    observations: Sequence,
    thresholds: Sequence[float] = (1.0, 5.0, 10.0),
) -> VerificationReport:
    """Score forecasts against observations, independently per lead time.

    Accepts one sample (a sequence of per-lead RainFields for forecast and
    observation alike) or many (a sequence of such sequences). Volumetric
    fields are collapsed to their column maximum prior to evaluation.
    """
    if len(model_outputs) == 0:
        raise ValueError("no forecasts given")
    if isinstance(model_outputs[0], RainField):
        model_outputs = [model_outputs]
        observations = [observations]
    if len(model_outputs) != len(observations):
        raise ValueError("forecast and observation sample counts differ")
    n_leads = len(model_outputs[0])
    leads = list(range(1, n_leads + 1))
    thresholds = [float(t) for t in thresholds]
    report = VerificationReport(leads=leads, thresholds=thresholds,
                                samples=len(model_outputs))
    for lead in leads:
        report._continuous[lead] = _LeadAccumulator()
        for thr in thresholds:
            report.tables[(lead, thr)] = ContingencyTable(threshold=thr, lead=lead)

    for preds, obss in zip(model_outputs, observations):
        if len(preds) != n_leads or len(obss) != n_leads:
            raise ValueError("every sample must cover the same lead times")
        for i, lead in enumerate(leads):
            pred = _as_cmax_mmh(preds[i])
            obs = _as_cmax_mmh(obss[i])
            p, o = _joint(pred, obs)
            acc = report._continuous[lead]
            d = p - o
            acc.err_sum += float(d.sum())
            acc.abs_sum += float(np.abs(d).sum())
            acc.sq_sum += float((d * d).sum())
            acc.count += int(d.size)
            for thr in thresholds:
                tbl = contingency(pred, obs, thr, lead=lead)
                report.tables[(lead, thr)] = report.tables[(lead, thr)].merged(tbl)
    return report
