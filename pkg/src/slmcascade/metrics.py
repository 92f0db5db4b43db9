"""Accuracy and calibration metrics over (confidence, correctness) records."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .parser import ParsedResponse

DEFAULT_BINS = 10


@dataclass(frozen=True)
class PredictionRecord:
    confidence: Optional[float]
    correct: bool

    def __post_init__(self):
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence!r} outside [0, 1]")


@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    count: int
    mean_confidence: Optional[float]
    accuracy: Optional[float]


@dataclass
class CalibrationReport:
    pass1: float
    ece: Optional[float]
    auroc: Optional[float]
    confidence_output_ratio: Optional[float]
    n_records: int
    n_with_confidence: int
    bins: list[CalibrationBin] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "pass1": self.pass1,
            "ece": self.ece,
            "auroc": self.auroc,
            "confidence_output_ratio": self.confidence_output_ratio,
            "n_records": self.n_records,
            "n_with_confidence": self.n_with_confidence,
            "bins": [vars(b) for b in self.bins],
        }


def _scored(records: Iterable[PredictionRecord]) -> tuple[np.ndarray, np.ndarray]:
    kept = [r for r in records if r.confidence is not None]
    conf = np.array([r.confidence for r in kept], dtype=float)
    correct = np.array([r.correct for r in kept], dtype=bool)
    return conf, correct


def bin_index(confidence: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-width bins, left-closed; the last bin also takes 1.0."""
    return np.minimum((np.asarray(confidence) * n_bins).astype(int), n_bins - 1)


def reliability_bins(records: Sequence[PredictionRecord], n_bins: int = DEFAULT_BINS) -> list[CalibrationBin]:
    if n_bins < 1:
        raise ValueError("need at least one bin")
    conf, correct = _scored(records)
    idx = bin_index(conf, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    hit_sum = np.bincount(idx, weights=correct.astype(float), minlength=n_bins)
    bins = []
    for m in range(n_bins):
        n = int(counts[m])
        bins.append(CalibrationBin(
            lower=m / n_bins,
            upper=(m + 1) / n_bins,
            count=n,
            mean_confidence=float(conf_sum[m] / n) if n else None,
            accuracy=float(hit_sum[m] / n) if n else None,
        ))
    return bins


def ece(records: Sequence[PredictionRecord], n_bins: int = DEFAULT_BINS) -> tuple[float, list[CalibrationBin]]:
    """Expected calibration error and the bins it was computed from.

    Records without a confidence are ignored. Raises ValueError if nothing
    is left to bin.
    """
    bins = reliability_bins(records, n_bins)
    total = sum(b.count for b in bins)
    if total == 0:
        raise ValueError("ECE needs at least one record with a confidence")
    gap = sum(b.count / total * abs(b.accuracy - b.mean_confidence) for b in bins if b.count)
    return float(gap), bins


def auroc(records: Sequence[PredictionRecord]) -> Optional[float]:
    """Probability a correct answer outranks an incorrect one, ties at half
    credit. None when only one class is present."""
    conf, correct = _scored(records)
    if conf.size == 0:
        raise ValueError("AUROC needs at least one record with a confidence")
    n_pos = int(correct.sum())
    n_neg = correct.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(conf, method="average")
    u = ranks[correct].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pass_at_1(records: Sequence[PredictionRecord]) -> float:
    if not records:
        raise ValueError("pass@1 of an empty record set")
    return sum(bool(r.correct) for r in records) / len(records)


def confidence_output_ratio(parsed: Sequence[ParsedResponse]) -> float:
    """Fraction of responses carrying a confidence macro."""
    if not parsed:
        raise ValueError("confidence output ratio of an empty response set")
    return sum(p.has_confidence_macro for p in parsed) / len(parsed)


def calibration_report(
    records: Sequence[PredictionRecord],
    n_bins: int = DEFAULT_BINS,
    parsed: Optional[Sequence[ParsedResponse]] = None,
    macro_flags: Optional[Sequence[bool]] = None,
) -> CalibrationReport:
    """Bundle every SLM-side metric.

    The confidence output ratio comes from ``parsed`` (or precomputed
    ``macro_flags``); without either it is left as None.
    """
    if not records:
        raise ValueError("calibration report of an empty record set")
    scored = [r for r in records if r.confidence is not None]
    if scored:
        ece_value, bins = ece(scored, n_bins)
        auc = auroc(scored)
    else:
        ece_value, bins, auc = None, reliability_bins([], n_bins), None
    if parsed is not None:
        ratio = confidence_output_ratio(parsed)
    elif macro_flags is not None:
        ratio = sum(map(bool, macro_flags)) / len(macro_flags) if macro_flags else None
    else:
        ratio = None
    return CalibrationReport(
        pass1=pass_at_1(records),
        ece=ece_value,
        auroc=auc,
        confidence_output_ratio=ratio,
        n_records=len(records),
        n_with_confidence=len(scored),
        bins=bins,
    )
