"""From per-shot decisions to temporal evidence regions and their scores.

Overlap metrics are measured in seconds: ``o`` is the length of the
intersection of predicted and ground-truth regions, ``p`` and ``g`` their
individual lengths.  PctOverlap is ``o / (p + g - o)`` and F1 is
``2o / (p + g)``.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import LinearModel, ParseError, Segments, VideoBag
from .intervals import Span, intersection_length, is_normalized, normalize, total_length

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegionSet:
    bag_id: str
    regions: tuple[Span, ...] = ()

    def __post_init__(self):
        if not is_normalized(self.regions):
            raise ValueError(f"{self.bag_id}: regions must be sorted, disjoint and non-empty")

    @classmethod
    def from_spans(cls, bag_id: str, spans: Iterable[Span]) -> "RegionSet":
        return cls(bag_id, tuple(normalize(spans)))

    @property
    def total_length(self) -> float:
        return total_length(self.regions)


@dataclass(frozen=True)
class ScoredShots:
    bag_id: str
    scores: tuple[float, ...]

    def __post_init__(self):
        if any(not 0.0 <= s <= 1.0 for s in self.scores):
            raise ValueError(f"{self.bag_id}: scores must lie in [0, 1]")


# --------------------------------------------------------------------------
# calibration


def logistic(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def calibrate(model: LinearModel, decisions) -> np.ndarray:
    """Map decision values to confidences with ``sigmoid(slope * f)``.

    Any positive slope keeps ``f = 0`` at 0.5, so thresholding the
    confidence at 0.5 is the same as thresholding the decision at 0.
    """
    cal = model.calibration or {}
    if cal.get("kind", "logistic") != "logistic":
        raise ValueError(f"unknown calibration kind {cal.get('kind')!r}")
    slope = float(cal.get("slope", 1.0))
    if not slope > 0:
        raise ValueError("calibration slope must be positive")
    return logistic(slope * np.asarray(decisions, dtype=float))


def fit_logistic_slope(decisions, labels, max_iter: int = 100) -> float:
    """Platt-style fit of ``P(y=+1|f) = sigmoid(a f)`` with the intercept pinned at 0.

    Uses Platt's smoothed targets and Newton steps on the log-likelihood.
    """
    f = np.asarray(decisions, dtype=float)
    pos = np.asarray(labels) > 0
    n_pos, n_neg = pos.sum(), (~pos).sum()
    t = np.where(pos, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    a = 1.0
    for _ in range(max_iter):
        p = logistic(a * f)
        grad = np.sum((p - t) * f)
        hess = np.sum(p * (1 - p) * f * f) + 1e-12
        step = grad / hess
        a_new = a - step
        if a_new <= 0:
            a_new = a / 2
        if abs(a_new - a) <= 1e-10 * max(1.0, a):
            a = a_new
            break
        a = a_new
    return float(a)


def predict_bag(model: LinearModel, bag: VideoBag) -> ScoredShots:
    X = np.array([s.features for s in bag.shots], dtype=float)
    return ScoredShots(bag.bag_id, tuple(float(s) for s in calibrate(model, X @ model.w + model.b)))


# --------------------------------------------------------------------------
# regions


def regions_from_scores(shots: ScoredShots, bag: VideoBag, threshold: float = 0.5) -> RegionSet:
    """Union of the shots scoring strictly above ``threshold``."""
    if shots.bag_id != bag.bag_id or len(shots.scores) != len(bag.shots):
        raise ValueError(f"scores for {shots.bag_id!r} do not align with bag {bag.bag_id!r}")
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    return RegionSet.from_spans(
        bag.bag_id, (span for span, s in zip(bag.spans, shots.scores) if s > threshold)
    )


def regions_from_annotation(segments: Segments, gt_threshold: float = 0.5,
                            bag_id: str = "") -> RegionSet:
    """Spans where the averaged annotation reaches ``gt_threshold`` (inclusive)."""
    if not 0 < gt_threshold <= 1:
        raise ValueError("gt_threshold must be in (0, 1]")
    return RegionSet.from_spans(bag_id, ((a, b) for a, b, s in segments if s >= gt_threshold))


# --------------------------------------------------------------------------
# metrics


def _lengths(p: RegionSet, g: RegionSet) -> tuple[float, float, float]:
    return intersection_length(p.regions, g.regions), p.total_length, g.total_length


def pct_overlap(p: RegionSet, g: RegionSet) -> float:
    o, lp, lg = _lengths(p, g)
    if lp == 0 and lg == 0:
        return 1.0
    if lp == 0 or lg == 0:
        return 0.0
    return o / (lp + lg - o)


def f1_score(p: RegionSet, g: RegionSet) -> float:
    o, lp, lg = _lengths(p, g)
    if lp == 0 and lg == 0:
        return 1.0
    if lp == 0 or lg == 0:
        return 0.0
    return 2.0 * o / (lp + lg)


# --------------------------------------------------------------------------
# fusion


def late_fusion(score_lists: Sequence[ScoredShots], weights: Sequence[float] | None = None) -> ScoredShots:
    """Per-shot weighted mean of calibrated confidences."""
    if not score_lists:
        raise ValueError("nothing to fuse")
    bag_id = score_lists[0].bag_id
    n = len(score_lists[0].scores)
    for s in score_lists:
        if s.bag_id != bag_id or len(s.scores) != n:
            raise ValueError(f"score lists for {bag_id!r} are not aligned")
    w = np.ones(len(score_lists)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(score_lists),):
        raise ValueError("one weight per score list required")
    if (w < 0).any() or not w.sum() > 0:
        raise ValueError("weights must be >= 0 and not all zero")
    S = np.array([s.scores for s in score_lists], dtype=float)
    fused = np.clip(w @ S / w.sum(), 0.0, 1.0)
    return ScoredShots(bag_id, tuple(float(x) for x in fused))


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EventScore:
    pct_overlap: float
    f1: float
    per_bag: dict[str, tuple[float, float]] = field(default_factory=dict)


@dataclass
class EvalReport:
    events: dict[str, EventScore]
    predicted: dict[str, dict[str, RegionSet]] = field(default_factory=dict, repr=False)
    ground_truth: dict[str, RegionSet] = field(default_factory=dict, repr=False)

    @property
    def pct_overlap(self) -> float:
        return float(np.mean([e.pct_overlap for e in self.events.values()])) if self.events else float("nan")

    @property
    def f1(self) -> float:
        return float(np.mean([e.f1 for e in self.events.values()])) if self.events else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["event_id", "pct_overlap", "f1"])
        for event_id, score in self.events.items():
            writer.writerow([event_id, f"{score.pct_overlap:.6f}", f"{score.f1:.6f}"])
        writer.writerow(["average", f"{self.pct_overlap:.6f}", f"{self.f1:.6f}"])
        return buf.getvalue()


def evaluate(predictions: Mapping[str, Mapping[str, RegionSet]],
             annotations: Mapping[str, Segments], gt_threshold: float = 0.5) -> EvalReport:
    """Score predicted regions against averaged annotations.

    ``predictions`` maps event id to ``{bag_id: RegionSet}``.  Only bags with
    an annotation count; each event's score is the mean over its bags and
    the report's average is the mean over events.
    """
    gt = {bag_id: regions_from_annotation(seg, gt_threshold, bag_id)
          for bag_id, seg in annotations.items()}
    events: dict[str, EventScore] = {}
    for event_id, bags in predictions.items():
        per_bag = {bag_id: (pct_overlap(p, gt[bag_id]), f1_score(p, gt[bag_id]))
                   for bag_id, p in bags.items() if bag_id in gt}
        if not per_bag:
            logger.warning("event %s has no annotated bags; omitted", event_id)
            continue
        vals = np.array(list(per_bag.values()))
        events[event_id] = EventScore(float(vals[:, 0].mean()), float(vals[:, 1].mean()), per_bag)
    return EvalReport(events, {k: dict(v) for k, v in predictions.items()}, gt)


def read_report(text: str) -> dict[str, tuple[float, float]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["event_id", "pct_overlap", "f1"]:
        raise ParseError("not an evaluation report")
    return {r[0]: (float(r[1]), float(r[2])) for r in rows[1:]}
