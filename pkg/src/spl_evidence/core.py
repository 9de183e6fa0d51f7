"""Bag/instance data model, run configuration and on-disk formats.

Dataset JSONL holds one video (bag) per line::

    {"bag_id": "v1", "labels": {"E227": 1}, "shots": [{"t": [0.0, 2.5], "x": [0.1, ...]}]}

Bags missing the requested event in ``labels`` are treated as background
(label -1).  Annotation JSONL holds one or more annotator tracks per bag::

    {"bag_id": "v1", "tracks": [[{"t": [2.0, 5.0], "s": 1.0}], []]}
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# (start, end, averaged score); score > 0, spans sorted and disjoint
Segments = list[tuple[float, float, float]]


class DataError(ValueError):
    """Input data could not be used."""


class ParseError(DataError):
    pass


class ValidationError(DataError):
    pass


@dataclass(frozen=True)
class ShotInstance:
    bag_id: str
    shot_index: int
    t_start: float
    t_end: float
    features: tuple[float, ...]

    def __post_init__(self):
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)):
            raise ValidationError(f"{self.bag_id}[{self.shot_index}]: non-finite time")
        if not self.t_end > self.t_start:
            raise ValidationError(
                f"{self.bag_id}[{self.shot_index}]: t_end {self.t_end} <= t_start {self.t_start}"
            )
        for value in self.features:
            if not (0.0 <= value <= 1.0):
                raise ValidationError(
                    f"{self.bag_id}[{self.shot_index}]: feature value {value} outside [0, 1]"
                )


@dataclass(frozen=True)
class VideoBag:
    bag_id: str
    event_label: int
    shots: tuple[ShotInstance, ...]

    def __post_init__(self):
        if self.event_label not in (-1, 1):
            raise ValidationError(f"{self.bag_id}: event label must be -1 or +1")
        if not self.shots:
            raise ValidationError(f"{self.bag_id}: bag has no shots")
        for k, shot in enumerate(self.shots):
            if shot.bag_id != self.bag_id or shot.shot_index != k:
                raise ValidationError(f"{self.bag_id}: shot {k} has inconsistent identity")
            if k and shot.t_start < self.shots[k - 1].t_end:
                raise ValidationError(
                    f"{self.bag_id}: shot {k} overlaps or precedes shot {k - 1}"
                )

    @property
    def spans(self) -> list[tuple[float, float]]:
        return [(s.t_start, s.t_end) for s in self.shots]


@dataclass(frozen=True)
class Dataset:
    bags: tuple[VideoBag, ...]
    event_id: str = ""

    def __post_init__(self):
        if not self.bags:
            raise ValidationError("no bags")
        seen: set[str] = set()
        dim = len(self.bags[0].shots[0].features)
        for bag in self.bags:
            if bag.bag_id in seen:
                raise ValidationError(f"duplicate bag_id {bag.bag_id!r}")
            seen.add(bag.bag_id)
            for shot in bag.shots:
                if len(shot.features) != dim:
                    raise ValidationError(
                        f"{bag.bag_id}[{shot.shot_index}]: feature length "
                        f"{len(shot.features)} != {dim}"
                    )

    @property
    def feature_dim(self) -> int:
        return len(self.bags[0].shots[0].features)

    @property
    def total_instances(self) -> int:
        return sum(len(b.shots) for b in self.bags)

    @cached_property
    def X(self) -> np.ndarray:
        """Instance feature matrix, shape (N, c), bags concatenated in order."""
        return np.array([s.features for b in self.bags for s in b.shots], dtype=float)

    @cached_property
    def bag_index(self) -> np.ndarray:
        """Position of each instance's parent bag in ``bags``."""
        return np.repeat(np.arange(len(self.bags)), [len(b.shots) for b in self.bags])

    @cached_property
    def instance_bag_labels(self) -> np.ndarray:
        return np.array([b.event_label for b in self.bags], dtype=int)[self.bag_index]

    @cached_property
    def bag_slices(self) -> list[slice]:
        out, start = [], 0
        for b in self.bags:
            out.append(slice(start, start + len(b.shots)))
            start += len(b.shots)
        return out

    def bag(self, bag_id: str) -> VideoBag:
        for b in self.bags:
            if b.bag_id == bag_id:
                return b
        raise KeyError(bag_id)


@dataclass
class SplState:
    y: np.ndarray
    v: np.ndarray
    lam: float
    iteration: int = 0
    objective_trace: list[float] = field(default_factory=list)

    def copy(self) -> "SplState":
        return SplState(self.y.copy(), self.v.copy(), self.lam, self.iteration,
                        list(self.objective_trace))


DEFAULT_CALIBRATION = {"kind": "logistic", "slope": 1.0}


@dataclass
class LinearModel:
    w: np.ndarray
    b: float
    calibration: dict = field(default_factory=lambda: dict(DEFAULT_CALIBRATION))
    config_digest: str = ""
    # solver bookkeeping, not serialized
    degenerate: bool = False
    stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "w": [float(x) for x in self.w],
            "b": float(self.b),
            "calibration": dict(self.calibration),
            "config_digest": self.config_digest,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LinearModel":
        try:
            return cls(
                w=np.asarray(d["w"], dtype=float),
                b=float(d["b"]),
                calibration=dict(d.get("calibration") or DEFAULT_CALIBRATION),
                config_digest=str(d.get("config_digest", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed model: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "LinearModel":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class SplConfig:
    max_iter: int = 50
    delta_lambda: float = 0.02
    c_plus: float = 0.5
    c_minus: float = 0.01
    lambda0: float | None = None  # explicit starting pace; None -> percentile mode
    lambda0_percentile: float = 10.0
    prediction_threshold: float = 0.5
    gt_threshold: float = 0.5
    enforce_positive_bag: bool = True
    allow_negative_bag_flips: bool = True
    rng_seed: int = 0
    svm_tol: float = 1e-6
    svm_max_passes: int = 1000

    def __post_init__(self):
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if not self.delta_lambda > 0:
            raise ValueError("delta_lambda must be > 0")
        if not (self.c_plus > 0 and self.c_minus > 0):
            raise ValueError("c_plus and c_minus must be > 0")
        if self.lambda0 is not None and not self.lambda0 > 0:
            raise ValueError("lambda0 must be > 0")
        if not 0 <= self.lambda0_percentile <= 100:
            raise ValueError("lambda0_percentile must be in [0, 100]")
        if not 0 < self.prediction_threshold < 1:
            raise ValueError("prediction_threshold must be in (0, 1)")
        if not 0 < self.gt_threshold <= 1:
            raise ValueError("gt_threshold must be in (0, 1]")
        if not self.svm_tol > 0:
            raise ValueError("svm_tol must be > 0")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# dataset IO


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise ParseError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, record


def bag_from_record(record: Mapping[str, Any], event_id: str) -> VideoBag:
    bag_id = str(record["bag_id"])
    labels = record.get("labels") or {}
    label = int(labels.get(event_id, -1))
    shots = []
    for k, shot in enumerate(record["shots"]):
        t0, t1 = shot["t"]
        shots.append(ShotInstance(bag_id, k, float(t0), float(t1),
                                  tuple(float(x) for x in shot["x"])))
    return VideoBag(bag_id, label, tuple(shots))


def load_dataset(path: str | Path, event_id: str) -> Dataset:
    """Read a dataset JSONL file with one-vs-rest labels for ``event_id``."""
    bags = []
    for lineno, record in _iter_jsonl(path):
        try:
            bags.append(bag_from_record(record, event_id))
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: malformed record ({exc!r})") from exc
    if not bags:
        raise ValidationError(f"{path}: no bags")
    return Dataset(tuple(bags), event_id)


def dataset_records(dataset: Dataset) -> Iterator[dict]:
    for bag in dataset.bags:
        yield {
            "bag_id": bag.bag_id,
            "labels": {dataset.event_id: bag.event_label},
            "shots": [{"t": [s.t_start, s.t_end], "x": list(s.features)} for s in bag.shots],
        }


def write_jsonl(records: Iterable[Mapping], path: str | Path) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    write_jsonl(dataset_records(dataset), path)


# --------------------------------------------------------------------------
# annotations


def average_tracks(tracks: Sequence[Sequence[tuple[float, float, float]]]) -> Segments:
    """Pointwise mean of annotator step functions.

    Each track is a list of ``(start, end, score)``; time not covered by a
    track counts as score 0 for that track.  Returns the nonzero pieces of
    the averaged step function, with equal-valued neighbours merged.
    """
    if not tracks:
        return []
    cuts = sorted({t for track in tracks for a, b, _ in track for t in (a, b)})
    out: Segments = []
    for a, b in zip(cuts, cuts[1:]):
        mid = 0.5 * (a + b)
        total = 0.0
        for track in tracks:
            for ta, tb, s in track:
                if ta <= mid < tb:
                    total += s
                    break
        value = total / len(tracks)
        if value <= 0:
            continue
        if out and out[-1][1] == a and out[-1][2] == value:
            out[-1] = (out[-1][0], b, value)
        else:
            out.append((a, b, value))
    return out


def _parse_track(raw: Any, where: str) -> list[tuple[float, float, float]]:
    track = []
    for seg in raw:
        a, b = (float(t) for t in seg["t"])
        s = float(seg.get("s", 1.0))
        if not b > a:
            raise ValidationError(f"{where}: interval [{a}, {b}) has non-positive length")
        if not 0.0 <= s <= 1.0:
            raise ValidationError(f"{where}: score {s} outside [0, 1]")
        track.append((a, b, s))
    track.sort()
    for (a0, b0, _), (a1, _, _) in zip(track, track[1:]):
        if a1 < b0:
            raise ValidationError(f"{where}: overlapping intervals within one track")
    return track


def load_annotations(*paths: str | Path, dataset: Dataset | None = None) -> dict[str, Segments]:
    """Read annotation JSONL file(s) and average all tracks per bag.

    Tracks for the same bag are pooled across lines and files, so a set of
    per-annotator files averages the same way as one file with several
    tracks per record.  When ``dataset`` is given, intervals are checked
    against each video's time span and unknown bag ids are logged.
    """
    pooled: dict[str, list] = {}
    for path in paths:
        for lineno, record in _iter_jsonl(path):
            where = f"{path}:{lineno}"
            try:
                bag_id = str(record["bag_id"])
                tracks = [_parse_track(t, where) for t in record["tracks"]]
            except ValidationError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{where}: malformed record ({exc!r})") from exc
            pooled.setdefault(bag_id, []).extend(tracks)

    spans = {b.bag_id: (b.shots[0].t_start, b.shots[-1].t_end) for b in dataset.bags} if dataset else {}
    out: dict[str, Segments] = {}
    for bag_id, tracks in pooled.items():
        if dataset is not None:
            if bag_id not in spans:
                logger.warning("annotation for unknown bag %r", bag_id)
            else:
                lo, hi = spans[bag_id]
                for track in tracks:
                    for a, b, _ in track:
                        if a < lo or b > hi:
                            raise ValidationError(
                                f"{bag_id}: annotation [{a}, {b}) outside video span [{lo}, {hi})"
                            )
        out[bag_id] = average_tracks(tracks)
    return out

