"""Weakly labelled synthetic videos with planted evidence shots.

Positive bags mix evidence shots with background shots; negative bags are
background plus an optional share of evidence-like shots.  Features are
clipped Gaussians around one of two mean vectors per view, so separability
is set by ``class_separation`` (distance between the means) and
``noise_sigma``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import Dataset, ShotInstance, VideoBag, save_dataset, write_jsonl


@dataclass(frozen=True)
class SynthSpec:
    n_pos_bags: int = 10
    n_neg_bags: int = 50
    shots_per_bag: tuple[int, int] = (20, 20)
    feature_dim: int = 20
    evidence_rate: float = 0.3
    contamination_rate: float = 0.05
    class_separation: float = 0.5
    noise_sigma: float = 0.1
    rng_seed: int = 0
    event_id: str = "SYN"
    bag_prefix: str = "v"

    def __post_init__(self):
        lo, hi = self.shots_per_bag
        if self.n_pos_bags < 0 or self.n_neg_bags < 0 or self.n_pos_bags + self.n_neg_bags == 0:
            raise ValueError("need at least one bag")
        if not 1 <= lo <= hi:
            raise ValueError("shots_per_bag must satisfy 1 <= lo <= hi")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if not 0 < self.evidence_rate <= 1:
            raise ValueError("evidence_rate must be in (0, 1]; positive bags need evidence")
        if not 0 <= self.contamination_rate <= 1:
            raise ValueError("contamination_rate must be in [0, 1]")
        if self.class_separation < 0 or self.noise_sigma < 0:
            raise ValueError("class_separation and noise_sigma must be >= 0")


@dataclass
class SynthData:
    spec: SynthSpec
    views: list[Dataset]
    truth: dict[str, np.ndarray]  # per-shot 1 = drawn from the evidence distribution
    means: list[tuple[np.ndarray, np.ndarray]] = field(repr=False, default_factory=list)

    @property
    def dataset(self) -> Dataset:
        return self.views[0]

    def annotation_records(self) -> list[dict]:
        """One perfect single-track annotation per positive bag."""
        out = []
        for bag in self.dataset.bags:
            if bag.event_label > 0:
                marks = self.truth[bag.bag_id]
                track = [{"t": [s.t_start, s.t_end], "s": 1.0}
                         for s, m in zip(bag.shots, marks) if m]
                out.append({"bag_id": bag.bag_id, "tracks": [track]})
        return out

    def annotations(self) -> dict[str, list[tuple[float, float, float]]]:
        from .core import average_tracks
        return {
            r["bag_id"]: average_tracks([[(seg["t"][0], seg["t"][1], seg["s"]) for seg in tr]
                                         for tr in r["tracks"]])
            for r in self.annotation_records()
        }

    def truth_records(self) -> list[dict]:
        return [{"bag_id": b.bag_id, "bag_label": b.event_label,
                 "evidence": [int(m) for m in self.truth[b.bag_id]]}
                for b in self.dataset.bags]

    def write(self, out_dir: str | Path, prefix: str = "") -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths: dict[str, Path] = {}
        for k, view in enumerate(self.views):
            name = f"{prefix}data.jsonl" if len(self.views) == 1 else f"{prefix}data.view{k}.jsonl"
            paths[f"data{k}"] = out_dir / name
            save_dataset(view, paths[f"data{k}"])
        paths["annotations"] = out_dir / f"{prefix}annotations.jsonl"
        write_jsonl(self.annotation_records(), paths["annotations"])
        paths["truth"] = out_dir / f"{prefix}truth.jsonl"
        write_jsonl(self.truth_records(), paths["truth"])
        paths["spec"] = out_dir / f"{prefix}spec.json"
        paths["spec"].write_text(json.dumps(asdict(self.spec), sort_keys=True) + "\n")
        return paths


def _view_means(rng: np.random.Generator, dim: int, separation: float):
    n_informative = max(1, dim // 4)
    direction = np.zeros(dim)
    direction[rng.choice(dim, n_informative, replace=False)] = 1.0 / np.sqrt(n_informative)
    background = rng.uniform(0.1, 0.4, dim)
    return background, np.clip(background + separation * direction, 0.0, 1.0)


def _layout(rng: np.random.Generator, spec: SynthSpec, n_pos: int, n_neg: int, prefix: str):
    lo, hi = spec.shots_per_bag
    n_bags = n_pos + n_neg
    width = len(str(max(n_bags - 1, 0)))
    layout = []
    for k in range(n_bags):
        positive = k < n_pos
        n = int(rng.integers(lo, hi + 1))
        durations = np.round(rng.uniform(1.0, 4.0, n), 3)
        ends = np.round(np.cumsum(durations), 3)
        starts = np.concatenate([[0.0], ends[:-1]])
        marks = np.zeros(n, dtype=int)
        if positive:
            n_ev = max(1, int(round(spec.evidence_rate * n)))
        else:
            n_ev = int(round(spec.contamination_rate * n))
        if n_ev:
            marks[rng.choice(n, n_ev, replace=False)] = 1
        layout.append((f"{prefix}{k:0{width}d}", 1 if positive else -1, starts, ends, marks))
    return layout


def _draw(spec: SynthSpec, layout, means, stream: int) -> SynthData:
    views = []
    for view, (mu_bg, mu_ev) in enumerate(means):
        rng = np.random.default_rng([spec.rng_seed, stream, view + 1])
        bags = []
        for bag_id, label, starts, ends, marks in layout:
            centers = np.where(marks[:, None] > 0, mu_ev, mu_bg)
            feats = np.clip(centers + spec.noise_sigma * rng.standard_normal(centers.shape), 0.0, 1.0)
            feats = np.round(feats, 6)
            shots = tuple(ShotInstance(bag_id, i, float(starts[i]), float(ends[i]),
                                       tuple(float(x) for x in feats[i]))
                          for i in range(len(marks)))
            bags.append(VideoBag(bag_id, label, shots))
        views.append(Dataset(tuple(bags), spec.event_id))
    truth = {bag_id: marks for bag_id, _, _, _, marks in layout}
    return SynthData(spec, views, truth, list(means))


def _means(spec: SynthSpec, n_views: int):
    rng = np.random.default_rng([spec.rng_seed, 0])
    return [_view_means(rng, spec.feature_dim, spec.class_separation) for _ in range(n_views)]


def generate(spec: SynthSpec, n_views: int = 1) -> SynthData:
    """Draw bags, planted evidence and ``n_views`` independent feature views.

    Bag structure (shot counts, timing, which shots are evidence) is shared
    by all views; each view has its own class means and noise draws.
    """
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    layout = _layout(np.random.default_rng([spec.rng_seed, 1]), spec,
                     spec.n_pos_bags, spec.n_neg_bags, spec.bag_prefix)
    return _draw(spec, layout, _means(spec, n_views), stream=1)


def generate_split(spec: SynthSpec, n_test_pos: int, n_test_neg: int,
                   n_views: int = 1) -> tuple[SynthData, SynthData]:
    """Training data as :func:`generate` plus held-out bags from the same distributions."""
    train = generate(spec, n_views)
    if n_test_pos < 1 or n_test_neg < 0:
        raise ValueError("held-out split needs at least one positive bag")
    layout = _layout(np.random.default_rng([spec.rng_seed, 2]), spec,
                     n_test_pos, n_test_neg, "t" + spec.bag_prefix)
    return train, _draw(spec, layout, train.means, stream=2)
