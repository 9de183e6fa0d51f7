"""Command-line front end: ``train``, ``eval``, ``fuse`` and ``synth``.

Exit codes are 0 on success, 1 for data errors (unreadable or malformed
inputs) and 2 for usage or configuration errors.  Settings resolve as
built-in defaults, then a TOML file given by ``--config``, then explicit
flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .core import (
    DataError,
    Dataset,
    LinearModel,
    ParseError,
    ShotInstance,
    SplConfig,
    ValidationError,
    VideoBag,
    load_annotations,
    load_dataset,
)
from .recount import (
    RegionSet,
    ScoredShots,
    calibrate,
    evaluate,
    fit_logistic_slope,
    late_fusion,
    regions_from_scores,
)
from .spl import basic_mil_fit, spl_fit
from .synth import SynthSpec, generate, generate_split

logger = logging.getLogger("spl_evidence")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2
TOP_K = 5


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration


SPL_FLAGS = {
    "max_iter": "max_iter",
    "delta_lambda": "delta_lambda",
    "c_plus": "c_plus",
    "c_minus": "c_minus",
    "lambda0": "lambda0",
    "lambda0_percentile": "lambda0_percentile",
    "threshold": "prediction_threshold",
    "gt_threshold": "gt_threshold",
    "enforce_positive_bag": "enforce_positive_bag",
    "allow_negative_flips": "allow_negative_bag_flips",
    "seed": "rng_seed",
    "svm_tol": "svm_tol",
}

SYNTH_FLAGS = {
    "pos": "n_pos_bags",
    "neg": "n_neg_bags",
    "dim": "feature_dim",
    "evidence_rate": "evidence_rate",
    "contamination": "contamination_rate",
    "separation": "class_separation",
    "noise": "noise_sigma",
    "seed": "rng_seed",
    "event": "event_id",
}


def read_config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _table_overrides(table: dict[str, Any], valid: set[str], aliases: dict[str, str], where: str) -> dict:
    out = {}
    for key, value in table.items():
        if isinstance(value, dict):
            continue
        name = key.replace("-", "_")
        name = aliases.get(name, name)
        if name not in valid:
            raise UsageError(f"{where}: unknown key {key!r}")
        out[name] = value
    return out


def _flag_overrides(args: argparse.Namespace, mapping: dict[str, str]) -> dict:
    return {field: getattr(args, flag) for flag, field in mapping.items()
            if getattr(args, flag, None) is not None}


def build_spl_config(args: argparse.Namespace) -> SplConfig:
    file_cfg = read_config_file(getattr(args, "config", None))
    valid = {f.name for f in fields(SplConfig)}
    values = _table_overrides(file_cfg, valid, SPL_FLAGS, "config")
    values.update(_flag_overrides(args, SPL_FLAGS))
    try:
        return SplConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def build_synth_spec(args: argparse.Namespace) -> SynthSpec:
    file_cfg = read_config_file(args.config).get("synth", {})
    valid = {f.name for f in fields(SynthSpec)}
    values = _table_overrides(file_cfg, valid, SYNTH_FLAGS, "config [synth]")
    values.update(_flag_overrides(args, SYNTH_FLAGS))
    if args.shots is not None:
        lo, hi = (args.shots * 2)[:2]
        values["shots_per_bag"] = (lo, hi)
    elif "shots_per_bag" in values:
        shots = values["shots_per_bag"]
        values["shots_per_bag"] = (shots, shots) if isinstance(shots, int) else tuple(shots)
    try:
        return SynthSpec(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid synthetic spec: {exc}") from exc


# --------------------------------------------------------------------------
# helpers


def _require_file(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} not found: {p}")
    return p


def discover_events(path: Path) -> list[str]:
    events: set[str] = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc.msg}") from exc
            labels = record.get("labels") if isinstance(record, dict) else None
            if isinstance(labels, dict):
                events.update(str(k) for k in labels)
    if not events:
        raise ValidationError(f"{path}: no event labels found")
    return sorted(events)


def _decisions(model: LinearModel, dataset: Dataset) -> np.ndarray:
    if model.w.shape != (dataset.feature_dim,):
        raise ValidationError(
            f"model expects {model.w.shape[0]} features, data has {dataset.feature_dim}")
    return dataset.X @ model.w + model.b


def _train_event(data: str, event: str, config: SplConfig, baseline: str, calibration: str):
    dataset = load_dataset(data, event)
    run = basic_mil_fit(dataset, config) if baseline == "mil" else spl_fit(dataset, config)
    model = run.model
    if calibration == "platt":
        slope = fit_logistic_slope(dataset.X @ model.w + model.b, run.state.y)
        model.calibration = {"kind": "logistic", "slope": slope}
    last = run.history[-1] if run.history else None
    summary = (f"{event}: iterations={len(run.history)} "
               f"selected={last.n_selected if last else int(run.state.v.sum())}/{dataset.total_instances} "
               f"positive_labels={int((run.state.y > 0).sum())}")
    return event, json.dumps(model.to_dict(), sort_keys=True) + "\n", run.history_csv(), summary


# --------------------------------------------------------------------------
# subcommands


def cmd_train(args: argparse.Namespace) -> int:
    config = build_spl_config(args)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    data = _require_file(args.data, "dataset")
    events = args.events or discover_events(data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(str(data), e, config, args.baseline, args.calibration) for e in events]
    if args.jobs == 1 or len(jobs) == 1:
        results = [_train_event(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_train_event, *zip(*jobs)))
    for event, model_json, history_csv, summary in results:
        (out / f"{event}.model.json").write_text(model_json)
        (out / f"{event}.history.csv").write_text(history_csv)
        print(summary)
    return EXIT_OK


def _fusion_weights(args: argparse.Namespace, n_models: int) -> list[float] | None:
    if args.weights is not None:
        if len(args.weights) != n_models:
            raise UsageError(f"--weights needs {n_models} values")
        return list(args.weights)
    if args.fuse == "weighted":
        raise UsageError("--fuse weighted requires --weights")
    return None


def _dump_record(event: str, bag, scored: ScoredShots, regions: RegionSet, top) -> dict:
    shots = []
    for k, (span, score) in enumerate(zip(bag.spans, scored.scores)):
        item = {"t": list(span), "score": score}
        if top is not None and k in top:
            item["top"] = top[k]
        shots.append(item)
    return {"bag_id": bag.bag_id, "event": event, "shots": shots,
            "regions": [list(r) for r in regions.regions]}


def _top_features(model: LinearModel, bag, scores, threshold: float) -> dict[int, list[int]]:
    out = {}
    for k, (shot, score) in enumerate(zip(bag.shots, scores)):
        if score > threshold:
            contrib = np.asarray(shot.features) * model.w
            out[k] = [int(j) for j in np.argsort(-contrib, kind="stable")[:TOP_K]]
    return out


def _write_lines(records, path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _emit_report(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_eval(args: argparse.Namespace) -> int:
    config = build_spl_config(args)
    model_dirs = [Path(m) for m in args.models]
    if len(args.data) not in (1, len(model_dirs)):
        raise UsageError("give one --data file, or one per model directory")
    weights = _fusion_weights(args, len(model_dirs))
    data_paths = [_require_file(d, "dataset") for d in args.data]
    if len(data_paths) == 1:
        data_paths = data_paths * len(model_dirs)
    ann_paths = [_require_file(a, "annotation file") for a in args.annotations]
    for d in model_dirs:
        if not d.is_dir():
            raise DataError(f"model directory not found: {d}")
    events = args.events or sorted(p.name[: -len(".model.json")]
                                   for p in model_dirs[0].glob("*.model.json"))
    if not events:
        raise DataError(f"no models found in {model_dirs[0]}")

    annotations = load_annotations(*ann_paths)
    predictions: dict[str, dict[str, RegionSet]] = {}
    dump = []
    for event in events:
        views = [load_dataset(p, event) for p in data_paths]
        models = [LinearModel.load(_require_file(d / f"{event}.model.json", "model"))
                  for d in model_dirs]
        for view in views[1:]:
            if [b.spans for b in view.bags] != [b.spans for b in views[0].bags]:
                raise ValidationError(f"{event}: datasets do not describe the same bags and shots")
        confidences = [calibrate(m, _decisions(m, v)) for m, v in zip(models, views)]
        regions = {}
        for bag, sl in zip(views[0].bags, views[0].bag_slices):
            if bag.event_label <= 0:
                continue
            per_model = [ScoredShots(bag.bag_id, tuple(float(c) for c in conf[sl]))
                         for conf in confidences]
            scored = per_model[0] if len(per_model) == 1 else late_fusion(per_model, weights)
            regions[bag.bag_id] = regions_from_scores(scored, bag, config.prediction_threshold)
            if args.dump_predictions:
                top = (_top_features(models[0], bag, scored.scores, config.prediction_threshold)
                       if len(models) == 1 else None)
                dump.append(_dump_record(event, bag, scored, regions[bag.bag_id], top))
        predictions[event] = regions

    report = evaluate(predictions, annotations, config.gt_threshold)
    if not report.events:
        raise DataError("no annotated positive bags for any requested event")
    if args.dump_predictions:
        _write_lines(dump, args.dump_predictions)
    _emit_report(report.to_csv(), args.out)
    return EXIT_OK


def _read_dump(path: Path) -> dict[tuple[str, str], dict]:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (str(rec["event"]), str(rec["bag_id"]))
                shots = [((float(s["t"][0]), float(s["t"][1])), float(s["score"])) for s in rec["shots"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed prediction record ({exc!r})") from exc
            out[key] = shots
    return out


def cmd_fuse(args: argparse.Namespace) -> int:
    config = build_spl_config(args)
    weights = _fusion_weights(args, len(args.predictions))
    dumps = [_read_dump(_require_file(p, "prediction file")) for p in args.predictions]
    keys = sorted(dumps[0])
    for p, d in zip(args.predictions[1:], dumps[1:]):
        if sorted(d) != keys:
            raise ValidationError(f"{p}: covers different (event, bag) pairs than {args.predictions[0]}")

    records = []
    predictions: dict[str, dict[str, RegionSet]] = {}
    for event, bag_id in keys:
        spans = [t for t, _ in dumps[0][(event, bag_id)]]
        for d in dumps[1:]:
            if [t for t, _ in d[(event, bag_id)]] != spans:
                raise ValidationError(f"{event}/{bag_id}: shot timings differ between prediction files")
        bag = VideoBag(bag_id, 1, tuple(ShotInstance(bag_id, k, a, b, ()) for k, (a, b) in enumerate(spans)))
        fused = late_fusion([ScoredShots(bag_id, tuple(s for _, s in d[(event, bag_id)])) for d in dumps],
                            weights)
        regions = regions_from_scores(fused, bag, config.prediction_threshold)
        predictions.setdefault(event, {})[bag_id] = regions
        records.append(_dump_record(event, bag, fused, regions, None))
    _write_lines(records, args.out)
    if args.annotations:
        annotations = load_annotations(*[_require_file(a, "annotation file") for a in args.annotations])
        report = evaluate(predictions, annotations, config.gt_threshold)
        if not report.events:
            raise DataError("no annotated bags among the fused predictions")
        _emit_report(report.to_csv(), args.report)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = build_synth_spec(args)
    if args.views < 1:
        raise UsageError("--views must be >= 1")
    if args.test_pos or args.test_neg:
        try:
            train, test = generate_split(spec, args.test_pos, args.test_neg, args.views)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        parts = [("", train), ("test.", test)]
    else:
        parts = [("", generate(spec, args.views))]
    for prefix, data in parts:
        data.write(args.out, prefix)
        n_ev = sum(int(m.sum()) for m in data.truth.values())
        pos = [b for b in data.dataset.bags if b.event_label > 0]
        n_pos_ev = sum(int(data.truth[b.bag_id].sum()) for b in pos)
        print(f"{prefix or 'train.'}{spec.event_id}: bags={len(data.dataset.bags)} "
              f"(pos={len(pos)}) shots={data.dataset.total_instances} "
              f"evidence={n_ev} (in positive bags={n_pos_ev}) views={len(data.views)}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _spl_options(p: argparse.ArgumentParser, training: bool) -> None:
    p.add_argument("--config", help="TOML file with SplConfig keys")
    p.add_argument("--threshold", type=float, help="confidence threshold for predicted regions")
    p.add_argument("--gt-threshold", type=float, help="averaged-annotation threshold for ground truth")
    if not training:
        return
    p.add_argument("--max-iter", type=int)
    p.add_argument("--delta-lambda", type=float)
    p.add_argument("--c-plus", type=float)
    p.add_argument("--c-minus", type=float)
    p.add_argument("--lambda0", type=float, help="explicit starting pace")
    p.add_argument("--lambda0-percentile", type=float,
                   help="loss percentile for the starting pace when --lambda0 is unset")
    p.add_argument("--enforce-positive-bag", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--allow-negative-flips", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--svm-tol", type=float)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spl-evidence", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit one detector per event")
    p.add_argument("--data", required=True)
    p.add_argument("--events", nargs="+", help="event ids (default: every label in the file)")
    p.add_argument("--out", required=True, help="output directory for models and histories")
    p.add_argument("--baseline", choices=("spl", "mil"), default="spl")
    p.add_argument("--calibration", choices=("fixed", "platt"), default="fixed",
                   help="fixed: sigmoid(f); platt: fit the slope on training pseudo labels")
    p.add_argument("--jobs", type=int, default=1)
    _spl_options(p, training=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="localize evidence and score it")
    p.add_argument("--data", nargs="+", required=True, help="one dataset, or one per model directory")
    p.add_argument("--models", nargs="+", required=True, help="model directories from train")
    p.add_argument("--annotations", nargs="+", required=True)
    p.add_argument("--events", nargs="+")
    p.add_argument("--fuse", choices=("uniform", "weighted"), default="uniform")
    p.add_argument("--weights", nargs="+", type=float)
    p.add_argument("--dump-predictions", metavar="PATH")
    p.add_argument("--out", help="report CSV (default: stdout)")
    _spl_options(p, training=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", help="late-fuse prediction dumps")
    p.add_argument("--predictions", nargs="+", required=True)
    p.add_argument("--fuse", choices=("uniform", "weighted"), default="uniform")
    p.add_argument("--weights", nargs="+", type=float)
    p.add_argument("--out", required=True, help="fused prediction JSONL")
    p.add_argument("--annotations", nargs="+")
    p.add_argument("--report", help="report CSV when --annotations is given (default: stdout)")
    _spl_options(p, training=False)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("synth", help="generate a synthetic weakly labelled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="TOML file with a [synth] table")
    p.add_argument("--pos", type=int)
    p.add_argument("--neg", type=int)
    p.add_argument("--shots", type=int, nargs="+", metavar="N", help="shots per bag, or MIN MAX")
    p.add_argument("--dim", type=int)
    p.add_argument("--evidence-rate", type=float)
    p.add_argument("--contamination", type=float)
    p.add_argument("--separation", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--event")
    p.add_argument("--views", type=int, default=1)
    p.add_argument("--test-pos", type=int, default=0, help="held-out positive bags")
    p.add_argument("--test-neg", type=int, default=0, help="held-out negative bags")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "shots", None) is not None and len(args.shots) > 2:
        parser.error("--shots takes one or two values")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
