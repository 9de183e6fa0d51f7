"""Self-paced learning over bag-labelled instances.

The loop alternates between a cost-weighted linear SVM on the currently
selected instances and a closed-form update of per-instance pseudo labels
``y`` and binary selection weights ``v``; the pace ``lam`` grows by a fixed
step each round so progressively harder instances enter training.

The tracked objective is::

    0.5 ||w||^2 + sum_i C_{y_i} v_i (hinge(y_i, f(x_i)) - lam)

with ``C_{+1} = c_plus`` and ``C_{-1} = c_minus``.  Scaling the pace term by
the same class cost keeps the SVM step identical to the weighted SVM and
makes ``v_i = [hinge_i < lam]`` the exact minimizer over ``v``.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Dataset, LinearModel, SplConfig, SplState
from .svm import DegenerateProblemWarning, hinge_loss, sample_costs, train_arrays

HISTORY_COLUMNS = ("iter", "lambda", "n_selected", "n_pos_labels", "n_flips", "objective")


@dataclass
class IterationRecord:
    iteration: int
    lam: float
    n_selected: int
    n_pos_labels: int
    n_flips: int
    objective: float
    # objective at this iteration's pace after each sub-step
    objective_start: float = float("nan")
    objective_svm: float = float("nan")
    objective_labels: float = float("nan")  # free label update, before constraints
    objective_constrained: float = float("nan")
    degenerate_svm: bool = False
    model: LinearModel | None = field(default=None, repr=False)

    def row(self) -> tuple:
        return (self.iteration, self.lam, self.n_selected, self.n_pos_labels,
                self.n_flips, self.objective)


@dataclass
class SplRun:
    dataset: Dataset
    config: SplConfig
    state: SplState
    model: LinearModel
    init_model: LinearModel
    history: list[IterationRecord] = field(default_factory=list)

    def history_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for rec in self.history:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in rec.row()])
        return buf.getvalue()

    def write_history(self, path: str | Path) -> None:
        Path(path).write_text(self.history_csv())


def _train(dataset: Dataset, y: np.ndarray, v: np.ndarray, config: SplConfig):
    C = sample_costs(y, v, config.c_plus, config.c_minus)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateProblemWarning)
        model = train_arrays(dataset.X, y, C, tol=config.svm_tol,
                             max_passes=config.svm_max_passes)
    for w in caught:
        if not issubclass(w.category, DegenerateProblemWarning):
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    model.config_digest = config.digest()
    return model


def objective(state: SplState, model: LinearModel, dataset: Dataset, config: SplConfig) -> float:
    f = dataset.X @ model.w + model.b
    costs = sample_costs(state.y, state.v, config.c_plus, config.c_minus)
    loss = hinge_loss(state.y, f)
    return float(0.5 * model.w @ model.w + np.sum(costs * (loss - state.lam)))


def initial_lambda(losses: np.ndarray, config: SplConfig) -> float:
    """Starting pace: explicit value, or a low order statistic of the losses."""
    if config.lambda0 is not None:
        return float(config.lambda0)
    q = np.percentile(losses, config.lambda0_percentile, method="inverted_cdf")
    return float(max(q, config.delta_lambda))


def init_pseudo_labels(dataset: Dataset, config: SplConfig = SplConfig()) -> tuple[SplState, LinearModel]:
    """Inherit bag labels, select everything and fit the starting classifier."""
    labels = dataset.instance_bag_labels
    if not (labels > 0).any() or not (labels < 0).any():
        raise ValueError("need at least one positive and one negative bag")
    y = labels.astype(int).copy()
    v = np.ones(len(y), dtype=int)
    model = _train(dataset, y, v, config)
    losses = hinge_loss(y, dataset.X @ model.w + model.b)
    return SplState(y, v, initial_lambda(losses, config)), model


def free_labels(y_prev: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Per-instance hinge minimizer; f == 0 keeps the previous label."""
    return np.where(f > 0, 1, np.where(f < 0, -1, y_prev)).astype(int)


def apply_label_constraints(y: np.ndarray, f: np.ndarray, dataset: Dataset,
                            config: SplConfig) -> np.ndarray:
    y = y.copy()
    if config.enforce_positive_bag:
        for bag, sl in zip(dataset.bags, dataset.bag_slices):
            if bag.event_label > 0 and not (y[sl] > 0).any():
                y[sl.start + int(np.argmax(f[sl]))] = 1
    if not config.allow_negative_bag_flips:
        y[dataset.instance_bag_labels < 0] = -1
    return y


def update_labels(state: SplState, model: LinearModel, dataset: Dataset,
                  config: SplConfig) -> SplState:
    f = dataset.X @ model.w + model.b
    y = apply_label_constraints(free_labels(state.y, f), f, dataset, config)
    return replace(state, y=y, objective_trace=list(state.objective_trace))


def select_easy(losses: np.ndarray, lam: float) -> np.ndarray:
    return (np.asarray(losses) < lam).astype(int)


def update_weights(state: SplState, model: LinearModel, dataset: Dataset) -> SplState:
    f = dataset.X @ model.w + model.b
    v = select_easy(hinge_loss(state.y, f), state.lam)
    return replace(state, v=v, objective_trace=list(state.objective_trace))


def _snapshot(model: LinearModel) -> LinearModel:
    return LinearModel(model.w.copy(), model.b, dict(model.calibration), model.config_digest,
                       model.degenerate)


def spl_fit(dataset: Dataset, config: SplConfig = SplConfig()) -> SplRun:
    state, model = init_pseudo_labels(dataset, config)
    run = SplRun(dataset, config, state, model, _snapshot(model))
    lam_final = state.lam + (config.max_iter - 1) * config.delta_lambda
    for t in range(1, config.max_iter + 1):
        start = objective(state, model, dataset, config)
        if state.v.any():
            model = _train(dataset, state.y, state.v, config)
        obj_svm = objective(state, model, dataset, config)

        f = dataset.X @ model.w + model.b
        y_free = free_labels(state.y, f)
        obj_labels = objective(replace(state, y=y_free), model, dataset, config)
        y_new = apply_label_constraints(y_free, f, dataset, config)
        obj_constrained = objective(replace(state, y=y_new), model, dataset, config)
        n_flips = int(np.sum(y_new != state.y))

        v_new = select_easy(hinge_loss(y_new, f), state.lam)
        weights_changed = bool(np.any(v_new != state.v))
        state = SplState(y_new, v_new, state.lam, t, state.objective_trace)
        obj = objective(state, model, dataset, config)
        state.objective_trace.append(obj)
        run.history.append(IterationRecord(
            t, state.lam, int(v_new.sum()), int((y_new > 0).sum()), n_flips, obj,
            start, obj_svm, obj_labels, obj_constrained, model.degenerate, _snapshot(model),
        ))
        lam_used = state.lam
        state.lam = lam_used + config.delta_lambda

        if n_flips == 0 and not weights_changed and t < config.max_iter:
            # same (y, v) retrains the same model; stop if no loss can cross
            # the pace threshold before the last iteration
            losses = hinge_loss(y_new, f)
            if not np.any((losses >= lam_used) & (losses < lam_final)):
                break
    run.state, run.model = state, model
    return run


def basic_mil_fit(dataset: Dataset, config: SplConfig = SplConfig()) -> SplRun:
    """Baseline: one SVM on bag-inherited labels, all instances weighted equally."""
    state, model = init_pseudo_labels(dataset, config)
    obj = objective(state, model, dataset, config)
    state.iteration = 1
    state.objective_trace.append(obj)
    rec = IterationRecord(1, state.lam, int(state.v.sum()), int((state.y > 0).sum()), 0, obj,
                          obj, obj, obj, obj, model.degenerate, _snapshot(model))
    return SplRun(dataset, config, state, model, _snapshot(model), [rec])
