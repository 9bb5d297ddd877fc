"""The class-incremental ensemble: one density model per class, trained task by task.

A task's classes are fitted only on that task's data, so models of earlier
classes are never touched again (no replay, no exemplars).

Two inference modes:

``argmax_single_space``
    every class lives in one shared feature space and the decision is the
    class with the highest log-likelihood.
``softmax_multi_expert``
    each task trains a new expert bound to its own feature space; each expert
    turns its classes' log-likelihoods into a softmax, and per-class softmax
    values are averaged over the experts that cover the class.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import FitConfig, class_seed
from .errors import (
    ContractViolation,
    DuplicateTaskError,
    EmptyModelError,
    InsufficientDataError,
    ScheduleError,
    TaskUnknownError,
)
from .gaussian import softmax
from .gmm import as_data, select_by_aic
from .schedule import TaskSchedule
from .vb import fit_vb

log = logging.getLogger(__name__)

SINGLE_SPACE = "argmax_single_space"
MULTI_EXPERT = "softmax_multi_expert"
MODES = (SINGLE_SPACE, MULTI_EXPERT)
FAMILIES = ("gmm", "bgmm")


def fit_class_model(family, X, cfg: FitConfig):
    """Fit one class: AIC-selected GMM or variational BGMM."""
    if family == "gmm":
        return select_by_aic(X, cfg)
    return fit_vb(X, cfg.max_components, None, cfg)


def _fit_job(args):
    family, X, cfg = args
    return fit_class_model(family, X, cfg)


def n_components_of(model) -> int:
    return model.effective_components if hasattr(model, "effective_components") else model.n_components


@dataclass
class Expert:
    expert_id: int
    feature_space_id: str
    models: dict = field(default_factory=dict)

    @property
    def class_ids(self):
        return sorted(self.models)

    @property
    def dim(self):
        for m in self.models.values():
            return m.dim
        return None

    def log_likelihoods(self, X) -> np.ndarray:
        """(n, len(class_ids)) class log-likelihoods, columns in class-id order."""
        return np.stack([self.models[c].log_likelihood(X) for c in self.class_ids], axis=1)


@dataclass(frozen=True)
class Prediction:
    class_id: int
    label: str
    scores: dict


class EnsembleModel:
    """Incremental classifier over a fixed task schedule.

    Training mutates the model (call it from one thread at a time);
    prediction is read-only.
    """

    def __init__(
        self,
        schedule: TaskSchedule,
        mode: str = SINGLE_SPACE,
        family: str = "gmm",
        fit_config: FitConfig = FitConfig(),
        seed: int = 0,
    ):
        if mode not in MODES:
            raise ContractViolation(f"unknown mode {mode!r}; expected one of {MODES}")
        if family not in FAMILIES:
            raise ContractViolation(f"unknown model family {family!r}; expected one of {FAMILIES}")
        if mode == SINGLE_SPACE:
            spaces = {t.feature_space_id for t in schedule.tasks}
            if len(spaces) > 1:
                raise ContractViolation(
                    f"single-space mode needs one feature space, schedule uses {sorted(spaces)}"
                )
        self.schedule = schedule
        self.mode = mode
        self.family = family
        self.fit_config = fit_config
        self.seed = int(seed)
        self.experts: list[Expert] = []
        self.learned_tasks: list[int] = []

    # ----------------------------------------------------------------- training

    def _class_rows(self, task, X, y):
        """Split a task's data per class; labels may be ids or names."""
        if len(y) != X.shape[0]:
            raise ContractViolation(f"{X.shape[0]} feature rows but {len(y)} labels")
        ids = np.empty(len(y), dtype=int)
        for i, v in enumerate(y):
            if isinstance(v, (int, np.integer)):
                cid = int(v)
                if not 0 <= cid < self.schedule.n_classes:
                    raise ContractViolation(f"class id {cid} is not in the schedule")
            else:
                try:
                    cid = self.schedule.class_id(v)
                except ScheduleError:
                    raise ContractViolation(f"label {v!r} is not in the schedule") from None
            ids[i] = cid
        outside = sorted({self.schedule.label(c) for c in set(ids.tolist()) - set(task.class_ids)})
        if outside:
            raise ContractViolation(f"task {task.task_id} data contains labels from other tasks: {outside}")
        rows = {}
        for cid in task.class_ids:
            idx = np.flatnonzero(ids == cid)
            if len(idx) == 0:
                label = self.schedule.label(cid)
                raise InsufficientDataError(
                    f"class {label!r} (task {task.task_id}) has no training samples", class_id=cid
                )
            rows[cid] = X[idx]
        return rows

    def train_task(self, task_id, X, y, n_jobs: int = 1) -> "EnsembleModel":
        """Fit one model per class of ``task_id`` from this task's data only.

        Nothing is committed unless every class fits.
        """
        task = self.schedule.task(task_id)
        if task_id in self.learned_tasks:
            raise DuplicateTaskError(f"task {task_id} has already been learned")
        if isinstance(X, dict):
            if task.feature_space_id not in X:
                raise ContractViolation(f"no features supplied for space {task.feature_space_id!r}")
            X = X[task.feature_space_id]
        X = as_data(X)
        expert = self._expert_for(task)
        if expert is not None and expert.dim is not None and expert.dim != X.shape[1]:
            raise ContractViolation(
                f"feature space {task.feature_space_id!r} has S={expert.dim}, task data has S={X.shape[1]}"
            )
        rows = self._class_rows(task, X, list(y))
        jobs = [
            (self.family, rows[c], self.fit_config.with_seed(class_seed(self.seed, self.schedule.label(c))))
            for c in task.class_ids
        ]
        if n_jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=min(n_jobs, len(jobs))) as pool:
                fitted = list(pool.map(_fit_job, jobs))
        else:
            fitted = [_fit_job(j) for j in jobs]

        if expert is None:
            expert_id = task_id if self.mode == MULTI_EXPERT else 0
            expert = Expert(expert_id, task.feature_space_id)
            self.experts.append(expert)
        for cid, model in zip(task.class_ids, fitted):
            expert.models[cid] = model
            log.info(
                "task %s class %r: %d components", task_id, self.schedule.label(cid), n_components_of(model)
            )
        self.learned_tasks.append(task_id)
        return self

    def _expert_for(self, task):
        if self.mode == MULTI_EXPERT:
            return None
        return self.experts[0] if self.experts else None

    # ---------------------------------------------------------------- inference

    @property
    def learned_class_ids(self):
        return sorted(c for e in self.experts for c in e.models)

    def class_model(self, class_id):
        for e in self.experts:
            if class_id in e.models:
                return e.models[class_id]
        raise KeyError(class_id)

    def _require_trained(self):
        if not self.learned_tasks:
            raise EmptyModelError("no task has been learned yet")

    def _inputs(self, X, expert):
        if isinstance(X, dict):
            if expert.feature_space_id not in X:
                raise ContractViolation(f"no features supplied for space {expert.feature_space_id!r}")
            X = X[expert.feature_space_id]
        elif self.mode == MULTI_EXPERT and len({e.feature_space_id for e in self.experts}) > 1:
            raise ContractViolation("multi-expert inference needs a {feature_space_id: features} map")
        return as_data(X, expert.dim)

    def scores(self, X):
        """Class scores for rows of X.

        Returns ``(class_ids, S)`` with S of shape (n, len(class_ids)).
        Single-space mode scores are log-likelihoods; multi-expert scores are
        averaged softmax probabilities.
        """
        self._require_trained()
        class_ids = self.learned_class_ids
        col = {c: j for j, c in enumerate(class_ids)}
        if self.mode == SINGLE_SPACE:
            e = self.experts[0]
            return class_ids, e.log_likelihoods(self._inputs(X, e))
        n = None
        total = count = None
        for e in self.experts:
            p = softmax(e.log_likelihoods(self._inputs(X, e)), axis=1)
            if total is None:
                n = p.shape[0]
                total = np.zeros((n, len(class_ids)))
                count = np.zeros(len(class_ids))
            cols = [col[c] for c in e.class_ids]
            total[:, cols] += p
            count[cols] += 1
        return class_ids, total / count

    def _decide(self, class_ids, S, allowed=None):
        if allowed is not None:
            keep = [j for j, c in enumerate(class_ids) if c in allowed]
            S = S[:, keep]
            class_ids = [class_ids[j] for j in keep]
        # argmax returns the first maximum, i.e. the lowest class id.
        return np.asarray(class_ids)[np.argmax(S, axis=1)]

    def predict(self, X, task_id=None) -> np.ndarray:
        """Vectorized decisions: task-agnostic, or task-aware when ``task_id`` is given."""
        allowed = None
        if task_id is not None:
            if task_id not in self.learned_tasks:
                raise TaskUnknownError(f"task {task_id!r} has not been learned")
            allowed = set(self.schedule.task(task_id).class_ids)
        class_ids, S = self.scores(X)
        return self._decide(class_ids, S, allowed)

    def predict_agnostic(self, x) -> Prediction:
        return self._single(x, None)

    def predict_aware(self, x, task_id) -> Prediction:
        return self._single(x, task_id)

    def _single(self, x, task_id):
        if isinstance(x, dict):
            x = {k: np.atleast_2d(np.asarray(v, dtype=float)) for k, v in x.items()}
        else:
            x = np.asarray(x, dtype=float)
            if x.ndim != 1:
                raise ContractViolation("predict_agnostic/predict_aware take one feature vector")
            x = x[None, :]
        cid = int(self.predict(x, task_id)[0])
        class_ids, S = self.scores(x)
        return Prediction(cid, self.schedule.label(cid), {c: float(s) for c, s in zip(class_ids, S[0])})

    # ------------------------------------------------------------------ helpers

    def restricted(self, task_ids) -> "EnsembleModel":
        """A view holding only the given learned tasks (e.g. a training prefix)."""
        keep = set(task_ids)
        missing = keep - set(self.learned_tasks)
        if missing:
            raise TaskUnknownError(f"tasks {sorted(missing)} have not been learned")
        out = EnsembleModel(self.schedule, self.mode, self.family, self.fit_config, self.seed)
        out.learned_tasks = [t for t in self.learned_tasks if t in keep]
        classes = {c for t in keep for c in self.schedule.task(t).class_ids}
        for e in self.experts:
            models = {c: m for c, m in e.models.items() if c in classes}
            if models:
                out.experts.append(Expert(e.expert_id, e.feature_space_id, models))
        return out

    def component_counts(self):
        return {c: n_components_of(self.class_model(c)) for c in self.learned_class_ids}
