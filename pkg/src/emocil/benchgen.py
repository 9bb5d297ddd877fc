"""Synthetic ground truth and brute-force oracles.

Classes are Gaussian mixtures with known parameters, so every fitted model
can be compared with the truth and with the Bayes-optimal classifier.
Distances are in units of the (unit) within-component standard deviation.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation
from .ingestion import Dataset
from .schedule import TaskSchedule, load_task_schedule


@dataclass(frozen=True)
class TrueMixture:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray  # (C, S, S)

    @property
    def n_components(self):
        return len(self.weights)


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings.

    ``separation`` is the minimum distance between any two class centers;
    ``component_separation`` the minimum distance between the components of
    one class (defaults to ``separation``).
    """

    n_classes: int = 2
    dim: int = 17
    components_per_class: int = 1
    samples_per_class: int = 100
    n_subjects: int = 10
    separation: float = 6.0
    component_separation: float | None = None
    subject_offset: float = 0.1
    seed: int = 0
    labels: tuple = ()
    feature_space_id: str = "au"
    schedule: TaskSchedule | None = field(default=None, compare=False)

    def __post_init__(self):
        if min(self.n_classes, self.dim, self.components_per_class, self.samples_per_class, self.n_subjects) < 1:
            raise ContractViolation("counts in SynthSpec must be >= 1")
        if self.separation < 0 or (self.component_separation or 0) < 0:
            raise ContractViolation("separation must be >= 0")
        if self.labels and len(self.labels) != self.n_classes:
            raise ContractViolation("need one label per class")

    def class_labels(self):
        return list(self.labels) if self.labels else [f"class {k}" for k in range(self.n_classes)]


def spread_points(k, dim, min_dist, rng) -> np.ndarray:
    """k random points whose closest pair is exactly ``min_dist`` apart."""
    pts = rng.standard_normal((k, dim))
    if k < 2:
        return np.zeros((k, dim))
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    closest = d[np.triu_indices(k, 1)].min()
    return pts * (min_dist / closest)


def cfee6_spec(seed=0, samples_per_class=230, separation=6.0, n_subjects=20) -> SynthSpec:
    """CFEE-shaped preset: the 22-class, 6-task schedule in 17 dimensions."""
    schedule = load_task_schedule("builtin:cfee6")
    return SynthSpec(
        n_classes=schedule.n_classes,
        dim=17,
        components_per_class=1,
        samples_per_class=samples_per_class,
        n_subjects=n_subjects,
        separation=separation,
        seed=seed,
        labels=tuple(c.label for c in schedule.classes),
        schedule=schedule,
    )


PRESETS = {"cfee6": cfee6_spec}


def gen_synthetic(spec: SynthSpec):
    """Draw a labelled dataset and return ``(dataset, truths)``.

    Subjects are assigned round-robin within each class; each subject adds a
    fixed offset of length ``subject_offset * separation`` to its samples.
    """
    rng = np.random.default_rng(spec.seed)
    S = spec.dim
    centers = spread_points(spec.n_classes, S, spec.separation, rng)
    comp_sep = spec.separation if spec.component_separation is None else spec.component_separation
    truths = []
    for k in range(spec.n_classes):
        C = spec.components_per_class
        local = spread_points(C, S, comp_sep, rng)
        means = centers[k] + local - local.mean(axis=0)
        truths.append(TrueMixture(np.full(C, 1.0 / C), means, np.stack([np.eye(S)] * C)))
    offsets = rng.standard_normal((spec.n_subjects, S))
    offsets /= np.linalg.norm(offsets, axis=1, keepdims=True)
    offsets *= spec.subject_offset * spec.separation

    labels = spec.class_labels()
    X, y, subj, ids = [], [], [], []
    for k, truth in enumerate(truths):
        n = spec.samples_per_class
        comp = rng.choice(truth.n_components, size=n, p=truth.weights)
        z = rng.standard_normal((n, S))
        for i in range(n):
            s = i % spec.n_subjects
            L = np.linalg.cholesky(truth.covariances[comp[i]])
            X.append(truth.means[comp[i]] + L @ z[i] + offsets[s])
            y.append(labels[k])
            subj.append(f"s{s:03d}")
            ids.append(f"c{k:02d}_{i:05d}")
    ds = Dataset(
        X=np.array(X),
        labels=tuple(y),
        subjects=tuple(subj),
        sample_ids=tuple(ids),
        feature_space_id=spec.feature_space_id,
        sources=("synthetic",) * len(y),
    )
    return ds, truths


def naive_mvn_oracle(x, mean, cov) -> float:
    """log N(x | mean, cov) from an explicit inverse and determinant."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    det = np.linalg.det(cov)
    if not det > 0:
        raise ContractViolation(f"covariance determinant is {det}; oracle needs an invertible SPD matrix")
    inv = np.linalg.inv(cov)
    d = x - mean
    return float(-0.5 * (len(d) * np.log(2 * np.pi) + np.log(det) + d @ inv @ d))


def true_log_likelihood(x, truth: TrueMixture) -> float:
    terms = [
        np.log(w) + naive_mvn_oracle(x, m, c) for w, m, c in zip(truth.weights, truth.means, truth.covariances)
    ]
    top = max(terms)
    return float(top + np.log(sum(np.exp(t - top) for t in terms)))


def bayes_optimal_predict(x, truths) -> int:
    """Argmax of the true class-conditional density (uniform class priors, ties -> lowest id)."""
    scores = [true_log_likelihood(x, t) for t in truths]
    return int(np.argmax(scores))


def write_dataset(ds: Dataset, features_path, manifest_path):
    """Write the generic feature CSV + manifest pair that ``ingestion`` reads."""
    features_path, manifest_path = Path(features_path), Path(manifest_path)
    with features_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id"] + [f"f{j:02d}" for j in range(ds.dim)])
        for sid, row in zip(ds.sample_ids, ds.X):
            w.writerow([sid] + [repr(float(v)) for v in row])
    with manifest_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "class_label", "subject_id"])
        for row in zip(ds.sample_ids, ds.labels, ds.subjects):
            w.writerow(row)
