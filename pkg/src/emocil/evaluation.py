"""Cumulative accuracy, confusion matrices, parameter counts and report files.

ACC(t) pools every test sample whose class belongs to the first t tasks
and reports the fraction classified correctly by the model trained up to
task t.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, ReportError
from .gaussian import FULL
from .schedule import TaskSchedule

REPORT_FORMATS = ("json", "txt", "csv", "pgm")
ACC_LABEL = "accuracy (correct / total, pooled over tasks 1..t)"


def _aligned(preds, labels):
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ContractViolation(f"preds ({preds.shape}) and labels ({labels.shape}) must be aligned 1-d arrays")
    return preds, labels


def cumulative_accuracy(preds, labels, schedule: TaskSchedule, t: int, task_order=None, per_task_mean=False):
    """ACC over samples of the first ``t`` tasks of ``task_order`` (schedule order by default).

    ``per_task_mean=True`` averages per-task accuracies instead of pooling.
    """
    preds, labels = _aligned(preds, labels)
    order = list(task_order or schedule.task_ids)
    if not 1 <= t <= len(order):
        raise ContractViolation(f"t must be in 1..{len(order)}")
    prefix = order[:t]
    task_of = np.array([schedule.task_of(c) for c in labels], dtype=int) if len(labels) else np.zeros(0, int)
    in_prefix = np.isin(task_of, prefix)
    if not in_prefix.any():
        raise ReportError(f"no test samples belong to tasks {prefix}")
    correct = preds == labels
    if not per_task_mean:
        return float(correct[in_prefix].mean())
    accs = [correct[task_of == k].mean() for k in prefix if np.any(task_of == k)]
    return float(np.mean(accs))


@dataclass(frozen=True)
class Confusion:
    matrix: np.ndarray
    boundaries: tuple
    within_task_errors: int
    between_task_errors: int


def confusion_matrix(preds, labels, schedule: TaskSchedule) -> Confusion:
    """Rows are true classes, columns predictions, both in schedule order."""
    preds, labels = _aligned(preds, labels)
    K = schedule.n_classes
    M = np.zeros((K, K), dtype=np.int64)
    np.add.at(M, (labels, preds), 1)
    task = np.array([schedule.task_of(c) for c in range(K)])
    off = ~np.eye(K, dtype=bool)
    same = task[:, None] == task[None, :]
    return Confusion(M, tuple(schedule.boundaries()), int(M[off & same].sum()), int(M[~same].sum()))


@dataclass(frozen=True)
class ParamCount:
    paper_formula: int
    exact: int
    bytes_at_64bit: int


def param_count(S: int, C: int, K: int, kind: str = FULL) -> ParamCount:
    """Mixture parameter counts for K classes of C components in S dimensions.

    ``paper_formula`` is (S + S(S-1)/2) * C * K, the published count, which
    leaves out the diagonal of each covariance and the weights. ``exact`` counts
    means, symmetric covariances and the C - 1 free weights per class.
    """
    if min(S, C, K) < 1:
        raise ContractViolation("S, C and K must be positive")
    paper = (S + S * (S - 1) // 2) * C * K
    cov = S * (S + 1) // 2 if kind == FULL else S
    exact = K * C * (S + cov) + K * (C - 1)
    return ParamCount(paper, exact, exact * 8)


def model_param_count(model) -> int:
    """Parameters actually stored by a trained ensemble (active components only)."""
    total = 0
    for c in model.learned_class_ids:
        m = model.class_model(c)
        C = m.effective_components if hasattr(m, "effective_components") else m.n_components
        total += param_count(m.dim, C, 1, m.covariance_kind).exact
    return total


@dataclass
class EvalReport:
    task_order: list
    acc_curve: list
    n_t: list
    task_aware_acc: dict
    task_agnostic_acc: dict
    aware_counterexamples: int
    confusion: Confusion
    param_report: dict
    labels: list = field(default_factory=list)
    acc_curve_std: list | None = None
    n_runs: int = 1

    def to_dict(self):
        return {
            "metric": ACC_LABEL,
            "task_order": self.task_order,
            "acc_curve": self.acc_curve,
            "acc_curve_std": self.acc_curve_std,
            "n_runs": self.n_runs,
            "n_t": self.n_t,
            "task_aware_acc": {str(k): v for k, v in self.task_aware_acc.items()},
            "task_agnostic_acc": {str(k): v for k, v in self.task_agnostic_acc.items()},
            "aware_counterexamples": self.aware_counterexamples,
            "confusion": {
                "labels": self.labels,
                "matrix": self.confusion.matrix.tolist(),
                "task_boundaries": list(self.confusion.boundaries),
                "within_task_errors": self.confusion.within_task_errors,
                "between_task_errors": self.confusion.between_task_errors,
            },
            "param_report": self.param_report,
        }


def evaluate(model, X, labels, task_order=None) -> EvalReport:
    """Score a trained ensemble on a labelled test set.

    ``task_order`` is the order the tasks were trained in (defaults to the
    model's record); ACC(t) uses the model restricted to the first t of them.
    """
    schedule = model.schedule
    y = np.array([schedule.class_id(v) if isinstance(v, str) else int(v) for v in labels], dtype=int)
    X = X if isinstance(X, dict) else np.asarray(X, dtype=float)
    if len(y) == 0:
        raise ReportError("the test set is empty; refusing to report accuracies")
    order = list(task_order or model.learned_tasks)
    task_of = np.array([schedule.task_of(c) for c in y])
    unknown = sorted(set(task_of.tolist()) - set(order))
    if unknown:
        raise ContractViolation(f"test labels come from tasks {unknown} that the model has not learned")

    def rows(mask):
        return {k: v[mask] for k, v in X.items()} if isinstance(X, dict) else X[mask]

    curve, n_t = [], []
    for t in range(1, len(order) + 1):
        mask = np.isin(task_of, order[:t])
        n_t.append(int(mask.sum()))
        if not mask.any():
            curve.append(None)
            continue
        preds = model.restricted(order[:t]).predict(rows(mask))
        curve.append(float(np.mean(preds == y[mask])))

    agnostic = model.predict(X)
    aware_acc, agnostic_acc, counter = {}, {}, 0
    for k in order:
        mask = task_of == k
        if not mask.any():
            continue
        aware = model.predict(rows(mask), task_id=k)
        ok_aware, ok_agn = aware == y[mask], agnostic[mask] == y[mask]
        aware_acc[k] = float(ok_aware.mean())
        agnostic_acc[k] = float(ok_agn.mean())
        counter += int(np.sum(ok_agn & ~ok_aware))

    S = next(iter(model.experts)).dim
    C = model.fit_config.max_components
    pc = param_count(S, C, schedule.n_classes)
    param_report = {
        "S": S,
        "C": C,
        "K": schedule.n_classes,
        "paper_formula_count": pc.paper_formula,
        "exact_count": pc.exact,
        "bytes_at_64bit": pc.bytes_at_64bit,
        "fitted_model_count": model_param_count(model),
    }
    return EvalReport(
        task_order=order,
        acc_curve=curve,
        n_t=n_t,
        task_aware_acc=aware_acc,
        task_agnostic_acc=agnostic_acc,
        aware_counterexamples=counter,
        confusion=confusion_matrix(agnostic, y, schedule),
        param_report=param_report,
        labels=[c.label for c in schedule.classes],
    )


def aggregate(reports) -> EvalReport:
    """Mean (and std) of the accuracy curves of repeated runs; other fields from the first run."""
    reports = list(reports)
    if not reports:
        raise ReportError("no runs to aggregate")
    curves = np.array([[np.nan if v is None else v for v in r.acc_curve] for r in reports], dtype=float)
    first = reports[0]

    def mean_of(attr):
        keys = dict.fromkeys(k for r in reports for k in getattr(r, attr))
        return {k: float(np.mean([getattr(r, attr)[k] for r in reports if k in getattr(r, attr)])) for k in keys}

    M = sum(r.confusion.matrix for r in reports)
    return EvalReport(
        task_order=first.task_order,
        acc_curve=[float(v) for v in np.nanmean(curves, axis=0)],
        acc_curve_std=[float(v) for v in np.nanstd(curves, axis=0)],
        n_runs=len(reports),
        n_t=first.n_t,
        task_aware_acc=mean_of("task_aware_acc"),
        task_agnostic_acc=mean_of("task_agnostic_acc"),
        aware_counterexamples=sum(r.aware_counterexamples for r in reports),
        confusion=Confusion(
            M,
            first.confusion.boundaries,
            sum(r.confusion.within_task_errors for r in reports),
            sum(r.confusion.between_task_errors for r in reports),
        ),
        param_report=first.param_report,
        labels=first.labels,
    )


# ------------------------------------------------------------------------ files


def summary_text(report: EvalReport) -> str:
    lines = [f"metric: {ACC_LABEL}", f"runs: {report.n_runs}", "", "t  task  n_t    ACC(t)"]
    std = report.acc_curve_std or [None] * len(report.acc_curve)
    for t, (task, n, acc, sd) in enumerate(zip(report.task_order, report.n_t, report.acc_curve, std), start=1):
        acc_s = "  n/a " if acc is None else f"{acc:.4f}"
        if sd is not None:
            acc_s += f" +/- {sd:.4f}"
        lines.append(f"{t:<2} {task:<5} {n:<6} {acc_s}")
    lines += ["", "task  aware   agnostic"]
    for k in report.task_aware_acc:
        lines.append(f"{k:<5} {report.task_aware_acc[k]:.4f}  {report.task_agnostic_acc[k]:.4f}")
    lines.append(f"aware-vs-agnostic counterexamples: {report.aware_counterexamples}")
    c = report.confusion
    lines += [
        "",
        f"errors within tasks: {c.within_task_errors}",
        f"errors between tasks: {c.between_task_errors}",
        "",
        "parameters:",
    ]
    lines += [f"  {k}: {v:,}" for k, v in report.param_report.items()]
    return "\n".join(lines) + "\n"


def confusion_pgm(confusion: Confusion, cell: int = 8) -> str:
    """Plain (P2) grayscale image: row-normalized counts, black = 0, white = whole row.

    Task blocks are outlined with mid-gray lines.
    """
    M = confusion.matrix.astype(float)
    rows = M.sum(axis=1, keepdims=True)
    frac = np.divide(M, rows, out=np.zeros_like(M), where=rows > 0)
    img = np.kron(np.rint(frac * 255).astype(int), np.ones((cell, cell), dtype=int))
    for b in confusion.boundaries[1:-1]:
        img[b * cell, :] = 128
        img[:, b * cell] = 128
    h, w = img.shape
    body = "\n".join(" ".join(str(v) for v in row) for row in img)
    return f"P2\n{w} {h}\n255\n{body}\n"


def read_confusion_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)


def emit_report(report: EvalReport, destination, formats=REPORT_FORMATS):
    """Write metrics.json, summary.txt, confusion.csv and confusion.pgm; returns the paths."""
    if not report.n_t or sum(report.confusion.matrix.sum(axis=1)) == 0:
        raise ReportError("the report has no test samples; nothing to emit")
    unknown = set(formats) - set(REPORT_FORMATS)
    if unknown:
        raise ContractViolation(f"unknown report formats {sorted(unknown)}")
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        p = dest / "metrics.json"
        p.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        written.append(p)
    if "txt" in formats:
        p = dest / "summary.txt"
        p.write_text(summary_text(report), encoding="utf-8")
        written.append(p)
    if "csv" in formats:
        p = dest / "confusion.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\pred"] + report.labels)
            for label, row in zip(report.labels, report.confusion.matrix):
                w.writerow([label] + [int(v) for v in row])
        written.append(p)
    if "pgm" in formats:
        p = dest / "confusion.pgm"
        p.write_text(confusion_pgm(report.confusion), encoding="ascii")
        written.append(p)
    return written

