"""Datasets from OpenFace output or generic feature CSVs, and subject-disjoint splits."""
from __future__ import annotations

import csv
import logging
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CannotSplitError, ContractViolation, LabeledRowError, SchemaError
from .schedule import normalize_label

log = logging.getLogger(__name__)

AU_COLUMNS = (
    "AU01_r", "AU02_r", "AU04_r", "AU05_r", "AU06_r", "AU07_r", "AU09_r", "AU10_r", "AU12_r",
    "AU14_r", "AU15_r", "AU17_r", "AU20_r", "AU23_r", "AU25_r", "AU26_r", "AU45_r",
)  # fmt: skip
AU_MIN, AU_MAX = 0.0, 5.0

# Filename stems like "S012_happily_surprised_003" -> subject S012, class "happily surprised".
DEFAULT_STEM_PATTERN = r"^(?P<subject>[^_]+)_(?P<label>.+?)(?:_\d+)?$"


class ClampWarning(UserWarning):
    pass


class StarvedClassWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    labels: tuple
    subjects: tuple
    sample_ids: tuple
    feature_space_id: str = "au"
    sources: tuple = ()
    dropped: int = 0
    clamped: int = 0
    histogram: dict = field(default=None, compare=False)

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim != 2:
            X = X.reshape(len(self.labels), -1)
        n = X.shape[0]
        for name in ("labels", "subjects", "sample_ids"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
            if len(getattr(self, name)) != n:
                raise ContractViolation(f"{name} has {len(getattr(self, name))} entries for {n} rows")
        sources = tuple(self.sources) or ("",) * n
        if len(sources) != n:
            raise ContractViolation("sources must have one entry per row")
        if not np.all(np.isfinite(X)):
            raise ContractViolation("dataset features must be finite")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "histogram", dict(sorted(Counter(self.labels).items())))

    def __len__(self):
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        pick = lambda t: tuple(t[i] for i in idx)  # noqa: E731
        return Dataset(
            self.X[idx], pick(self.labels), pick(self.subjects), pick(self.sample_ids),
            self.feature_space_id, pick(self.sources),
        )  # fmt: skip

    def of_labels(self, labels) -> "Dataset":
        keep = {normalize_label(label) for label in labels}
        return self.subset([i for i, label in enumerate(self.labels) if label in keep])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
            and (self.labels, self.subjects, self.sample_ids, self.feature_space_id, self.sources)
            == (other.labels, other.subjects, other.sample_ids, other.feature_space_id, other.sources)
            and (self.dropped, self.clamped) == (other.dropped, other.clamped)
        )

    __hash__ = None


# ------------------------------------------------------------------- label maps


@dataclass(frozen=True)
class LabelMap:
    """Resolves a row's (class label, subject) from a manifest or a filename regex.

    The regex needs named groups ``label`` and ``subject`` and is matched
    against the file stem (OpenFace writes one CSV per image) or against the
    row's ``sample_id``/``filename`` column when present.
    """

    pattern: str = DEFAULT_STEM_PATTERN
    manifest: dict | None = None

    @classmethod
    def from_manifest(cls, path):
        return cls(manifest=read_manifest(path))

    def resolve(self, key, line=None):
        if self.manifest is not None:
            if key not in self.manifest:
                raise LabeledRowError(f"line {line}: {key!r} is not listed in the manifest", line=line)
            return self.manifest[key]
        m = re.match(self.pattern, Path(str(key)).stem)
        if not m or not m.groupdict().get("label"):
            raise LabeledRowError(f"line {line}: cannot read a class label from {key!r}", line=line)
        return normalize_label(m["label"]), m.groupdict().get("subject") or "unknown"


def read_manifest(path) -> dict:
    """``sample_id -> (normalized class label, subject id)``."""
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip() for f in reader.fieldnames or []]
        missing = [c for c in ("sample_id", "class_label", "subject_id") if c not in fields]
        if missing:
            raise SchemaError(f"manifest {path} is missing columns {missing}", missing=missing)
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
            if not row["sample_id"] or not row["class_label"]:
                raise LabeledRowError(f"{path} line {lineno}: empty sample_id or class_label", line=lineno)
            out[row["sample_id"]] = (normalize_label(row["class_label"]), row["subject_id"] or "unknown")
    return out


# ---------------------------------------------------------------------- parsers


def _read_rows(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, skipinitialspace=True)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty; a header row is required") from None
        rows = [(lineno, row) for lineno, row in enumerate(reader, start=2) if any(c.strip() for c in row)]
    return header, rows


def _float(text, path, lineno, column):
    try:
        return float(text)
    except ValueError:
        raise LabeledRowError(f"{path} line {lineno}: column {column} has non-numeric value {text!r}", line=lineno) from None


def parse_openface_csv(path, label_map: LabelMap | None = None, feature_space_id="au") -> Dataset:
    """Read the 17 AU intensity columns of an OpenFace CSV.

    Rows with ``success == 0`` are dropped (``Dataset.dropped``); values are
    clamped to [0, 5] with a :class:`ClampWarning`. Labels come from the row's
    ``sample_id``/``filename`` column when there is one, otherwise from the
    file name (one image per CSV, the usual OpenFace layout).
    """
    label_map = label_map or LabelMap()
    header, rows = _read_rows(path)
    missing = [c for c in AU_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing AU intensity columns {missing}", missing=missing)
    cols = [header.index(c) for c in AU_COLUMNS]
    success = header.index("success") if "success" in header else None
    key_col = next((header.index(c) for c in ("sample_id", "filename") if c in header), None)
    frame = header.index("frame") if "frame" in header else None

    X, labels, subjects, ids = [], [], [], []
    dropped = clamped = 0
    for lineno, row in rows:
        if success is not None and _float(row[success], path, lineno, "success") == 0:
            dropped += 1
            continue
        key = row[key_col].strip() if key_col is not None else Path(path).stem
        label, subject = label_map.resolve(key, lineno)
        vals = np.array([_float(row[j], path, lineno, AU_COLUMNS[k]) for k, j in enumerate(cols)])
        out_of_range = (vals < AU_MIN) | (vals > AU_MAX)
        if out_of_range.any():
            clamped += int(out_of_range.sum())
            bad = [AU_COLUMNS[k] for k in np.flatnonzero(out_of_range)]
            warnings.warn(f"{path} line {lineno}: clamped {bad} to [0, 5]", ClampWarning, stacklevel=2)
            vals = np.clip(vals, AU_MIN, AU_MAX)
        X.append(vals)
        labels.append(label)
        subjects.append(subject)
        if key_col is None and frame is not None:
            key = f"{key}#{row[frame].strip()}"
        ids.append(key)
    if dropped:
        log.info("%s: dropped %d rows with success=0", path, dropped)
    return Dataset(
        np.array(X).reshape(len(X), len(AU_COLUMNS)), labels, subjects, ids,
        feature_space_id, (str(path),) * len(X), dropped, clamped,
    )  # fmt: skip


def parse_feature_csv(path, manifest, feature_space_id="features") -> Dataset:
    """Generic features: ``sample_id`` then S feature columns, labels from a manifest."""
    label_map = manifest if isinstance(manifest, LabelMap) else LabelMap.from_manifest(manifest)
    header, rows = _read_rows(path)
    if not header or header[0] != "sample_id" or len(header) < 2:
        raise SchemaError(f"{path}: expected 'sample_id' followed by feature columns", missing=["sample_id"])
    S = len(header) - 1
    X, labels, subjects, ids = [], [], [], []
    for lineno, row in rows:
        if len(row) != S + 1:
            raise LabeledRowError(f"{path} line {lineno}: expected {S + 1} fields, got {len(row)}", line=lineno)
        label, subject = label_map.resolve(row[0].strip(), lineno)
        X.append([_float(v, path, lineno, header[j + 1]) for j, v in enumerate(row[1:])])
        labels.append(label)
        subjects.append(subject)
        ids.append(row[0].strip())
    return Dataset(
        np.array(X, dtype=float).reshape(len(X), S), labels, subjects, ids,
        feature_space_id, (str(path),) * len(X),
    )  # fmt: skip


def load_dataset(path, manifest=None, feature_space_id=None) -> Dataset:
    """Sniff the header: OpenFace output if it has AU intensity columns, else generic."""
    header, _ = _read_rows(path)
    if any(c in header for c in AU_COLUMNS):
        label_map = LabelMap.from_manifest(manifest) if manifest else None
        return parse_openface_csv(path, label_map, feature_space_id or "au")
    if manifest is None:
        raise SchemaError(f"{path}: generic feature files need a manifest", missing=["manifest"])
    return parse_feature_csv(path, manifest, feature_space_id or "au")


def concat(datasets) -> Dataset:
    datasets = list(datasets)
    if not datasets:
        raise ContractViolation("nothing to concatenate")
    dims = {d.dim for d in datasets if len(d)}
    if len(dims) > 1:
        raise ContractViolation(f"datasets disagree on dimension: {sorted(dims)}")
    join = lambda name: tuple(v for d in datasets for v in getattr(d, name))  # noqa: E731
    return Dataset(
        np.concatenate([d.X for d in datasets], axis=0), join("labels"), join("subjects"),
        join("sample_ids"), datasets[0].feature_space_id, join("sources"),
        sum(d.dropped for d in datasets), sum(d.clamped for d in datasets),
    )  # fmt: skip


# ----------------------------------------------------------------------- splits


def split_dataset(ds: Dataset, train_fraction: float = 0.8, seed: int = 0, by_subject: bool = True):
    """Deterministic train/test split; subject-disjoint unless ``by_subject=False``.

    With subjects, ``round(train_fraction * n_subjects)`` subjects (at least
    one on each side) go to training. Classes that end up on one side only
    trigger a :class:`StarvedClassWarning`.
    """
    if not 0 < train_fraction < 1:
        raise ContractViolation("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    if by_subject:
        subjects = sorted(set(ds.subjects))
        if len(subjects) < 2:
            raise CannotSplitError(f"a subject-disjoint split needs >= 2 subjects, found {len(subjects)}")
        order = [subjects[i] for i in rng.permutation(len(subjects))]
        n_train = min(max(1, round(train_fraction * len(subjects))), len(subjects) - 1)
        train_subjects = set(order[:n_train])
        train_mask = np.array([s in train_subjects for s in ds.subjects], dtype=bool)
    else:
        if len(ds) < 2:
            raise CannotSplitError("a split needs at least 2 samples")
        perm = rng.permutation(len(ds))
        n_train = min(max(1, round(train_fraction * len(ds))), len(ds) - 1)
        train_mask = np.zeros(len(ds), dtype=bool)
        train_mask[perm[:n_train]] = True
    train, test = ds.subset(np.flatnonzero(train_mask)), ds.subset(np.flatnonzero(~train_mask))
    starved = sorted(set(ds.labels) - set(train.labels) | set(ds.labels) - set(test.labels))
    if starved:
        warnings.warn(f"classes missing from one side of the split: {starved}", StarvedClassWarning, stacklevel=2)
    return train, test
