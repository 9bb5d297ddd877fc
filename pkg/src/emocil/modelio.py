"""Versioned JSON model files.

Layout::

    {"format_version": 1, "mode": ..., "model_family": ..., "seed": ...,
     "schedule": {...}, "fit_config": {...}, "learned_tasks": [...],
     "experts": [{"expert_id", "feature_space_id",
                  "classes": [{"class_id", "label", "model": {...}}]}]}

Experts, classes and tasks are written in sorted order, so a model's file
does not depend on the order in which its tasks were trained. Floats use
Python's shortest round-trip repr and matrices are flattened row-major.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .config import FitConfig
from .engine import EnsembleModel, Expert
from .errors import ContractViolation, IncompatibleVersionError, ModelFormatError
from .gaussian import FULL, Covariance
from .gmm import GmmModel
from .schedule import TaskSchedule
from .vb import BgmmModel, BgmmPriors

FORMAT_VERSION = 1


def _flat(a):
    return np.asarray(a, dtype=float).ravel().tolist()


def class_model_to_dict(m) -> dict:
    if isinstance(m, GmmModel):
        return {
            "type": "gmm",
            "covariance_kind": m.covariance_kind,
            "dim": m.dim,
            "weights": _flat(m.weights),
            "means": _flat(m.means),
            "covariances": [{"data": _flat(c.data), "reg": c.reg} for c in m.covariances],
            "fit": {
                "fit_log": list(m.fit_log),
                "seed": m.seed,
                "converged": m.converged,
                "n_iter": m.n_iter,
                "reinit_iters": list(m.reinit_iters),
                "abandoned": m.abandoned,
                "aic": m.aic,
            },
        }
    if isinstance(m, BgmmModel):
        return {
            "type": "bgmm",
            "covariance_kind": m.covariance_kind,
            "dim": m.dim,
            "alpha": _flat(m.alpha),
            "beta": _flat(m.beta),
            "means": _flat(m.means),
            "nu": _flat(m.nu),
            "W_inv": _flat(m.W_inv),
            "priors": m.priors.to_dict(),
            "fit": {
                "elbo_log": list(m.elbo_log),
                "seed": m.seed,
                "converged": m.converged,
                "n_iter": m.n_iter,
                "n_merges": m.n_merges,
                "effective_components": m.effective_components,
            },
        }
    raise ContractViolation(f"cannot serialize {type(m).__name__}")


def class_model_from_dict(d):
    S, kind = int(d["dim"]), d["covariance_kind"]
    means = np.array(d["means"], dtype=float).reshape(-1, S)
    fit = d["fit"]
    if d["type"] == "gmm":
        shape = (S, S) if kind == FULL else (S,)
        covs = [Covariance(kind, np.array(c["data"], dtype=float).reshape(shape), c["reg"]) for c in d["covariances"]]
        return GmmModel(
            weights=np.array(d["weights"], dtype=float),
            means=means,
            covariances=covs,
            covariance_kind=kind,
            fit_log=fit["fit_log"],
            seed=fit["seed"],
            converged=fit["converged"],
            n_iter=fit["n_iter"],
            reinit_iters=fit["reinit_iters"],
            abandoned=fit.get("abandoned", False),
            aic=fit["aic"],
        )
    if d["type"] == "bgmm":
        K = means.shape[0]
        shape = (K, S, S) if kind == FULL else (K, S)
        return BgmmModel(
            alpha=d["alpha"],
            beta=d["beta"],
            means=means,
            nu=d["nu"],
            W_inv=np.array(d["W_inv"], dtype=float).reshape(shape),
            priors=BgmmPriors.from_dict(d["priors"]),
            covariance_kind=kind,
            elbo_log=fit["elbo_log"],
            seed=fit["seed"],
            converged=fit["converged"],
            n_iter=fit["n_iter"],
            n_merges=fit["n_merges"],
        )
    raise ModelFormatError(f"unknown class model type {d['type']!r}")


def model_to_dict(model: EnsembleModel) -> dict:
    experts = []
    for e in sorted(model.experts, key=lambda e: e.expert_id):
        experts.append(
            {
                "expert_id": e.expert_id,
                "feature_space_id": e.feature_space_id,
                "classes": [
                    {"class_id": c, "label": model.schedule.label(c), "model": class_model_to_dict(e.models[c])}
                    for c in e.class_ids
                ],
            }
        )
    return {
        "format_version": FORMAT_VERSION,
        "mode": model.mode,
        "model_family": model.family,
        "seed": model.seed,
        "schedule": model.schedule.to_dict(),
        "fit_config": model.fit_config.to_dict(),
        "learned_tasks": sorted(model.learned_tasks),
        "experts": experts,
    }


def model_from_dict(doc) -> EnsembleModel:
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ModelFormatError("not an emocil model file (no format_version)")
    version = doc["format_version"]
    if not isinstance(version, int) or version > FORMAT_VERSION or version < 1:
        raise IncompatibleVersionError(
            f"model format_version {version!r} is not supported (this build reads up to {FORMAT_VERSION})"
        )
    try:
        model = EnsembleModel(
            TaskSchedule.from_dict(doc["schedule"]),
            mode=doc["mode"],
            family=doc["model_family"],
            fit_config=FitConfig.from_dict(doc["fit_config"]),
            seed=doc["seed"],
        )
        for ed in doc["experts"]:
            models = {int(c["class_id"]): class_model_from_dict(c["model"]) for c in ed["classes"]}
            model.experts.append(Expert(int(ed["expert_id"]), ed["feature_space_id"], models))
        model.learned_tasks = [int(t) for t in doc["learned_tasks"]]
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ModelFormatError(f"malformed model document: {type(exc).__name__}: {exc}") from None
    return model


def dumps(model: EnsembleModel) -> str:
    return json.dumps(model_to_dict(model), allow_nan=False, separators=(",", ":")) + "\n"


def loads(data) -> EnsembleModel:
    if isinstance(data, (bytes, bytearray)):
        try:
            text = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ModelFormatError(f"model file is not UTF-8: {exc.reason}", offset=exc.start) from None
    else:
        text = data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ModelFormatError(f"corrupt model file: {exc.msg}", offset=offset) from None
    return model_from_dict(doc)


def save_model(model: EnsembleModel, destination) -> Path:
    """Write atomically (temp file + rename) so readers never see half a model."""
    dest = Path(destination)
    fd, tmp = tempfile.mkstemp(dir=dest.parent, prefix=f".{dest.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps(model))
        os.replace(tmp, dest)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return dest


def load_model(source) -> EnsembleModel:
    return loads(Path(source).read_bytes())
