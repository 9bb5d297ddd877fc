"""Command line: ``python -m emocil {synth,split,train,eval} ...``.

Output directories default to ``$EMOCIL_OUTPUT_DIR`` (else ``./emocil_out``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import benchgen
from .config import FitConfig
from .engine import FAMILIES, MODES, SINGLE_SPACE, EnsembleModel, n_components_of
from .errors import ContractViolation, EmocilError
from .evaluation import aggregate, emit_report, evaluate, summary_text
from .gaussian import COVARIANCE_KINDS, FULL
from .ingestion import Dataset, load_dataset, split_dataset
from .modelio import load_model, save_model
from .schedule import load_task_schedule, single_task_schedule

OUTPUT_ENV = "EMOCIL_OUTPUT_DIR"
log = logging.getLogger("emocil")


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "emocil_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _task_order(text, schedule):
    if not text:
        return schedule.task_ids
    try:
        order = [int(t) for t in text.split(",")]
    except ValueError:
        raise ContractViolation(f"--task-order must be comma-separated task ids, got {text!r}") from None
    if sorted(order) != sorted(schedule.task_ids):
        raise ContractViolation(f"--task-order {order} is not a permutation of {schedule.task_ids}")
    return order


def _fit_config(args) -> FitConfig:
    return FitConfig(
        max_components=args.max_components,
        max_iters=args.max_iters,
        rel_tol=args.rel_tol,
        n_restarts=args.n_restarts,
        reg_eps=args.reg_eps,
        covariance_kind=args.covariance_kind,
    )


def _load_inputs(specs, manifest):
    """``--data`` values are ``PATH`` or ``SPACE=PATH``; returns {space: Dataset}."""
    out = {}
    for spec in specs:
        space, sep, path = spec.partition("=")
        if not sep:
            space, path = None, spec
        ds = load_dataset(path, manifest, space)
        if ds.feature_space_id in out:
            raise ContractViolation(f"feature space {ds.feature_space_id!r} given twice")
        out[ds.feature_space_id] = ds
    return out


def _aligned_inputs(inputs: dict):
    """Rows of every space in the order of the first one, matched by sample_id."""
    spaces = list(inputs)
    base = inputs[spaces[0]]
    X = {spaces[0]: base.X}
    for s in spaces[1:]:
        index = {sid: i for i, sid in enumerate(inputs[s].sample_ids)}
        missing = [sid for sid in base.sample_ids if sid not in index]
        if missing:
            raise ContractViolation(f"space {s!r} lacks samples {missing[:5]}")
        X[s] = inputs[s].X[[index[sid] for sid in base.sample_ids]]
    return X, base


def _schedule_for(args, inputs):
    if args.schedule:
        return load_task_schedule(args.schedule)
    labels = sorted({label for ds in inputs.values() for label in ds.labels})
    return single_task_schedule(labels, next(iter(inputs)))


def _check_inputs(inputs, mode):
    if mode == SINGLE_SPACE and len(inputs) != 1:
        raise ContractViolation("single-space mode takes exactly one --data input")
    return inputs


def train_model(inputs: dict, schedule, order, family, mode, cfg, seed, n_jobs=1, on_task=None):
    """Train tasks in ``order``; ``on_task(t, task_id, model)`` runs after each task."""
    model = EnsembleModel(schedule, mode=mode, family=family, fit_config=cfg, seed=seed)
    for t, task_id in enumerate(order, start=1):
        task = schedule.task(task_id)
        if mode == SINGLE_SPACE:
            ds = next(iter(inputs.values()))
        else:
            if task.feature_space_id not in inputs:
                raise ContractViolation(f"task {task_id} needs features for space {task.feature_space_id!r}")
            ds = inputs[task.feature_space_id]
        part = ds.of_labels(schedule.label(c) for c in task.class_ids)
        model.train_task(task_id, part.X, part.labels, n_jobs=n_jobs)
        if on_task is not None:
            on_task(t, task_id, model)
    return model


# ----------------------------------------------------------------- subcommands


def cmd_synth(args):
    if args.preset:
        spec = benchgen.PRESETS[args.preset](
            seed=args.seed,
            **{k: v for k, v in (("samples_per_class", args.samples), ("separation", args.separation)) if v is not None},
        )
    else:
        spec = benchgen.SynthSpec(
            n_classes=args.k,
            dim=args.dim,
            components_per_class=args.components,
            samples_per_class=args.samples or 100,
            n_subjects=args.subjects,
            separation=args.separation if args.separation is not None else 6.0,
            seed=args.seed,
        )
    ds, truths = benchgen.gen_synthetic(spec)
    out = _out_dir(args)
    benchgen.write_dataset(ds, out / "features.csv", out / "manifest.csv")
    schedule = spec.schedule or single_task_schedule(spec.class_labels())
    (out / "schedule.txt").write_text(schedule.to_text(), encoding="utf-8")
    truth_doc = [
        {"label": label, "weights": t.weights.tolist(), "means": t.means.tolist(), "covariances": t.covariances.tolist()}
        for label, t in zip(spec.class_labels(), truths)
    ]
    (out / "truth.json").write_text(json.dumps(truth_doc) + "\n", encoding="utf-8")
    print(f"wrote {len(ds)} samples, {spec.n_classes} classes, S={spec.dim} to {out}")
    return 0


def _write_split(ds: Dataset, out: Path, name: str):
    benchgen.write_dataset(ds, out / f"{name}.csv", out / f"{name}_manifest.csv")


def cmd_split(args):
    inputs = _load_inputs([args.data], args.manifest)
    ds = next(iter(inputs.values()))
    train, test = split_dataset(ds, args.fraction, args.seed, by_subject=not args.random_rows)
    out = _out_dir(args)
    _write_split(train, out, "train")
    _write_split(test, out, "test")
    print(f"train: {len(train)} samples / {len(set(train.subjects))} subjects; "
          f"test: {len(test)} samples / {len(set(test.subjects))} subjects")  # fmt: skip
    return 0


def cmd_train(args):
    inputs = _check_inputs(_load_inputs(args.data, args.manifest), args.mode)
    schedule = _schedule_for(args, inputs)
    order = _task_order(args.task_order, schedule)
    out = _out_dir(args)
    log_lines = []

    def checkpoint(t, task_id, model):
        save_model(model, out / f"model_t{t}.json")
        for c in schedule.task(task_id).class_ids:
            m = model.class_model(c)
            log_lines.append(f"task {task_id} class {schedule.label(c)!r}: {n_components_of(m)} components")
        print(f"task {task_id} done ({t}/{len(order)})")

    model = train_model(inputs, schedule, order, args.family, args.mode, _fit_config(args), args.seed,
                        args.n_jobs, checkpoint)  # fmt: skip
    save_model(model, out / "model.json")
    (out / "train_log.txt").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    print(f"{len(model.learned_class_ids)} class models -> {out / 'model.json'}")
    return 0


def _eval_one(model, inputs, order):
    X, base = _aligned_inputs(inputs)
    if model.mode == SINGLE_SPACE:
        X = X[next(iter(X))]
    return evaluate(model, X, list(base.labels), order)


def cmd_eval(args):
    inputs = _load_inputs(args.data, args.manifest)
    out = _out_dir(args)
    if args.model:
        model = load_model(args.model)
        order = _task_order(args.task_order, model.schedule) if args.task_order else sorted(model.learned_tasks)
        report = _eval_one(model, inputs, order)
    else:
        if args.seeds < 1:
            raise ContractViolation("--seeds must be >= 1 when no --model is given")
        _check_inputs(inputs, args.mode)
        schedule = _schedule_for(args, inputs)
        order = _task_order(args.task_order, schedule)
        reports = []
        for r in range(args.seeds):
            seed = args.seed + r
            train_in, test_in = {}, {}
            for space, ds in inputs.items():
                train_in[space], test_in[space] = split_dataset(ds, args.fraction, seed, not args.random_rows)
            model = train_model(train_in, schedule, order, args.family, args.mode, _fit_config(args), seed)
            reports.append(_eval_one(model, test_in, order))
            print(f"run {r + 1}/{args.seeds} (seed {seed}): ACC({len(order)}) = {reports[-1].acc_curve[-1]:.4f}")
        report = aggregate(reports)
    emit_report(report, out)
    sys.stdout.write(summary_text(report))
    return 0


# ---------------------------------------------------------------------- parser


def _add_fit_args(p):
    d = FitConfig()
    p.add_argument("--family", choices=FAMILIES, default="gmm")
    p.add_argument("--mode", choices=MODES, default=SINGLE_SPACE)
    p.add_argument("--covariance-kind", choices=COVARIANCE_KINDS, default=FULL)
    p.add_argument("--max-components", type=int, default=d.max_components)
    p.add_argument("--max-iters", type=int, default=d.max_iters)
    p.add_argument("--rel-tol", type=float, default=d.rel_tol)
    p.add_argument("--n-restarts", type=int, default=d.n_restarts)
    p.add_argument("--reg-eps", type=float, default=d.reg_eps)
    p.add_argument("--schedule", help="schedule file or builtin:cfee6 (default: one task with every label)")
    p.add_argument("--task-order", help="comma-separated task ids, e.g. 1,5,3,6,2,4")


def build_parser():
    parser = argparse.ArgumentParser(prog="emocil", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset (features.csv + manifest.csv)")
    p.add_argument("--preset", choices=sorted(benchgen.PRESETS))
    p.add_argument("--k", type=int, default=2, help="number of classes")
    p.add_argument("--dim", type=int, default=17)
    p.add_argument("--components", type=int, default=1, help="true components per class")
    p.add_argument("--samples", type=int, help="samples per class")
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--separation", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="subject-disjoint train/test split")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest")
    p.add_argument("--fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--random-rows", action="store_true", help="split rows instead of subjects")
    p.add_argument("--out")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train task by task, checkpointing after each task")
    p.add_argument("--data", required=True, action="append", help="PATH or SPACE=PATH (repeat per feature space)")
    p.add_argument("--manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--out")
    _add_fit_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model, or repeat split+train+eval over --seeds")
    p.add_argument("--data", required=True, action="append")
    p.add_argument("--manifest")
    p.add_argument("--model")
    p.add_argument("--seeds", type=int, default=0, help="repeat over N seeds (needs the full dataset)")
    p.add_argument("--seed", type=int, default=0, help="first seed of --seeds")
    p.add_argument("--fraction", type=float, default=0.8)
    p.add_argument("--random-rows", action="store_true")
    p.add_argument("--out")
    _add_fit_args(p)
    p.set_defaults(func=cmd_eval)
    return parser


def _origin(exc) -> str:
    """Name of the package module the exception was raised in."""
    tb, name = exc.__traceback__, "emocil"
    while tb is not None:
        path = Path(tb.tb_frame.f_code.co_filename)
        if path.parent.name == "emocil":
            name = path.stem
        tb = tb.tb_next
    return name


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except EmocilError as exc:
        print(f"error [{_origin(exc)}: {type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error [I/O]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
