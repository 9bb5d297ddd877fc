import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emocil.benchgen import cfee6_spec, gen_synthetic
from emocil.config import FitConfig
from emocil.engine import MULTI_EXPERT, SINGLE_SPACE, EnsembleModel, Expert
from emocil.errors import (
    ContractViolation,
    DuplicateTaskError,
    EmptyModelError,
    InsufficientDataError,
    ScheduleError,
    TaskUnknownError,
)
from emocil.gaussian import DIAGONAL, Covariance
from emocil.gmm import GmmModel
from emocil.modelio import dumps
from emocil.schedule import TaskSchedule, load_task_schedule, parse_schedule

QUICK = FitConfig(covariance_kind=DIAGONAL, n_restarts=1, max_components=3)


@pytest.fixture(scope="module")
def cfee():
    spec = cfee6_spec(seed=3, samples_per_class=40, n_subjects=4)
    ds, truths = gen_synthetic(spec)
    return spec.schedule, ds


def task_data(schedule, ds, task_id):
    part = ds.of_labels(schedule.label(c) for c in schedule.task(task_id).class_ids)
    return part.X, part.labels


def train_all(schedule, ds, order, **kw):
    m = EnsembleModel(schedule, fit_config=kw.pop("cfg", QUICK), **kw)
    for t in order:
        m.train_task(t, *task_data(schedule, ds, t))
    return m


def gaussian(mean, S):
    return GmmModel(np.ones(1), np.array([mean], dtype=float), [Covariance.identity(S)])


def test_first_task_creates_seven_models(cfee):
    schedule, ds = cfee
    m = EnsembleModel(schedule, fit_config=QUICK).train_task(1, *task_data(schedule, ds, 1))
    assert m.learned_tasks == [1]
    assert m.learned_class_ids == list(range(7))


def test_duplicate_task_leaves_model_unchanged(cfee):
    schedule, ds = cfee
    m = EnsembleModel(schedule, fit_config=QUICK).train_task(1, *task_data(schedule, ds, 1))
    before = dumps(m)
    with pytest.raises(DuplicateTaskError):
        m.train_task(1, *task_data(schedule, ds, 1))
    assert dumps(m) == before


def test_unknown_task(cfee):
    schedule, ds = cfee
    with pytest.raises(TaskUnknownError):
        EnsembleModel(schedule).train_task(42, *task_data(schedule, ds, 1))


def test_missing_class_names_it(cfee):
    schedule, ds = cfee
    X, y = task_data(schedule, ds, 2)
    keep = [i for i, lab in enumerate(y) if lab != "awed"]
    with pytest.raises(InsufficientDataError, match="awed") as info:
        EnsembleModel(schedule, fit_config=QUICK).train_task(2, X[keep], [y[i] for i in keep])
    assert info.value.class_id == schedule.class_id("awed")


def test_foreign_label_rejected(cfee):
    schedule, ds = cfee
    X, y = task_data(schedule, ds, 2)
    y = list(y)
    y[0] = "happy"
    m = EnsembleModel(schedule, fit_config=QUICK)
    with pytest.raises(ContractViolation, match="happy"):
        m.train_task(2, X, y)
    assert m.learned_tasks == [] and m.experts == []


def test_failed_task_commits_nothing(cfee):
    schedule, ds = cfee
    m = EnsembleModel(schedule, fit_config=QUICK).train_task(1, *task_data(schedule, ds, 1))
    X, y = task_data(schedule, ds, 2)
    with pytest.raises(ContractViolation):
        m.train_task(2, X[:, :5], y)
    assert m.learned_tasks == [1] and m.learned_class_ids == list(range(7))


def test_empty_model():
    with pytest.raises(EmptyModelError):
        EnsembleModel(load_task_schedule("builtin:cfee6")).predict(np.zeros((1, 17)))


def test_old_models_untouched(cfee):
    schedule, ds = cfee
    m = EnsembleModel(schedule, fit_config=QUICK).train_task(1, *task_data(schedule, ds, 1))
    before = {c: m.class_model(c) for c in m.learned_class_ids}
    snapshot = dumps(m.restricted([1]))
    m.train_task(4, *task_data(schedule, ds, 4))
    assert all(m.class_model(c) is before[c] for c in before)
    assert dumps(m.restricted([1])) == snapshot


def _manual(schedule, models, mode=SINGLE_SPACE):
    m = EnsembleModel(schedule, mode=mode)
    m.experts.append(Expert(0, "au", dict(models)))
    m.learned_tasks = [t.task_id for t in schedule.tasks]
    return m


def test_singleton_class_always_wins(rng):
    s = parse_schedule("format_version: 1\ntask 1: only\n")
    m = _manual(s, {0: gaussian(np.zeros(3), 3)})
    assert set(m.predict(rng.normal(size=(20, 3)) * 50).tolist()) == {0}


def test_two_class_closed_form():
    S = 5
    s = parse_schedule("format_version: 1\ntask 1: a, b\n")
    m = _manual(s, {0: gaussian(np.zeros(S), S), 1: gaussian(np.full(S, 4.0), S)})
    p = m.predict_agnostic(np.zeros(S))
    assert p.class_id == 0 and p.label == "a"
    assert p.scores[0] - p.scores[1] == pytest.approx(0.5 * S * 16, abs=1e-9)


def test_ties_go_to_lowest_class_id():
    s = parse_schedule("format_version: 1\ntask 1: a, b\n")
    m = _manual(s, {0: gaussian([-1.0], 1), 1: gaussian([1.0], 1)})
    assert m.predict_agnostic([0.0]).class_id == 0


def test_aware_on_single_class_task(cfee):
    schedule, ds = cfee
    s = parse_schedule("format_version: 1\ntask 1: a, b\ntask 2: c\n")
    m = _manual(s, {0: gaussian([0.0], 1), 1: gaussian([5.0], 1), 2: gaussian([10.0], 1)})
    for x in (-3.0, 0.0, 5.0, 10.0):
        assert m.predict_aware([x], 2).class_id == 2


def test_aware_requires_learned_task(cfee):
    schedule, ds = cfee
    m = EnsembleModel(schedule, fit_config=QUICK).train_task(1, *task_data(schedule, ds, 1))
    with pytest.raises(TaskUnknownError):
        m.predict_aware(np.zeros(17), 2)
    assert issubclass(TaskUnknownError, ScheduleError)


def test_aware_agrees_when_agnostic_lands_in_task(cfee, rng):
    schedule, ds = cfee
    m = train_all(schedule, ds, [1, 2, 3])
    X = ds.X[rng.choice(len(ds), 200, replace=False)] + rng.normal(size=(200, 17))
    agn = m.predict(X)
    for t in (1, 2, 3):
        hit = np.array([schedule.task_of(c) == t for c in agn])
        np.testing.assert_array_equal(m.predict(X[hit], task_id=t), agn[hit])


def test_task_order_invariance(cfee, rng):
    schedule, ds = cfee
    a = train_all(schedule, ds, [1, 2, 3, 4, 5, 6], seed=11)
    b = train_all(schedule, ds, [1, 5, 3, 6, 2, 4], seed=11)
    assert dumps(a) == dumps(b)
    probes = rng.normal(size=(100, 17)) * 4
    np.testing.assert_array_equal(a.scores(probes)[1], b.scores(probes)[1])


def test_parallel_fit_matches_serial(cfee):
    schedule, ds = cfee
    X, y = task_data(schedule, ds, 3)
    a = EnsembleModel(schedule, fit_config=QUICK).train_task(3, X, y, n_jobs=1)
    b = EnsembleModel(schedule, fit_config=QUICK).train_task(3, X, y, n_jobs=2)
    assert dumps(a) == dumps(b)


def test_bgmm_family(cfee):
    schedule, ds = cfee
    m = EnsembleModel(schedule, family="bgmm", fit_config=QUICK).train_task(6, *task_data(schedule, ds, 6))
    X, y = task_data(schedule, ds, 6)
    assert np.mean(m.predict(X) == [schedule.class_id(v) for v in y]) > 0.95


def test_restricted_prefix(cfee):
    schedule, ds = cfee
    m = train_all(schedule, ds, [2, 1])
    r = m.restricted([2])
    assert r.learned_tasks == [2] and r.learned_class_ids == [7, 8, 9]
    with pytest.raises(TaskUnknownError):
        m.restricted([3])


@given(st.lists(st.integers(-1000, 1000), min_size=2, max_size=8), st.integers(-10**4, 10**4))
def test_decision_invariant_to_common_shift(scores, c):
    # Integer-valued scores keep the shift exact, so ties stay ties.
    m = EnsembleModel(load_task_schedule("builtin:cfee6"))
    ids = list(range(len(scores)))
    S = np.array([scores], dtype=float)
    assert m._decide(ids, S)[0] == m._decide(ids, S + c)[0]


# ------------------------------------------------------------ multi-expert mode


@pytest.fixture(scope="module")
def two_spaces():
    s = parse_schedule("format_version: 1\ntask 1 [space=e1]: a, b\ntask 2 [space=e2]: c, d\n")
    r = np.random.default_rng(5)
    centers = {"e1": r.normal(size=(4, 3)) * 6, "e2": r.normal(size=(4, 5)) * 6}
    y = np.repeat(np.arange(4), 30)
    feats = {k: v[y] + r.normal(size=(len(y), v.shape[1])) for k, v in centers.items()}
    m = EnsembleModel(s, mode=MULTI_EXPERT, fit_config=QUICK)
    m.train_task(1, feats["e1"][y < 2], y[y < 2])
    m.train_task(2, {k: v[y >= 2] for k, v in feats.items()}, [int(v) for v in y[y >= 2]])
    return m, feats, y


def test_multi_expert_experts_per_task(two_spaces):
    m, feats, y = two_spaces
    assert [(e.expert_id, e.feature_space_id, e.class_ids) for e in m.experts] == [(1, "e1", [0, 1]), (2, "e2", [2, 3])]


def test_multi_expert_scores_are_averaged_softmaxes(two_spaces):
    m, feats, y = two_spaces
    ids, S = m.scores({k: v[:10] for k, v in feats.items()})
    assert np.all(S >= 0)
    # Each class is covered by one expert, so every expert's block is a distribution.
    np.testing.assert_allclose(S[:, :2].sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(S[:, 2:].sum(axis=1), 1.0, atol=1e-9)


def test_multi_expert_needs_feature_map(two_spaces):
    m, feats, y = two_spaces
    with pytest.raises(ContractViolation):
        m.predict(feats["e1"])
    with pytest.raises(ContractViolation):
        m.predict({"e1": feats["e1"]})


def test_multi_expert_task_aware_accuracy(two_spaces):
    m, feats, y = two_spaces
    for t, cls in ((1, [0, 1]), (2, [2, 3])):
        mask = np.isin(y, cls)
        pred = m.predict({k: v[mask] for k, v in feats.items()}, task_id=t)
        assert np.mean(pred == y[mask]) > 0.95


def test_single_space_rejects_multi_space_schedule():
    s = parse_schedule("format_version: 1\ntask 1 [space=e1]: a\ntask 2 [space=e2]: b\n")
    with pytest.raises(ContractViolation):
        EnsembleModel(s, mode=SINGLE_SPACE)


def test_bad_mode_and_family():
    s = TaskSchedule.from_tasks([(1, ["a"])])
    with pytest.raises(ContractViolation):
        EnsembleModel(s, mode="vote")
    with pytest.raises(ContractViolation):
        EnsembleModel(s, family="kde")
