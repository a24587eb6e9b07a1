import numpy as np
import pytest

from mcensemble import whitebox
from mcensemble.core import ArgmaxRegion, Dataset, Intersection, PatchedModel, PolicyLevelSet, make_bucketing, rowdot
from mcensemble.debias import check_consistency
from mcensemble.errors import InvariantViolation
from mcensemble.oracle import LinearCapped, SolveStats, solve_batch
from mcensemble.whitebox import (ensemble_act, ensemble_metrics, max_model_level_sets, run_whitebox,
                                 self_assessment, swap_payoff, white_box_event_family)

from conftest import ConstantBase, TableBase, indexed_dataset


def noisy_models(data, k, scale=0.3, seed=1):
    rng = np.random.default_rng(seed)
    return [PatchedModel(TableBase(np.clip(data.labels + rng.normal(0, scale, data.labels.shape), 0, 1)),
                         1.0, f"h{i}").bind(data) for i in range(k)]


def test_self_assessment_argmax_lowest_index_on_ties():
    a = [np.array([[1.0, 0.0], [0.0, 1.0]])] * 2
    h = [np.array([[0.5, 0.2], [0.1, 0.3]]), np.array([[0.5, 0.9], [0.1, 0.4]])]
    sa = self_assessment(a, h)
    assert np.array_equal(sa.S, [[0.5, 0.5], [0.3, 0.4]])
    assert sa.argmax.tolist() == [0, 1]


def test_max_model_level_sets_partition():
    data = indexed_dataset()
    region = LinearCapped(3)
    models = [PatchedModel(ConstantBase([0.2, 0.2, 0.2]), 1.0).bind(data),
              PatchedModel(ConstantBase([0.9, 0.9, 0.9]), 1.0).bind(data)]
    events = max_model_level_sets(models, data, region)
    assert len(events) == 1
    assert events[0].descriptor == ArgmaxRegion(1) and events[0].mass == 1.0

    models = noisy_models(data, 3)
    events = max_model_level_sets(models, data, region)
    joined = np.sort(np.concatenate([e.member_indices for e in events]))
    assert np.array_equal(joined, np.arange(data.n))


def test_identical_models_select_lowest_index():
    data = indexed_dataset()
    models = [PatchedModel(ConstantBase([0.4, 0.5, 0.6]), 1.0).bind(data) for _ in range(3)]
    events = max_model_level_sets(models, data, LinearCapped(3))
    assert [e.descriptor for e in events] == [ArgmaxRegion(0)]


def test_family_counts_and_refinement():
    data = indexed_dataset()
    region = LinearCapped(3)
    k = 3
    models = noisy_models(data, k)
    b = make_bucketing(0.01, 1.0, k)
    acts = [solve_batch(region, m.values) for m in models]
    istar = self_assessment(acts, [m.values for m in models]).argmax
    fam = white_box_event_family(acts[1], istar, k, b, 1)
    assert len(fam) == data.d * b.num_buckets * k
    assert fam.counts().reshape(data.d, -1).sum(axis=1).tolist() == [data.n] * data.d
    for ev in fam.events():
        desc = ev.descriptor
        assert isinstance(desc, Intersection)
        lvl, arg = desc.left, desc.right
        assert isinstance(lvl, PolicyLevelSet) and lvl.policy == "self"
        assert np.all(istar[ev.member_indices] == arg.model)
        assert np.all(b.index(acts[1][ev.member_indices, lvl.coord]) == lvl.bucket)


def test_consistent_input_needs_no_patches():
    data = indexed_dataset()
    models = [PatchedModel(TableBase(data.labels), 1.0, f"h{i}").bind(data) for i in range(2)]
    ens, info = run_whitebox(models, data, LinearCapped(3), 0.01)
    assert info.n_patches == 0 and info.outer_rounds == 0 and info.invocations == 0
    assert len(info.rounds) == 1


@pytest.fixture(scope="module")
def debiased():
    data = indexed_dataset(n=200, seed=5)
    region = LinearCapped(3)
    models = noisy_models(data, 3, scale=0.25, seed=6)
    stats = SolveStats()
    ens, info = run_whitebox(models, data, region, 0.002, stats=stats)
    return data, region, ens, info


def test_terminal_families_consistent(debiased):
    data, region, ens, info = debiased
    assert info.n_patches > 0 and info.converged
    for m, fam in zip(ens.models, info.final_families):
        assert check_consistency(data, m, fam, ens.alpha).max_score <= ens.alpha


def test_invocations_within_bound(debiased):
    data, _, ens, info = debiased
    assert info.invocations <= ens.k * data.d * data.M ** 2 / ens.alpha ** 2


def test_replay_on_training_points_is_bit_exact(debiased):
    data, region, ens, info = debiased
    assert len({p.round for m in ens.models for p in m.patches}) >= 1
    H, acts = ens.replay(data.features, data.group_id)
    for h, m in zip(H, ens.models):
        assert np.array_equal(h, m.values)
    met = ensemble_metrics(ens, data)
    chosen = ensemble_act(ens, data.features, data.group_id)
    assert np.array_equal(rowdot(chosen, data.labels).mean(), met["realized"])


def test_metrics_on_fresh_copy_match_bound(debiased):
    data, _, ens, _ = debiased
    clone = Dataset(data.features.copy(), data.labels.copy(), data.group_id.copy(), data.M, data.n_groups)
    a, b = ensemble_metrics(ens, data), ensemble_metrics(ens, clone)
    assert a["realized"] == b["realized"] and a["self_assessed"] == b["self_assessed"]


def test_ensemble_act_picks_most_optimistic():
    data = indexed_dataset(n=4, d=2)
    region = LinearCapped(2, caps=())
    table0 = np.array([[0.9, 0.1], [0.1, 0.2], [0.3, 0.3], [0.5, 0.5]])
    table1 = np.array([[0.2, 0.3], [0.8, 0.1], [0.3, 0.3], [0.1, 0.6]])
    models = [PatchedModel(TableBase(t), 1.0).bind(data) for t in (table0, table1)]
    ens = whitebox.WhiteBoxEnsemble(models, region, make_bucketing(0.01, 1.0, 2), 0.01)
    acts = ensemble_act(ens, data.features, data.group_id)
    own = [solve_batch(region, t) for t in (table0, table1)]
    S = np.column_stack([rowdot(a, t) for a, t in zip(own, (table0, table1))])
    expect = np.where((S[:, 1] > S[:, 0])[:, None], own[1], own[0])
    assert np.array_equal(acts, expect)


def test_identical_models_metrics():
    data = indexed_dataset()
    region = LinearCapped(3)
    models = [PatchedModel(TableBase(np.full((data.n, 3), 0.5) + 0.1 * np.eye(3)[np.arange(data.n) % 3]),
                           1.0).bind(data) for _ in range(3)]
    ens = whitebox.WhiteBoxEnsemble(models, region, make_bucketing(0.01, 1.0, 3), 0.01)
    met = ensemble_metrics(ens, data)
    assert met["selection_freq"].tolist() == [1.0, 0.0, 0.0]
    assert np.all(met["policy_variance"] == 0.0)
    assert met["realized"] == met["model_realized"][0]
    assert met["self_assessed"] == met["pointwise_max_self_assessed"]


def test_swap_identity_equals_realized(debiased):
    data, _, ens, _ = debiased
    met = ensemble_metrics(ens, data)
    assert swap_payoff(met["actions"], met["argmax"], data.labels, range(ens.k)) == met["realized"]
    const = [swap_payoff(met["actions"], met["argmax"], data.labels, [c] * ens.k) for c in range(ens.k)]
    assert np.allclose(const, met["model_realized"], rtol=0, atol=1e-12)


def test_invocation_cap_raises(monkeypatch):
    data = indexed_dataset()
    monkeypatch.setattr(whitebox, "patch_bound", lambda d, M, alpha: 0.5)
    with pytest.raises(InvariantViolation):
        run_whitebox(noisy_models(data, 2), data, LinearCapped(3), 0.01)


def test_round_limit_marks_unconverged():
    data = indexed_dataset()
    _, info = run_whitebox(noisy_models(data, 2), data, LinearCapped(3), 1e-4, max_rounds=0)
    assert not info.converged and info.outer_rounds == 0
