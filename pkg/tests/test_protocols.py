import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from defrost import datagen as dg
from defrost import network as nn
from defrost import protocols as pr

CONFIG = nn.TrainConfig(epochs=4, batch_size=32, lr=0.05)


def _source(spec, data, seed=0):
    params, _ = nn.train(spec, nn.he_init(spec, seed), data.features, data.labels,
                         nn.TrainConfig(epochs=8, batch_size=64, lr=0.05, seed=seed))
    return params


@pytest.fixture(scope="module")
def world():
    cfg = dg.ReferenceConfig(8, 3, 4, 1.0, 0)
    pool, stats = dg.standardize(dg.make_reference(cfg, 1500, 0))
    raw_test = dg.make_reference(cfg, 300, 1)
    test = dg.LabeledDataset(stats.apply(raw_test.features), raw_test.labels, 3)
    spec = nn.NetworkSpec.from_widths([8, 16, 16, 8, 8, 3])
    gm_source, _ = dg.standardize(dg.fit_gm(pool).sample(1500, 2))
    return {
        "spec": spec,
        "pool": pool,
        "test": test,
        "gm_params": _source(spec, gm_source),
        "ref_params": _source(spec, pool),
    }


@pytest.fixture(scope="module")
def task(world):
    return pr.TransferTask(world["spec"], world["gm_params"], dg.subsample_balanced(world["pool"], 30, 0),
                           world["test"])


# -- TransferTask -------------------------------------------------------------------


def test_task_validation(world, task):
    assert task.cuts == [0, 1, 2, 3, 4]
    wide = dg.LabeledDataset(np.zeros((3, 9)), np.array([0, 1, 2]), 3)
    with pytest.raises(ValueError, match="features"):
        pr.TransferTask(world["spec"], world["gm_params"], wide, world["test"])
    four = dg.LabeledDataset(task.train.features, task.train.labels, 4)
    with pytest.raises(ValueError):
        pr.TransferTask(world["spec"], world["gm_params"], four, world["test"])


# -- defrost_at ---------------------------------------------------------------------


def test_cut_zero_is_training_from_scratch(world, task):
    init_ss, shuffle = pr._cell_seeds(3)
    scratch, _ = nn.train(task.source_spec, nn.he_init(task.source_spec, init_ss), task.train.features,
                          task.train.labels, CONFIG.with_seed(shuffle))
    assert pr.defrost_train(task, 0, CONFIG, 3).equals(scratch)
    # the source weights are irrelevant at k = 0
    other = pr.TransferTask(task.source_spec, world["ref_params"], task.train, task.test)
    assert pr.defrost_train(other, 0, CONFIG, 3).equals(scratch)


@pytest.mark.parametrize("cut", [1, 2, 3, 4])
def test_frozen_layers_equal_source(task, cut):
    params = pr.defrost_train(task, cut, CONFIG, 1)
    assert params.equals(task.source_params, layers=range(cut))
    assert not params.equals(task.source_params, layers=[task.n_layers - 1])


@pytest.mark.parametrize("cut", [0, 2, 4])
def test_prefix_caching_changes_nothing(task, cut):
    a = pr.defrost_train(task, cut, CONFIG, 2, cache_prefix=True)
    b = pr.defrost_train(task, cut, CONFIG, 2, cache_prefix=False)
    assert a.equals(b)


def test_vanilla_freezing_trains_only_readout(task):
    params = pr.defrost_train(task, task.n_layers - 1, CONFIG, 0)
    assert params.equals(task.source_params, layers=range(task.n_layers - 1))


def test_cut_out_of_range(task):
    with pytest.raises(ValueError, match="cut"):
        pr.defrost_at(task, 5, CONFIG, 0)
    with pytest.raises(ValueError, match="cut"):
        pr.defrost_at(task, -1, CONFIG, 0)


def test_own_distribution_source_with_abundant_data(world):
    task = pr.TransferTask(world["spec"], world["ref_params"], world["pool"], world["test"])
    cfg = nn.TrainConfig(epochs=8, batch_size=64, lr=0.05)
    scratch = np.mean([pr.defrost_at(task, 0, cfg, s) for s in range(3)])
    frozen = np.mean([pr.defrost_at(task, 4, cfg, s) for s in range(3)])
    assert abs(scratch - frozen) < 0.05


# -- profiles ---------------------------------------------------------------------


def test_profile_single_cell(task):
    prof = pr.build_profile(task, [2], [0], CONFIG)
    assert len(prof.entries) == 1 and prof.entries[0].std_acc == 0.0 and prof.entries[0].n_seeds == 1
    assert 0.0 <= prof.entries[0].mean_acc <= 1.0


def test_profile_sorted_with_seed_counts(task):
    prof = pr.build_profile(task, [3, 0, 1], [0, 1, 2], CONFIG)
    assert prof.cuts == [0, 1, 3]
    assert all(e.n_seeds == 3 and len(e.accuracies) == 3 for e in prof.entries)
    e = prof.entry(1)
    assert e.mean_acc == pytest.approx(np.mean(e.accuracies)) and e.std_acc == pytest.approx(np.std(e.accuracies))
    assert prof.n_per_class == 30 and prof.architecture == "8-16-16-8-8-3"


def test_profile_independent_of_parallelism(task):
    serial = pr.build_profile(task, [0, 2, 4], [0, 1], CONFIG, n_jobs=1)
    parallel = pr.build_profile(task, [0, 2, 4], [0, 1], CONFIG, n_jobs=2)
    assert serial.to_dict() == parallel.to_dict()


def test_profile_input_errors(task):
    with pytest.raises(ValueError):
        pr.build_profile(task, [], [0], CONFIG)
    with pytest.raises(ValueError):
        pr.build_profile(task, [0], [], CONFIG)
    with pytest.raises(ValueError):
        pr.build_profile(task, [0, 9], [0], CONFIG)


def test_profile_per_seed_and_dict(task):
    prof = pr.build_profile(task, [0, 4], [0, 1], CONFIG)
    one = prof.per_seed(1)
    assert [e.mean_acc for e in one.entries] == [e.accuracies[1] for e in prof.entries]
    d = prof.to_dict()
    assert d["optimal_depth"] == pr.optimal_depth(prof) and len(d["entries"]) == 2


# -- optimal depth ---------------------------------------------------------------------


def test_optimal_depth_examples():
    assert pr.optimal_depth(pr.DefrostingProfile.from_means([(0, 0.5), (1, 0.7), (2, 0.6)])) == 1
    assert pr.optimal_depth(pr.DefrostingProfile.from_means([(0, 0.7), (3, 0.7)])) == 3
    with pytest.raises(ValueError):
        pr.optimal_depth(pr.DefrostingProfile([]))


@given(st.lists(st.floats(0, 1), min_size=1, max_size=12))
def test_optimal_depth_is_brute_force_max(accs):
    prof = pr.DefrostingProfile.from_means(list(enumerate(accs)))
    k = pr.optimal_depth(prof)
    assert accs[k] == max(accs)
    assert all(a < accs[k] for a in accs[k + 1:])


def test_optimal_depth_on_real_profile(task):
    prof = pr.build_profile(task, task.cuts, [0], CONFIG)
    best = max(prof.entries, key=lambda e: (e.mean_acc, e.cut))
    assert pr.optimal_depth(prof) == best.cut


# -- probing --------------------------------------------------------------------------


def test_probe_anchors():
    spec = nn.NetworkSpec.from_widths([32, 128, 128, 64, 64, 32, 4])
    assert pr.probe_anchors(spec) == [5, 3, 4]
    flat = nn.NetworkSpec.from_widths([4, 8, 8, 8, 2])
    assert pr.probe_anchors(flat) == [3, 0, 1]


def test_probe_budget_too_small(task):
    with pytest.raises(ValueError):
        pr.efficient_probe(task, 1, CONFIG, [0])


def test_probe_exhaustive_fallback(task):
    prof = pr.build_profile(task, task.cuts, [0, 1], CONFIG)
    best, partial = pr.efficient_probe(task, len(task.cuts), CONFIG, [0, 1])
    assert best == pr.optimal_depth(prof)
    assert partial.cuts == prof.cuts and np.allclose(partial.means, prof.means)


def test_probe_budget_two_picks_better_anchor():
    means = {0: 0.4, 1: 0.5, 2: 0.9, 3: 0.6, 4: 0.55, 5: 0.3}
    best, scores = pr.probe_search(range(6), [5, 3, 4], 2, means.__getitem__)
    assert set(scores) == {5, 3} and best == 3


def test_probe_never_exceeds_budget():
    calls = []
    means = np.linspace(0, 1, 12)
    best, scores = pr.probe_search(range(12), [11, 2, 6], 5, lambda k: calls.append(k) or means[k])
    assert len(calls) == len(set(calls)) == 5 == len(scores)
    assert best == 11


def _unimodal(rng, n_cuts):
    peak = int(rng.integers(0, n_cuts))
    slope_l, slope_r = rng.uniform(0.01, 0.08, size=2)
    k = np.arange(n_cuts)
    curve = 0.8 - np.where(k <= peak, slope_l * (peak - k), slope_r * (k - peak))
    return curve + rng.normal(0, 0.004, size=n_cuts)


def test_probe_budget_five_on_unimodal_profiles():
    rng = np.random.default_rng(0)
    hits = 0
    draws = 200
    for _ in range(draws):
        n_cuts = int(rng.integers(6, 13))
        curve = _unimodal(rng, n_cuts)
        widths = [16] * int(rng.integers(1, n_cuts - 1)) + [8] * n_cuts
        spec = nn.NetworkSpec.from_widths(widths[:n_cuts] + [3])
        truth = pr.optimal_depth(pr.DefrostingProfile.from_means(enumerate(curve)))
        best, _ = pr.probe_search(range(n_cuts), pr.probe_anchors(spec), 5, curve.__getitem__)
        hits += abs(best - truth) <= 1
    assert hits / draws >= 0.8


@settings(max_examples=60)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=15), st.integers(2, 16))
def test_probe_search_result_is_best_probed(accs, budget):
    best, scores = pr.probe_search(range(len(accs)), [len(accs) - 1, 0], budget, accs.__getitem__)
    assert len(scores) == min(budget, len(accs))
    assert scores[best] == max(scores.values())


# -- compliant learning ----------------------------------------------------------------


def test_zero_coupling_is_plain_training(task):
    assert pr.compliant_train(task, 0.0, [0], CONFIG, 4).equals(pr.defrost_train(task, 0, CONFIG, 4))


def test_strong_coupling_locks_layer(task):
    result = pr.compliant_sweep(task, [0.0, 10.0], [0, 1], nn.TrainConfig(epochs=30, batch_size=32, lr=0.05), [0, 1])
    assert result.points[0].cos_dist > 0.2
    assert result.points[1].cos_dist < 0.01
    assert result.coupled_layers == (0, 1)
    assert all(len(p.accuracies) == 2 for p in result.points)
    assert result.to_dict()["points"][1]["lambda"] == 10.0


def test_compliant_input_validation(task):
    with pytest.raises(ValueError):
        pr.compliant_sweep(task, [-1.0], [0], CONFIG, [0])
    with pytest.raises(ValueError):
        pr.compliant_sweep(task, [1.0, 0.1], [0], CONFIG, [0])
    with pytest.raises(ValueError):
        pr.compliant_sweep(task, [1.0], [], CONFIG, [0])


def test_compliant_sweep_parallel_matches_serial(task):
    a = pr.compliant_sweep(task, [0.0, 1.0], [0], CONFIG, [0, 1], n_jobs=1)
    b = pr.compliant_sweep(task, [0.0, 1.0], [0], CONFIG, [0, 1], n_jobs=2)
    assert a.to_dict() == b.to_dict()


# -- estimator front-end -------------------------------------------------------------------


def test_layerwise_defroster_estimator(task):
    est = pr.LayerwiseDefroster(task.source_spec, task.source_params, cut=2, config=CONFIG, random_state=5)
    assert est.get_params()["cut"] == 2
    est.fit(task.train.features, task.train.labels)
    assert est.params_.equals(pr.defrost_train(task, 2, CONFIG, 5))
    assert est.predict(task.test.features).shape == (task.test.n_samples,)
    assert 0.0 <= est.score(task.test.features, task.test.labels) <= 1.0
    assert est.transform(task.test.features).shape == (task.test.n_samples, 16)
    copy = clone(est).set_params(cut=0)
    assert copy.cut == 0 and not hasattr(copy, "params_")
