import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlpmm.ensemble import train_nlpmm
from nlpmm.evaluation import evaluate, make_examples
from nlpmm.synthgen import generate, two_regime_config
from nlpmm.temporal import (
    DAY,
    BinnedTrajectories,
    TimeBinConfig,
    assign_bins,
    build_time_aware,
    cluster_bins,
    cluster_bins_detailed,
    cosine_similarity,
    restrict_to_bins,
    transition_distributions,
)
from nlpmm.trajectory_core import Trajectory, TrajectoryUnit

H = 3600


def traj(obj, pairs):
    return Trajectory(obj, tuple(TrajectoryUnit(l, int(t)) for l, t in pairs))


def test_bin_config_validation():
    assert TimeBinConfig(24).bin_of(9 * H) == 9
    assert TimeBinConfig(24).bin_of(9 * H - 1) == 8
    assert TimeBinConfig(24, offset=H).bin_of(23 * H) == 0
    with pytest.raises(ValueError):
        TimeBinConfig(7)
    with pytest.raises(ValueError):
        TimeBinConfig(0)


def test_assign_bins_examples():
    t = traj(0, [(1, 8.1 * H), (2, 8.5 * H), (3, 9.2 * H)])
    out = assign_bins([t], TimeBinConfig(24))
    assert [(b, p.locations) for b, p in out] == [(8, [1, 2]), (9, [3])]
    assert assign_bins([t], TimeBinConfig(1)) == [(0, t)]
    edge = traj(0, [(1, 9 * H)])
    assert assign_bins([edge], TimeBinConfig(24))[0][0] == 9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 3 * DAY), min_size=1, max_size=10, unique=True), st.sampled_from([1, 2, 4, 24]))
def test_assign_bins_preserves_units(times, bins):
    t = traj(0, [(i % 3, x) for i, x in enumerate(sorted(times))])
    cfg = TimeBinConfig(bins)
    pieces = assign_bins([t], cfg)
    assert [u for _, p in pieces for u in p.units] == list(t.units)
    for b, p in pieces:
        assert all(cfg.bin_of(u.time) == b for u in p.units)
    for (b1, _), (b2, _) in zip(pieces, pieces[1:]):
        assert b1 != b2


def test_restrict_to_bins_keeps_runs_inside():
    t = traj(0, [(0, 1 * H), (1, 2 * H), (2, 13 * H), (3, 14 * H), (4, 15 * H)])
    cfg = TimeBinConfig(24)
    assert [p.locations for p in restrict_to_bins([t], cfg, [1, 2, 14, 15])] == [[0, 1], [3, 4]]
    assert restrict_to_bins([t], cfg, range(24)) == [t]
    assert BinnedTrajectories([t], cfg).restrict([5]) == []


def test_transition_distributions_examples():
    A, B, C = 0, 1, 2
    binned = [(8, traj(0, [(A, 0), (B, 1)]))] * 3 + [(8, traj(0, [(A, 0), (C, 1)]))]
    dists = {(d.location, d.bin): d.vector for d in transition_distributions(binned, 3, 24)}
    np.testing.assert_array_equal(dists[A, 8], [0, 0.75, 0.25])
    assert not dists[A, 3].any()
    one = {(d.location, d.bin): d.vector for d in transition_distributions([(2, traj(0, [(B, 0), (A, 1)]))], 3, 4)}
    np.testing.assert_array_equal(one[B, 2], [1, 0, 0])


def test_cosine_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert cosine_similarity(p, p) == pytest.approx(1.0)
    assert cosine_similarity([1, 0, 0], [0, 0.5, 0.5]) == 0.0
    assert cosine_similarity([0.5, 0.5, 0], [1, 0, 0]) == pytest.approx(1 / np.sqrt(2), abs=1e-12)
    assert cosine_similarity([0, 0], [1, 0]) == 0.0


def test_cluster_q1_and_qm():
    rng = np.random.default_rng(0)
    x = rng.dirichlet(np.ones(4), size=6)
    assert cluster_bins(x, 1, rng=0) == [0] * 6
    labels = cluster_bins(x, 6, rng=1)
    assert sorted(labels) == list(range(6))
    with pytest.raises(ValueError):
        cluster_bins(x, 7)


def test_two_orthogonal_groups_recovered_for_every_seed():
    a, b = np.array([0.6, 0.4, 0, 0]), np.array([0, 0, 0.1, 0.9])
    groups = [0, 0, 1, 0, 1, 1, 1, 0]
    x = np.array([a if g == 0 else b for g in groups])
    for seed in range(200):
        labels = cluster_bins(x, 2, rng=seed)
        same = [[labels[i] == labels[j] for j in range(8)] for i in range(8)]
        want = [[groups[i] == groups[j] for j in range(8)] for i in range(8)]
        assert same == want


def test_cluster_terminates_and_handles_empty_bins():
    rng = np.random.default_rng(4)
    x = rng.dirichlet(np.ones(5), size=24)
    x[[3, 7]] = 0
    res = cluster_bins_detailed(x, 5, max_iter=3, rng=2)
    assert 1 <= res.iterations <= 3
    assert len(res.labels) == 24 and max(res.labels) < 5
    assert res.labels[3] == res.labels[7] == 0
    assert cluster_bins(np.zeros((4, 3)), 2, rng=0) == [0, 0, 0, 0]


def regime_data(seed=0, n_objects=60):
    return generate(two_regime_config(
        n_locations=8, out_degree=1, orthogonal=True, n_objects=n_objects, trajectories_per_object=10,
        singleton_fraction=0.0, max_length=3, seed=seed,
    ))


def test_single_bin_and_single_cluster_equal_base():
    res = regime_data()
    ts = res.trajectories
    base = train_nlpmm(ts, 8, 3)
    tb = build_time_aware(ts, 8, "tb", TimeBinConfig(1), base=base)
    dc = build_time_aware(ts, 8, "dc", TimeBinConfig(24), n_clusters=1, base=base)
    assert tb.equivalent_to_base() and dc.equivalent_to_base()
    examples = make_examples(ts[:200])
    want = [r.ranking for r in evaluate(base, examples, 5)]
    assert [r.ranking for r in evaluate(tb, examples, 5)] == want
    assert [r.ranking for r in evaluate(dc, examples, 5)] == want


def test_dc_submodels_hold_each_regimes_successor():
    res = regime_data(seed=3, n_objects=500)
    tp = build_time_aware(res.trajectories, 8, "dc", TimeBinConfig(24), n_clusters=2, seed=3)
    morning, afternoon = tuple(range(12)), tuple(range(12, 24))
    assert set(tp.models) == {morning, afternoon}
    tables = res.truth.transitions
    for key, r in ((morning, 0), (afternoon, 1)):
        sub = tp.models[key]
        for loc in range(8):
            succ = int(np.argmax(tables[r, loc]))
            assert sub.gmm.predict_sparse([loc]) in ({}, {succ: 1.0})


def test_tb_routes_to_bin_model_and_falls_back():
    res = regime_data(seed=1)
    tp = build_time_aware(res.trajectories, 8, "tb", TimeBinConfig(24), seed=1)
    unit = TrajectoryUnit(2, 10 * H + 5)
    direct = tp.models[(10,)].predict(0, [2], 3)
    assert tp.predict(0, [unit], 3) == direct
    # a bin that never sees location 7 leaves the sub-model empty, so the base answers
    empty_key = next(k for k, sub in tp.models.items() if not sub.gmm.predict_sparse([7]))
    pred = tp.predict(0, [TrajectoryUnit(7, empty_key[0] * H)], 3)
    assert pred.fallback and pred.ranking == tp.base.predict(0, [7], 3).ranking


def test_dc_rejects_too_many_clusters():
    res = regime_data(n_objects=5)
    with pytest.raises(ValueError):
        build_time_aware(res.trajectories, 8, "dc", TimeBinConfig(4), n_clusters=5)


def test_same_context_different_hours_follow_regimes():
    res = regime_data(seed=5, n_objects=500)
    tables = res.truth.transitions
    for variant in ("tb", "dc"):
        tp = build_time_aware(res.trajectories, 8, variant, TimeBinConfig(24), n_clusters=2, seed=5)
        for loc in range(8):
            at9 = tp.predict(-1, [TrajectoryUnit(loc, 9 * H)], 1).ranking
            at14 = tp.predict(-1, [TrajectoryUnit(loc, 14 * H)], 1).ranking
            assert at9 == [int(np.argmax(tables[0, loc]))]
            assert at14 == [int(np.argmax(tables[1, loc]))]
