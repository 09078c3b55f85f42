import math
from types import SimpleNamespace

import numpy as np
import pytest

from attrishield.baselines import RrConfig, rr_defend
from attrishield.classify import TrainConfig, accuracy, baseline_most_popular, train_linear
from attrishield.core import SeedSpec, synth_generate, train_test_split
from attrishield.evaluation import (
    MfConfig,
    SweepResult,
    defend_dataset,
    defend_dataset_with,
    holdout_split,
    mf_rmse,
    mf_topn_precision,
    mf_train,
    noise_stats,
    parallel_map,
    relative_precision_loss,
    run_attack,
    sweep_budget,
    write_records_csv,
)
from attrishield.mechanism import target_uniform


@pytest.fixture(scope="module")
def suite():
    ds = synth_generate(d=40, m=3, n=600, sparsity=6, signal=0.8, seed=SeedSpec(0))
    train, test = train_test_split(ds, 0.25, 0)
    model = train_linear(train, TrainConfig(epochs=40, l2_penalty=1e-3))
    return train, test.subset(range(80)), model


def rec(chosen, cost):
    return SimpleNamespace(chosen=chosen, l0_cost=cost)


def test_noise_stats():
    assert noise_stats([rec(0, 3)]) == {0: 3.0}
    assert noise_stats([rec(1, 2), rec(1, 4)]) == {1: 3.0}
    assert 2 not in noise_stats([rec(0, 1), rec(1, 1)])


def test_relative_precision_loss():
    assert relative_precision_loss(0.4, 0.4) == 0.0
    assert relative_precision_loss(0.4, 0.3) == pytest.approx(0.25, abs=1e-15)
    assert relative_precision_loss(0.5, 0.6) == pytest.approx(0.2, abs=1e-15)
    for c in (0.1, 3.0, 17.0):
        assert relative_precision_loss(0.4 * c, 0.3 * c) == pytest.approx(0.25, abs=1e-12)
    with pytest.raises(ValueError):
        relative_precision_loss(0.0, 0.1)


def test_parallel_map_order():
    items = list(range(50))
    assert parallel_map(lambda v: v * v, items, 4) == [v * v for v in items]


def test_run_attack_undefended_equals_accuracy(suite):
    _, test, model = suite
    assert run_attack(model, test) == accuracy(model, test)
    noisy, _ = defend_dataset(model, test, target_uniform(3), 0.0)
    assert run_attack(model, noisy) == accuracy(model, test)


def test_baseline_attack_unchanged_by_defense(suite):
    train, test, model = suite
    ba = baseline_most_popular(train.labels)
    noisy, _ = defend_dataset(model, test, target_uniform(3), 5.0)
    assert run_attack(ba, noisy) == run_attack(ba, test)


def test_randomized_data_attack_near_baseline(suite):
    train, test, model = suite
    noisy = defend_dataset_with(lambda x, s, rng: rr_defend(x, RrConfig(0.0), rng), test, SeedSpec(1), "rr")
    base = run_attack(baseline_most_popular(train.labels), test)
    assert run_attack(model, noisy) <= base + 0.1


def test_sweep_budget_shape_and_determinism(suite):
    train, test, model = suite
    attackers = {"LR-A": model}
    betas = [0.0, 1.0, 2.0, 4.0]
    a = sweep_budget(model, attackers, test, betas, "modify_add", target_uniform(3), SeedSpec(5))
    b = sweep_budget(model, attackers, test, betas, "modify_add", target_uniform(3), SeedSpec(5), threads=4)
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0] == "beta,attack,accuracy,mean_l0,mean_l2"
    rows = a.for_attack("LR-A")
    assert rows[0][2] == accuracy(model, test) and rows[0][3] == 0.0
    for beta, _, acc, l0, _ in rows:
        assert 0.0 <= acc <= 1.0
        assert l0 <= beta + 0.5
    accs = [r[2] for r in rows]
    assert all(y <= x + 0.05 for x, y in zip(accs, accs[1:]))
    with pytest.raises(ValueError):
        sweep_budget(model, attackers, test, [], "modify_add", target_uniform(3))
    with pytest.raises(ValueError):
        sweep_budget(model, attackers, test, [2.0, 1.0], "modify_add", target_uniform(3))


def test_records_csv(tmp_path, suite):
    _, test, model = suite
    _, recs = defend_dataset(model, test.subset(range(5)), target_uniform(3), 2.0, seed=SeedSpec(0))
    path = tmp_path / "r.csv"
    write_records_csv(path, recs, method="attriguard")
    lines = path.read_text().splitlines()
    assert lines[0] == "user_id,chosen_index,l0_cost,binding,mu0,lambda,method"
    assert len(lines) == 6


def test_mf_rank_one_reconstruction():
    rng = np.random.default_rng(0)
    u = rng.uniform(0.5, 1.0, 40)
    v = rng.uniform(0.5, 1.0, 30)
    R = np.outer(u, v)
    mask = rng.random(R.shape) < 0.6
    model = mf_train(np.where(mask, R, 0.0), rank=1, cfg=MfConfig(epochs=2000, l2_penalty=0.0, init_scale=0.5), mask=mask)
    assert mf_rmse(model, R, mask) <= 0.05


def test_mf_zero_epochs_and_determinism():
    R = np.random.default_rng(1).choice([0, 0.4, 1.0], (10, 8))
    cfg = MfConfig(epochs=0, seed=3)
    m0 = mf_train(R, 2, cfg)
    rng = np.random.default_rng(3)
    np.testing.assert_array_equal(m0.P, 0.1 * rng.standard_normal((10, 2)))
    a = mf_train(R, 2, MfConfig(epochs=20, seed=3))
    b = mf_train(R, 2, MfConfig(epochs=20, seed=3))
    assert a.P.tobytes() == b.P.tobytes()
    with pytest.raises(ValueError):
        mf_train(R, 0)


def _ratings(n=200, d=100, per_user=20, seed=0):
    rng = np.random.default_rng(seed)
    R = np.zeros((n, d))
    for u in range(n):
        R[u, rng.choice(d, per_user, replace=False)] = rng.choice([0.2, 0.4, 0.6, 0.8, 1.0], per_user)
    return R


def test_holdout_and_precision_bounds():
    R = _ratings()
    train, hold = holdout_split(R, 5, 0)
    assert np.all(hold >= 0)
    for u in range(R.shape[0]):
        assert np.all(train[u, hold[u]] == 0) and np.all(R[u, hold[u]] != 0)
    # oracle score: holdout items ranked first
    S = np.zeros(R.shape)
    for u in range(R.shape[0]):
        S[u, hold[u]] = 1.0
    assert mf_topn_precision(S, train, hold, 5) == 1.0
    assert mf_topn_precision(-S, train, hold, 5) == 0.0
    for N in (1, 3, 10, 20):
        assert 0.0 <= mf_topn_precision(S, train, hold, N) <= min(1.0, 5 / N)
    with pytest.raises(ValueError):
        mf_topn_precision(S, R, hold, 5)


def test_random_ranking_precision():
    R = _ratings(n=2000, d=100, per_user=5, seed=1)
    train, hold = holdout_split(R, 5, 1)
    S = np.random.default_rng(2).random(R.shape)
    pre = mf_topn_precision(S, train, hold, 10)
    # hypergeometric: 10 of 100 candidates, 5 relevant
    var = 10 * (5 / 100) * (95 / 100) * (90 / 99) / 100
    sigma = math.sqrt(var / 2000)
    assert abs(pre - 0.05) <= 3 * sigma


def test_short_users_skipped():
    R = np.zeros((3, 10))
    R[0, :6] = 0.4
    R[1, :2] = 0.2
    _, hold = holdout_split(R, 5, 0)
    assert hold[1, 0] == -1 and hold[2, 0] == -1 and hold[0, 0] >= 0


def test_sweep_result_csv_formatting():
    res = SweepResult()
    res.add(1, "LR-A", 0.5, 1.25, 0.3333333333)
    assert res.to_csv() == "beta,attack,accuracy,mean_l0,mean_l2\n1.000000,LR-A,0.500000,1.250000,0.333333\n"
