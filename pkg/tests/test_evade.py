import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attrishield.classify import LinearSoftmaxModel, init_mlp, predict
from attrishield.core import NoiseTypePolicy, RatingGrid, is_grid_valid, l0_norm, policy_feasible_indices
from attrishield.evade import PandaConfig, find_all_noises, fgsm, jsma, panda

HAND = LinearSoftmaxModel([[1.0, 0.0], [0.0, 3.0]], [0.0, 0.0])
X0 = np.array([1.0, 0.0])
GRID = RatingGrid()


def test_panda_hand_trace_modify_add():
    trace = []
    res = panda(HAND, X0, 1, PandaConfig(policy="modify_add"), trace)
    np.testing.assert_array_equal(res.noise, [0.0, 1.0])
    assert res.l0_cost == 1 and res.success
    assert trace[0][:3] == (1, 1, 1)


def test_panda_predicted_target_is_zero_noise():
    res = panda(HAND, X0, 0)
    assert res.l0_cost == 0 and res.success and res.iterations == 0
    np.testing.assert_array_equal(res.noise, [0.0, 0.0])


def test_panda_modify_exist_exhausts():
    res = panda(HAND, X0, 1, PandaConfig(policy=NoiseTypePolicy.MODIFY_EXIST))
    assert not res.success
    np.testing.assert_array_equal(res.noise, [-1.0, 0.0])
    assert res.iterations == 1


def test_jsma_hand_trace():
    res = jsma(HAND, X0, 1)
    np.testing.assert_array_equal(res.noise, [0.0, 1.0])
    assert res.l0_cost == 1 and res.success
    assert jsma(HAND, X0, 0).l0_cost == 0


def test_fgsm_hand_trace():
    res = fgsm(HAND, X0, 1, epsilon=1.0)
    np.testing.assert_array_equal(res.noise, [-1.0, 1.0])
    assert res.success and res.l0_cost == 2


def test_fgsm_tiny_step_is_identity():
    res = fgsm(HAND, X0, 1, epsilon=1e-9)
    assert res.l0_cost == 0 and not res.success
    assert fgsm(HAND, X0, 0, epsilon=1e-9).success
    with pytest.raises(ValueError):
        fgsm(HAND, X0, 1, epsilon=0)


def test_find_all_noises_replay():
    rng = np.random.default_rng(0)
    model = LinearSoftmaxModel(rng.normal(size=(4, 12)), rng.normal(size=4))
    x = rng.choice(GRID.values, 12)
    results = find_all_noises(model, x, "modify_add")
    assert results[predict(model, x)].l0_cost == 0
    for i, res in enumerate(results):
        assert res.target == i
        if res.success:
            assert predict(model, x + res.noise) == i


def test_validation():
    with pytest.raises(ValueError):
        panda(HAND, X0, 5)
    with pytest.raises(ValueError):
        panda(HAND, [1.0, 0.0, 0.0], 1)
    with pytest.raises(ValueError):
        PandaConfig(tau=0)
    with pytest.raises(ValueError):
        PandaConfig(max_iters=0)


@st.composite
def instances(draw):
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    d = int(rng.integers(3, 15))
    m = int(rng.integers(2, 5))
    if draw(st.booleans()):
        model = LinearSoftmaxModel(rng.normal(size=(m, d)), rng.normal(size=m))
    else:
        model = init_mlp(d, m, 8, rng)
    x = rng.choice(GRID.values, d) * (rng.random(d) < 0.5)
    target = int(rng.integers(m))
    policy = draw(st.sampled_from(list(NoiseTypePolicy)))
    tau = draw(st.sampled_from([1.0, 0.5, 0.2]))
    return model, x, target, policy, tau


@settings(max_examples=150, deadline=None)
@given(instances())
def test_panda_invariants(inst):
    model, x, target, policy, tau = inst
    res = panda(model, x, target, PandaConfig(tau=tau, policy=policy))
    allowed = set(policy_feasible_indices(x, policy))
    assert set(np.flatnonzero(res.noise)) <= allowed
    assert is_grid_valid(x + res.noise)
    assert res.l0_cost == l0_norm(res.noise)
    if res.success:
        assert predict(model, x + res.noise) == target
    if predict(model, x) == target:
        assert res.l0_cost == 0 and res.success
    again = panda(model, x, target, PandaConfig(tau=tau, policy=policy))
    assert again.noise.tobytes() == res.noise.tobytes() and again.iterations == res.iterations


@settings(max_examples=60, deadline=None)
@given(instances())
def test_baseline_noises_grid_valid(inst):
    model, x, target, _, _ = inst
    for res in (jsma(model, x, target), fgsm(model, x, target)):
        assert is_grid_valid(x + res.noise)
        assert res.l0_cost == l0_norm(res.noise)
        if res.success:
            assert predict(model, x + res.noise) == target


def _random_suite(n_models=20, users=15, d=30, m=4, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n_models):
        model = LinearSoftmaxModel(rng.normal(size=(m, d)), rng.normal(size=m) * 0.1)
        for _ in range(users):
            x = rng.choice(GRID.values[1:], d) * (rng.random(d) < 0.3)
            for i in range(m):
                if predict(model, x) != i:
                    yield model, x, i


def test_panda_no_worse_than_jsma_and_fgsm_on_random_suite():
    p, j, f = [], [], []
    for model, x, i in _random_suite():
        p.append(panda(model, x, i).l0_cost)
        j.append(jsma(model, x, i).l0_cost)
        f.append(fgsm(model, x, i).l0_cost)
    assert np.mean(j) >= np.mean(p)
    assert np.mean(f) >= np.mean(p)


def test_policy_flexibility_ordering_on_random_suite():
    costs = {pol: [] for pol in NoiseTypePolicy}
    for model, x, i in _random_suite(seed=1):
        for pol in NoiseTypePolicy:
            res = panda(model, x, i, PandaConfig(policy=pol))
            costs[pol].append(res.l0_cost if res.success else np.nan)
    # compare where every policy succeeded
    arr = np.array([costs[p] for p in NoiseTypePolicy])
    ok = ~np.isnan(arr).any(axis=0)
    means = dict(zip(NoiseTypePolicy, arr[:, ok].mean(axis=1)))
    assert means[NoiseTypePolicy.MODIFY_ADD] <= means[NoiseTypePolicy.ADD_NEW]
    assert means[NoiseTypePolicy.MODIFY_ADD] <= means[NoiseTypePolicy.MODIFY_EXIST]
