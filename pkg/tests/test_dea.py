import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linprog

from _oracles import dea_vertex_oracle
from frontier_match import dea
from frontier_match._accel import py_func
from frontier_match.dea import (
    BY_GROUP, COMMON, DEAError, FrontierSample, efficiency_scores, score_all,
    scores_by_scope, solve_envelopment,
)


def linprog_score(X, Y, x0, y0):
    n = X.shape[0]
    c = np.r_[1.0, np.zeros(n)]
    A = np.vstack([np.c_[-x0[:, None], X.T], np.c_[np.zeros((Y.shape[1], 1)), -Y.T]])
    b = np.r_[np.zeros(X.shape[1]), -y0]
    res = linprog(c, A_ub=A, b_ub=b, bounds=[(0, None)] * (n + 1), method="highs")
    assert res.status == 0
    return res.x[0]


def test_two_unit_example():
    x = np.array([[1.0, 1.0], [2.0, 2.0]])
    y = np.ones((2, 2))
    np.testing.assert_allclose(efficiency_scores(x, y), [1.0, 0.5])


def test_three_unit_example_with_peers():
    s = FrontierSample(
        ("A", "B", "C"),
        [[1.0, 2.0], [2.0, 1.0], [2.0, 2.0]],
        [[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]],
    )
    out = score_all(s)
    assert [o.score for o in out[:2]] == [1.0, 1.0]
    assert out[2].score == pytest.approx(0.75, abs=1e-12)
    assert out[2].binding_peers == frozenset({"A", "B"})
    assert out[0].binding_peers == frozenset({"A"})


def test_single_unit_is_efficient():
    assert efficiency_scores([[3.0, 4.0]], [[1.0, 2.0]]).tolist() == [1.0]


def test_frozen_reference_scores():
    rng = np.random.default_rng(12)
    X = rng.uniform(1, 10, (8, 2))
    Y = rng.uniform(1, 10, (8, 2))
    expected = np.array([
        dea_vertex_oracle(X, Y, k) for k in range(8)
    ])
    np.testing.assert_allclose(efficiency_scores(X, Y), expected, atol=1e-9)
    # pinned values guard against silent drift in the oracle too
    np.testing.assert_allclose(
        expected,
        [0.5666700145, 0.6189268596, 1.0, 1.0, 0.403922881, 1.0, 0.8809125676, 0.819075176],
        atol=1e-9,
    )


@pytest.mark.parametrize("seed", range(20))
def test_matches_vertex_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    X = rng.uniform(0.1, 10, (n, 2))
    Y = rng.uniform(0.1, 10, (n, 2))
    got = efficiency_scores(X, Y)
    want = [dea_vertex_oracle(X, Y, k) for k in range(n)]
    np.testing.assert_allclose(got, want, atol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_matches_highs_on_larger_instances(seed):
    rng = np.random.default_rng(100 + seed)
    n = 60
    X = rng.lognormal(1.0, 0.5, (n, 2))
    Y = X * rng.uniform(0.2, 1.0, (n, 2))
    got = efficiency_scores(X, Y)
    want = [linprog_score(X, Y, X[k], Y[k]) for k in range(n)]
    np.testing.assert_allclose(got, want, atol=1e-7)


def test_reduced_reference_matches_full_reference():
    rng = np.random.default_rng(3)
    X = rng.lognormal(1.0, 0.4, (300, 2))
    Y = rng.lognormal(0.5, 0.4, (300, 2))
    reduced = efficiency_scores(X, Y)
    status, full = dea.score_many_kernel(X, Y, X, Y)
    assert np.all(status == 0)
    np.testing.assert_allclose(reduced, full, atol=1e-10)


def test_external_reference_can_exceed_one():
    # a target outside the reference technology has a super-efficient score
    x = efficiency_scores([[1.0, 1.0]], [[1.0, 1.0]], [[2.0, 2.0]], [[1.0, 1.0]])
    assert x[0] == pytest.approx(2.0)


def test_solve_envelopment_excludes_target():
    ref = FrontierSample(("A", "B"), [[1.0, 2.0], [2.0, 1.0]], [[1.0, 1.0], [1.0, 1.0]])
    r = solve_envelopment("C", [2.0, 2.0], [1.0, 1.0], ref)
    assert r.score == pytest.approx(0.75)
    assert r.binding_peers == frozenset({"A", "B"})


def test_by_group_scope_uses_own_group_only():
    s = FrontierSample(
        ("a", "b", "c"),
        [[1.0, 1.0], [2.0, 2.0], [4.0, 4.0]],
        np.ones((3, 2)),
        BY_GROUP,
        ("g", "h", "h"),
    )
    assert [o.score for o in score_all(s)] == [1.0, 1.0, 0.5]
    common = FrontierSample(s.unit_ids, s.inputs, s.outputs, COMMON, s.groups)
    assert [o.score for o in score_all(common)] == [1.0, 0.5, 0.25]


@pytest.mark.parametrize(
    "inputs, outputs",
    [
        ([[0.0, 1.0]], [[1.0, 1.0]]),
        ([[1.0, 1.0]], [[-1.0, 1.0]]),
        ([[np.nan, 1.0]], [[1.0, 1.0]]),
        ([[1.0, 1.0]], [[1.0, np.inf]]),
    ],
)
def test_rejects_non_positive_data(inputs, outputs):
    with pytest.raises(DEAError):
        FrontierSample(("a",), inputs, outputs)


def test_rejects_bad_scope_and_shapes():
    with pytest.raises(DEAError):
        FrontierSample(("a",), [[1.0]], [[1.0]], scope="vrs")
    with pytest.raises(DEAError):
        FrontierSample(("a", "b"), [[1.0]], [[1.0]])
    with pytest.raises(DEAError):
        FrontierSample(("a",), [[1.0]], [[1.0]], scope=BY_GROUP)
    ref = FrontierSample(("a",), [[1.0, 1.0]], [[1.0]])
    with pytest.raises(DEAError):
        solve_envelopment("b", [1.0], [1.0], ref)


def test_empty_sample_rejected():
    with pytest.raises(DEAError):
        FrontierSample((), np.empty((0, 2)), np.empty((0, 2)))


def test_python_kernel_matches_compiled():
    rng = np.random.default_rng(8)
    X = rng.uniform(0.5, 5, (40, 2))
    Y = rng.uniform(0.5, 5, (40, 2))
    s1, t1 = dea.score_many_kernel(X, Y, X, Y)
    s2, t2 = py_func(dea.score_many_kernel)(X, Y, X, Y)
    np.testing.assert_array_equal(s1, s2)
    np.testing.assert_allclose(t1, t2, rtol=0, atol=1e-12)
    m1 = dea.reference_mask_kernel(X, Y)
    m2 = py_func(dea.reference_mask_kernel)(X, Y)
    np.testing.assert_array_equal(m1, m2)


positive = st.floats(0.1, 10.0, allow_nan=False)


def units(n_min=1, n_max=8):
    return st.integers(n_min, n_max).flatmap(
        lambda n: st.tuples(arrays(float, (n, 2), elements=positive), arrays(float, (n, 2), elements=positive))
    )


@settings(max_examples=60, deadline=None)
@given(units())
def test_scores_bounded(data):
    X, Y = data
    s = efficiency_scores(X, Y)
    assert np.all(s > 0) and np.all(s <= 1.0)
    assert s.max() == 1.0


@settings(max_examples=60, deadline=None)
@given(units(), st.floats(0.01, 100.0), st.floats(0.01, 100.0), st.integers(0, 3))
def test_units_invariance(data, a, b, col):
    X, Y = data
    X2, Y2 = X.copy(), Y.copy()
    if col < 2:
        X2[:, col] *= a
    else:
        Y2[:, col - 2] *= a
    X2[:, 1 - col % 2] *= b
    np.testing.assert_allclose(efficiency_scores(X2, Y2), efficiency_scores(X, Y), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(units(), st.data())
def test_ray_invariance(data, draw):
    X, Y = data
    k = draw.draw(st.integers(0, X.shape[0] - 1))
    c = draw.draw(st.floats(0.05, 20.0))
    X2, Y2 = X.copy(), Y.copy()
    X2[k] *= c
    Y2[k] *= c
    np.testing.assert_allclose(efficiency_scores(X2, Y2), efficiency_scores(X, Y), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(units(), units(1, 4))
def test_reference_monotonicity(data, extra):
    X, Y = data
    Xe, Ye = extra
    base = efficiency_scores(X, Y)
    bigger = efficiency_scores(X, Y, np.vstack([X, Xe]), np.vstack([Y, Ye]))
    assert np.all(bigger <= base + 1e-9)


@settings(max_examples=60, deadline=None)
@given(units(2, 10), st.data())
def test_separate_frontiers_nest_common(data, draw):
    X, Y = data
    groups = draw.draw(st.lists(st.sampled_from("ab"), min_size=X.shape[0], max_size=X.shape[0]))
    common = scores_by_scope(X, Y)
    separate = scores_by_scope(X, Y, groups)
    assert np.all(separate >= common - 1e-9)


@settings(max_examples=40, deadline=None)
@given(units(2, 8))
def test_peers_are_efficient(data):
    X, Y = data
    s = FrontierSample(tuple(f"u{i}" for i in range(X.shape[0])), X, Y)
    out = score_all(s)
    by_id = {o.unit_id: o.score for o in out}
    for o in out:
        assert o.binding_peers
        assert all(by_id[p] == pytest.approx(1.0, abs=1e-7) for p in o.binding_peers)
