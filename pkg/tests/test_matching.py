import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import nn_pairs_oracle, smd_oracle
from frontier_match import matching
from frontier_match._accel import py_func
from frontier_match.dataset import DesignMatrix
from frontier_match.matching import (
    C2T, GENETIC, NN, T2C, MatchingError, fitness_of, match_genetic, match_nn,
    match_weighted,
)
from frontier_match.pscore import PropensityModel, SeparationError, fit_logit


def fake_model(log_odds, columns=("constant", "x1")):
    lo = np.asarray(log_odds, float)
    k = len(columns)
    return PropensityModel(
        columns, np.zeros(k), np.zeros(k), np.zeros((k, k)), 0.0, True, 0, 1 / (1 + np.exp(-lo)), lo
    )


def ids_for(n):
    return tuple(f"c{i:02d}" for i in range(n))


def random_design(seed, n_t=None, n_c=None, k=2):
    rng = np.random.default_rng(seed)
    n_t = n_t or int(rng.integers(3, 16))
    n_c = n_c or int(rng.integers(n_t, 16))
    n = n_t + n_c
    t = np.r_[np.ones(n_t), np.zeros(n_c)].astype(np.int8)
    perm = rng.permutation(n)
    t = t[perm]
    X = np.column_stack([np.ones(n), rng.normal(size=(n, k)) + 0.6 * t[:, None]])
    cols = ("constant",) + tuple(f"x{i}" for i in range(1, k + 1))
    return DesignMatrix(X, t, ids_for(n), cols)


def fitted_design(seed, **kw):
    """A random design whose logit fit exists (tiny samples can separate)."""
    for k in range(100):
        d = random_design(1000 * seed + k, **kw)
        try:
            return d, fit_logit(d)
        except SeparationError:
            continue
    raise RuntimeError("no usable fixture")


def as_pairs(ms, direction):
    return sorted((ms.ids[f], ms.ids[m]) for f, m, d in zip(ms.focal, ms.matched, ms.direction) if d == direction)


def test_exact_match_at_zero_distance():
    ms = match_nn(fake_model([1.0, 0.5, 1.0, 3.0]), [1, 0, 0, 0], ids_for(4))
    assert ms.pairs[0] == ("c00", "c02", 0.0, T2C)


def test_equidistant_tie_goes_to_lower_id():
    ms = match_nn(fake_model([1.0, 0.0, 2.0]), [1, 0, 0], ("t", "b", "a"))
    assert ms.pairs[0][:2] == ("t", "a")


def test_five_by_seven_fixture_matches_oracle():
    lo = [0.3, 1.2, -0.5, 0.9, 2.0, 0.1, 1.1, -0.2, 0.4, 1.9, -1.0, 0.8]
    t = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
    ids = ids_for(12)
    ms = match_nn(fake_model(lo), t, ids)
    fwd, rev = nn_pairs_oracle(lo, t, ids)
    assert as_pairs(ms, 1) == sorted(fwd)
    assert as_pairs(ms, 0) == sorted(rev)
    # frozen pairing
    assert sorted(fwd) == [("c00", "c08"), ("c01", "c06"), ("c02", "c07"), ("c03", "c11"), ("c04", "c09")]
    assert ms.unmatched_ids == frozenset({"c05", "c10"})


@pytest.mark.parametrize("seed", range(25))
def test_nn_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    n_t = int(rng.integers(1, 16))
    n_c = int(rng.integers(1, 16))
    lo = np.round(rng.normal(size=n_t + n_c), 1)  # rounding forces ties
    t = rng.permutation(np.r_[np.ones(n_t), np.zeros(n_c)]).astype(int)
    ids = tuple(f"u{v:03d}" for v in rng.permutation(n_t + n_c))
    ms = match_nn(fake_model(lo), t, ids)
    fwd, rev = nn_pairs_oracle(lo, t, ids)
    assert as_pairs(ms, 1) == sorted(fwd)
    assert as_pairs(ms, 0) == sorted(rev)


def test_directions_and_focal_uniqueness():
    d = random_design(3, 10, 14)
    ms = match_nn(fit_logit(d), d.treatment, d.ids)
    for direction in (0, 1):
        focal = ms.focal[ms.direction == direction]
        assert len(set(focal)) == focal.size
    assert {p[3] for p in ms.pairs} == {T2C, C2T}
    f, m = ms.treated_control_indices()
    assert np.all(d.treatment[f] == 1) and np.all(d.treatment[m] == 0)
    assert len(set(m)) == m.size


def test_with_replacement_reuses_controls():
    ms = match_nn(fake_model([1.0, 1.1, 0.9, 5.0]), [1, 1, 1, 0], ids_for(4), with_replacement=True)
    _, m = ms.treated_control_indices()
    assert m.tolist() == [3, 3, 3]


def test_pool_exhaustion_reports_unmatched():
    ms = match_nn(fake_model([1.0, 2.0, 3.0]), [1, 1, 0], ids_for(3))
    f, _ = ms.treated_control_indices()
    assert f.tolist() == [1]
    assert ms.unmatched_ids == frozenset({"c00"})


def test_caliper_drops_distant_pairs():
    lo = [0.0, 0.1, 3.0, 0.05, 10.0]
    t = [1, 1, 1, 0, 0]
    sd = np.std(lo, ddof=1)
    ms = match_nn(fake_model(lo), t, ids_for(5), caliper=0.5)
    for f, m, dist, k in ms.pairs:
        assert dist <= 0.5 * sd
    assert "c02" in ms.unmatched_ids
    with pytest.raises(MatchingError):
        match_nn(fake_model(lo), t, ids_for(5), caliper=0.0)


def test_empty_group_rejected():
    with pytest.raises(MatchingError):
        match_nn(fake_model([0.1, 0.2]), [1, 1], ids_for(2))


def test_affine_log_odds_invariance():
    d = random_design(11, 8, 12)
    m = fit_logit(d)
    a = match_nn(m, d.treatment, d.ids)
    b = match_nn(fake_model(3.0 * m.log_odds + 2.0), d.treatment, d.ids)
    assert a.pairs and [p[:2] for p in a.pairs] == [p[:2] for p in b.pairs]
    np.testing.assert_allclose(b.distance, 3.0 * a.distance, atol=1e-12)


def test_single_covariate_genetic_equals_nn():
    d = random_design(5, 8, 12, k=1)
    m = fit_logit(d)
    nn = match_nn(m, d.treatment, d.ids)
    for w in ([1.0, 1.0], [0.1, 3.0], [5.0, 0.2]):
        g = match_weighted(d, d.treatment, m, w)
        assert [p[:2] for p in g.pairs] == [p[:2] for p in nn.pairs]


def test_unit_weights_are_mahalanobis_on_standardized_covariates():
    d = random_design(7, 9, 13)
    m = fake_model(np.zeros(22), d.columns)  # constant log-odds drops out of the features
    ms = match_weighted(d, d.treatment, m, [1.0, 1.0])
    C = d.X[:, 1:]
    Z = (C - C.mean(0)) / C.std(0)
    t = np.flatnonzero(d.treatment == 1)
    free = list(np.flatnonzero(d.treatment == 0))
    want = []
    for i in sorted(t, key=lambda i: d.ids[i]):  # equal log-odds: id order
        j = min(free, key=lambda j: (np.sum((Z[i] - Z[j]) ** 2), d.ids[j]))
        free.remove(j)
        want.append((d.ids[i], d.ids[j]))
    assert as_pairs(ms, 1) == sorted(want)


def test_genetic_deterministic_and_elitist():
    d = random_design(2, 12, 15, k=3)
    m = fit_logit(d)
    a = match_genetic(d, d.treatment, m, population=10, generations=6, seed=4)
    b = match_genetic(d, d.treatment, m, population=10, generations=6, seed=4)
    assert a.pairs == b.pairs
    np.testing.assert_array_equal(a.weights, b.weights)
    hist = a.fitness_history
    assert all(hist[i + 1] <= hist[i] for i in range(len(hist) - 1))
    assert a.weights.mean() == pytest.approx(1.0)
    assert a.weight_names[-1] == "log_odds"
    assert a.method == GENETIC


@pytest.mark.parametrize("seed", range(10))
def test_genetic_no_worse_than_nn(seed):
    d, m = fitted_design(40 + seed, k=3)
    g = match_genetic(d, d.treatment, m, population=12, generations=8, seed=seed)
    nn = match_nn(m, d.treatment, d.ids)
    assert fitness_of(g, d) <= fitness_of(nn, d)
    assert fitness_of(g, d) == g.fitness_history[-1]


def grid_best(d, model, n=50):
    best = None
    for r in np.linspace(0.0, 1.0, n):
        ms = match_weighted(d, d.treatment, model, [2 * r, 2 * (1 - r)])
        f = fitness_of(ms, d)
        best = f if best is None or f < best else best
    return best


@pytest.mark.parametrize("seed", range(6))
def test_genetic_reaches_weight_ratio_grid_optimum(seed):
    rng = np.random.default_rng(seed)
    n_t, n_c = 10, 15
    t = np.r_[np.ones(n_t), np.zeros(n_c)].astype(np.int8)
    x1 = rng.normal(size=n_t + n_c)
    x2 = rng.normal(size=n_t + n_c) + 0.8 * t  # imbalanced covariate
    d = DesignMatrix(np.column_stack([np.ones(25), x1, x2]), t, ids_for(25), ("constant", "x1", "x2"))
    model = fake_model(np.zeros(25), d.columns)
    g = match_genetic(d, t, model, seed=seed)
    assert fitness_of(g, d)[0] <= grid_best(d, model)[0] + 1e-9


def test_smd_fitness_matches_oracle():
    d = random_design(8, 10, 14)
    m = fit_logit(d)
    ms = match_nn(m, d.treatment, d.ids)
    f, c = ms.treated_control_indices()
    want = sorted((abs(smd_oracle(d.X[f, j], d.X[c, j])) for j in (1, 2)), reverse=True)
    np.testing.assert_allclose(fitness_of(ms, d)[:2], want)


def test_genetic_argument_checks():
    d = random_design(1, 6, 8)
    m = fit_logit(d)
    with pytest.raises(MatchingError):
        match_genetic(d, d.treatment, m, population=4)
    with pytest.raises(MatchingError):
        match_genetic(d, d.treatment, m, generations=0)
    with pytest.raises(MatchingError):
        match_weighted(d, d.treatment, m, [1.0])


def test_python_kernel_matches_compiled():
    rng = np.random.default_rng(0)
    F = rng.normal(size=(9, 3))
    P = rng.normal(size=(14, 3))
    w = np.array([0.5, 1.0, 1.5])
    order = np.arange(9)[::-1].copy()
    rank = np.arange(14)
    for replace in (False, True):
        m1, d1 = matching.greedy_match_kernel(F, P, w, order, rank, replace, np.inf)
        m2, d2 = py_func(matching.greedy_match_kernel)(F, P, w, order, rank, replace, np.inf)
        np.testing.assert_array_equal(m1, m2)
        np.testing.assert_allclose(d1, d2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=30), st.data())
def test_nn_distances_are_pool_minimum(lo, data):
    n = len(lo)
    t = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    if 0 < sum(t) < n:
        ms = match_nn(fake_model(lo), t, ids_for(n))
        used = set()
        lo = np.asarray(lo)
        order = sorted(np.flatnonzero(np.asarray(t) == 1), key=lambda i: (-lo[i], i))
        pairs = dict(zip(*ms.treated_control_indices()))
        for i in order:
            if i not in pairs:
                continue
            pool = [j for j in range(n) if t[j] == 0 and j not in used]
            assert abs(lo[i] - lo[pairs[i]]) == min(abs(lo[i] - lo[j]) for j in pool)
            used.add(pairs[i])
        assert ms.method == NN
