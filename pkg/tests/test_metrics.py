import itertools
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from keyface.core import CoeffVector, validate_coeffs
from keyface.errors import (
    BadK,
    DimensionMismatch,
    EmptySet,
    LengthMismatch,
    ShapeMismatch,
    TooFewSamples,
)
from keyface.evaluation import (
    GaussianStats,
    batched_retrieval,
    diversity,
    evaluate_sets,
    fid,
    fit_gaussian,
    frechet_distance,
    match_ranks,
    mmd,
    r_precision,
    similarity_matrix,
    wasserstein_dist,
)


# -- oracles -------------------------------------------------------------------

def frechet_oracle(mu1, s1, mu2, s2):
    covmean = scipy.linalg.sqrtm(s1 @ s2)
    covmean = np.real(covmean)
    d = mu1 - mu2
    return float(d @ d + np.trace(s1) + np.trace(s2) - 2 * np.trace(covmean))


def quantile_oracle(values, q):
    xs = sorted(values)
    if len(xs) == 1:
        return xs[0]
    pos = q * (len(xs) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(xs) - 1)
    frac = pos - lo
    return xs[lo] * (1 - frac) + xs[hi] * frac


def wdist_oracle(a, b):
    m = max(len(a), len(b))
    grid = [i / (m - 1) for i in range(m)] if m > 1 else [0.0]
    total = 0.0
    for c in range(len(a[0])):
        ca = [row[c] for row in a]
        cb = [row[c] for row in b]
        total += sum(abs(quantile_oracle(ca, q) - quantile_oracle(cb, q)) for q in grid) / m
    return total / len(a[0])


def random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T / d + 0.1 * np.eye(d)


def unit_rows(rng, n, d=64):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def stats(mu, cov, n=10):
    return GaussianStats(np.asarray(mu, float), np.asarray(cov, float), n)


# -- Gaussian fit / FID -------------------------------------------------------------

def test_fit_gaussian_neutral_copies():
    g = fit_gaussian([CoeffVector.neutral(), CoeffVector.neutral()])
    assert np.all(g.mean == 0)
    np.testing.assert_allclose(g.cov, 1e-6 * np.eye(61), atol=1e-18)


def test_fit_gaussian_two_points():
    g = fit_gaussian([validate_coeffs([0.0] * 61), validate_coeffs([1.0] * 61)])
    np.testing.assert_allclose(g.mean, 0.5)
    np.testing.assert_allclose(np.diag(g.cov), 0.5 + 1e-6, rtol=1e-12)


def test_fit_gaussian_too_few():
    with pytest.raises(TooFewSamples):
        fit_gaussian([CoeffVector.neutral()])


def test_gaussian_stats_invariants():
    with pytest.raises(TooFewSamples):
        stats(np.zeros(2), np.eye(2), n=1)
    with pytest.raises(ValueError):
        stats(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(DimensionMismatch):
        stats(np.zeros(2), np.eye(3))


def test_frechet_identity_and_mean_shift():
    a = stats(np.zeros(61), np.eye(61))
    assert frechet_distance(a, a) == pytest.approx(0.0, abs=1e-8)
    b = stats(np.full(61, 0.1), np.eye(61))
    assert frechet_distance(a, b) == pytest.approx(0.61, rel=1e-9)


def test_frechet_one_dimensional_scale():
    assert frechet_distance(stats([0.0], [[1.0]]), stats([0.0], [[4.0]])) == pytest.approx(1.0, rel=1e-12)
    d = frechet_distance(stats(np.zeros(61), np.eye(61)), stats(np.zeros(61), 4 * np.eye(61)))
    assert d == pytest.approx(61.0, rel=1e-12)


def test_frechet_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        frechet_distance(stats(np.zeros(2), np.eye(2)), stats(np.zeros(3), np.eye(3)))


@pytest.mark.parametrize("seed", range(10))
def test_frechet_matches_sqrtm_oracle(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 20))
    mu1, mu2 = rng.standard_normal(d), rng.standard_normal(d)
    s1, s2 = random_spd(rng, d), random_spd(rng, d)
    got = frechet_distance(stats(mu1, s1), stats(mu2, s2))
    assert got == pytest.approx(frechet_oracle(mu1, s1, mu2, s2), rel=1e-6)


def test_frechet_symmetry_and_psd_clamp():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (30, 61))
    y = rng.uniform(-1, 1, (12, 61))  # rank-deficient sample covariance
    assert fid(x, y) == pytest.approx(fid(y, x), abs=1e-8)
    assert fid(x, y) >= 0.0
    assert fid(x, x) == pytest.approx(0.0, abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_fid_invariant_to_sample_order(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, (20, 61)), rng.uniform(-1, 1, (15, 61))
    a = fid(x, y)
    b = fid(x[rng.permutation(20)], y[rng.permutation(15)])
    assert a == pytest.approx(b, rel=1e-8, abs=1e-10)


# -- W-Dist -----------------------------------------------------------------------

def test_wdist_identity_and_point_masses():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (7, 61))
    assert wasserstein_dist(x, x) == 0.0
    assert wasserstein_dist(np.zeros((3, 61)), np.ones((5, 61))) == pytest.approx(1.0, abs=1e-15)


def test_wdist_empty():
    with pytest.raises(EmptySet):
        wasserstein_dist(np.zeros((0, 61)), np.zeros((2, 61)))
    with pytest.raises(DimensionMismatch):
        wasserstein_dist(np.zeros((2, 3)), np.zeros((2, 4)))


@pytest.mark.parametrize("seed", range(20))
def test_wdist_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 8))
    a = rng.uniform(-1, 1, (int(rng.integers(1, 12)), d)).tolist()
    b = rng.uniform(-1, 1, (int(rng.integers(1, 12)), d)).tolist()
    assert wasserstein_dist(a, b) == pytest.approx(wdist_oracle(a, b), abs=1e-9)


same_size_sets = st.integers(min_value=1, max_value=8).flatmap(
    lambda n: st.tuples(*[st.lists(st.lists(st.floats(-1, 1), min_size=1, max_size=1), min_size=n, max_size=n)] * 3))


@given(same_size_sets)
def test_wdist_triangle_inequality(triple):
    a, b, c = triple
    assert wasserstein_dist(a, c) <= wasserstein_dist(a, b) + wasserstein_dist(b, c) + 1e-12


@given(st.lists(st.lists(st.floats(-1, 1), min_size=3, max_size=3), min_size=1, max_size=9),
       st.lists(st.lists(st.floats(-1, 1), min_size=3, max_size=3), min_size=1, max_size=9),
       st.randoms(use_true_random=False))
def test_wdist_order_invariant_and_symmetric(a, b, r):
    a2, b2 = a[:], b[:]
    r.shuffle(a2)
    r.shuffle(b2)
    assert wasserstein_dist(a, b) == pytest.approx(wasserstein_dist(a2, b2), abs=1e-12)
    assert wasserstein_dist(a, b) == pytest.approx(wasserstein_dist(b, a), abs=1e-12)


# -- diversity -------------------------------------------------------------------

def test_diversity_identical():
    assert diversity(np.full((6, 61), 0.3), pairs=10) == 0.0


def test_diversity_two_vectors():
    a, b = np.zeros(61), np.zeros(61)
    b[0], b[1] = 0.3, 0.4
    assert diversity(np.stack([a, b]), pairs=1) == pytest.approx(0.5, abs=1e-15)


def test_diversity_exhaustive_matches_all_pairs():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (10, 61))
    dists = [math.dist(x[i], x[j]) for i, j in itertools.combinations(range(10), 2)]
    assert diversity(x, pairs=45) == pytest.approx(sum(dists) / 45, rel=1e-12)


def test_diversity_sampled_pairs_are_distinct_and_seeded():
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, (40, 61))
    a = diversity(x, pairs=300, seed=42)
    assert a == diversity(x, pairs=300, seed=42)
    assert a != diversity(x, pairs=300, seed=43)
    with pytest.raises(TooFewSamples):
        diversity(x[:1])


# -- retrieval metrics ------------------------------------------------------------

def test_similarity_matrix_cases():
    eye = np.eye(4)
    np.testing.assert_array_equal(similarity_matrix(eye, eye), eye)
    same = np.tile(unit_rows(np.random.default_rng(0), 1), (3, 1))
    np.testing.assert_allclose(similarity_matrix(same, same), np.ones((3, 3)), atol=1e-12)
    rng = np.random.default_rng(1)
    t, m = unit_rows(rng, 3), unit_rows(rng, 3)
    s = similarity_matrix(t, m)
    for i in range(3):
        for j in range(3):
            assert s[i, j] == pytest.approx(sum(a * b for a, b in zip(t[i], m[j])), abs=1e-12)


def test_similarity_checks():
    with pytest.raises(ShapeMismatch):
        similarity_matrix(np.eye(3), np.eye(4))
    with pytest.raises(ValueError):
        similarity_matrix(2 * np.eye(3), np.eye(3))


def test_r_precision_extremes():
    assert r_precision(np.eye(5), 1) == 1.0
    assert r_precision(np.eye(5), 3) == 1.0
    s = np.ones((4, 4)) - 2 * np.eye(4)
    assert r_precision(s, 3) == 0.0


def test_r_precision_ties_lower_column_wins():
    s = np.zeros((3, 3))
    assert list(match_ranks(s)) == [1, 2, 3]
    assert r_precision(s, 1) == pytest.approx(1 / 3)


def test_r_precision_bad_k():
    for k in (0, 5, 1.5, True):
        with pytest.raises(BadK):
            r_precision(np.eye(4), k)


def test_chance_level_small():
    rng = np.random.default_rng(42)
    vals = [r_precision(unit_rows(rng, 32) @ unit_rows(rng, 32).T, 3) for _ in range(300)]
    assert np.mean(vals) == pytest.approx(3 / 32, abs=0.015)


def test_mmd_cases():
    rng = np.random.default_rng(2)
    t = unit_rows(rng, 4)
    assert mmd(t, t) == 0.0
    assert mmd(np.eye(4)[:2], np.eye(4)[2:]) == pytest.approx(math.sqrt(2), abs=1e-15)
    m = unit_rows(rng, 4)
    expected = sum(math.dist(a, b) for a, b in zip(t, m)) / 4
    assert mmd(t, m) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=30)
@given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=2, max_value=12))
def test_retrieval_permutation_equivariance(seed, n):
    rng = np.random.default_rng(seed)
    t, m = unit_rows(rng, n, 8), unit_rows(rng, n, 8)
    p = rng.permutation(n)
    k = min(3, n)
    assert r_precision(t @ m.T, k) == r_precision(t[p] @ m[p].T, k)
    assert mmd(t, m) == pytest.approx(mmd(t[p], m[p]), rel=1e-12)


def test_batched_retrieval_full_batches():
    rng = np.random.default_rng(0)
    t = unit_rows(rng, 70)
    res = batched_retrieval(t, t, batch_size=32, seed=42)
    assert res["r_precision"] == {"top1": 1.0, "top2": 1.0, "top3": 1.0}
    assert res["mmd"] == pytest.approx(0.0, abs=1e-12)
    small = batched_retrieval(t[:5], t[:5], batch_size=32)
    assert small["r_precision"]["top1"] == 1.0


# -- report -------------------------------------------------------------------------

def test_report_order_and_keys():
    rng = np.random.default_rng(0)
    p = [validate_coeffs(r) for r in rng.uniform(-1, 1, (6, 61)).tolist()]
    g = [validate_coeffs(r) for r in rng.uniform(-1, 1, (6, 61)).tolist()]
    rep = evaluate_sets(p, g)
    assert list(rep) == ["fid", "wdist", "diversity", "mse", "mae", "rmse"]
    assert set(rep["diversity"]) == {"gen", "gt"}
    only = evaluate_sets(p, g, metrics=("mae",))
    assert list(only) == ["mae"]
    with pytest.raises(LengthMismatch):
        evaluate_sets(p, g[:5])
    with pytest.raises(ValueError):
        evaluate_sets(p, g, metrics=("bogus",))
