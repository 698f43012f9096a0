import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from energyscape.evaluation import (align_labels, basin_centroids, basin_recovery, default_kappa,
                                    hungarian_match, occupancy, score_recovery, sda, tma,
                                    transition_matrix)
from energyscape.exceptions import EmptyBasin, TooShort
from energyscape.simulate import RegimeChain, sample_chain


def brute_force_cost(C):
    K = C.shape[0]
    return min(sum(C[i, p[i]] for i in range(K)) for p in itertools.permutations(range(K)))


def test_centroids_trivial(rng):
    X = rng.standard_normal((3, 2))
    assert np.allclose(basin_centroids(X, [0, 1, 2]), X)
    X = np.array([[1.0, 2.0], [-1.0, -2.0], [5.0, 5.0]])
    assert np.allclose(basin_centroids(X, [0, 0, 1])[0], 0)


def test_centroids_summation_oracle(rng):
    X = rng.standard_normal((100, 3))
    lab = rng.integers(0, 4, 100)
    C = basin_centroids(X, lab)
    for b in range(4):
        s = np.zeros(3)
        n = 0
        for t in range(100):
            if lab[t] == b:
                s += X[t]
                n += 1
        assert np.allclose(C[b], s / n)


def test_centroids_empty_basin():
    with pytest.raises(EmptyBasin):
        basin_centroids(np.zeros((3, 2)), [0, 0, 2])


def test_hungarian_trivial():
    P = np.array([[0.0, 0], [5, 5], [9, 0]])
    m = hungarian_match(P, P)
    assert m.perm.tolist() == [0, 1, 2] and m.total_cost == 0
    m = hungarian_match(P[[1, 0, 2]], P)
    assert m.perm.tolist() == [1, 0, 2]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5))
def test_hungarian_is_optimal(seed, K):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((2, K, 3))
    m = hungarian_match(A, B)
    assert sorted(m.perm.tolist()) == list(range(K))
    assert m.total_cost == pytest.approx(brute_force_cost(m.cost), abs=1e-12)


def test_hungarian_rectangular(rng):
    B = rng.standard_normal((3, 2))
    m = hungarian_match(B[:2] + 0.01, B)
    assert m.perm.tolist() == [0, 1] and m.true_to_recovered.tolist() == [0, 1, -1]
    m = hungarian_match(np.vstack([B, [[50.0, 50.0]]]), B)
    assert m.perm.tolist() == [0, 1, 2, -1]


def test_basin_recovery_cases(rng):
    mu = np.array([[0.0, 0], [10, 0], [0, 10]])
    m = hungarian_match(mu, mu)
    assert basin_recovery(m, mu, mu, 0.1) == 1.0
    noisy = mu + 1e-3 * rng.standard_normal(mu.shape)
    assert basin_recovery(hungarian_match(noisy, mu), noisy, mu, 0.0) == 0.0
    cents = mu + np.array([[0.5, 0], [0, 0.5], [3, 0]])
    assert basin_recovery(hungarian_match(cents, mu), cents, mu, 1.0) == pytest.approx(2 / 3)


def test_transition_matrix_cases():
    P = transition_matrix([1, 1, 1, 1], 3)
    assert np.array_equal(P[1], [0, 1, 0])
    assert np.allclose(P[0], 1 / 3) and np.allclose(P[2], 1 / 3)
    _, unvisited = transition_matrix([1, 1, 1, 1], 3, return_unvisited=True)
    assert unvisited == [0, 2]
    assert np.array_equal(transition_matrix([0, 1] * 10, 2), [[0, 1], [1, 0]])
    with pytest.raises(TooShort):
        transition_matrix([0], 2)


def test_transition_matrix_recovers_chain():
    chain = RegimeChain(4, 0.85)
    P = transition_matrix(sample_chain(chain, 100_000, 3), 4)
    assert np.abs(P - chain.P_star).max() < 0.02


def test_tma_cases(rng):
    P = RegimeChain(3, 0.8).P_star
    assert tma(P, P) == 1.0
    assert tma(np.eye(2), np.eye(2)[::-1]) == 0.0
    A = rng.dirichlet(np.ones(4), size=4)
    B = rng.dirichlet(np.ones(4), size=4)
    total = 0.0
    for i in range(4):
        for j in range(4):
            total += abs(A[i, j] - B[i, j])
    assert tma(A, B) == pytest.approx(1 - total / 8)


def test_sda_cases(rng):
    z = rng.integers(0, 3, 50)
    assert sda(z, z, 3) == 1.0
    assert sda(np.zeros(10, int), np.ones(10, int), 2) == 0.0
    a, b = rng.integers(0, 4, 200), rng.integers(0, 4, 200)
    ha = np.array([(a == k).mean() for k in range(4)])
    hb = np.array([(b == k).mean() for k in range(4)])
    assert sda(a, b, 4) == pytest.approx(1 - 0.5 * np.abs(ha - hb).sum())


def test_occupancy_counts_unmatched_as_missing():
    nu = occupancy(np.array([0, 0, -1, 1]), 2)
    assert np.allclose(nu, [0.5, 0.25])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_metrics_permutation_consistent(seed):
    rng = np.random.default_rng(seed)
    K = 3
    z = sample_chain(RegimeChain(K, 0.8), 200, seed)
    lab = np.where(rng.random(200) < 0.8, z, rng.integers(0, K, 200))
    P_star = RegimeChain(K, 0.8).P_star
    perm = rng.permutation(K)
    P_perm = P_star[np.ix_(np.argsort(perm), np.argsort(perm))]
    a = tma(transition_matrix(lab, K), P_star), sda(lab, z, K)
    b = tma(transition_matrix(perm[lab], K), P_perm), sda(perm[lab], perm[z], K)
    assert a == pytest.approx(b)
    for v in a:
        assert 0 <= v <= 1


def test_perfect_recovery_scores_one():
    K, T = 3, 3000
    chain = RegimeChain(K, 0.9)
    z = sample_chain(chain, T, 0)
    mus = np.array([[0.0, 0], [4, 0], [0, 4]])
    X = mus[z]
    # recovered labels use a different numbering
    rep = score_recovery(X, np.array([2, 0, 1])[z], mus, z, chain.P_star)
    assert rep.br == 1.0 and rep.sda == 1.0
    assert rep.tma == pytest.approx(1.0, abs=0.02)
    assert rep.n_recovered == 3 and rep.kappa == pytest.approx(2.0)


def test_score_with_fewer_basins():
    z = np.array([0, 0, 1, 1, 2, 2] * 10)
    mus = np.array([[0.0], [5.0], [11.0]])
    X = mus[z]
    rep = score_recovery(X, np.minimum(z, 1), mus, z, RegimeChain(3, 0.5).P_star)
    assert rep.n_recovered == 2
    assert rep.br == pytest.approx(1 / 3)
    assert default_kappa(mus) == 2.5


def test_align_labels():
    m = hungarian_match(np.array([[5.0], [0.0], [40.0]]), np.array([[0.0], [5.0]]))
    assert align_labels([0, 1, 2, -1], m).tolist() == [1, 0, -1, -1]
