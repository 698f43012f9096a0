import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid
from scipy.sparse.linalg import cg
from scipy.stats import multivariate_normal

from conftest import random_spd
from energyscape.continuous import (GaussianEnergyModel, completed_square_energy, energy_gradient,
                                    energy_minimum, fit_gaussian_mle, gaussian_loglik, log_density,
                                    normalize_energy, quadratic_energy)
from energyscape.exceptions import NotPositiveDefinite, SingularCovariance


def random_model(rng, N=8):
    return GaussianEnergyModel(mu=rng.standard_normal(N), S=random_spd(rng, N),
                               h=rng.standard_normal(N))


def test_trivial_energies():
    m = GaussianEnergyModel(mu=np.zeros(3), S=np.eye(3), h=np.zeros(3))
    assert quadratic_energy(np.zeros(3), m) == 0
    e1 = np.array([1.0, 0, 0])
    m = GaussianEnergyModel(mu=np.zeros(3), S=np.eye(3), h=e1)
    assert np.allclose(m.x_star, e1) and m.E_min == pytest.approx(-0.5)
    assert quadratic_energy(e1, m) == pytest.approx(-0.5)


def test_dual_formula_agreement(rng):
    for _ in range(20):
        m = random_model(rng)
        x = rng.standard_normal((5, 8))
        assert np.allclose(quadratic_energy(x, m), completed_square_energy(x, m), atol=1e-10)


def test_minimum_closed_forms(rng):
    m = GaussianEnergyModel(mu=np.arange(3.0), S=random_spd(rng, 3), h=np.zeros(3))
    x, E = energy_minimum(m)
    assert np.allclose(x, m.mu) and E == 0
    h = np.zeros(4)
    h[0] = 2.0
    m = GaussianEnergyModel(mu=np.zeros(4), S=2 * np.eye(4), h=h)
    x, E = energy_minimum(m)
    assert np.allclose(x, [1, 0, 0, 0]) and E == pytest.approx(-1.0)


def test_minimum_against_cg_and_coercivity(rng):
    m = random_model(rng)
    x, E = energy_minimum(m)
    oracle, info = cg(m.S, m.S @ m.mu + m.h, rtol=1e-13, atol=0, maxiter=1000)
    assert info == 0 and np.allclose(x, oracle, atol=1e-8)
    assert np.abs(energy_gradient(x, m)).max() < 1e-8
    assert m.E_min == pytest.approx(-m.h @ m.mu - 0.5 * m.h @ np.linalg.solve(m.S, m.h), abs=1e-10)
    u = rng.standard_normal((100, 8))
    assert np.all(quadratic_energy(x + u, m) > E)


def test_not_positive_definite_rejected():
    with pytest.raises(NotPositiveDefinite):
        GaussianEnergyModel(mu=np.zeros(2), S=np.diag([1.0, -1.0]), h=np.zeros(2))


def test_mle_recovers_generator():
    errs_mu, errs_cov = [], []
    for s in range(10):
        rng = np.random.default_rng(s)
        Sigma0 = random_spd(rng, 6)
        mu0 = rng.standard_normal(6)
        X = rng.multivariate_normal(mu0, Sigma0, size=5000)
        m = fit_gaussian_mle(X)
        errs_mu.append(np.abs(m.mu - mu0).max())
        errs_cov.append(np.linalg.norm(m.covariance - Sigma0) / np.linalg.norm(Sigma0))
    assert np.median(errs_mu) < 0.1 and np.median(errs_cov) < 0.1


def test_mle_repeated_row_is_singular():
    X = np.tile([1.0, 2.0, 3.0], (10, 1))
    with pytest.raises(SingularCovariance):
        fit_gaussian_mle(X, ridge=None)
    with pytest.raises(SingularCovariance):
        fit_gaussian_mle(X)


def test_mle_whitened_data(rng):
    Y = rng.standard_normal((200, 4))
    Y -= Y.mean(axis=0)
    L = np.linalg.cholesky(Y.T @ Y / 200)
    X = Y @ np.linalg.inv(L).T
    m = fit_gaussian_mle(X)
    r = m.meta["ridge"]
    assert np.allclose(m.S, np.eye(4) / (1 + r), atol=1e-8)
    assert np.all(m.h == 0)


def test_mle_beats_perturbations(rng):
    X = rng.multivariate_normal(np.zeros(4), random_spd(rng, 4), size=500)
    m = fit_gaussian_mle(X)
    best = gaussian_loglik(X, m)
    for _ in range(20):
        d = 0.05 * rng.standard_normal((4, 4))
        S = m.S + 0.5 * (d + d.T)
        mu = m.mu + 0.05 * rng.standard_normal(4)
        try:
            probe = GaussianEnergyModel(mu=mu, S=S, h=np.zeros(4))
        except NotPositiveDefinite:
            continue
        assert gaussian_loglik(X, probe) <= best + 1e-9


def test_log_density_examples(rng):
    m = GaussianEnergyModel(mu=np.zeros(1), S=np.ones((1, 1)), h=np.zeros(1))
    assert log_density(np.zeros(1), m) == pytest.approx(-0.5 * np.log(2 * np.pi))
    m = random_model(rng, 5)
    x = rng.standard_normal((10, 5))
    assert np.allclose(log_density(m.x_star, m) - log_density(x, m),
                       quadratic_energy(x, m) - m.E_min, atol=1e-10)
    oracle = multivariate_normal(mean=m.x_star, cov=m.covariance).logpdf(x)
    assert np.allclose(log_density(x, m), oracle, atol=1e-9)


def test_log_density_integrates_to_one():
    m = GaussianEnergyModel(mu=np.array([0.3, -0.2]), S=np.array([[2.0, 0.5], [0.5, 1.5]]),
                            h=np.array([0.1, 0.2]))
    g = np.linspace(-8, 8, 801)
    xx, yy = np.meshgrid(g, g)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    dens = np.exp(log_density(pts, m)).reshape(xx.shape)
    total = trapezoid(trapezoid(dens, g, axis=1), g)
    assert abs(total - 1) < 1e-4


def test_normalize_energy(rng):
    m = random_model(rng, 6)
    assert normalize_energy([m.E_min], m)[0] == 0
    m1 = GaussianEnergyModel(mu=rng.standard_normal(3), S=np.eye(3), h=rng.standard_normal(3))
    E = quadratic_energy(rng.standard_normal((7, 3)), m1)
    assert m1.sigma_E == pytest.approx(1.0)
    assert np.allclose(normalize_energy(E, m1), E - m1.E_min)
    ev = np.linalg.eigvalsh(m.S)
    assert m.sigma_E == pytest.approx(np.sqrt(np.sum(1 / ev) / 6), rel=1e-12)


def test_normalize_preserves_order(rng):
    m = random_model(rng, 6)
    E = quadratic_energy(rng.standard_normal((200, 6)), m)
    Et = normalize_energy(E, m)
    assert np.all(Et >= 0)
    assert np.array_equal(np.argsort(E, kind="stable"), np.argsort(Et, kind="stable"))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 0.99))
def test_strict_convexity(seed, t):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 5)
    x1, x2 = rng.standard_normal((2, 5))
    lhs = quadratic_energy(t * x1 + (1 - t) * x2, m)
    rhs = t * quadratic_energy(x1, m) + (1 - t) * quadratic_energy(x2, m)
    assert lhs < rhs


def test_bounded_below(rng):
    m = random_model(rng, 6)
    x = m.x_star + 3 * rng.standard_normal((10000, 6))
    assert np.all(quadratic_energy(x, m) > m.E_min)
    assert quadratic_energy(m.x_star, m) == pytest.approx(m.E_min, abs=1e-10)


def test_gradient_descent_single_basin(rng):
    m = random_model(rng, 5)
    step = 1.0 / np.linalg.eigvalsh(m.S).max()
    for _ in range(100):
        x = 5 * rng.standard_normal(5)
        for _ in range(5000):
            g = energy_gradient(x, m)
            if np.abs(g).max() < 1e-9:
                break
            x = x - step * g
        assert np.abs(x - m.x_star).max() < 1e-4


def test_model_round_trip(rng):
    m = random_model(rng, 4)
    m2 = GaussianEnergyModel.from_dict(m.to_dict())
    assert np.array_equal(m.S, m2.S) and m.E_min == m2.E_min
