import itertools

import numpy as np
import pytest

from energyscape.core import derive_seed
from energyscape.evaluation import transition_matrix
from energyscape.exceptions import ConfigError, SingleState, UnstableStep
from energyscape.simulate import (P_STAY_RANGE, RHO_RANGE, SNR_LEVELS, KuramotoConfig, RegimeChain,
                                  SldsConfig, calibrate_kuramoto, compute_snr, kuramoto_phases,
                                  make_kuramoto_config, make_slds_config, place_centers,
                                  random_spd, resolve_snr, sample_chain, simulate, simulate_kuramoto,
                                  simulate_slds)


def test_snr_levels():
    assert SNR_LEVELS == {"low": 1.0, "medium": 2.0, "high": 3.0}
    assert resolve_snr("high") == 3.0 and resolve_snr(2.5) == 2.5
    with pytest.raises(ConfigError):
        resolve_snr("extreme")


def test_chain_matrix_rows():
    P = RegimeChain(4, 0.85).P_star
    assert np.allclose(P.sum(axis=1), 1, atol=1e-12)
    assert np.allclose(np.diag(P), 0.85)
    assert np.allclose(P[~np.eye(4, dtype=bool)], 0.05)


def test_chain_constant_when_sticky():
    z = sample_chain(RegimeChain(3, 1.0), 500, 1)
    assert np.all(z == z[0])


def test_chain_long_run_agreement():
    chain = RegimeChain(3, 0.9)
    z = sample_chain(chain, 100_000, 7)
    assert np.abs(transition_matrix(z, 3) - chain.P_star).max() < 0.02
    runs = [len(list(g)) for _, g in itertools.groupby(z)]
    assert np.mean(runs) == pytest.approx(1 / (1 - 0.9), rel=0.05)
    assert np.array_equal(z, sample_chain(chain, 100_000, 7))


def test_chain_first_state_is_uniform():
    first = [sample_chain(RegimeChain(4, 0.9), 2, s)[0] for s in range(4000)]
    assert np.abs(np.bincount(first, minlength=4) / 4000 - 0.25).max() < 0.03


def test_compute_snr():
    assert compute_snr(np.array([[0, 0], [3.0, 4.0]]), np.eye(2)) == pytest.approx(5.0)
    rng = np.random.default_rng(0)
    mus = rng.standard_normal((5, 4))
    Sigma = random_spd(4, rng)
    base = compute_snr(mus, Sigma)
    assert compute_snr(2.5 * mus, Sigma) == pytest.approx(2.5 * base)
    d = min(np.linalg.norm(a - b) for a, b in itertools.combinations(mus, 2))
    assert base == pytest.approx(d / np.sqrt(np.trace(Sigma) / 4))
    with pytest.raises(SingleState):
        compute_snr(mus[:1], Sigma)


def test_random_spd():
    S = random_spd(6, np.random.default_rng(1))
    ev = np.linalg.eigvalsh(S)
    assert np.allclose(S, S.T) and np.trace(S) == pytest.approx(6)
    assert ev.max() / ev.min() <= 10 + 1e-9


def test_place_centers():
    mus = place_centers(3, 2, 2.0, np.eye(3), 0)
    assert np.allclose(mus[0], -mus[1])
    assert np.linalg.norm(mus[0]) == pytest.approx(1.0)
    assert np.allclose(place_centers(3, 3, 0.0, np.eye(3), 0), 0)
    Sigma = random_spd(6, np.random.default_rng(2))
    assert compute_snr(place_centers(6, 4, 2.0, Sigma, 3), Sigma) == pytest.approx(2.0, abs=0.02)
    for K in (8, 9):
        got = compute_snr(place_centers(3, K, 1.5, np.eye(3), 4), np.eye(3))
        assert got == pytest.approx(1.5, rel=0.01)


def test_slds_config_ranges_and_target():
    for s in range(20):
        cfg = make_slds_config(6, 3, 100, "medium", s)
        assert RHO_RANGE[0] <= cfg.rho < RHO_RANGE[1]
        assert P_STAY_RANGE[0] <= cfg.chain.p_stay <= P_STAY_RANGE[1]
        assert compute_snr(cfg.mus, cfg.Sigma) == pytest.approx(2.0, rel=0.05)


def test_slds_noise_free_limit():
    mus = np.array([[0.0, 1.0], [2.0, -1.0]])
    cfg = SldsConfig(N=2, K=2, T=200, rho=0.0, Sigma=np.zeros((2, 2)), mus=mus,
                     chain=RegimeChain(2, 0.9), snr_target=0.0)
    out = simulate_slds(cfg, 0)
    assert np.array_equal(out.X, mus[out.z])


def test_slds_single_state_stationary_mean():
    rng = np.random.default_rng(5)
    Sigma = random_spd(3, rng)
    mu = np.array([1.0, -2.0, 0.5])
    cfg = SldsConfig(N=3, K=1, T=10_000, rho=0.3, Sigma=Sigma, mus=mu[None],
                     chain=RegimeChain(1, 1.0), snr_target=0.0)
    X = simulate_slds(cfg, 1).X
    se = np.sqrt(np.diag(Sigma) / (1 - 0.3) ** 2 / 10_000)
    assert np.all(np.abs(X.mean(axis=0) - mu) < 3 * se)


def test_slds_long_dwell_means():
    cfg = make_slds_config(4, 3, 20_000, "high", 9, rho=0.3)
    out = simulate_slds(cfg, 10)
    z, X = out.z, out.X
    keep = np.zeros(len(z), dtype=bool)
    start = 0
    for k, g in itertools.groupby(z):
        n = len(list(g))
        if n >= 20:
            keep[start + 10: start + n] = True
        start += n
    for k in range(3):
        sel = X[keep & (z == k)]
        se = np.sqrt(np.diag(cfg.Sigma) / (1 - cfg.rho) ** 2 / len(sel))
        assert np.all(np.abs(sel.mean(axis=0) - cfg.mus[k]) < 3 * se)


def test_simulation_is_deterministic():
    a = simulate("slds", 5, 3, 300, "low", 42)
    b = simulate("slds", 5, 3, 300, "low", 42)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.z, b.z)
    c = simulate("slds", 5, 3, 300, "low", 43)
    assert not np.array_equal(a.X, c.X)


def kuramoto(N=4, K=2, T=400, omega=None, C=None, alpha=1.0, zeta=0.0, dt=0.05, p_stay=0.95):
    rng = np.random.default_rng(0)
    return KuramotoConfig(N=N, K=K, T=T,
                          omega=np.zeros(N) if omega is None else omega,
                          C=np.zeros((N, N)) if C is None else C,
                          alpha=alpha, zeta=zeta, dt=dt,
                          templates=rng.uniform(0, 2 * np.pi, (K, N)),
                          chain=RegimeChain(K, p_stay))


def test_kuramoto_locks_to_templates():
    cfg = kuramoto(alpha=10.0, T=2000)
    out = simulate_kuramoto(cfg, 3)
    z = out.z
    settled = np.array([t >= 20 and np.all(z[t - 20:t + 1] == z[t]) for t in range(len(z))])
    assert settled.sum() > 100
    err = np.abs(out.X[settled] - out.centers[z[settled]])
    assert err.max() < 1e-2


def test_kuramoto_frozen():
    out = simulate_kuramoto(kuramoto(alpha=0.0), 1)
    assert np.all(out.X == out.X[0])
    assert np.all(np.abs(out.X) <= 1)


def test_kuramoto_diffusion_variance():
    cfg = kuramoto(alpha=0.0, zeta=0.2, T=20_000)
    theta, _ = kuramoto_phases(cfg, 2)
    inc = np.diff(theta, axis=0)
    assert inc.var() == pytest.approx(2 * 0.2 * 0.05, rel=0.03)


def test_kuramoto_stability_guard():
    with pytest.raises(UnstableStep):
        simulate_kuramoto(kuramoto(alpha=70.0), 0)


def test_kuramoto_config_validation():
    with pytest.raises(ConfigError):
        kuramoto(dt=0.0)
    with pytest.raises(ConfigError):
        kuramoto(C=np.array([[0, 1.0, 0, 0], [0.5, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]))


def test_kuramoto_defaults_and_calibration():
    cfg = make_kuramoto_config(6, 3, 600, seed=1)
    assert (cfg.alpha, cfg.zeta, cfg.dt, cfg.burn_in) == (1.0, 0.05, 0.05, 200)
    assert np.allclose(cfg.C[~np.eye(6, dtype=bool)], 0.4 / 6)
    cal = calibrate_kuramoto(cfg, 1.0, derive_seed(1, "run"))
    out = simulate_kuramoto(cal, derive_seed(1, "run"))
    if cal.snr_reachable:
        assert out.meta["snr_achieved"] == pytest.approx(1.0, abs=1e-2)
    else:
        assert cal.zeta in (1e-4, 10.0)
    assert np.all(np.abs(out.X) <= 1)
    assert np.allclose(out.centers, np.sin(cfg.templates))
