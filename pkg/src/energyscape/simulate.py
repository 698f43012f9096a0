"""Ground-truth generators: a Markov-switching AR(1) system (SLDS) and a
Kuramoto network whose phases are pulled toward regime templates.

Both are driven by a first-order Markov regime chain and report the true
labels, basin centers in observable space and the transition matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize
from scipy.stats import ortho_group

from .core import derive_seed, make_rng
from .exceptions import ConfigError, SingleState, UnstableStep

SNR_LEVELS = {"low": 1.0, "medium": 2.0, "high": 3.0}
P_STAY_RANGE = (0.80, 0.95)
RHO_RANGE = (0.2, 0.5)


def resolve_snr(snr) -> float:
    if isinstance(snr, str):
        try:
            return SNR_LEVELS[snr]
        except KeyError:
            raise ConfigError(f"unknown SNR level {snr!r}; use one of {sorted(SNR_LEVELS)}") from None
    snr = float(snr)
    if not snr >= 0:
        raise ConfigError(f"SNR must be nonnegative, got {snr}")
    return snr


@dataclass(frozen=True)
class RegimeChain:
    K: int
    p_stay: float

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("chain needs at least one state")
        if not 0.0 <= self.p_stay <= 1.0:
            raise ConfigError(f"p_stay must lie in [0, 1], got {self.p_stay}")
        if self.K == 1 and self.p_stay != 1.0:
            object.__setattr__(self, "p_stay", 1.0)

    @property
    def P_star(self) -> np.ndarray:
        K = self.K
        if K == 1:
            return np.ones((1, 1))
        P = np.full((K, K), (1.0 - self.p_stay) / (K - 1))
        np.fill_diagonal(P, self.p_stay)
        return P


@dataclass
class SldsConfig:
    N: int
    K: int
    T: int
    rho: float
    Sigma: np.ndarray
    mus: np.ndarray
    chain: RegimeChain
    snr_target: float

    def to_dict(self) -> dict:
        return {"generator": "slds", "N": self.N, "K": self.K, "T": self.T,
                "rho": self.rho, "p_stay": self.chain.p_stay, "snr_target": self.snr_target,
                "Sigma": np.asarray(self.Sigma).tolist(), "mus": np.asarray(self.mus).tolist()}


@dataclass
class KuramotoConfig:
    N: int
    K: int
    T: int
    omega: np.ndarray
    C: np.ndarray
    alpha: float
    zeta: float
    dt: float
    templates: np.ndarray
    chain: RegimeChain
    burn_in: int = 200
    snr_target: float | None = None
    snr_reachable: bool | None = None

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        if self.dt <= 0 or self.alpha < 0 or self.zeta < 0:
            raise ConfigError("need dt > 0, alpha >= 0 and zeta >= 0")
        if not np.allclose(C, C.T) or np.any(C < 0):
            raise ConfigError("coupling matrix must be symmetric and nonnegative")

    def to_dict(self) -> dict:
        return {"generator": "kuramoto", "N": self.N, "K": self.K, "T": self.T,
                "alpha": self.alpha, "zeta": self.zeta, "dt": self.dt,
                "burn_in": self.burn_in, "p_stay": self.chain.p_stay,
                "snr_target": self.snr_target, "snr_reachable": self.snr_reachable,
                "omega": np.asarray(self.omega).tolist(), "C": np.asarray(self.C).tolist(),
                "templates": np.asarray(self.templates).tolist()}


@dataclass
class SimOutput:
    X: np.ndarray
    z: np.ndarray
    centers: np.ndarray
    P_star: np.ndarray
    meta: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# building blocks

def sample_chain(chain: RegimeChain, T: int, seed) -> np.ndarray:
    """Markov path of length T; the first state is uniform over the K states."""
    rng = make_rng(seed)
    cum = np.cumsum(chain.P_star, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(T)
    z = np.empty(T, dtype=int)
    z[0] = min(int(u[0] * chain.K), chain.K - 1)
    for t in range(1, T):
        z[t] = int(np.searchsorted(cum[z[t - 1]], u[t], side="right"))
    return z


def compute_snr(mus, Sigma) -> float:
    """Minimum pairwise center distance over sqrt(tr(Sigma) / N)."""
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    K, N = mus.shape
    if K < 2:
        raise SingleState("SNR needs at least two centers")
    diff = mus[:, None, :] - mus[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    dmin = dist[np.triu_indices(K, 1)].min()
    scale = np.sqrt(np.trace(np.asarray(Sigma, dtype=float)) / N)
    if scale == 0:
        return 0.0 if dmin == 0 else float("inf")
    return float(dmin / scale)


def random_spd(N: int, rng, max_condition: float = 10.0) -> np.ndarray:
    """Random SPD matrix with condition number at most ``max_condition`` and trace N."""
    ev = rng.uniform(1.0, max_condition, size=N)
    U = ortho_group.rvs(N, random_state=rng) if N > 1 else np.ones((1, 1))
    S = (U * ev) @ U.T
    S = 0.5 * (S + S.T)
    return S * (N / np.trace(S))


def _simplex(K: int) -> np.ndarray:
    """K x (K-1) coordinates of a centered regular simplex with unit edge length."""
    V = np.eye(K) - 1.0 / K
    U, _, _ = np.linalg.svd(V)
    C = V @ U[:, : K - 1]
    return C / np.sqrt(2.0)


def place_centers(N: int, K: int, snr_target: float, Sigma, seed) -> np.ndarray:
    """Basin centers whose SNR equals ``snr_target``.

    For K <= N + 1 the centers are the vertices of a randomly rotated regular
    simplex, so every pairwise distance is the same. Otherwise random
    directions are drawn and rescaled so the minimum distance hits the target.
    """
    if K < 2:
        raise SingleState("placing centers needs K >= 2")
    rng = make_rng(seed)
    scale = np.sqrt(np.trace(np.asarray(Sigma, dtype=float)) / N)
    target = snr_target * scale
    if K <= N + 1:
        coords = np.zeros((K, N))
        coords[:, : K - 1] = _simplex(K)
        R = ortho_group.rvs(N, random_state=rng) if N > 1 else np.ones((1, 1))
        return target * coords @ R.T
    pts = rng.standard_normal((K, N))
    pts -= pts.mean(axis=0)
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))[np.triu_indices(K, 1)].min()
    return pts * (target / d)


# --------------------------------------------------------------------------
# SLDS

def make_slds_config(N: int, K: int, T: int, snr, seed, rho=None, p_stay=None) -> SldsConfig:
    """Draw the unspecified SLDS parameters for one simulation unit.

    ``rho`` and ``p_stay`` are drawn uniformly from their admissible ranges
    unless given; Sigma is a random well-conditioned SPD matrix with trace N.
    """
    snr = resolve_snr(snr)
    rng = make_rng(derive_seed(seed, "slds-config"))
    if rho is None:
        rho = float(rng.uniform(*RHO_RANGE))
    if p_stay is None:
        p_stay = float(rng.uniform(*P_STAY_RANGE))
    Sigma = random_spd(N, rng)
    mus = place_centers(N, K, snr, Sigma, derive_seed(seed, "centers"))
    return SldsConfig(N=N, K=K, T=T, rho=rho, Sigma=Sigma, mus=mus,
                      chain=RegimeChain(K, p_stay), snr_target=snr)


def simulate_slds(config: SldsConfig, seed) -> SimOutput:
    """``x_t = rho x_{t-1} + (1 - rho) mu_{z_t} + xi_t`` with ``xi_t ~ N(0, Sigma)``."""
    z = sample_chain(config.chain, config.T, derive_seed(seed, "chain"))
    rng = make_rng(derive_seed(seed, "slds-noise"))
    N, T, rho = config.N, config.T, config.rho
    mus = np.asarray(config.mus, dtype=float)
    Sigma = np.asarray(config.Sigma, dtype=float)
    ev, U = np.linalg.eigh(Sigma)
    root = U * np.sqrt(np.clip(ev, 0.0, None))
    xi = rng.standard_normal((T, N)) @ root.T
    X = np.empty((T, N))
    X[0] = mus[z[0]] + xi[0]
    for t in range(1, T):
        X[t] = rho * X[t - 1] + (1.0 - rho) * mus[z[t]] + xi[t]
    meta = config.to_dict()
    meta["snr_achieved"] = compute_snr(mus, Sigma) if config.K >= 2 else None
    return SimOutput(X=X, z=z, centers=mus.copy(), P_star=config.chain.P_star, meta=meta)


# --------------------------------------------------------------------------
# Kuramoto

def make_kuramoto_config(N: int, K: int, T: int, seed, alpha: float = 1.0,
                         zeta: float = 0.05, dt: float = 0.05, coupling: float = 0.4,
                         omega_sd: float = 0.1, burn_in: int = 200,
                         p_stay=None) -> KuramotoConfig:
    """Draw the unspecified Kuramoto parameters for one simulation unit:
    natural frequencies, all-to-all coupling ``coupling / N`` and templates
    uniform on [0, 2 pi)^N."""
    rng = make_rng(derive_seed(seed, "kuramoto-config"))
    if p_stay is None:
        p_stay = float(rng.uniform(*P_STAY_RANGE))
    omega = rng.normal(0.0, omega_sd, size=N)
    C = np.full((N, N), coupling / N)
    np.fill_diagonal(C, 0.0)
    templates = rng.uniform(0.0, 2.0 * np.pi, size=(K, N))
    return KuramotoConfig(N=N, K=K, T=T, omega=omega, C=C, alpha=alpha, zeta=zeta, dt=dt,
                          templates=templates, chain=RegimeChain(K, p_stay), burn_in=burn_in)


def _check_stability(cfg: KuramotoConfig) -> None:
    rate = np.abs(cfg.omega).max() + np.asarray(cfg.C).sum(axis=1).max() + cfg.alpha
    if not abs(cfg.dt * rate) < np.pi:
        raise UnstableStep(f"dt * rate = {cfg.dt * rate:.3g} is not below pi")


def kuramoto_phases(cfg: KuramotoConfig, seed) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama phase paths after burn-in, with their regime labels."""
    _check_stability(cfg)
    T_all = cfg.T + cfg.burn_in
    z = sample_chain(cfg.chain, T_all, derive_seed(seed, "chain"))
    rng = make_rng(derive_seed(seed, "kuramoto-noise"))
    theta = np.empty((T_all, cfg.N))
    theta[0] = rng.uniform(0.0, 2.0 * np.pi, size=cfg.N)
    noise = np.sqrt(2.0 * cfg.zeta * cfg.dt) * rng.standard_normal((T_all, cfg.N))
    C = np.asarray(cfg.C, dtype=float)
    omega = np.asarray(cfg.omega, dtype=float)
    phi = np.asarray(cfg.templates, dtype=float)
    for t in range(T_all - 1):
        th = theta[t]
        coupling = (C * np.sin(th[None, :] - th[:, None])).sum(axis=1)
        lock = cfg.alpha * np.sin(phi[z[t]] - th)
        theta[t + 1] = th + cfg.dt * (omega + coupling + lock) + noise[t + 1]
    return theta[cfg.burn_in:], z[cfg.burn_in:]


def kuramoto_snr(Y, z) -> float:
    """SNR of standardized observables: per-state empirical means over the
    pooled within-state covariance (averaged over visited states)."""
    m, sd = Y.mean(axis=0), Y.std(axis=0, ddof=1)
    Ys = (Y - m) / np.where(sd > 0, sd, 1.0)
    states = [k for k in np.unique(z) if (z == k).sum() > 1]
    mus = np.stack([Ys[z == k].mean(axis=0) for k in states])
    Sigma = np.mean([np.cov(Ys[z == k].T, ddof=1) for k in states], axis=0)
    return compute_snr(mus, np.atleast_2d(Sigma))


def simulate_kuramoto(config: KuramotoConfig, seed) -> SimOutput:
    """Observables ``y = sin(theta)``; true centers ``sin(templates)``."""
    theta, z = kuramoto_phases(config, seed)
    Y = np.sin(theta)
    centers = np.sin(np.asarray(config.templates, dtype=float))
    meta = config.to_dict()
    meta["snr_achieved"] = kuramoto_snr(Y, z) if len(np.unique(z)) >= 2 else None
    return SimOutput(X=Y, z=z, centers=centers, P_star=config.chain.P_star, meta=meta)


ZETA_BOUNDS = (1e-4, 10.0)


def calibrate_kuramoto(config: KuramotoConfig, snr_target: float, seed,
                       zeta_bounds=ZETA_BOUNDS) -> KuramotoConfig:
    """Set the diffusion coefficient so the simulated SNR matches the target.

    Root bracketing in log(zeta) on the simulation with ``seed``; every other
    parameter is kept. A target outside the reachable range clamps zeta to
    the nearer bound and sets ``snr_reachable`` to False.
    """
    def with_zeta(log_zeta):
        return replace(config, zeta=float(np.exp(log_zeta)), snr_target=snr_target)

    def gap(log_zeta):
        return simulate_kuramoto(with_zeta(log_zeta), seed).meta["snr_achieved"] - snr_target

    lo, hi = np.log(zeta_bounds[0]), np.log(zeta_bounds[1])
    reachable = True
    if gap(lo) <= 0:
        best, reachable = lo, False
    elif gap(hi) >= 0:
        best, reachable = hi, False
    else:
        best = optimize.brentq(gap, lo, hi, xtol=1e-4)
    return replace(with_zeta(best), snr_reachable=reachable)


def simulate(generator: str, N: int, K: int, T: int, snr, seed) -> SimOutput:
    """One simulation unit with all free parameters drawn from ``seed``."""
    if generator == "slds":
        return simulate_slds(make_slds_config(N, K, T, snr, seed), derive_seed(seed, "run"))
    if generator == "kuramoto":
        cfg = calibrate_kuramoto(make_kuramoto_config(N, K, T, seed), resolve_snr(snr),
                                 derive_seed(seed, "run"))
        return simulate_kuramoto(cfg, derive_seed(seed, "run"))
    raise ConfigError(f"unknown generator {generator!r}")
