import numpy as np
import pytest

ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.exp(rng.uniform(0.0, np.log(cond), size=n))
    return (Q * ev) @ Q.T


def sample_ising(W, h, T, rng):
    """Exact sampler by enumerating all 2^N states."""
    import itertools
    N = len(h)
    states = np.array(list(itertools.product((-1, 1), repeat=N)), dtype=float)
    logw = 0.5 * np.einsum("ti,ij,tj->t", states, W, states) + states @ h
    p = np.exp(logw - logw.max())
    p /= p.sum()
    return states[rng.choice(len(states), size=T, p=p)].astype(np.int8)


def random_ising(rng, N, scale=0.3):
    W = np.triu(rng.normal(0, scale, (N, N)), 1)
    return W + W.T, rng.normal(0, scale, N)


def planted_mixture(rng, N, K, T, sep, Sigma=None):
    """I.i.d. draws from K equal-weight Gaussians on a scaled simplex."""
    from energyscape.simulate import place_centers
    Sigma = np.eye(N) if Sigma is None else Sigma
    mus = place_centers(N, K, sep, Sigma, int(rng.integers(2**31)))
    z = rng.integers(0, K, size=T)
    X = mus[z] + rng.multivariate_normal(np.zeros(N), Sigma, size=T)
    return X, z, mus


def aligned_accuracy(labels, z, K):
    from scipy.optimize import linear_sum_assignment
    C = np.zeros((K, K))
    np.add.at(C, (labels, z), 1)
    r, c = linear_sum_assignment(-C)
    return C[r, c].sum() / len(z)


def gcn_problem(seed, N=6, T=50, rank=3):
    """Standardized data, graph, features and random parameters with a nonzero field map."""
    from energyscape.core import standardize
    from energyscape.gcn import init_params, node_features
    from energyscape.graph import build_graph
    rng = np.random.default_rng(seed)
    X = standardize(rng.standard_normal((T, N)) @ rng.standard_normal((N, N)))
    g = build_graph(X, 0.3)
    F = node_features(X, g)
    p = init_params(F.shape[1], rank, seed=seed)
    p = p.with_blocks({**p.blocks(), "field_map": 0.3 * rng.standard_normal(p.field_map.size)})
    return X, g, F, p


def max_fd_error(X, g, F, p, lam=1e-3, step=1e-5, roundoff_atol=False):
    """Worst relative gap between analytic and central-difference gradients.

    With ``roundoff_atol`` a gap no larger than the stencil's roundoff bound
    ``10 * eps * |loss| / step`` counts as zero. Without it, entries far below
    the largest gradient are unresolvable once the loss is large.
    """
    from energyscape.gcn import nll_loss
    loss, grads = nll_loss(X, g.Bnorm, F, p, lam)
    gmax = max(np.abs(v).max() for v in grads.values())
    atol = 10 * np.finfo(float).eps * abs(loss) / step if roundoff_atol else 0.0
    worst = 0.0
    for k, block in p.blocks().items():
        for idx in np.ndindex(block.shape):
            plus, minus = block.copy(), block.copy()
            plus[idx] += step
            minus[idx] -= step
            lp, _ = nll_loss(X, g.Bnorm, F, p.with_blocks({**p.blocks(), k: plus}), lam)
            lm, _ = nll_loss(X, g.Bnorm, F, p.with_blocks({**p.blocks(), k: minus}), lam)
            fd = (lp - lm) / (2 * step)
            a = grads[k][idx]
            gap = max(abs(a - fd) - atol, 0.0)
            worst = max(worst, gap / max(abs(a), abs(fd), 1e-8 * gmax))
    return worst


@pytest.fixture
def acceptance(request, capsys):
    """Record one PASS/FAIL line per acceptance criterion and assert on it."""
    def record(criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        request.config.stash.setdefault(ACCEPTANCE_KEY, []).append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
