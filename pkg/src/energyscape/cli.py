"""Command-line entry point: ``energyscape <subcommand> ...``.

Subcommands: simulate, fit, grid, export-features, report.

Flag values can also come from environment variables named
``ENERGYSCAPE_<FLAG>`` (for example ``ENERGYSCAPE_SEED`` or
``ENERGYSCAPE_PARALLELISM``). Precedence: command line, then environment,
then config file, then built-in defaults.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings

import numpy as np

from . import __version__
from .continuous import (GaussianEnergyModel, fit_gaussian_mle, normalize_energy,
                         normalized_energy, quadratic_energy)
from .core import derive_seed, median_binarize, standardize
from .discrete import IsingModel, assign_basins, fit_ising_ple
from .exceptions import (ConfigError, ConstantColumn, DegenerateComponent, DegenerateScale,
                         DimensionMismatch, EnergyscapeError, NonFinite, NotPositiveDefinite,
                         SingularCovariance, TooFewSamples, TooManyVariables, TooShort,
                         UnstableStep, EmptyBasin, SingleState)
from .experiment import ExperimentGrid, build_report, read_results, run_grid
from .io import read_timeseries, write_timeseries_csv
from .mixture import (MixtureEnergyModel, fit_gmm, map_labels, mixture_energy,
                      responsibilities, select_components_bic)
from .simulate import (calibrate_kuramoto, make_kuramoto_config,
                       make_slds_config, resolve_snr, simulate_kuramoto, simulate_slds)

ENV_PREFIX = "ENERGYSCAPE_"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

_NUMERIC_ERRORS = (NotPositiveDefinite, SingularCovariance, NonFinite, DegenerateComponent,
                   DegenerateScale, UnstableStep, np.linalg.LinAlgError, FloatingPointError)
_DATA_ERRORS = (DimensionMismatch, ConstantColumn, TooShort, TooFewSamples, TooManyVariables,
                EmptyBasin, SingleState, OSError, UnicodeDecodeError)

SIM_KEYS = {
    "common": {"schema_version", "generator", "N", "K", "T", "snr", "seed", "p_stay"},
    "slds": {"rho"},
    "kuramoto": {"alpha", "zeta", "dt", "coupling", "omega_sd", "burn_in"},
}


def _env(name, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    version = d.get("schema_version", 1)
    if version != 1:
        raise ConfigError(f"unsupported schema_version {version}")
    return d


def _dump(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_matrix(path, M, header) -> None:
    M = np.atleast_2d(M)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in M:
            w.writerow([repr(float(v)) for v in row])


# --------------------------------------------------------------------------
# simulate

def resolve_sim_config(cfg: dict, seed=None) -> dict:
    """Validate a simulation config and fill in defaults."""
    gen = cfg.get("generator", "slds")
    if gen not in ("slds", "kuramoto"):
        raise ConfigError(f"unknown generator {gen!r}")
    allowed = SIM_KEYS["common"] | SIM_KEYS[gen]
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys for {gen}: {unknown}")
    out = {"schema_version": 1, "generator": gen}
    for key in ("N", "K", "T"):
        if key not in cfg:
            raise ConfigError(f"missing required key {key!r}")
        v = cfg[key]
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(f"{key} must be a positive integer, got {v!r}")
        out[key] = v
    if out["N"] < 2 or out["T"] < 2:
        raise ConfigError("need N >= 2 and T >= 2")
    out["snr"] = cfg.get("snr", "medium")
    resolve_snr(out["snr"])
    out["seed"] = int(seed if seed is not None else cfg.get("seed", 0))
    if "p_stay" in cfg:
        p = float(cfg["p_stay"])
        if not 0.8 <= p <= 0.95:
            raise ConfigError(f"p_stay must lie in [0.80, 0.95], got {p}")
        out["p_stay"] = p
    if gen == "slds" and "rho" in cfg:
        r = float(cfg["rho"])
        if not 0.2 <= r < 0.5:
            raise ConfigError(f"rho must lie in [0.2, 0.5), got {r}")
        out["rho"] = r
    for key in SIM_KEYS["kuramoto"] & set(cfg):
        out[key] = cfg[key]
    return out


def run_simulation(cfg: dict):
    seed = cfg["seed"]
    N, K, T = cfg["N"], cfg["K"], cfg["T"]
    snr = resolve_snr(cfg["snr"])
    run_seed = derive_seed(seed, "run")
    if cfg["generator"] == "slds":
        sc = make_slds_config(N, K, T, snr, seed, rho=cfg.get("rho"), p_stay=cfg.get("p_stay"))
        return simulate_slds(sc, run_seed)
    kw = {k: cfg[k] for k in SIM_KEYS["kuramoto"] if k in cfg}
    kc = make_kuramoto_config(N, K, T, seed, p_stay=cfg.get("p_stay"), **kw)
    if "zeta" not in cfg:
        kc = calibrate_kuramoto(kc, snr, run_seed)
    return simulate_kuramoto(kc, run_seed)


def cmd_simulate(args) -> int:
    cfg = resolve_sim_config(_load_json(args.config), args.seed)
    sim = run_simulation(cfg)
    os.makedirs(args.out, exist_ok=True)
    N = sim.X.shape[1]
    write_timeseries_csv(os.path.join(args.out, "X.csv"), sim.X)
    with open(os.path.join(args.out, "z.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "z"])
        w.writerows([[t, int(z)] for t, z in enumerate(sim.z)])
    _write_matrix(os.path.join(args.out, "centers.csv"), sim.centers, [f"x{i}" for i in range(N)])
    _write_matrix(os.path.join(args.out, "P_star.csv"), sim.P_star,
                  [f"s{k}" for k in range(sim.P_star.shape[0])])
    _dump(os.path.join(args.out, "config.json"), {**cfg, "resolved": sim.meta})
    return EXIT_OK


# --------------------------------------------------------------------------
# fit

def _parse_auto(value, name):
    if value is None or value == "auto":
        return "auto" if value == "auto" else None
    try:
        v = int(value)
    except ValueError:
        raise ConfigError(f"--{name} must be an integer or 'auto'") from None
    if v < 1:
        raise ConfigError(f"--{name} must be positive")
    return v


def fit_model(method: str, X, seed=0, rank=None, components=None, delta=None,
              lambda_ising=None) -> dict:
    """Fit one model and return its JSON-ready description with diagnostics."""
    if method == "del":
        Q = median_binarize(X)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            m = fit_ising_ple(Q, lambda_ising=1e-2 if lambda_ising is None else lambda_ising)
        basins = assign_basins(Q, m)
        out = m.to_dict()
        out["diagnostics"] = {"converged": m.converged, "n_iter": m.n_iter,
                              "grad_norm": m.grad_norm, "warnings": [str(w.message) for w in caught],
                              "n_basins": basins.n_basins}
        return out
    if method == "cel":
        m = fit_gaussian_mle(X)
        out = m.to_dict()
        out["diagnostics"] = {"converged": True}
        return out
    if method == "cel-mix":
        if components in (None, "auto"):
            M, bics, models = select_components_bic(X, min(5, max(1, X.shape[0] // (X.shape[1] + 1))),
                                                    seed=seed)
            m = models[M]
            selection = {"method": "bic", "bic": {str(k): v for k, v in bics.items()}}
        else:
            m = fit_gmm(X, components, seed=seed)
            selection = {"method": "fixed"}
        x_min, E_min = m.minimum(extra_starts=X[np.argmin(mixture_energy(X, m))])
        out = m.to_dict(T=X.shape[0])
        out.update({"E_min": E_min, "x_min": x_min.tolist(), "sigma_E": m.sigma_E})
        out["diagnostics"] = {"converged": m.converged, "n_iter": m.n_iter,
                              "loglik_trace": list(m.trace), "selection": selection}
        return out
    if method == "gcn-cel":
        from .gcn import RANK_CANDIDATES, TrainConfig, gaussian_model, node_features, select_rank, train
        from .graph import DEFAULT_DENSITY, build_graph
        mean, sd = X.mean(axis=0), X.std(axis=0, ddof=1)
        Xs = standardize(X)
        graph = build_graph(Xs, DEFAULT_DENSITY if delta is None else delta)
        feats = node_features(Xs, graph)
        cfg = TrainConfig()
        scores = None
        if rank in (None, "auto"):
            rank, scores = select_rank(Xs, graph, feats, RANK_CANDIDATES, cfg, seed=seed)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = train(Xs, graph, feats, cfg, seed=seed, rank=rank)
        gm = gaussian_model(Xs, graph.Bnorm, feats, res.params)
        out = gm.to_dict()
        out["preprocess"] = {"standardize": True, "mean": mean.tolist(), "std": sd.tolist()}
        out["gcn"] = {**res.params.to_dict(), "rank": res.params.rank,
                      "weights": {k: np.asarray(v).tolist() for k, v in res.params.blocks().items()},
                      "graph": {"tau": graph.tau, "delta": graph.delta}}
        out["diagnostics"] = {"converged": res.converged, "best_epoch": res.best_epoch,
                              "best_loss": res.best_loss, "initial_loss": res.initial_loss,
                              "loss_trace": [[e, l, g] for e, l, g in res.trace],
                              "rank_scores": None if scores is None else {str(k): v for k, v in scores.items()},
                              "warnings": [str(w.message) for w in caught]}
        return out
    raise ConfigError(f"unknown method {method!r}")


def cmd_fit(args) -> int:
    if not args.method:
        raise ConfigError("--method is required")
    method = args.method.lower()
    X, _ = _read_data(args.data)
    rank = _parse_auto(args.rank, "rank")
    comps = _parse_auto(args.components, "components")
    delta = None if args.delta is None else float(args.delta)
    lam = None if args.lambda_ is None else float(args.lambda_)
    out = fit_model(method, X, seed=int(args.seed or 0), rank=rank, components=comps,
                    delta=delta, lambda_ising=lam)
    out["method"] = method
    _dump(args.out, out)
    if method == "cel-mix":
        m = MixtureEnergyModel.from_dict(out)
        gam = responsibilities(X, m)
        with open(os.path.splitext(args.out)[0] + ".labels.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "label", "responsibility"])
            for t, (lab, g) in enumerate(zip(map_labels(X, m), gam.max(axis=1))):
                w.writerow([t, int(lab), repr(float(g))])
    return EXIT_OK


# --------------------------------------------------------------------------
# export-features

def load_model(path):
    d = _load_json(path)
    kind = d.get("kind")
    if kind == "gaussian":
        return GaussianEnergyModel.from_dict(d), d
    if kind == "mixture":
        return MixtureEnergyModel.from_dict(d), d
    if kind == "ising":
        return IsingModel.from_dict(d), d
    raise ConfigError(f"model file has unknown kind {kind!r}")


class _MixtureScale:
    def __init__(self, E_min, sigma_E):
        self.E_min, self.sigma_E = E_min, sigma_E


def export_features(X, model, model_dict) -> dict:
    """Per-time-point energy, normalized energy and (for mixtures) the MAP label."""
    if isinstance(model, IsingModel):
        raise ConfigError("export-features needs a continuous model (cel, cel-mix or gcn-cel)")
    if X.shape[1] != model.N:
        raise DimensionMismatch(f"data has N={X.shape[1]}, model has N={model.N}")
    pre = model_dict.get("preprocess")
    if pre and pre.get("standardize"):
        X = (X - np.asarray(pre["mean"])) / np.asarray(pre["std"])
    if isinstance(model, GaussianEnergyModel):
        E = quadratic_energy(X, model)
        return {"E": E, "E_tilde": normalized_energy(X, model), "label": None}
    E = mixture_energy(X, model)
    if "E_min" in model_dict:
        scale = _MixtureScale(float(model_dict["E_min"]), float(model_dict["sigma_E"]))
    else:
        scale = _MixtureScale(model.E_min, model.sigma_E)
    return {"E": E, "E_tilde": normalize_energy(E, scale), "label": map_labels(X, model)}


def cmd_export_features(args) -> int:
    X, _ = _read_data(args.data)
    model, d = load_model(args.model)
    feats = export_features(X, model, d)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["t", "E", "E_tilde"] + (["label"] if feats["label"] is not None else [])
        w.writerow(header)
        for t in range(X.shape[0]):
            row = [t, repr(float(feats["E"][t])), repr(float(feats["E_tilde"][t]))]
            if feats["label"] is not None:
                row.append(int(feats["label"][t]))
            w.writerow(row)
    return EXIT_OK


# --------------------------------------------------------------------------
# grid and report

def _grid_from_args(args) -> ExperimentGrid:
    d = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        d["base_seed"] = int(args.seed)
    if args.kappa is not None:
        d["kappa"] = float(args.kappa)
    if args.lambda_ is not None:
        d["lambda_ising"] = float(args.lambda_)
    if args.method:
        d["methods"] = [m.strip() for m in args.method.split(",")]
    return ExperimentGrid.from_dict(d)


def cmd_grid(args) -> int:
    grid = _grid_from_args(args)
    par = int(args.parallelism or 1)
    if par < 1:
        raise ConfigError("--parallelism must be at least 1")
    run_grid(grid, args.out, parallelism=par)
    return EXIT_OK


def cmd_report(args) -> int:
    grid = _grid_from_args(args) if args.config else None
    rows = read_results(args.results)
    report = build_report(rows, grid)
    _dump(args.out, report)
    return EXIT_OK


def _read_data(path):
    try:
        return read_timeseries(path)
    except FileNotFoundError:
        raise
    except (ValueError, KeyError) as exc:
        if isinstance(exc, EnergyscapeError):
            raise
        raise DimensionMismatch(f"could not parse {path}: {exc}") from None


# --------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="energyscape",
                                description="Energy landscape fitting, simulation and scoring.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *flags):
        if "seed" in flags:
            sp.add_argument("--seed", type=int, default=_env("seed"))
        if "config" in flags:
            sp.add_argument("--config", default=_env("config"))
        sp.add_argument("--out", required=_env("out") is None, default=_env("out"))

    s = sub.add_parser("simulate", help="write a simulated bundle")
    common(s, "seed", "config")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit one model to a time series")
    common(f, "seed")
    f.add_argument("--data", required=True)
    f.add_argument("--method", default=_env("method"),
                   choices=["del", "cel", "cel-mix", "gcn-cel"])
    f.add_argument("--rank", default=_env("rank"))
    f.add_argument("--components", default=_env("components"))
    f.add_argument("--delta", default=_env("delta"))
    f.add_argument("--lambda", dest="lambda_", default=_env("lambda"))
    f.set_defaults(func=cmd_fit)

    g = sub.add_parser("grid", help="run the simulation study")
    common(g, "seed", "config")
    g.add_argument("--parallelism", default=_env("parallelism", "1"))
    g.add_argument("--method", default=_env("method"),
                   help="comma-separated methods, overriding the config")
    g.add_argument("--kappa", default=_env("kappa"))
    g.add_argument("--lambda", dest="lambda_", default=_env("lambda"))
    g.set_defaults(func=cmd_grid)

    e = sub.add_parser("export-features", help="normalized energies per time point")
    common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.set_defaults(func=cmd_export_features)

    r = sub.add_parser("report", help="rebuild the aggregate report from a results CSV")
    common(r, "seed", "config")
    r.add_argument("--results", required=True)
    r.add_argument("--method", default=None)
    r.add_argument("--kappa", default=None)
    r.add_argument("--lambda", dest="lambda_", default=None)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, EnergyscapeError) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
