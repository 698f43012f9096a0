"""Simulation-study runner: fit each method on shared simulated units, score
them against ground truth, and aggregate paired comparisons."""
from __future__ import annotations

import csv
import itertools
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .continuous import fit_gaussian_mle
from .core import derive_seed, median_binarize, standardize
from .discrete import assign_basins, fit_ising_ple
from .evaluation import score_recovery
from .exceptions import ConfigError, EnergyscapeError, TooFewSamples
from .mixture import fit_gmm, map_labels
from .simulate import SNR_LEVELS, resolve_snr, simulate
from .stats import benjamini_hochberg, bootstrap_ci, wilcoxon_signed_rank

METHODS = ("DEL", "CEL", "CEL-Mix", "GCN-CEL")
GENERATORS = ("slds", "kuramoto")
METRICS = ("BR", "TMA", "SDA")
RESULT_COLUMNS = ["generator", "N", "K", "T", "snr", "repeat", "seed", "snr_achieved", "method",
                  "BR", "TMA", "SDA", "n_recovered", "status", "error"]
SCHEMA_VERSION = 1


@dataclass
class ExperimentGrid:
    generators: list = field(default_factory=lambda: ["slds"])
    Ns: list = field(default_factory=lambda: list(range(6, 15)))
    Ks: list = field(default_factory=lambda: [3, 4, 5])
    Ts: list = field(default_factory=lambda: [500, 1000])
    snr_levels: list = field(default_factory=lambda: ["low", "medium", "high"])
    repeats: int = 50
    methods: list = field(default_factory=lambda: ["DEL", "CEL-Mix"])
    base_seed: int = 0
    kappa: float | None = None
    lambda_ising: float = 1e-2
    compare: list = field(default_factory=lambda: ["CEL-Mix", "DEL"])
    q: float = 0.05
    n_boot: int = 2000
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        for g in self.generators:
            if g not in GENERATORS:
                raise ConfigError(f"unknown generator {g!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        for s in self.snr_levels:
            resolve_snr(s)
        # numeric levels are kept as floats so resumed runs match on str(snr)
        self.snr_levels = [s if isinstance(s, str) else float(s) for s in self.snr_levels]
        if self.repeats < 1:
            raise ConfigError("repeats must be positive")
        if any(K < 2 for K in self.Ks) or any(N < 2 for N in self.Ns):
            raise ConfigError("need K >= 2 and N >= 2")
        if len(self.compare) != 2:
            raise ConfigError("compare must name exactly two methods")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentGrid":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown grid keys: {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def conditions(self):
        return list(itertools.product(self.generators, self.Ns, self.Ks, self.Ts, self.snr_levels))

    def unit_seed(self, condition, repeat: int) -> int:
        return derive_seed(self.base_seed, *condition, repeat)


# --------------------------------------------------------------------------
# methods

def fit_labels(method: str, X, K: int, seed, lambda_ising: float = 1e-2) -> np.ndarray:
    """Basin label per time point for one method."""
    if method == "DEL":
        Q = median_binarize(X)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = fit_ising_ple(Q, lambda_ising=lambda_ising)
        return assign_basins(Q, model).labels
    if method == "CEL":
        fit_gaussian_mle(X)
        return np.zeros(X.shape[0], dtype=int)
    if method == "CEL-Mix":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = fit_gmm(X, K, seed=seed)
        return map_labels(X, model)
    if method == "GCN-CEL":
        from .gcn import node_features, train, TrainConfig
        from .graph import build_graph
        Xs = standardize(X)
        graph = build_graph(Xs)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            train(Xs, graph, node_features(Xs, graph), TrainConfig(), seed=seed)
        return np.zeros(X.shape[0], dtype=int)
    raise ConfigError(f"unknown method {method!r}")


def run_unit(args) -> list[dict]:
    """Simulate one (condition, repeat) unit and score every method on it."""
    condition, repeat, seed, methods, kappa, lambda_ising = args
    generator, N, K, T, snr = condition
    base = {"generator": generator, "N": N, "K": K, "T": T, "snr": snr,
            "repeat": repeat, "seed": seed, "snr_achieved": ""}
    try:
        sim = simulate(generator, N, K, T, snr, seed)
        base["snr_achieved"] = float(sim.meta["snr_achieved"])
    except EnergyscapeError as exc:
        return [{**base, "method": m, "BR": "", "TMA": "", "SDA": "", "n_recovered": "",
                 "status": "error", "error": f"simulate:{type(exc).__name__}"} for m in methods]
    rows = []
    for m in methods:
        try:
            labels = fit_labels(m, sim.X, K, derive_seed(seed, "fit", m), lambda_ising)
            rep = score_recovery(sim.X, labels, sim.centers, sim.z, sim.P_star, kappa)
            rows.append({**base, "method": m, "BR": rep.br, "TMA": rep.tma, "SDA": rep.sda,
                         "n_recovered": rep.n_recovered, "status": "ok", "error": ""})
        except (EnergyscapeError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
            rows.append({**base, "method": m, "BR": "", "TMA": "", "SDA": "", "n_recovered": "",
                         "status": "error", "error": type(exc).__name__})
    return rows


# --------------------------------------------------------------------------
# results file

def _snr_key(s):
    return SNR_LEVELS[s] if s in SNR_LEVELS else float(s)


def _row_key(r):
    return (r["generator"], int(r["N"]), int(r["K"]), int(r["T"]), _snr_key(r["snr"]),
            int(r["repeat"]), METHODS.index(r["method"]) if r["method"] in METHODS else 99)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results(path, rows) -> None:
    rows = sorted(rows, key=_row_key)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in RESULT_COLUMNS])


def read_results(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            for c in ("N", "K", "T", "repeat", "seed"):
                r[c] = int(r[c])
            for c in (*METRICS, "snr_achieved"):
                r[c] = float(r[c]) if r[c] != "" else ""
            r["n_recovered"] = int(r["n_recovered"]) if r["n_recovered"] != "" else ""
            try:
                r["snr"] = float(r["snr"])
            except ValueError:
                pass
            rows.append(r)
    return rows


def _unit_id(r):
    return (r["generator"], int(r["N"]), int(r["K"]), int(r["T"]), str(r["snr"]), int(r["repeat"]))


def run_grid(grid: ExperimentGrid, out_dir, parallelism: int = 1, progress=None) -> dict:
    """Run every (condition, repeat) unit, resuming from an existing results file.

    Rows are appended as units finish and the file is rewritten in canonical
    order at the end, so an interrupted run resumes to the same final CSV.
    """
    os.makedirs(out_dir, exist_ok=True)
    results_path = os.path.join(out_dir, "results.csv")
    done_rows = read_results(results_path) if os.path.exists(results_path) else []
    have = {}
    for r in done_rows:
        have.setdefault(_unit_id(r), set()).add(r["method"])
    keep = [r for r in done_rows if have[_unit_id(r)] >= set(grid.methods)]
    finished = {_unit_id(r) for r in keep}
    work = []
    for cond in grid.conditions():
        for rep in range(grid.repeats):
            uid = (cond[0], cond[1], cond[2], cond[3], str(cond[4]), rep)
            if uid not in finished:
                work.append((cond, rep, grid.unit_seed(cond, rep), list(grid.methods),
                             grid.kappa, grid.lambda_ising))
    rows = [r for r in keep if r["method"] in grid.methods]
    write_results(results_path, rows)
    with open(results_path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")

        def collect(unit_rows):
            for r in unit_rows:
                w.writerow([_fmt(r[c]) for c in RESULT_COLUMNS])
            fh.flush()
            rows.extend(unit_rows)
            if progress:
                progress(len(rows))

        if parallelism > 1 and len(work) > 1:
            with ProcessPoolExecutor(max_workers=parallelism) as pool:
                for unit_rows in pool.map(run_unit, work, chunksize=1):
                    collect(unit_rows)
        else:
            for item in work:
                collect(run_unit(item))
    write_results(results_path, rows)
    report = build_report(read_results(results_path), grid)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


# --------------------------------------------------------------------------
# aggregation

def build_report(rows, grid: ExperimentGrid | None = None) -> dict:
    """Per-condition means with bootstrap CIs and paired method comparisons.

    Paired differences (first minus second compared method) are taken over
    units where both methods succeeded. BH control runs per metric across
    conditions.
    """
    grid = grid or ExperimentGrid(generators=sorted({r["generator"] for r in rows}))
    a, b = grid.compare
    by_cond: dict = {}
    for r in rows:
        cond = (r["generator"], int(r["N"]), int(r["K"]), int(r["T"]), str(r["snr"]))
        by_cond.setdefault(cond, []).append(r)
    conditions = []
    for cond in sorted(by_cond, key=lambda c: (c[0], c[1], c[2], c[3], _snr_key(c[4]))):
        crow = by_cond[cond]
        entry = {"generator": cond[0], "N": cond[1], "K": cond[2], "T": cond[3], "snr": cond[4],
                 "methods": {}, "comparison": {}}
        methods = sorted({r["method"] for r in crow}, key=lambda m: METHODS.index(m))
        for m in methods:
            ok = [r for r in crow if r["method"] == m and r["status"] == "ok"]
            stats = {"n_ok": len(ok), "n_error": sum(1 for r in crow if r["method"] == m) - len(ok)}
            for met in METRICS:
                vals = np.array([r[met] for r in ok], dtype=float)
                stats[met] = {"mean": float(vals.mean()) if vals.size else None}
                if vals.size >= 2:
                    lo, hi = bootstrap_ci(vals, n_boot=grid.n_boot,
                                          seed=derive_seed(grid.base_seed, "boot", *cond, m, met))
                    stats[met]["ci95"] = [lo, hi]
            entry["methods"][m] = stats
        if a in methods and b in methods:
            ra = {r["repeat"]: r for r in crow if r["method"] == a and r["status"] == "ok"}
            rb = {r["repeat"]: r for r in crow if r["method"] == b and r["status"] == "ok"}
            paired = sorted(set(ra) & set(rb))
            for met in METRICS:
                d = np.array([ra[k][met] - rb[k][met] for k in paired], dtype=float)
                cmp = {"pair": f"{a} - {b}", "n_pairs": len(paired),
                       "median_diff": float(np.median(d)) if d.size else None,
                       "mean_diff": float(d.mean()) if d.size else None}
                try:
                    cmp["p_value"] = wilcoxon_signed_rank(d)
                    cmp["flag"] = ""
                except TooFewSamples:
                    cmp["p_value"] = None
                    cmp["flag"] = "NoNonzeroDiffs" if not np.any(d != 0) else "TooFewSamples"
                entry["comparison"][met] = cmp
        conditions.append(entry)
    for met in METRICS:
        tested = [c["comparison"][met] for c in conditions
                  if met in c["comparison"] and c["comparison"][met]["p_value"] is not None]
        if tested:
            reject, adj = benjamini_hochberg([t["p_value"] for t in tested], grid.q)
            for t, rj, pa in zip(tested, reject, adj):
                t["p_bh"] = float(pa)
                t["bh_reject"] = bool(rj)
    return {"schema_version": SCHEMA_VERSION, "compare": [a, b], "q": grid.q,
            "conditions": conditions, "grid": asdict(grid)}
