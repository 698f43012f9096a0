"""Energy landscape models for multivariate time series.

Discrete (Ising) and continuous (Gaussian, Gaussian-mixture and
GCN-parameterized low-rank precision) landscapes, ground-truth simulators,
and recovery metrics with paired statistics.
"""
from .continuous import (GaussianEnergyModel, completed_square_energy, energy_minimum,
                         fit_gaussian_mle, log_density, normalize_energy, normalized_energy,
                         quadratic_energy)
from .core import derive_seed, make_rng, median_binarize, standardize
from .discrete import (IsingModel, assign_basins, boltzmann_probabilities, exact_ising_fit,
                       fit_ising_ple, greedy_descent, ising_energy)
from .evaluation import (basin_centroids, basin_recovery, hungarian_match, score_recovery, sda,
                         tma, transition_matrix)
from .exceptions import *  # noqa: F401,F403
from .graph import FunctionalGraph, build_graph, normalize_weights, threshold_graph
from .mixture import (MixtureEnergyModel, fit_gmm, map_labels, mixture_energy, responsibilities,
                      select_components_bic)
from .simulate import (RegimeChain, compute_snr, place_centers, sample_chain, simulate,
                       simulate_kuramoto, simulate_slds)
from .stats import benjamini_hochberg, bootstrap_ci, wilcoxon_signed_rank

__version__ = "0.1.0"
