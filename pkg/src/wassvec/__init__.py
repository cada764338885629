"""Wasserstein eigenvectors and singular vectors: ground costs learned as
fixed points of the optimal transport distance map."""

__version__ = "0.1.0"

from .core import (Coupling, CostMatrix, Dataset, Histogram, hilbert_metric, l1_distance,
                   linf_norm)
from .data import (DataMatrix, Template, block_dataset, canonical_normalization,
                   mean_scale_family, read_csv, read_idx, scrna_preprocess, torus_dataset_1d,
                   torus_dataset_2d)
from .distance_map import PairCouplings, PhiConfig, cross_distances, l1_matrix, phi
from .embedding import (classical_mds, cone_membership, delta_operator, gram_distance_map,
                        pca_eigencosts, phi_infty)
from .entropic_ot import (SinkhornConfig, SinkhornConvergenceError, bistochastic_scaling,
                          sinkhorn_cost, sinkhorn_divergence)
from .estimators import WassersteinEigenvectors, WassersteinSingularVectors
from .exact_ot import OtSolution, SolverError, brute_force_oracle, solve_exact
from .spectral import (IterationConfig, SpectralResult, eigenvalue_consistency, power_eigen,
                       power_singular, uniqueness_certificate)

__all__ = [
    "bistochastic_scaling", "block_dataset", "brute_force_oracle", "canonical_normalization",
    "classical_mds", "cone_membership", "CostMatrix", "Coupling", "cross_distances",
    "DataMatrix", "Dataset", "delta_operator", "eigenvalue_consistency", "gram_distance_map",
    "hilbert_metric", "Histogram", "IterationConfig", "l1_distance", "l1_matrix", "linf_norm",
    "mean_scale_family", "OtSolution", "PairCouplings", "pca_eigencosts", "phi", "phi_infty",
    "PhiConfig", "power_eigen", "power_singular", "read_csv", "read_idx", "scrna_preprocess",
    "sinkhorn_cost", "sinkhorn_divergence", "SinkhornConfig", "SinkhornConvergenceError",
    "solve_exact", "SolverError", "SpectralResult", "Template", "torus_dataset_1d",
    "torus_dataset_2d", "uniqueness_certificate", "WassersteinEigenvectors",
    "WassersteinSingularVectors"
]
