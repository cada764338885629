"""scikit-learn style estimators wrapping the power iterations.

Inputs follow the scikit-learn layout: one sample per row. Each row is a
histogram over the feature columns.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_non_negative

from .core import Dataset
from .distance_map import BACKENDS, PhiConfig, cross_distances
from .entropic_ot import SinkhornConfig, bistochastic_scaling
from .spectral import IterationConfig, power_eigen, power_singular

NORMALIZATIONS = ("canonical", "bistochastic")


def _check_params(est):
    if est.backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {est.backend!r}")
    if not est.tau >= 0:
        raise ValueError(f"tau must be non-negative, got {est.tau}")
    if not est.epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {est.epsilon}")
    if not (isinstance(est.max_iter, (int, np.integer)) and est.max_iter > 0):
        raise ValueError(f"max_iter must be a positive integer, got {est.max_iter}")


def _phi_config(est) -> PhiConfig:
    return PhiConfig(
        tau=float(est.tau),
        backend=est.backend,
        sinkhorn=SinkhornConfig(epsilon=float(est.epsilon),
                                max_iterations=int(est.sinkhorn_max_iter)),
        threads=est.n_threads,
    )


def _iter_config(est) -> IterationConfig:
    init = est.init
    if not isinstance(init, str):
        init = np.asarray(init, dtype=np.float64)
    return IterationConfig(initial_cost=init, seed=est.random_state,
                           tolerance_hilbert=float(est.tol),
                           tolerance_residual=float(est.tol),
                           max_iterations=int(est.max_iter))


def _validate(est, X, reset: bool):
    X = check_array(X, dtype=np.float64)
    check_non_negative(X, type(est).__name__)
    if not reset and X.shape[1] != est.n_features_in_:
        raise ValueError(f"X has {X.shape[1]} features, but {type(est).__name__} "
                         f"was fitted with {est.n_features_in_}")
    if reset:
        est.n_features_in_ = X.shape[1]
    return X


def _rows_as_histograms(X) -> Dataset:
    s = X.sum(axis=1, keepdims=True)
    if np.any(s <= 0):
        raise ValueError(f"sample {int(np.argmin(s))} has zero mass")
    return Dataset((X / s).T)


class _Base(TransformerMixin, BaseEstimator):
    def _transform_with(self, X, cost):
        X = _validate(self, X, reset=False)
        return cross_distances(_rows_as_histograms(X), self.train_, cost, _phi_config(self))


class WassersteinEigenvectors(_Base):
    """Ground cost that is its own Wasserstein distance matrix.

    Fits on a square ``(n_samples, n_features)`` matrix whose rows are
    histograms (rescaled to unit mass). After fitting, ``cost_`` is both the
    ground cost between features and, up to ``eigenvalue_``, the distance
    matrix between samples. ``transform`` maps new samples to their distances
    from the training samples.

    Parameters
    ----------
    tau : float
        Weight of the ``l1`` regularization term.
    backend : {"exact", "entropic", "mmd_limit"}
    epsilon : float
        Relative entropic regularization (entropic backend only).
    tol : float
        Hilbert-metric and residual tolerance.
    max_iter : int
    init : "l1", "random" or array
    random_state : int or None
        Seed for ``init="random"``.
    n_threads : int or None
    sinkhorn_max_iter : int
    """

    def __init__(self, tau=0.0, backend="exact", epsilon=1e-2, tol=1e-8, max_iter=200,
                 init="l1", random_state=None, n_threads=None, sinkhorn_max_iter=10000):
        self.tau = tau
        self.backend = backend
        self.epsilon = epsilon
        self.tol = tol
        self.max_iter = max_iter
        self.init = init
        self.random_state = random_state
        self.n_threads = n_threads
        self.sinkhorn_max_iter = sinkhorn_max_iter

    def fit(self, X, y=None):
        _check_params(self)
        X = _validate(self, X, reset=True)
        if X.shape[0] != X.shape[1]:
            raise ValueError(f"eigenvectors need as many samples as features, got {X.shape}")
        self.train_ = _rows_as_histograms(X)
        res = power_eigen(self.train_, _phi_config(self), _iter_config(self))
        self.cost_ = res.cost_C
        self.eigenvalue_ = res.lam
        self.status_ = res.status
        self.n_iter_ = res.n_iter
        self.trace_ = res.trace
        return self

    def transform(self, X):
        check_is_fitted(self, "cost_")
        return self._transform_with(X, self.cost_)


class WassersteinSingularVectors(_Base):
    """Jointly learned feature cost and sample distances.

    Fits on an ``(n_samples, n_features)`` non-negative matrix. ``feature_cost_``
    is the ground cost between features and ``sample_distances_`` the matching
    distance matrix between samples; each is, up to scale, the transport
    distance matrix induced by the other. ``transform`` returns distances
    from new samples to the training samples under ``feature_cost_``.

    ``normalization="canonical"`` normalizes the rows and columns separately;
    ``"bistochastic"`` first rescales the matrix to uniform row and column
    sums. Other parameters are as in :class:`WassersteinEigenvectors`.
    """

    def __init__(self, tau=0.0, backend="exact", epsilon=1e-2, tol=1e-8, max_iter=200,
                 init="l1", random_state=None, n_threads=None, sinkhorn_max_iter=10000,
                 normalization="canonical"):
        self.tau = tau
        self.backend = backend
        self.epsilon = epsilon
        self.tol = tol
        self.max_iter = max_iter
        self.init = init
        self.random_state = random_state
        self.n_threads = n_threads
        self.sinkhorn_max_iter = sinkhorn_max_iter
        self.normalization = normalization

    def fit(self, X, y=None):
        _check_params(self)
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}")
        X = _validate(self, X, reset=True)
        U = X.T  # features x samples
        if self.normalization == "bistochastic":
            U = bistochastic_scaling(U)
        cs, rs = U.sum(axis=0), U.sum(axis=1)
        if np.any(cs <= 0) or np.any(rs <= 0):
            raise ValueError("every sample and every feature needs positive total mass")
        A, B = Dataset(U / cs), Dataset(U.T / rs)
        self.train_ = A
        res = power_singular(A, B, _phi_config(self), _iter_config(self))
        self.feature_cost_ = res.cost_C
        self.sample_distances_ = res.cost_D
        self.lambda_ = res.lam
        self.mu_ = res.mu
        self.status_ = res.status
        self.n_iter_ = res.n_iter
        self.trace_ = res.trace
        return self

    def fit_transform(self, X, y=None):
        """Fit and return ``sample_distances_``."""
        return self.fit(X).sample_distances_

    def transform(self, X):
        check_is_fitted(self, "feature_cost_")
        return self._transform_with(X, self.feature_cost_)
