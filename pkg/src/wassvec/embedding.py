"""Large-epsilon linear map, Euclidean distance matrix cone, PCA eigencosts and
classical MDS."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import CostMatrix, as_cost, as_dataset, linf_norm

CONE_RTOL = 1e-10
PCA_RTOL = 1e-8


class EigenSolverError(ArithmeticError):
    """An eigenpair failed its own residual check (typically a defective matrix)."""


def delta_operator(K) -> np.ndarray:
    """``-(K + K^T) + diag(K) 1^T + 1 diag(K)^T``.

    Maps a Gram-like kernel to squared distances: ``delta_operator(outer(u, u))``
    has entries ``(u_i - u_j)**2``.
    """
    K = np.asarray(K)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"delta_operator needs a square matrix, got shape {K.shape}")
    d = np.diag(K)
    out = -(K + K.T) + d[:, None] + d[None, :]
    np.fill_diagonal(out, 0)
    return out


def _centering(n: int) -> np.ndarray:
    return np.eye(n) - np.full((n, n), 1.0 / n)


def _gram(A, C):
    X = as_dataset(A).columns
    Cm = np.asarray(C, dtype=np.float64)
    if Cm.ndim != 2 or Cm.shape[0] != Cm.shape[1]:
        raise ValueError(f"cost must be square, got shape {Cm.shape}")
    if Cm.shape[0] != X.shape[0]:
        raise ValueError(f"dimension mismatch: cost is {Cm.shape[0]}x{Cm.shape[0]}, histograms have {X.shape[0]} bins")
    return X.T @ Cm @ X


def phi_infty(A, C) -> np.ndarray:
    """``0.5 * <-C (a_i - a_j), a_i - a_j>`` for every pair of histograms.

    This is the large-epsilon limit of the debiased Sinkhorn distance map.
    Linear in ``C``; symmetric with zero diagonal.
    """
    return -0.5 * delta_operator(_gram(A, C))


def gram_distance_map(A, C) -> np.ndarray:
    """``-delta_operator(A^T C A)``, equal to ``2 * phi_infty(A, C)``.

    The PCA eigencosts are eigenvectors of this map with eigenvalue
    ``2 |lambda|^2``.
    """
    return -delta_operator(_gram(A, C))


@dataclass(frozen=True)
class ConeReport:
    """Outcome of :func:`cone_membership`.

    ``dimension`` is the embedding dimension when ``in_cone``; otherwise
    ``witness`` is a vector ``z`` orthogonal to ones with ``<C z, z> > 0``.
    """

    in_cone: bool
    dimension: Optional[int]
    witness: Optional[np.ndarray] = field(default=None, repr=False)
    min_eigenvalue: float = 0.0
    eigenvalues: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def quadratic_value(self) -> float:
        """``<C z, z>`` at the witness (``-2`` times the smallest eigenvalue)."""
        return -2.0 * self.min_eigenvalue if not self.in_cone else 0.0


def cone_membership(C) -> ConeReport:
    """Decide whether ``C`` is a squared Euclidean distance matrix.

    Uses the spectrum of ``-0.5 J C J`` with ``J`` the centering projector.
    Eigenvalues below ``-1e-10 * max|C|`` mean the quadratic form of ``C``
    is positive somewhere on the sum-zero hyperplane.
    """
    Cm = as_cost(C)
    n = Cm.shape[0]
    if n == 0:
        return ConeReport(True, 0)
    J = _centering(n)
    G = -0.5 * J @ Cm @ J
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    tol = CONE_RTOL * linf_norm(Cm)
    if w[0] < -tol:
        z = V[:, 0] - V[:, 0].mean()
        z /= np.linalg.norm(z)
        return ConeReport(False, None, z, float(w[0]), w)
    return ConeReport(True, int(np.sum(w > tol)), None, float(w[0]), w)


@dataclass(frozen=True)
class PcaEigenpair:
    """Eigenpair ``(u, lam)`` of the transposed centered dataset and the cost
    ``|u_i - u_j|**2`` it induces."""

    vector: np.ndarray
    eigenvalue: complex
    induced_cost: CostMatrix
    residual: float

    @property
    def map_eigenvalue(self) -> float:
        """Eigenvalue ``2 |lam|^2`` of :func:`gram_distance_map`."""
        return 2.0 * abs(self.eigenvalue) ** 2

    @property
    def is_complex(self) -> bool:
        return abs(np.imag(self.eigenvalue)) > 0


def _induced_cost(u):
    diff = u[:, None] - u[None, :]
    C = np.abs(diff) ** 2
    return CostMatrix(0.5 * (C + C.T))


def pca_eigencosts(A, k: int) -> List[PcaEigenpair]:
    """Eigencosts of the large-epsilon map built from principal directions.

    The dataset (square, ``n == m``) is centered column-wise; the top ``k``
    eigenpairs of its transpose, ordered by modulus, each give a cost
    ``|u_i - u_j|^2`` which :func:`gram_distance_map` scales by
    ``2 |lam|^2``. A complex-conjugate pair yields a single cost and counts
    once towards ``k``. Every result is checked against both eigen-equations;
    a failure raises :class:`EigenSolverError`.
    """
    data = as_dataset(A)
    X = data.columns
    n, m = X.shape
    if n != m:
        raise ValueError(f"PCA eigencosts need a square dataset, got n={n}, m={m}")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    Xc = X - X.mean(axis=1, keepdims=True)
    M = Xc.T
    w, V = np.linalg.eig(M)
    order = sorted(range(n), key=lambda i: (-abs(w[i]), -np.imag(w[i]), i))
    scale = max(np.abs(M).max(), np.finfo(float).tiny)
    out: List[PcaEigenpair] = []
    used = np.zeros(n, dtype=bool)
    for i in order:
        if len(out) == k:
            break
        if used[i]:
            continue
        used[i] = True
        lam, u = w[i], V[:, i]
        if abs(np.imag(lam)) > 1e-12 * scale:
            # mark the conjugate partner
            partner = [j for j in order if not used[j] and abs(w[j] - np.conj(lam)) <= 1e-9 * scale]
            if partner:
                used[partner[0]] = True
        else:
            lam = complex(np.real(lam))
            u = np.real(u) if np.abs(np.imag(u)).max() <= 1e-12 else u
        u = u / np.linalg.norm(u)
        # the constant vector is always in the kernel and induces the zero cost
        if np.linalg.norm(u - u.mean()) <= 1e-8:
            u = np.full(n, 1.0 / np.sqrt(n), dtype=u.dtype)
        eq = np.abs(M @ u - lam * u).max()
        if eq > PCA_RTOL * max(scale, abs(lam)):
            raise EigenSolverError(f"eigenpair {len(out)} violates the eigen-equation by {eq:.3g}")
        cost = _induced_cost(u)
        C = cost.entries
        res = linf_norm(gram_distance_map(data, C) - 2.0 * abs(lam) ** 2 * C)
        if res > PCA_RTOL * linf_norm(C):
            raise EigenSolverError(f"induced cost {len(out)} misses its eigenvalue by {res:.3g}")
        out.append(PcaEigenpair(u, complex(lam), cost, float(res)))
    return out


def classical_mds(D, dims: int = 2) -> np.ndarray:
    """Classical multidimensional scaling of a squared-distance matrix.

    Returns ``(n, dims)`` coordinates from the top eigenpairs of ``-0.5 J D J``.
    Directions with non-positive eigenvalue get zero coordinates; if there are
    none at all a warning is issued. Each axis is oriented so that its largest
    entry in absolute value is positive.
    """
    if dims not in (1, 2, 3):
        raise ValueError(f"dims must be 1, 2 or 3, got {dims}")
    Dm = np.asarray(D, dtype=np.float64)
    if Dm.ndim != 2 or Dm.shape[0] != Dm.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {Dm.shape}")
    if np.any(np.diag(Dm) != 0) or not np.allclose(Dm, Dm.T, rtol=0, atol=1e-12 * max(linf_norm(Dm), 1.0)):
        raise ValueError("distance matrix must be symmetric with zero diagonal")
    n = Dm.shape[0]
    J = _centering(n)
    G = -0.5 * J @ Dm @ J
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    w, V = w[::-1], V[:, ::-1]
    tol = CONE_RTOL * max(linf_norm(Dm), np.finfo(float).tiny)
    X = np.zeros((n, dims))
    if not np.any(w > tol):
        warnings.warn("distance matrix has no Euclidean component; returning zero coordinates",
                      RuntimeWarning, stacklevel=2)
        return X
    for k in range(min(dims, n)):
        if w[k] <= tol:
            break
        v = V[:, k]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        X[:, k] = np.sqrt(w[k]) * v
    return X
