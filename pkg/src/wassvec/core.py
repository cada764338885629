"""Histograms, ground costs, couplings and the metrics used to compare them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SIMPLEX_ATOL = 1e-12
RENORMALIZE_TOL = 1e-6
MARGINAL_ATOL = 1e-9
SUPPORT_RTOL = 1e-12
SYMMETRY_RTOL = 1e-12


def _frozen(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=np.float64, copy=True)
    x.setflags(write=False)
    return x


def _normalize_mass(w: np.ndarray, what: str = "histogram") -> np.ndarray:
    if w.size == 0:
        raise ValueError(f"{what} is empty")
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{what} has non-finite entries")
    if np.any(w < 0):
        raise ValueError(f"{what} has negative entries (min {w.min():.3g})")
    mass = w.sum(axis=0)
    dev = np.abs(mass - 1.0)
    if np.any(dev > RENORMALIZE_TOL):
        raise ValueError(
            f"{what} mass deviates from 1 by {np.max(dev):.3g} "
            f"(renormalization only below {RENORMALIZE_TOL:g})"
        )
    return w / mass


@dataclass(frozen=True, eq=False)
class Histogram:
    """Probability vector on ``n`` bins.

    Inputs whose mass is within 1e-6 of one are renormalized, anything
    further away is rejected.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError(f"histogram must be 1-D, got shape {w.shape}")
        object.__setattr__(self, "weights", _frozen(_normalize_mass(w)))

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def __len__(self):
        return self.n

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)


@dataclass(frozen=True, eq=False)
class Dataset:
    """``m`` histograms of common length ``n``, stored as the columns of an
    ``(n, m)`` matrix."""

    columns: np.ndarray
    labels: Optional[Sequence] = None
    distinct: bool = field(init=False)

    def __post_init__(self):
        A = self.columns
        if isinstance(A, (list, tuple)) and A and isinstance(A[0], Histogram):
            A = np.column_stack([h.weights for h in A])
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2:
            raise ValueError(f"dataset must be a 2-D (n, m) array, got shape {A.shape}")
        A = _normalize_mass(A, what="dataset column")
        object.__setattr__(self, "columns", _frozen(A))
        if self.labels is not None:
            labels = list(self.labels)
            if len(labels) != A.shape[1]:
                raise ValueError(f"{len(labels)} labels for {A.shape[1]} histograms")
            object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "distinct", _pairwise_distinct(A))

    @classmethod
    def from_rows(cls, X, labels=None) -> "Dataset":
        """Build from a samples-by-bins matrix (one histogram per row)."""
        return cls(np.asarray(X, dtype=np.float64).T, labels=labels)

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def m(self) -> int:
        return self.columns.shape[1]

    def __len__(self):
        return self.m

    def __getitem__(self, j) -> Histogram:
        return Histogram(self.columns[:, j])

    def require_distinct(self):
        if not self.distinct:
            i, j = _first_duplicate(self.columns)
            raise ValueError(f"histograms {i} and {j} are identical")
        return self


def _pairwise_distinct(A: np.ndarray) -> bool:
    return _first_duplicate(A) is None


def _first_duplicate(A: np.ndarray):
    seen = {}
    for j in range(A.shape[1]):
        key = A[:, j].tobytes()
        if key in seen:
            return seen[key], j
        seen[key] = j
    return None


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Symmetric non-negative ``(n, n)`` matrix with zero diagonal.

    Asymmetry up to ``1e-12 * max|C|`` is absorbed by mirroring the upper
    triangle, so the stored matrix is exactly symmetric.
    """

    entries: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.entries, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError(f"cost must be square, got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise ValueError("cost has non-finite entries")
        if np.any(C < 0):
            raise ValueError(f"cost has negative entries (min {C.min():.3g})")
        if np.any(np.diag(C) != 0):
            raise ValueError("cost has a nonzero diagonal")
        scale = C.max() if C.size else 0.0
        if np.any(np.abs(C - C.T) > SYMMETRY_RTOL * scale):
            raise ValueError("cost is not symmetric")
        iu = np.triu_indices_from(C, 1)
        S = np.zeros_like(C)
        S[iu] = C[iu]
        S = S + S.T
        object.__setattr__(self, "entries", _frozen(S))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def is_positive(self) -> bool:
        """True when every off-diagonal entry is strictly positive."""
        off = ~np.eye(self.n, dtype=bool)
        return bool(np.all(self.entries[off] > 0))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __mul__(self, gamma: float) -> "CostMatrix":
        return CostMatrix(self.entries * gamma)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class Coupling:
    """Transport plan between ``source`` and ``target`` marginals."""

    plan: np.ndarray
    source: Optional[np.ndarray] = None
    target: Optional[np.ndarray] = None

    def __post_init__(self):
        P = np.asarray(self.plan, dtype=np.float64)
        if P.ndim != 2:
            raise ValueError(f"plan must be 2-D, got shape {P.shape}")
        if np.any(P < 0):
            raise ValueError("plan has negative entries")
        if abs(P.sum() - 1.0) > MARGINAL_ATOL:
            raise ValueError(f"plan mass {P.sum():.12g} differs from 1")
        for name, marg, axis in (("source", self.source, 1), ("target", self.target, 0)):
            if marg is None:
                continue
            marg = np.asarray(marg, dtype=np.float64)
            err = np.abs(P.sum(axis=axis) - marg).sum()
            if err > MARGINAL_ATOL:
                raise ValueError(f"{name} marginal violated by {err:.3g} (l1)")
            object.__setattr__(self, name, _frozen(marg))
        object.__setattr__(self, "plan", _frozen(P))

    @property
    def support(self) -> set:
        """Index pairs carrying mass above ``1e-12`` times the largest entry."""
        P = self.plan
        thr = SUPPORT_RTOL * P.max()
        return {(int(k), int(l)) for k, l in zip(*np.nonzero(P > thr))}

    @classmethod
    def from_sparse(cls, rows, cols, values, n_source, n_target, source=None, target=None):
        P = np.zeros((n_source, n_target))
        np.add.at(P, (np.asarray(rows), np.asarray(cols)), np.asarray(values))
        return cls(P, source, target)


def as_histogram(a) -> np.ndarray:
    if isinstance(a, Histogram):
        return a.weights
    return Histogram(a).weights


def as_cost(C) -> np.ndarray:
    if isinstance(C, CostMatrix):
        return C.entries
    return CostMatrix(C).entries


def as_dataset(A) -> Dataset:
    if isinstance(A, Dataset):
        return A
    return Dataset(A)


def l1_distance(a, b) -> float:
    """Total variation norm ``sum_i |a_i - b_i|``."""
    a, b = as_histogram(a), as_histogram(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.abs(a - b).sum())


def linf_norm(C) -> float:
    C = np.asarray(C, dtype=np.float64)
    return float(np.abs(C).max()) if C.size else 0.0


def hilbert_metric(C, C2) -> float:
    """Hilbert projective metric between costs with positive off-diagonals.

    Returns ``max log(C/C2) - min log(C/C2)`` over off-diagonal entries, which
    is invariant under positive rescaling of either argument.
    """
    C = np.asarray(C, dtype=np.float64)
    C2 = np.asarray(C2, dtype=np.float64)
    if C.shape != C2.shape or C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"shape mismatch: {C.shape} vs {C2.shape}")
    off = ~np.eye(C.shape[0], dtype=bool)
    x, y = C[off], C2[off]
    if x.size == 0:
        return 0.0
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("Hilbert metric needs strictly positive off-diagonal entries")
    r = np.log(x) - np.log(y)
    return float(r.max() - r.min())
