"""The distance map: a ground cost on bins -> pairwise distances between histograms.

Three backends share one entry point, :func:`phi`:

* ``exact``: ``W_C(a_i, a_j) + tau * max|C| * |a_i - a_j|_1``
* ``entropic``: the same with the debiased Sinkhorn divergence
* ``mmd_limit``: the large-epsilon limit ``-<C d, d> / 2`` with ``d = a_i - a_j``

Only the ``m (m - 1) / 2`` unordered pairs are evaluated; the output is
symmetric with zero diagonal by construction.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import entropic_ot
from .core import Coupling, as_cost, as_dataset, linf_norm
from .entropic_ot import SinkhornConfig, SinkhornConvergenceError
from .exact_ot import SolverError, _default_max_iter, pairwise_exact

BACKENDS = ("exact", "entropic", "mmd_limit")
THREADS_ENV = "WASSVEC_THREADS"


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class PhiConfig:
    tau: float = 0.0
    backend: str = "exact"
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    store_couplings: bool = False
    optimal_face: bool = False
    threads: Optional[int] = None

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError(f"tau must be non-negative, got {self.tau}")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; expected one of {BACKENDS}")
        if self.store_couplings and self.backend != "exact":
            raise ValueError("couplings can only be stored with the exact backend")
        if self.optimal_face and not self.store_couplings:
            raise ValueError("optimal_face needs store_couplings=True")


@dataclass(frozen=True)
class PairCouplings:
    """Vertex couplings for every unordered pair ``i < j``, stored sparsely.

    Row ``k`` of ``rows/cols/values`` lists the basic cells of the plan between
    histograms ``I[k]`` and ``J[k]`` (padding cells have index ``-1``).
    ``face[k]`` flags further cells used by optimal vertices adjacent to that
    plan; averaging those vertices gives another optimal coupling, so
    ``support(k, face=True)`` is the support of an optimal plan too.
    """

    n: int
    I: np.ndarray
    J: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    face: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self):
        return self.I.shape[0]

    def index(self, i: int, j: int) -> int:
        i, j = min(i, j), max(i, j)
        hit = np.nonzero((self.I == i) & (self.J == j))[0]
        if hit.size == 0:
            raise KeyError((i, j))
        return int(hit[0])

    def support(self, k: int, rtol: float = 1e-12, face: bool = False):
        """Cells of pair ``k`` carrying mass above ``rtol`` times its largest entry."""
        valid = self.rows[k] >= 0
        r, c, v = self.rows[k][valid], self.cols[k][valid], self.values[k][valid]
        keep = v > rtol * v.max()
        r, c = r[keep], c[keep]
        if face and self.face is not None and self.face.shape[0]:
            fr, fc = np.nonzero(self.face[k])
            r, c = np.concatenate([r, fr]), np.concatenate([c, fc])
        return r, c

    def coupling(self, i: int, j: int, A=None) -> Coupling:
        k = self.index(i, j)
        valid = self.rows[k] >= 0
        src = tgt = None
        if A is not None:
            A = as_dataset(A).columns
            src, tgt = A[:, self.I[k]], A[:, self.J[k]]
        return Coupling.from_sparse(self.rows[k][valid], self.cols[k][valid],
                                    self.values[k][valid], self.n, self.n, src, tgt)


def l1_matrix(A) -> np.ndarray:
    """``T[i, j] = |a_i - a_j|_1`` for every pair of histograms."""
    X = as_dataset(A).columns
    return np.abs(X[:, :, None] - X[:, None, :]).sum(axis=0)


def _chunks(npairs: int, threads: int):
    bounds = np.linspace(0, npairs, threads + 1).astype(int)
    return [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def _run_chunks(fn, npairs, threads):
    """Evaluate ``fn(lo, hi)`` over contiguous pair ranges; results in order."""
    threads = max(1, min(threads, npairs)) if npairs else 1
    ranges = _chunks(npairs, threads)
    if threads == 1 or len(ranges) == 1:
        return [fn(lo, hi) for lo, hi in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda r: fn(*r), ranges))


def _assemble(m, I, J, vals):
    D = np.zeros((m, m))
    D[I, J] = vals
    D[J, I] = vals
    return D


def _phi_exact(A, C, I, J, threads, face):
    max_iter = _default_max_iter(A.shape[0])
    n = A.shape[0]
    parts = _run_chunks(
        lambda lo, hi: pairwise_exact(C, A, I[lo:hi], J[lo:hi], max_iter, face),
        I.shape[0], threads,
    )
    if not parts:
        empty = np.empty((0, 2 * n - 1), dtype=np.int64)
        return np.empty(0), (empty, empty, np.empty((0, 2 * n - 1)),
                             np.zeros((0, n, n), dtype=bool))
    if sum(p[5] for p in parts):
        raise SolverError("transportation simplex hit its pivot cap on some pair")
    vals = np.concatenate([p[0] for p in parts])
    sparse = tuple(np.concatenate([p[k] for p in parts]) for k in (1, 2, 3, 4))
    return vals, sparse


def _phi_entropic(A, C, I, J, cfg: SinkhornConfig, threads):
    reg = cfg.epsilon * linf_norm(C)
    m = A.shape[1]
    if reg == 0:
        return np.zeros(I.shape[0])
    use_log = cfg.use_log
    K = np.empty((0, 0)) if use_log else np.exp(-C / reg)
    idx = np.arange(m)

    def run(PI, PJ):
        def fn(lo, hi):
            return entropic_ot.pairwise_sinkhorn(C, K, A, PI[lo:hi], PJ[lo:hi], reg, use_log,
                                                 cfg.max_iterations, cfg.marginal_tolerance, cfg.newton_code)
        parts = _run_chunks(fn, PI.shape[0], threads)
        worst = max((p[1] for p in parts), default=0.0)
        if worst > cfg.marginal_tolerance:
            it = max(p[3] for p in parts)
            raise SinkhornConvergenceError(it, worst)
        vals = np.concatenate([p[0] for p in parts]) if parts else np.empty(0)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("Sinkhorn overflowed; use log_domain=True for small epsilon")
        return vals

    self_terms = run(idx, idx)
    cross = run(I, J)
    raw = cross - 0.5 * self_terms[I] - 0.5 * self_terms[J]
    return entropic_ot.clamp_divergence(raw)


def _phi_mmd(A, C, I, J):
    # 0.5 * <-C d, d> = a_i' C a_j - (a_i' C a_i + a_j' C a_j) / 2
    G = A.T @ C @ A
    g = np.diag(G)
    return G[I, J] - 0.5 * g[I] - 0.5 * g[J]


def phi(A, C, cfg: PhiConfig | None = None, return_couplings: bool = False):
    """Matrix of pairwise (regularized) transport distances between the
    histograms of ``A`` under ground cost ``C``.

    Parameters
    ----------
    A : Dataset or array of shape (n, m)
        ``m`` histograms on ``n`` bins, one per column.
    C : CostMatrix or array of shape (n, n)
    cfg : PhiConfig
        Backend, ``tau`` and solver settings.
    return_couplings : bool
        Also return the :class:`PairCouplings` table (exact backend with
        ``store_couplings=True`` only).

    Returns
    -------
    D : ndarray of shape (m, m)
        Symmetric, zero diagonal.
    couplings : PairCouplings, only when ``return_couplings``.
    """
    cfg = cfg or PhiConfig()
    data = as_dataset(A)
    X = np.ascontiguousarray(data.columns)
    Cm = np.ascontiguousarray(as_cost(C))
    n, m = X.shape
    if Cm.shape[0] != n:
        raise ValueError(f"dimension mismatch: cost is {Cm.shape[0]}x{Cm.shape[0]}, histograms have {n} bins")
    if return_couplings and not cfg.store_couplings:
        raise ValueError("return_couplings requires PhiConfig(store_couplings=True)")
    threads = cfg.threads or default_threads()
    I, J = np.triu_indices(m, 1)
    sparse = None
    if cfg.backend == "exact":
        vals, sparse = _phi_exact(X, Cm, I, J, threads, cfg.optimal_face)
    elif cfg.backend == "entropic":
        vals = _phi_entropic(X, Cm, I, J, cfg.sinkhorn, threads)
    else:
        vals = _phi_mmd(X, Cm, I, J)
    if cfg.tau > 0:
        T = l1_matrix(data)
        vals = vals + cfg.tau * linf_norm(Cm) * T[I, J]
    D = _assemble(m, I, J, vals)
    if return_couplings:
        return D, PairCouplings(n, I, J, *sparse)
    return D



def cross_distances(X, Y, C, cfg: PhiConfig | None = None) -> np.ndarray:
    """Distances between every histogram of ``X`` and every histogram of ``Y``
    under ``C``, with the same backend and ``tau`` term as :func:`phi`.

    Returns an array of shape ``(X.m, Y.m)``.
    """
    cfg = cfg or PhiConfig()
    Xc, Yc = as_dataset(X).columns, as_dataset(Y).columns
    if Xc.shape[0] != Yc.shape[0]:
        raise ValueError(f"histogram lengths differ: {Xc.shape[0]} vs {Yc.shape[0]}")
    Z = np.ascontiguousarray(np.hstack([Xc, Yc]))
    Cm = np.ascontiguousarray(as_cost(C))
    if Cm.shape[0] != Z.shape[0]:
        raise ValueError(f"dimension mismatch: cost is {Cm.shape[0]}x{Cm.shape[0]}, histograms have {Z.shape[0]} bins")
    p, q = Xc.shape[1], Yc.shape[1]
    I, J = (g.ravel() for g in np.meshgrid(np.arange(p), p + np.arange(q), indexing="ij"))
    threads = cfg.threads or default_threads()
    if cfg.backend == "exact":
        vals, _ = _phi_exact(Z, Cm, I, J, threads, False)
    elif cfg.backend == "entropic":
        vals = _phi_entropic(Z, Cm, I, J, cfg.sinkhorn, threads)
    else:
        vals = _phi_mmd(Z, Cm, I, J)
    if cfg.tau > 0:
        vals = vals + cfg.tau * linf_norm(Cm) * np.abs(Z[:, I] - Z[:, J]).sum(axis=0)
    return vals.reshape(p, q)
