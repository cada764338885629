"""Power iterations for Wasserstein eigenvectors and singular vectors.

Iterates are normalized to unit sup-norm after every application of the
distance map; progress is measured with the Hilbert projective metric.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core import CostMatrix, as_cost, as_dataset, linf_norm
from .distance_map import PairCouplings, PhiConfig, l1_matrix, phi

logger = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
DEGENERATE = "degenerate"

CERTIFIED_UNIQUE = "certified_unique"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class IterationConfig:
    """Power-iteration settings.

    ``initial_cost`` is ``"l1"`` (pairwise l1 distances of the dual dataset),
    ``"random"`` (uniform positive entries drawn with ``seed``) or an explicit
    cost matrix.
    """

    initial_cost: Union[str, np.ndarray] = "l1"
    seed: Optional[int] = None
    tolerance_hilbert: float = 1e-8
    tolerance_residual: float = 1e-8
    max_iterations: int = 200
    collapse_tolerance: float = 1e-12

    def __post_init__(self):
        if not (self.tolerance_hilbert > 0 and self.tolerance_residual > 0):
            raise ValueError("tolerances must be positive")
        if isinstance(self.initial_cost, str) and self.initial_cost not in ("l1", "random"):
            raise ValueError(f"unknown initial_cost {self.initial_cost!r}")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    hilbert_delta: float
    residual: float
    lam: float
    mu: Optional[float] = None


@dataclass(frozen=True)
class SpectralResult:
    cost_C: np.ndarray
    lam: float
    trace: List[TraceRecord]
    status: str
    cost_D: Optional[np.ndarray] = None
    mu: Optional[float] = None
    couplings: Optional[PairCouplings] = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def n_iter(self) -> int:
        return len(self.trace)

    @property
    def residual(self) -> float:
        return self.trace[-1].residual if self.trace else float("nan")

    @property
    def hilbert_delta(self) -> float:
        return self.trace[-1].hilbert_delta if self.trace else float("nan")


def trace_to_csv(trace: List[TraceRecord], path=None) -> str:
    """Serialize a trace as ``iteration,hilbert_delta,residual,lambda[,mu]``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    singular = any(r.mu is not None for r in trace)
    w.writerow(["iteration", "hilbert_delta", "residual", "lambda"] + (["mu"] if singular else []))
    for r in trace:
        row = [r.iteration, repr(float(r.hilbert_delta)), repr(float(r.residual)), repr(float(r.lam))]
        if singular:
            row.append(repr(float(r.mu)))
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def _off_diagonal(X):
    return X[~np.eye(X.shape[0], dtype=bool)]


def _pattern(X, tol):
    return _off_diagonal(X) > tol


def projective_distance(X, Y, tol=0.0) -> float:
    """Hilbert metric restricted to the common positive pattern.

    Infinite when the positive off-diagonal patterns of ``X`` and ``Y``
    differ, which extends the usual metric to boundary faces of the cone.
    """
    x, y = _off_diagonal(np.asarray(X)), _off_diagonal(np.asarray(Y))
    px, py = x > tol, y > tol
    if not np.array_equal(px, py):
        return np.inf
    if not np.any(px):
        return 0.0
    r = np.log(x[px]) - np.log(y[py])
    return float(r.max() - r.min())


def _random_cost(n, rng):
    X = 1.0 - rng.random((n, n))  # in (0, 1]
    C = np.triu(X, 1)
    return C + C.T


def _initial_cost(cfg: IterationConfig, dual) -> np.ndarray:
    """``dual`` is the dataset whose l1 matrix lives in the space of C."""
    init = cfg.initial_cost
    n = dual.m
    if isinstance(init, str):
        if init == "l1":
            C = l1_matrix(dual)
        else:
            C = _random_cost(n, np.random.default_rng(cfg.seed))
    else:
        C = as_cost(init)
        if C.shape != (n, n):
            raise ValueError(f"initial cost must be {n}x{n}, got {C.shape}")
    scale = linf_norm(C)
    if scale == 0:
        raise ValueError("initial cost is zero")
    return C / scale


def _collapsed(new, old, tol) -> bool:
    """An off-diagonal entry that was positive has (numerically) vanished."""
    return bool(np.any(_pattern(old, tol) & ~_pattern(new, tol)))


def _step(A, C, cfg_phi):
    F = phi(A, C, cfg_phi)
    lam = linf_norm(F)
    return F, lam


def power_eigen(A, cfg_phi: PhiConfig | None = None,
                cfg_iter: IterationConfig | None = None) -> SpectralResult:
    """Leading Wasserstein eigenvector by normalized power iterations.

    Stops when consecutive iterates are within ``tolerance_hilbert`` in the
    Hilbert metric; the run counts as converged only if the eigen-residual
    ``|phi(C) - lam C|_inf`` is also below ``10 * tolerance_residual``. An
    off-diagonal entry collapsing to zero ends the run with status
    ``"degenerate"``.
    """
    cfg_phi = cfg_phi or PhiConfig()
    cfg_iter = cfg_iter or IterationConfig()
    data = as_dataset(A).require_distinct()
    if data.n != data.m:
        raise ValueError(f"eigenvectors need a square dataset, got n={data.n}, m={data.m}")
    phi_cfg = _without_couplings(cfg_phi)
    C = _initial_cost(cfg_iter, data)
    tol = cfg_iter.collapse_tolerance
    trace: List[TraceRecord] = []
    status = MAX_ITERATIONS
    lam = 0.0
    for k in range(cfg_iter.max_iterations):
        F, lam = _step(data, C, phi_cfg)
        if lam == 0:
            status = DEGENERATE
            trace.append(TraceRecord(k, np.inf, linf_norm(F), 0.0))
            break
        C_new = F / lam
        hd = projective_distance(C_new, C, tol)
        res = linf_norm(F - lam * C)
        trace.append(TraceRecord(k, hd, res, lam))
        collapsed = _collapsed(C_new, C, tol)
        C = C_new
        if collapsed:
            status = DEGENERATE
            logger.warning("iterate left the interior of the cost cone at iteration %d", k)
            break
        if hd <= cfg_iter.tolerance_hilbert and res <= 10 * cfg_iter.tolerance_residual:
            status = CONVERGED
            break
    couplings = None
    if cfg_phi.store_couplings and cfg_phi.backend == "exact":
        _, couplings = phi(data, C, cfg_phi, return_couplings=True)
    return SpectralResult(C, lam, trace, status, couplings=couplings)


def _without_couplings(cfg: PhiConfig) -> PhiConfig:
    if not cfg.store_couplings:
        return cfg
    return dataclasses.replace(cfg, store_couplings=False, optimal_face=False)


def power_singular(A, B, cfg_phi: PhiConfig | None = None,
                   cfg_iter: IterationConfig | None = None) -> SpectralResult:
    """Leading Wasserstein singular vectors ``(C, D)``.

    ``A`` holds ``m`` histograms on ``n`` bins, ``B`` holds ``n`` histograms
    on ``m`` bins. Alternates ``D <- phi_A(C) / lam`` and ``C <- phi_B(D) / mu``.
    """
    cfg_phi = cfg_phi or PhiConfig()
    cfg_iter = cfg_iter or IterationConfig()
    A = as_dataset(A).require_distinct()
    B = as_dataset(B).require_distinct()
    if A.n != B.m or A.m != B.n:
        raise ValueError(
            f"incompatible datasets: A is {A.n}x{A.m}, B must be {A.m}x{A.n}, got {B.n}x{B.m}"
        )
    phi_cfg = _without_couplings(cfg_phi)
    C = _initial_cost(cfg_iter, B)
    D = None
    tol = cfg_iter.collapse_tolerance
    trace: List[TraceRecord] = []
    status = MAX_ITERATIONS
    lam = mu = 0.0
    for k in range(cfg_iter.max_iterations):
        F, lam = _step(A, C, phi_cfg)
        if lam == 0:
            status = DEGENERATE
            trace.append(TraceRecord(k, np.inf, np.inf, 0.0, 0.0))
            break
        D_new = F / lam
        G, mu = _step(B, D_new, phi_cfg)
        if mu == 0:
            status = DEGENERATE
            trace.append(TraceRecord(k, np.inf, np.inf, lam, 0.0))
            D = D_new
            break
        C_new = G / mu
        if D is None:
            hd = np.inf
            res = linf_norm(G - mu * C)
            collapsed = False
        else:
            hd = max(projective_distance(C_new, C, tol), projective_distance(D_new, D, tol))
            res = max(linf_norm(F - lam * D), linf_norm(G - mu * C))
            collapsed = _collapsed(D_new, D, tol)
        collapsed = collapsed or _collapsed(C_new, C, tol)
        trace.append(TraceRecord(k, hd, res, lam, mu))
        C, D = C_new, D_new
        if collapsed:
            status = DEGENERATE
            logger.warning("iterate left the interior of the cost cone at iteration %d", k)
            break
        if hd <= cfg_iter.tolerance_hilbert and res <= 10 * cfg_iter.tolerance_residual:
            status = CONVERGED
            break
    return SpectralResult(C, lam, trace, status, cost_D=D, mu=mu)


@dataclass(frozen=True)
class UniquenessReport:
    status: str
    n_nodes: int
    components: List[List[tuple]]

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED_UNIQUE

    @property
    def n_components(self) -> int:
        return len(self.components)


def support_graph(couplings: PairCouplings, m: int, face: bool = False) -> csr_matrix:
    """Directed graph on unordered index pairs: ``{i,j} -> {k,l}`` whenever the
    optimal plan between histograms ``i`` and ``j`` moves mass between bins
    ``k`` and ``l``."""
    n = couplings.n
    if n != m:
        raise ValueError(f"uniqueness certificate needs a square problem (n={n}, m={m})")
    node = -np.ones((n, n), dtype=np.int64)
    I, J = np.triu_indices(n, 1)
    node[I, J] = np.arange(I.size)
    node[J, I] = node[I, J]
    src, dst = [], []
    for k in range(len(couplings)):
        r, c = couplings.support(k, face=face)
        off = r != c
        targets = np.unique(node[r[off], c[off]])
        src.append(np.full(targets.size, node[couplings.I[k], couplings.J[k]]))
        dst.append(targets)
    src = np.concatenate(src) if src else np.empty(0, dtype=np.int64)
    dst = np.concatenate(dst) if dst else np.empty(0, dtype=np.int64)
    N = I.size
    return csr_matrix((np.ones(src.size), (src, dst)), shape=(N, N))


def uniqueness_certificate(A, C, couplings: PairCouplings | None = None,
                           face: bool = False) -> UniquenessReport:
    """Sufficient check that ``C`` is the unique eigenvector.

    Certified when the coupling-support graph over unordered index pairs is
    strongly connected. By default only the solver's returned vertex coupling
    is used. With ``face=True`` each pair instead contributes the support of
    the average of that vertex and its adjacent optimal vertices, which is
    still an optimal coupling, so the certificate stays valid and can only
    gain edges. ``inconclusive`` does not prove non-uniqueness. When
    ``couplings`` is omitted they are recomputed with the exact solver.
    """
    data = as_dataset(A)
    if couplings is None:
        cfg = PhiConfig(store_couplings=True, optimal_face=face)
        _, couplings = phi(data, C, cfg, return_couplings=True)
    elif face and (couplings.face is None or couplings.face.shape[0] == 0):
        raise ValueError("face=True needs couplings computed with optimal_face=True")
    if len(couplings) != data.m * (data.m - 1) // 2:
        raise ValueError("coupling table does not cover every pair of histograms")
    graph = support_graph(couplings, data.m, face=face)
    N = graph.shape[0]
    n_comp, labels = connected_components(graph, directed=True, connection="strong")
    I, J = np.triu_indices(data.m, 1)
    comps = [[(int(I[v]), int(J[v])) for v in np.nonzero(labels == c)[0]] for c in range(n_comp)]
    comps.sort(key=len, reverse=True)
    status = CERTIFIED_UNIQUE if n_comp == 1 and N > 0 else INCONCLUSIVE
    return UniquenessReport(status, N, comps)


@dataclass(frozen=True)
class ConsistencyReport:
    lambdas: np.ndarray
    statuses: List[str]
    lambda_spread: float
    hilbert_spread: float


def eigenvalue_consistency(A, cfg_phi: PhiConfig | None = None, trials: int = 5,
                           seed: int = 0, cfg_iter: IterationConfig | None = None) -> ConsistencyReport:
    """Run power iterations from ``trials`` random positive starts and compare
    the final eigenvalues and eigenvectors."""
    base = cfg_iter or IterationConfig()
    seeds = np.random.SeedSequence(seed).generate_state(trials)
    results = []
    for s in seeds:
        cfg = IterationConfig(initial_cost="random", seed=int(s),
                              tolerance_hilbert=base.tolerance_hilbert,
                              tolerance_residual=base.tolerance_residual,
                              max_iterations=base.max_iterations,
                              collapse_tolerance=base.collapse_tolerance)
        results.append(power_eigen(A, cfg_phi, cfg))
    lambdas = np.array([r.lam for r in results])
    hs = [projective_distance(x.cost_C, y.cost_C, base.collapse_tolerance)
          for i, x in enumerate(results) for y in results[i + 1:]]
    return ConsistencyReport(
        lambdas=lambdas,
        statuses=[r.status for r in results],
        lambda_spread=float(lambdas.max() - lambdas.min()),
        hilbert_spread=float(max(hs, default=0.0)),
    )


def eigen_residual(A, C, lam, cfg_phi: PhiConfig | None = None) -> float:
    """``|phi_A(C) - lam C|_inf``."""
    return linf_norm(phi(A, C, cfg_phi) - lam * np.asarray(C))


def as_cost_matrix(result: SpectralResult) -> CostMatrix:
    return CostMatrix(result.cost_C)
