"""Entropic optimal transport: Sinkhorn iterations, dual value, debiased divergence.

The regularization is relative to the cost scale: the effective regularizer
is ``epsilon * max|C|``, which keeps the Sinkhorn cost 1-homogeneous in ``C``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core import as_cost, as_histogram, linf_norm

logger = logging.getLogger(__name__)

LOG_DOMAIN_BELOW = 0.05
CLAMP_WARN = -1e-8


class SinkhornConvergenceError(RuntimeError):
    def __init__(self, n_iter, violation):
        super().__init__(
            f"Sinkhorn did not reach the marginal tolerance in {n_iter} iterations "
            f"(final l1 violation {violation:.3g})"
        )
        self.n_iter = n_iter
        self.violation = violation


@dataclass(frozen=True)
class SinkhornConfig:
    """Sinkhorn parameters.

    ``log_domain=None`` picks the stabilized log-domain iteration when
    ``epsilon < 0.05``. When plain sweeps have not met the tolerance after
    ``newton_after`` of them, damped Newton steps on the dual take over
    (``None`` disables this). Sweeps and Newton steps both count towards
    ``max_iterations``.
    """

    epsilon: float = 1e-2
    max_iterations: int = 10_000
    marginal_tolerance: float = 1e-9
    log_domain: bool | None = None
    newton_after: int | None = 100

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.marginal_tolerance > 0:
            raise ValueError("marginal_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.newton_after is not None and self.newton_after < 0:
            raise ValueError("newton_after must be non-negative or None")

    @property
    def use_log(self) -> bool:
        if self.log_domain is None:
            return self.epsilon < LOG_DOMAIN_BELOW
        return bool(self.log_domain)

    @property
    def newton_code(self) -> int:
        """``newton_after`` as an integer for the compiled kernels (-1 = off)."""
        return -1 if self.newton_after is None else int(self.newton_after)


@njit(cache=True, nogil=True)
def _log_row_update(M, la, a, reg, f, g, tmp):
    """``f <- reg * (log a - lse((g - M) / reg))``; returns the l1 row
    violation of the plan before the update."""
    ns, nd = M.shape
    err = 0.0
    for i in range(ns):
        mx = -np.inf
        for j in range(nd):
            t = (g[j] - M[i, j]) / reg
            tmp[j] = t
            if t > mx:
                mx = t
        s = 0.0
        for j in range(nd):
            s += np.exp(tmp[j] - mx)
        lse = mx + np.log(s)
        err += abs(np.exp(f[i] / reg + lse) - a[i])
        f[i] = reg * (la[i] - lse)
    return err


@njit(cache=True, nogil=True)
def _log_col_update(M, lb, reg, f, g, tmp):
    ns, nd = M.shape
    for j in range(nd):
        mx = -np.inf
        for i in range(ns):
            t = (f[i] - M[i, j]) / reg
            tmp[i] = t
            if t > mx:
                mx = t
        s = 0.0
        for i in range(ns):
            s += np.exp(tmp[i] - mx)
        g[j] = reg * (lb[j] - mx - np.log(s))


@njit(cache=True, nogil=True)
def _dual_value(M, a, b, reg, f, g):
    """Dual objective ``<f, a> + <g, b> - reg * sum exp((f + g - M) / reg)``
    and the l1 violation of both marginals; ``(-inf, inf)`` on overflow."""
    ns, nd = M.shape
    mass = 0.0
    col = np.zeros(nd)
    err = 0.0
    for i in range(ns):
        row = 0.0
        for j in range(nd):
            z = (f[i] + g[j] - M[i, j]) / reg
            if z > 700.0:
                return -np.inf, np.inf
            p = np.exp(z)
            row += p
            col[j] += p
        mass += row
        err += abs(row - a[i])
    value = -reg * mass
    for i in range(ns):
        value += f[i] * a[i]
    for j in range(nd):
        value += g[j] * b[j]
        err += abs(col[j] - b[j])
    return value, err


@njit(cache=True, nogil=True)
def _newton_polish(M, a, b, reg, max_steps, tol, f, g):
    """Damped Newton ascent on the concave dual, updating ``f, g`` in place.

    Sweeps stall when the plan nearly splits into blocks that exchange
    little mass; the dual is then almost flat along the relative shift of
    the blocks' potentials. Newton follows that direction directly. Steps are
    capped at ``20 * reg`` in sup norm and backtracked until the dual rises
    enough or, once the rise drowns in rounding, the marginal violation
    halves; if no step is accepted a plain sweep is taken instead. The gauge is fixed
    by leaving the last entry of ``g`` alone. Returns (steps, l1 violation of
    both marginals).
    """
    ns, nd = M.shape
    size = ns + nd - 1
    H = np.empty((size, size))
    grad = np.empty(size)
    P = np.empty((ns, nd))
    r = np.empty(ns)
    c = np.empty(nd)
    ft = np.empty(ns)
    gt = np.empty(nd)
    tmp = np.empty(max(ns, nd))
    la = np.log(a)
    lb = np.log(b)
    cap = 20.0 * reg
    err = np.inf
    for step in range(max_steps):
        r[:] = 0.0
        c[:] = 0.0
        for i in range(ns):
            for j in range(nd):
                p = np.exp((f[i] + g[j] - M[i, j]) / reg)
                P[i, j] = p
                r[i] += p
                c[j] += p
        err = 0.0
        for i in range(ns):
            err += abs(r[i] - a[i])
        for j in range(nd):
            err += abs(c[j] - b[j])
        if err <= tol:
            return step, err
        H[:, :] = 0.0
        ridge = 1e-14 * max(r.max(), c.max())
        for i in range(ns):
            H[i, i] = r[i] + ridge
            grad[i] = a[i] - r[i]
        for j in range(nd - 1):
            H[ns + j, ns + j] = c[j] + ridge
            grad[ns + j] = b[j] - c[j]
            for i in range(ns):
                H[i, ns + j] = P[i, j]
                H[ns + j, i] = P[i, j]
        d = np.linalg.solve(H, grad) * reg
        dmax = np.abs(d).max()
        accepted = False
        if np.isfinite(dmax) and dmax > 0:
            if dmax > cap:
                d *= cap / dmax
            slope = 0.0
            for k in range(size):
                slope += grad[k] * d[k]
            base, _ = _dual_value(M, a, b, reg, f, g)
            t = 1.0
            while t > 1e-6:
                for i in range(ns):
                    ft[i] = f[i] + t * d[i]
                for j in range(nd - 1):
                    gt[j] = g[j] + t * d[ns + j]
                gt[nd - 1] = g[nd - 1]
                value, trial_err = _dual_value(M, a, b, reg, ft, gt)
                if value >= base + 1e-4 * t * slope or trial_err <= 0.5 * err:
                    accepted = True
                    break
                t *= 0.5
        if accepted:
            f[:] = ft
            g[:] = gt
        else:
            _log_row_update(M, la, a, reg, f, g, tmp)
            _log_col_update(M, lb, reg, f, g, tmp)
    return max_steps, err


@njit(cache=True, nogil=True)
def _sinkhorn_log(M, a, b, reg, max_iter, tol, f, g, newton_after):
    """Log-domain Sinkhorn on a dense problem with positive marginals.

    ``f, g`` are potentials (``reg * log u``, ``reg * log v``), updated in
    place. Returns (dual value, iterations, final marginal violation).
    """
    ns, nd = M.shape
    la = np.log(a)
    lb = np.log(b)
    tmp = np.empty(max(ns, nd))
    limit = max_iter if newton_after < 0 else min(max_iter, newton_after)
    err = np.inf
    it = 0
    while it < limit:
        err = _log_row_update(M, la, a, reg, f, g, tmp)
        if it > 0 and err <= tol:
            break
        it += 1
        _log_col_update(M, lb, reg, f, g, tmp)
    if err > tol and it < max_iter and newton_after >= 0:
        steps, err = _newton_polish(M, a, b, reg, max_iter - it, tol, f, g)
        it += steps
    mass = 0.0
    for i in range(ns):
        for j in range(nd):
            mass += np.exp((f[i] + g[j] - M[i, j]) / reg)
    value = -reg * mass
    for i in range(ns):
        value += f[i] * a[i]
    for j in range(nd):
        value += g[j] * b[j]
    return value, it, err


@njit(cache=True, nogil=True)
def _sinkhorn_log_symmetric(M, a, reg, max_iter, tol, f):
    """Self-transport ``W(a, a)``: averaged symmetric updates ``f <- (f + T f) / 2``.

    Converges far faster than alternating updates on the same problem.
    """
    n = M.shape[0]
    la = np.log(a)
    tmp = np.empty(n)
    new = np.empty(n)
    err = np.inf
    it = 0
    while it < max_iter:
        err = 0.0
        for i in range(n):
            mx = -np.inf
            for j in range(n):
                t = (f[j] - M[i, j]) / reg
                tmp[j] = t
                if t > mx:
                    mx = t
            s = 0.0
            for j in range(n):
                s += np.exp(tmp[j] - mx)
            lse = mx + np.log(s)
            err += abs(np.exp(f[i] / reg + lse) - a[i])
            new[i] = reg * (la[i] - lse)
        if err <= tol:
            break
        it += 1
        for i in range(n):
            f[i] = 0.5 * (f[i] + new[i])
    mass = 0.0
    for i in range(n):
        for j in range(n):
            mass += np.exp((f[i] + f[j] - M[i, j]) / reg)
    value = -reg * mass
    for i in range(n):
        value += 2.0 * f[i] * a[i]
    return value, it, err


@njit(cache=True, nogil=True)
def _sinkhorn_kernel(K, a, b, max_iter, tol, u, v):
    """Kernel-domain Sinkhorn; ``u, v`` scalings updated in place."""
    ns, nd = K.shape
    err = np.inf
    it = 0
    Kv = np.empty(ns)
    while it < max_iter:
        err = 0.0
        for i in range(ns):
            s = 0.0
            for j in range(nd):
                s += K[i, j] * v[j]
            Kv[i] = s
            err += abs(u[i] * s - a[i])
            u[i] = a[i] / s
        if it > 0 and err <= tol:
            break
        it += 1
        for j in range(nd):
            s = 0.0
            for i in range(ns):
                s += K[i, j] * u[i]
            v[j] = b[j] / s
    return it, err


@njit(cache=True, nogil=True)
def _kernel_value(K, a, b, u, v, reg):
    ns, nd = K.shape
    mass = 0.0
    for i in range(ns):
        for j in range(nd):
            mass += u[i] * K[i, j] * v[j]
    value = -mass
    for i in range(ns):
        value += a[i] * np.log(u[i])
    for j in range(nd):
        value += b[j] * np.log(v[j])
    return reg * value


@njit(cache=True, nogil=True)
def _pair_cost(C, K, a, b, reg, use_log, max_iter, tol, newton_after):
    ia = np.nonzero(a > 0)[0]
    ib = np.nonzero(b > 0)[0]
    ns, nd = ia.shape[0], ib.shape[0]
    As = a[ia].copy()
    Bs = b[ib].copy()
    same = ns == nd
    if same:
        for p in range(ns):
            if ia[p] != ib[p] or As[p] != Bs[p]:
                same = False
                break
    M = np.empty((ns, nd))
    for p in range(ns):
        for q in range(nd):
            M[p, q] = C[ia[p], ib[q]]
    f = np.zeros(ns)
    if same:
        return _sinkhorn_log_symmetric(M, As, reg, max_iter, tol, f)
    g = np.zeros(nd)
    if use_log:
        return _sinkhorn_log(M, As, Bs, reg, max_iter, tol, f, g, newton_after)
    Ks = np.empty((ns, nd))
    for p in range(ns):
        for q in range(nd):
            Ks[p, q] = K[ia[p], ib[q]]
    u = np.ones(ns)
    v = np.ones(nd)
    limit = max_iter if newton_after < 0 else min(max_iter, newton_after)
    it, err = _sinkhorn_kernel(Ks, As, Bs, limit, tol, u, v)
    if err <= tol or it >= max_iter or newton_after < 0:
        return _kernel_value(Ks, As, Bs, u, v, reg), it, err
    # hand the scalings over to the log-domain solver as potentials
    for p in range(ns):
        f[p] = reg * np.log(u[p]) if u[p] > 0 and np.isfinite(u[p]) else 0.0
    for q in range(nd):
        g[q] = reg * np.log(v[q]) if v[q] > 0 and np.isfinite(v[q]) else 0.0
    value, more, err = _sinkhorn_log(M, As, Bs, reg, max_iter - it, tol, f, g, 0)
    return value, it + more, err


@njit(cache=True, nogil=True)
def pairwise_sinkhorn(C, K, A, I, J, reg, use_log, max_iter, tol, newton_after):
    """Sinkhorn costs for the pairs ``(A[:, I[k]], A[:, J[k]])``.

    Returns (values, worst violation, index of worst pair, iterations of worst pair).
    """
    npairs = I.shape[0]
    values = np.empty(npairs)
    worst = 0.0
    worst_k = -1
    worst_it = 0
    for k in range(npairs):
        value, it, err = _pair_cost(C, K, A[:, I[k]], A[:, J[k]], reg, use_log, max_iter, tol, newton_after)
        values[k] = value
        if err > tol and err > worst:
            worst, worst_k, worst_it = err, k, it
    return values, worst, worst_k, worst_it


def _regularizer(C, cfg: SinkhornConfig) -> float:
    return cfg.epsilon * linf_norm(C)


def gibbs_kernel(C, cfg: SinkhornConfig) -> np.ndarray:
    """``exp(-C / (epsilon * max|C|))``."""
    C = np.asarray(C, dtype=np.float64)
    reg = _regularizer(C, cfg)
    if reg == 0:
        return np.ones_like(C)
    return np.exp(-C / reg)


def sinkhorn_cost(C, a, b, cfg: SinkhornConfig | None = None) -> float:
    """Entropic transport cost by the Sinkhorn dual formula.

    ``reg * (<log u, a> + <log v, b> - <K v, u>)`` with ``reg = epsilon * max|C|``,
    evaluated once the l1 violation of both marginals is below
    ``cfg.marginal_tolerance``.
    """
    cfg = cfg or SinkhornConfig()
    C = as_cost(C)
    a, b = as_histogram(a), as_histogram(b)
    if a.shape[0] != C.shape[0] or b.shape[0] != C.shape[0]:
        raise ValueError("dimension mismatch between cost and histograms")
    reg = _regularizer(C, cfg)
    if reg == 0:
        return 0.0
    K = np.empty((0, 0)) if cfg.use_log else gibbs_kernel(C, cfg)
    value, it, err = _pair_cost(C, K, a, b, reg, cfg.use_log,
                                cfg.max_iterations, cfg.marginal_tolerance, cfg.newton_code)
    if not np.isfinite(value):
        raise FloatingPointError("Sinkhorn overflowed; use log_domain=True for small epsilon")
    if err > cfg.marginal_tolerance:
        raise SinkhornConvergenceError(it, err)
    return float(value)


def clamp_divergence(raw):
    """Clamp negative round-off to zero, warning on clearly negative values."""
    raw = np.asarray(raw, dtype=np.float64)
    low = np.min(raw) if raw.size else 0.0
    if low < CLAMP_WARN:
        warnings.warn(f"Sinkhorn divergence {low:.3g} clamped to 0", RuntimeWarning, stacklevel=3)
    return np.maximum(raw, 0.0)


def sinkhorn_divergence(C, a, b, cfg: SinkhornConfig | None = None) -> float:
    """Debiased divergence ``W(a,b) - W(a,a)/2 - W(b,b)/2``, clamped at 0."""
    a_arr, b_arr = as_histogram(a), as_histogram(b)
    if np.array_equal(a_arr, b_arr):
        return 0.0
    w_ab = sinkhorn_cost(C, a_arr, b_arr, cfg)
    w_aa = sinkhorn_cost(C, a_arr, a_arr, cfg)
    w_bb = sinkhorn_cost(C, b_arr, b_arr, cfg)
    return float(clamp_divergence(w_ab - 0.5 * w_aa - 0.5 * w_bb))


def marginal_violation_history(C, a, b, cfg: SinkhornConfig, sweeps: int) -> np.ndarray:
    """l1 row-marginal violation after each of ``sweeps`` kernel-domain sweeps."""
    C = as_cost(C)
    a, b = as_histogram(a), as_histogram(b)
    K = gibbs_kernel(C, cfg)
    u, v = np.ones_like(a), np.ones_like(b)
    out = np.empty(sweeps)
    for k in range(sweeps):
        u = a / (K @ v)
        v = b / (K.T @ u)
        out[k] = np.abs(u * (K @ v) - a).sum()
    return out


def bistochastic_scaling(U, cfg: SinkhornConfig | None = None) -> np.ndarray:
    """Rescale ``diag(u) U diag(v)`` to uniform row and column sums.

    For an ``(n, m)`` input the rows sum to ``1/n`` and the columns to ``1/m``.
    Zero rows or columns are rejected, as are zero patterns that admit no
    strictly positive scaling.
    """
    cfg = cfg or SinkhornConfig(epsilon=1.0, log_domain=False)
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2:
        raise ValueError("matrix scaling needs a 2-D array")
    if np.any(U < 0):
        raise ValueError("matrix scaling needs non-negative entries")
    if np.any(U.sum(axis=1) <= 0) or np.any(U.sum(axis=0) <= 0):
        raise ValueError("matrix has an all-zero row or column")
    n, m = U.shape
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    if np.any(U == 0) and not _support_connected(U):
        raise ValueError(
            "zero pattern splits the matrix into independent blocks; "
            "no unique strictly positive scaling exists"
        )
    u, v = np.ones(n), np.ones(m)
    it, err = _sinkhorn_kernel(U, a, b, cfg.max_iterations, cfg.marginal_tolerance, u, v)
    if err > cfg.marginal_tolerance:
        raise SinkhornConvergenceError(it, err)
    return u[:, None] * U * v[None, :]


def _support_connected(U: np.ndarray) -> bool:
    n, m = U.shape
    r, c = np.nonzero(U)
    graph = csr_matrix((np.ones(r.size), (r, n + c)), shape=(n + m, n + m))
    n_comp, _ = connected_components(graph, directed=False)
    return n_comp == 1
