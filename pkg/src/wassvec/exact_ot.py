"""Exact optimal transport by the transportation simplex (MODI) method.

The solver works on the supports of the two marginals, starts from a
Vogel approximation basis and pivots on spanning-tree bases, so every
returned plan is a vertex of the transportation polytope with at most
``|supp a| + |supp b| - 1`` basic cells.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from .core import Coupling, as_cost, as_histogram

PERTURBATION = 1e-13

STATUS_OPTIMAL = 0
STATUS_MAX_ITER = 1


class SolverError(RuntimeError):
    """The simplex iteration cap was hit even after perturbing marginals."""


@dataclass(frozen=True)
class OtSolution:
    value: float
    coupling: Coupling
    iterations: int


@njit(cache=True, nogil=True)
def _vogel(C, a, b, flow, basic):
    ns, nd = a.shape[0], b.shape[0]
    rs = a.copy()
    cs = b.copy()
    row_on = np.ones(ns, dtype=np.bool_)
    col_on = np.ones(nd, dtype=np.bool_)
    rows_left, cols_left = ns, nd
    big = np.inf
    while rows_left > 1 and cols_left > 1:
        best_pen = -1.0
        best_line = -1
        best_is_row = True
        for i in range(ns):
            if not row_on[i]:
                continue
            m1, m2 = big, big
            for j in range(nd):
                if col_on[j]:
                    c = C[i, j]
                    if c < m1:
                        m2 = m1
                        m1 = c
                    elif c < m2:
                        m2 = c
            pen = m2 - m1
            if pen > best_pen:
                best_pen, best_line, best_is_row = pen, i, True
        for j in range(nd):
            if not col_on[j]:
                continue
            m1, m2 = big, big
            for i in range(ns):
                if row_on[i]:
                    c = C[i, j]
                    if c < m1:
                        m2 = m1
                        m1 = c
                    elif c < m2:
                        m2 = c
            pen = m2 - m1
            if pen > best_pen:
                best_pen, best_line, best_is_row = pen, j, False
        if best_is_row:
            i = best_line
            j = -1
            for jj in range(nd):
                if col_on[jj] and (j < 0 or C[i, jj] < C[i, j]):
                    j = jj
        else:
            j = best_line
            i = -1
            for ii in range(ns):
                if row_on[ii] and (i < 0 or C[ii, j] < C[i, j]):
                    i = ii
        q = min(rs[i], cs[j])
        flow[i, j] = q
        basic[i, j] = True
        # cross out exactly one line so the basis stays a spanning tree
        if rs[i] <= cs[j]:
            cs[j] -= q
            rs[i] = 0.0
            row_on[i] = False
            rows_left -= 1
        else:
            rs[i] -= q
            cs[j] = 0.0
            col_on[j] = False
            cols_left -= 1
    if rows_left == 1:
        for ii in range(ns):
            if row_on[ii]:
                i = ii
        for j in range(nd):
            if col_on[j]:
                flow[i, j] = cs[j]
                basic[i, j] = True
    else:
        for jj in range(nd):
            if col_on[jj]:
                j = jj
        for i in range(ns):
            if row_on[i]:
                flow[i, j] = rs[i]
                basic[i, j] = True


@njit(cache=True, nogil=True)
def _potentials(C, basic, u, v, order, parent):
    # BFS over the basis tree; nodes 0..ns-1 are rows, ns.. are columns
    ns, nd = C.shape
    seen = np.zeros(ns + nd, dtype=np.bool_)
    order[0] = 0
    parent[0] = -1
    seen[0] = True
    u[0] = 0.0
    head, tail = 0, 1
    while head < tail:
        node = order[head]
        head += 1
        if node < ns:
            i = node
            for j in range(nd):
                if basic[i, j] and not seen[ns + j]:
                    seen[ns + j] = True
                    v[j] = C[i, j] - u[i]
                    parent[ns + j] = i
                    order[tail] = ns + j
                    tail += 1
        else:
            j = node - ns
            for i in range(ns):
                if basic[i, j] and not seen[i]:
                    seen[i] = True
                    u[i] = C[i, j] - v[j]
                    parent[i] = node
                    order[tail] = i
                    tail += 1
    return tail


@njit(cache=True, nogil=True)
def _cycle(ns, nd, order, parent, ei, ej, path):
    """Tree path row ``ei`` -> column ``ej`` (node ids) written into ``path``.

    Together with the entering cell ``(ei, ej)`` it closes the pivot cycle;
    edges at even offsets along the path lose flow.
    """
    depth = np.zeros(ns + nd, dtype=np.int64)
    for k in range(1, ns + nd):
        node = order[k]
        depth[node] = depth[parent[node]] + 1
    x, y = ei, ns + ej
    left = np.empty(ns + nd, dtype=np.int64)
    right = np.empty(ns + nd, dtype=np.int64)
    left[0] = x
    right[0] = y
    nl, nr = 1, 1
    while x != y:
        if depth[x] >= depth[y]:
            x = parent[x]
            left[nl] = x
            nl += 1
        else:
            y = parent[y]
            right[nr] = y
            nr += 1
    plen = 0
    for k in range(nl):
        path[plen] = left[k]
        plen += 1
    for k in range(nr - 2, -1, -1):
        path[plen] = right[k]
        plen += 1
    return plen


@njit(cache=True, nogil=True)
def _edge_cell(ns, p, q):
    if p < ns:
        return p, q - ns
    return q, p - ns


@njit(cache=True, nogil=True)
def _transport_simplex(C, a, b, max_iter):
    ns, nd = a.shape[0], b.shape[0]
    flow = np.zeros((ns, nd))
    basic = np.zeros((ns, nd), dtype=np.bool_)
    if ns == 1 or nd == 1:
        for i in range(ns):
            for j in range(nd):
                flow[i, j] = a[i] if nd == 1 else b[j]
                basic[i, j] = True
        return flow, basic, 0, STATUS_OPTIMAL
    _vogel(C, a, b, flow, basic)
    tol = 1e-12 * _cmax(C)
    u = np.zeros(ns)
    v = np.zeros(nd)
    order = np.empty(ns + nd, dtype=np.int64)
    parent = np.empty(ns + nd, dtype=np.int64)
    path = np.empty(ns + nd, dtype=np.int64)
    it = 0
    while True:
        _potentials(C, basic, u, v, order, parent)
        best = -tol
        ei, ej = -1, -1
        for i in range(ns):
            for j in range(nd):
                if not basic[i, j]:
                    r = C[i, j] - u[i] - v[j]
                    if r < best:
                        best, ei, ej = r, i, j
        if ei < 0:
            return flow, basic, it, STATUS_OPTIMAL
        if it >= max_iter:
            return flow, basic, it, STATUS_MAX_ITER
        it += 1
        plen = _cycle(ns, nd, order, parent, ei, ej, path)
        theta = np.inf
        li, lj = -1, -1
        for k in range(0, plen - 1, 2):
            ri, cj = _edge_cell(ns, path[k], path[k + 1])
            if flow[ri, cj] < theta:
                theta, li, lj = flow[ri, cj], ri, cj
        for k in range(plen - 1):
            ri, cj = _edge_cell(ns, path[k], path[k + 1])
            if k % 2 == 0:
                flow[ri, cj] -= theta
            else:
                flow[ri, cj] += theta
        flow[ei, ej] += theta
        flow[li, lj] = 0.0
        basic[li, lj] = False
        basic[ei, ej] = True


@njit(cache=True, nogil=True)
def _cmax(C):
    cmax = 0.0
    for i in range(C.shape[0]):
        for j in range(C.shape[1]):
            if C[i, j] > cmax:
                cmax = C[i, j]
    return cmax


@njit(cache=True, nogil=True)
def _face_cells(C, flow, basic):
    """Cells gaining mass when moving to an adjacent optimal vertex.

    Every non-basic cell with zero reduced cost whose pivot is non-degenerate
    leads to another optimal vertex; the average of all these vertices is an
    optimal plan whose support is the vertex support plus the returned cells.
    """
    ns, nd = flow.shape
    out = np.zeros((ns, nd), dtype=np.bool_)
    if ns == 1 or nd == 1:
        return out
    u = np.zeros(ns)
    v = np.zeros(nd)
    order = np.empty(ns + nd, dtype=np.int64)
    parent = np.empty(ns + nd, dtype=np.int64)
    path = np.empty(ns + nd, dtype=np.int64)
    _potentials(C, basic, u, v, order, parent)
    tol = 1e-12 * _cmax(C)
    fmax = 0.0
    for i in range(ns):
        for j in range(nd):
            if flow[i, j] > fmax:
                fmax = flow[i, j]
    thr = 1e-12 * fmax
    for ei in range(ns):
        for ej in range(nd):
            if basic[ei, ej] or abs(C[ei, ej] - u[ei] - v[ej]) > tol:
                continue
            plen = _cycle(ns, nd, order, parent, ei, ej, path)
            theta = np.inf
            for k in range(0, plen - 1, 2):
                ri, cj = _edge_cell(ns, path[k], path[k + 1])
                if flow[ri, cj] < theta:
                    theta = flow[ri, cj]
            if theta <= thr:
                continue
            out[ei, ej] = True
            for k in range(1, plen - 1, 2):
                ri, cj = _edge_cell(ns, path[k], path[k + 1])
                out[ri, cj] = True
    return out


@njit(cache=True, nogil=True)
def _solve_on_support(C, a, b, max_iter, face):
    ia = np.nonzero(a > 0)[0]
    ib = np.nonzero(b > 0)[0]
    ns, nd = ia.shape[0], ib.shape[0]
    Cs = np.empty((ns, nd))
    for p in range(ns):
        for q in range(nd):
            Cs[p, q] = C[ia[p], ib[q]]
    As = a[ia].copy()
    Bs = b[ib].copy()
    flow, basic, it, status = _transport_simplex(Cs, As, Bs, max_iter)
    if status != STATUS_OPTIMAL:
        # lexicographic perturbation breaks degenerate cycling
        extra = 0.0
        for p in range(ns):
            As[p] += PERTURBATION * (p + 1)
            extra += PERTURBATION * (p + 1)
        Bs[np.argmax(Bs)] += extra
        flow, basic, it2, status = _transport_simplex(Cs, As, Bs, max_iter)
        it += it2
    nbasic = ns + nd - 1
    rows = np.empty(nbasic, dtype=np.int64)
    cols = np.empty(nbasic, dtype=np.int64)
    vals = np.empty(nbasic)
    k = 0
    value = 0.0
    for p in range(ns):
        for q in range(nd):
            if basic[p, q]:
                rows[k] = ia[p]
                cols[k] = ib[q]
                vals[k] = flow[p, q]
                value += Cs[p, q] * flow[p, q]
                k += 1
    n = C.shape[0]
    extra = np.zeros((n, n), dtype=np.bool_)
    if face and status == STATUS_OPTIMAL:
        cells = _face_cells(Cs, flow, basic)
        for p in range(ns):
            for q in range(nd):
                if cells[p, q]:
                    extra[ia[p], ib[q]] = True
    return value, rows[:k], cols[:k], vals[:k], it, status, extra


def _default_max_iter(n: int) -> int:
    return 50 * n * n + 1000


def solve_exact(C, a, b, max_iter: int | None = None) -> OtSolution:
    """Solve ``min <C, P>`` over couplings of ``a`` and ``b``.

    Returns the optimal value and a vertex coupling. Raises
    :class:`SolverError` if the pivot cap is exceeded twice (the second time
    with perturbed marginals).
    """
    C = as_cost(C)
    a, b = as_histogram(a), as_histogram(b)
    n = C.shape[0]
    if a.shape[0] != n or b.shape[0] != n:
        raise ValueError(f"dimension mismatch: cost {n}, histograms {a.shape[0]}, {b.shape[0]}")
    max_iter = _default_max_iter(n) if max_iter is None else max_iter
    value, rows, cols, vals, it, status, _ = _solve_on_support(C, a, b, max_iter, False)
    if status != STATUS_OPTIMAL:
        raise SolverError(f"transportation simplex did not terminate in {max_iter} pivots")
    coupling = Coupling.from_sparse(rows, cols, vals, n, n, source=a, target=b)
    return OtSolution(float(value), coupling, int(it))


@njit(cache=True, nogil=True)
def pairwise_exact(C, A, I, J, max_iter, face):
    """Solve the pairs ``(A[:, I[k]], A[:, J[k]])``.

    Basic cells are padded with ``-1`` up to ``2n - 1`` per pair. With
    ``face`` set, also flags the cells reached by adjacent optimal vertices
    (see :func:`_face_cells`); otherwise that array is empty.
    """
    npairs = I.shape[0]
    n = A.shape[0]
    nb = 2 * n - 1
    values = np.empty(npairs)
    rows = -np.ones((npairs, nb), dtype=np.int64)
    cols = -np.ones((npairs, nb), dtype=np.int64)
    vals = np.zeros((npairs, nb))
    extra = np.zeros((npairs if face else 0, n, n), dtype=np.bool_)
    failed = 0
    for k in range(npairs):
        value, r, c, v, it, status, cells = _solve_on_support(
            C, A[:, I[k]].copy(), A[:, J[k]].copy(), max_iter, face
        )
        if status != STATUS_OPTIMAL:
            failed += 1
        values[k] = value
        s = r.shape[0]
        rows[k, :s] = r
        cols[k, :s] = c
        vals[k, :s] = v
        if face:
            extra[k] = cells
    return values, rows, cols, vals, extra, failed


def _iter_vertex_bases(n: int, chunk: int = 20000):
    """Yield ``(cells, inverse)`` for every basis of the ``n x n``
    transportation polytope, in chunks."""
    k = 2 * n - 1
    M = np.zeros((k, n * n))
    for c in range(n * n):
        i, j = divmod(c, n)
        M[i, c] = 1.0
        if j < n - 1:  # last column constraint is redundant
            M[n + j, c] = 1.0
    combos = itertools.combinations(range(n * n), k)
    while True:
        block = np.fromiter(itertools.chain.from_iterable(itertools.islice(combos, chunk)),
                            dtype=np.int64)
        if block.size == 0:
            return
        block = block.reshape(-1, k)
        mats = M[:, block].transpose(1, 0, 2)
        keep = np.abs(np.linalg.det(mats)) > 0.5  # totally unimodular: det in {0, +-1}
        if np.any(keep):
            yield block[keep], np.linalg.inv(mats[keep])


@lru_cache(maxsize=None)
def _vertex_bases(n: int):
    parts = list(_iter_vertex_bases(n))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def brute_force_oracle(C, a, b) -> float:
    """Optimal value by enumerating every vertex of the transportation polytope.

    Independent of :func:`solve_exact`; meant for tests on ``n <= 5``.
    """
    C = np.asarray(C, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = C.shape[0]
    if n > 5:
        raise ValueError(f"brute force oracle is limited to n <= 5, got {n}")
    if n == 1:
        return 0.0
    rhs = np.concatenate([a, b[:-1]])
    flat = C.reshape(-1)
    chunks = [_vertex_bases(n)] if n <= 4 else _iter_vertex_bases(n)
    best = np.inf
    for cells, inv in chunks:
        x = inv @ rhs
        feasible = np.all(x >= -1e-12, axis=1)
        if np.any(feasible):
            best = min(best, float((flat[cells] * x).sum(axis=1)[feasible].min()))
    return best
