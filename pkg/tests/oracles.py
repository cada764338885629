"""Independent reference implementations used to derive and check expected
values. None of them calls into the package's solvers."""

import networkx as nx
import numpy as np
from scipy.optimize import linprog


def ot_linprog(C, a, b):
    """Optimal transport value and plan from a dense LP (HiGHS)."""
    C = np.asarray(C, float)
    n, m = C.shape
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1
    for j in range(m):
        A_eq[n + j, j::m] = 1
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    assert res.status == 0, res.message
    return res.fun, res.x.reshape(n, m)


def phi_loop(A, C, tau=0.0):
    """Distance map by a double loop over pairs with the LP oracle."""
    A = np.asarray(A, float)
    m = A.shape[1]
    D = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            w, _ = ot_linprog(C, A[:, i], A[:, j])
            D[i, j] = D[j, i] = w + tau * np.max(np.abs(C)) * np.abs(A[:, i] - A[:, j]).sum()
    return D


def sinkhorn_numpy(C, a, b, reg, iters=200000, tol=1e-13):
    """Plain alternating scaling; returns the primal entropic cost
    ``<P, C> + reg * sum(P log P)`` at the scaled plan, and the plan."""
    C = np.asarray(C, float)
    K = np.exp(-C / reg)
    u = np.ones(len(a))
    v = np.ones(len(b))
    for _ in range(iters):
        u = a / (K @ v)
        v = b / (K.T @ u)
        if np.abs(u * (K @ v) - a).sum() < tol:
            break
    P = u[:, None] * K * v[None, :]
    mask = P > 0
    ent = np.sum(P[mask] * np.log(P[mask]))
    return float(np.sum(P * C) + reg * ent), P


def sinkhorn_divergence_numpy(C, a, b, reg):
    w = lambda x, y: sinkhorn_numpy(C, x, y, reg)[0]
    return w(a, b) - 0.5 * w(a, a) - 0.5 * w(b, b)


def scc_count(edges, n_nodes):
    G = nx.DiGraph()
    G.add_nodes_from(range(n_nodes))
    G.add_edges_from(edges)
    return nx.number_strongly_connected_components(G)


def hilbert_oracle(X, Y):
    off = ~np.eye(X.shape[0], dtype=bool)
    r = np.log(X[off] / Y[off])
    return r.max() - r.min()
