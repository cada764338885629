import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import phi_loop, scc_count
from strategies import datasets, random_dataset
from wassvec.data import block_dataset, canonical_normalization, torus_dataset_1d
from wassvec.distance_map import PhiConfig, l1_matrix, phi
from wassvec.spectral import (CERTIFIED_UNIQUE, CONVERGED, DEGENERATE, INCONCLUSIVE, MAX_ITERATIONS,
                              IterationConfig, eigen_residual, eigenvalue_consistency, power_eigen,
                              power_singular, projective_distance, support_graph, trace_to_csv,
                              uniqueness_certificate)

# first verified run (exact backend, tau = 0, l1 start); checked against the
# linear-programming distance map in test_torus_eigenvector_matches_lp_oracle
TORUS_LAMBDA = 0.8208687186090686
TORUS_ROW0 = np.array([0., 0.15838444, 0.30901699, 0.45964955, 0.58778525, 0.71592096, 0.80901699,
                       0.90211303, 0.95105652, 1., 1., 1., 0.95105652, 0.90211303, 0.80901699,
                       0.71592096, 0.58778525, 0.45964955, 0.30901699, 0.15838444])


@pytest.fixture(scope="module")
def torus():
    return torus_dataset_1d("gauss:0.1", 20)


@pytest.fixture(scope="module")
def torus_result(torus):
    return power_eigen(torus)


@pytest.fixture(scope="module")
def bimodal():
    return torus_dataset_1d("bimodal:0.05,0.3", 20)


# ---- closed forms ---------------------------------------------------------

@given(datasets(2, 2), st.sampled_from([0.0, 0.5, 2.0]))
def test_two_histograms(A, tau):
    r = power_eigen(A, PhiConfig(tau=tau))
    t = np.abs(A[:, 0] - A[:, 1]).sum()
    assert r.status == CONVERGED
    assert r.lam == pytest.approx(t * (0.5 + tau), abs=1e-10)
    assert projective_distance(r.cost_C, np.array([[0, 1.0], [1.0, 0]])) <= 1e-10


def _block_instance(rng, sizes):
    n = sum(sizes)
    A = np.zeros((n, n))
    C = np.zeros((n, n))
    starts = np.cumsum([0] + list(sizes))
    c = np.triu(rng.random((len(sizes), len(sizes))) + 0.1, 1)
    c = c + c.T
    c /= c.max()
    for i, (s, e) in enumerate(zip(starts[:-1], starts[1:])):
        B = rng.random((e - s, e - s)) + 0.05
        A[s:e, s:e] = B / B.sum(axis=0)
        for j, (s2, e2) in enumerate(zip(starts[:-1], starts[1:])):
            C[s:e, s2:e2] = c[i, j]
    return A, C


def test_block_diagonal_fixed_point():
    rng = np.random.default_rng(0)
    for _ in range(5):
        A, C = _block_instance(rng, (2, 3, 2))
        F = phi(A, C)
        assert np.abs(F - C).max() <= 1e-10
        assert np.abs(F).max() == pytest.approx(1.0, abs=1e-10)


def test_dirac_histograms_make_every_cost_a_fixed_point():
    rng = np.random.default_rng(1)
    C = np.triu(rng.random((4, 4)) + 0.1, 1)
    C = (C + C.T) / (C + C.T).max()
    r = power_eigen(np.eye(4), cfg_iter=IterationConfig(initial_cost=C))
    assert r.status == CONVERGED and r.n_iter == 1
    assert np.allclose(r.cost_C, C, atol=1e-15)


def test_large_tau_tends_to_l1(torus):
    T = l1_matrix(torus)
    d = [projective_distance(power_eigen(torus, PhiConfig(tau=t)).cost_C, T) for t in (1.0, 1e4)]
    assert d[1] <= 1e-3 < d[0]


# ---- torus regression -------------------------------------------------------

def test_torus_regression(torus_result):
    r = torus_result
    assert r.status == CONVERGED
    assert r.lam == pytest.approx(TORUS_LAMBDA, abs=1e-9)
    assert np.allclose(r.cost_C[0], TORUS_ROW0, atol=1e-7)
    assert r.residual <= 1e-8


def test_torus_eigenvector_matches_lp_oracle(torus, torus_result):
    D = phi_loop(torus.columns, torus_result.cost_C)
    assert np.abs(D - TORUS_LAMBDA * torus_result.cost_C).max() <= 1e-8


def test_torus_trace_geometric(torus_result):
    hd = np.array([t.hilbert_delta for t in torus_result.trace])
    slope = np.polyfit(np.arange(hd.size), np.log(hd), 1)[0]
    assert slope < -0.05
    assert np.all(np.diff(hd[5:]) <= 0)


def test_torus_translation_invariance(torus_result):
    C = torus_result.cost_C
    n = C.shape[0]
    for k in range(n):
        assert np.ptp([C[i, (i + k) % n] for i in range(n)]) <= 1e-6


def test_iterates_normalized_and_lambda_bounded(torus):
    for tau in (0.0, 0.5):
        r = power_eigen(torus, PhiConfig(tau=tau), IterationConfig(max_iterations=10))
        assert np.abs(r.cost_C).max() == 1.0
        assert all(t.lam <= 1 + 2 * tau + 1e-12 for t in r.trace)


def test_eigenvalue_consistency_unique_torus(bimodal):
    rep = eigenvalue_consistency(bimodal, trials=5, seed=0)
    assert all(s == CONVERGED for s in rep.statuses)
    assert rep.lambda_spread <= 1e-6
    assert rep.hilbert_spread <= 1e-6


def test_gaussian_torus_eigenvalue_shared_but_vector_not():
    # several positive eigenvectors, one eigenvalue
    A = torus_dataset_1d("gauss:0.2", 20)
    rep = eigenvalue_consistency(A, trials=3, seed=0)
    assert all(s == CONVERGED for s in rep.statuses)
    assert rep.lambda_spread <= 1e-10
    assert rep.hilbert_spread > 0.1


def test_eigenvalue_consistency_two_histograms():
    A = np.array([[0.7, 0.2], [0.3, 0.8]])
    rep = eigenvalue_consistency(A, trials=5, seed=3)
    assert rep.lambda_spread <= 1e-10


def test_eigenvalue_consistency_blocks():
    rng = np.random.default_rng(5)
    A, _ = _block_instance(rng, (2, 2))
    rep = eigenvalue_consistency(A, PhiConfig(tau=0.0), trials=3, seed=1)
    for lam, s in zip(rep.lambdas, rep.statuses):
        if s == CONVERGED:
            assert lam == pytest.approx(1.0, abs=1e-10)


# ---- failure modes ----------------------------------------------------------

def test_degenerate_collapse():
    A = np.array([[0.9, 0.1, 0.0], [0.1, 0.9, 0.0], [0.0, 0.0, 1.0]])
    r = power_eigen(A)
    assert r.status == DEGENERATE


def test_max_iterations_status(torus):
    r = power_eigen(torus, cfg_iter=IterationConfig(max_iterations=2))
    assert r.status == MAX_ITERATIONS and r.n_iter == 2


def test_duplicates_rejected():
    with pytest.raises(ValueError, match="identical"):
        power_eigen(np.array([[0.5, 0.5, 1.0], [0.5, 0.5, 0.0], [0, 0, 0]]))


def test_non_square_rejected():
    with pytest.raises(ValueError, match="square"):
        power_eigen(np.array([[0.5, 1.0, 0.0], [0.5, 0.0, 1.0]]))


def test_initial_cost_validation():
    with pytest.raises(ValueError):
        IterationConfig(initial_cost="zeros")
    with pytest.raises(ValueError):
        power_eigen(np.eye(3), cfg_iter=IterationConfig(initial_cost=np.zeros((3, 3))))


# ---- uniqueness certificate --------------------------------------------------

def test_certificate_dirac_inconclusive():
    rep = uniqueness_certificate(np.eye(3), np.ones((3, 3)) - np.eye(3))
    assert rep.status == INCONCLUSIVE
    assert rep.n_components == 3


def test_certificate_two_histograms():
    rep = uniqueness_certificate(np.array([[0.7, 0.2], [0.3, 0.8]]), np.array([[0, 1.0], [1.0, 0]]))
    assert rep.status == CERTIFIED_UNIQUE


def test_certificate_bimodal_torus(bimodal):
    r = power_eigen(bimodal)
    assert uniqueness_certificate(bimodal, r.cost_C).status == CERTIFIED_UNIQUE
    assert uniqueness_certificate(bimodal, r.cost_C, face=True).status == CERTIFIED_UNIQUE


def test_gaussian_torus_support_graph_splits_by_index_sum(torus, torus_result):
    # reflection symmetry: every plan between a_i and a_j pairs bins k, l with k + l = i + j (mod n)
    rep = uniqueness_certificate(torus, torus_result.cost_C)
    assert rep.status == INCONCLUSIVE
    n = 20
    for comp in rep.components:
        assert len({(i + j) % n for i, j in comp}) == 1


def test_support_graph_scc_matches_networkx():
    rng = np.random.default_rng(12)
    for _ in range(5):
        A = random_dataset(rng, 5, 5)
        C = phi(A, l1_matrix(A))
        C /= C.max()
        _, cp = phi(A, C, PhiConfig(store_couplings=True, optimal_face=True), return_couplings=True)
        for face in (False, True):
            G = support_graph(cp, 5, face=face).tocoo()
            rep = uniqueness_certificate(A, C, cp, face=face)
            assert rep.n_components == scc_count(zip(G.row, G.col), G.shape[0])


def test_face_needs_face_couplings():
    A = np.array([[0.7, 0.2], [0.3, 0.8]])
    _, cp = phi(A, np.array([[0, 1.0], [1.0, 0]]), PhiConfig(store_couplings=True), return_couplings=True)
    with pytest.raises(ValueError, match="optimal_face"):
        uniqueness_certificate(A, np.array([[0, 1.0], [1.0, 0]]), cp, face=True)


# ---- singular vectors --------------------------------------------------------

def test_singular_blocks_two_clusters():
    U = block_dataset([(3, 4), (4, 3)], seed=2)
    A, B = canonical_normalization(U)
    r = power_singular(A, B, PhiConfig(tau=0.1))
    assert r.status == CONVERGED
    D = r.cost_D
    within = max(D[:4, :4].max(), D[4:, 4:].max())
    across = D[:4, 4:].min()
    assert within < across
    # each is the normalized distance matrix of the other
    assert np.abs(phi(A, r.cost_C, PhiConfig(tau=0.1)) - r.lam * D).max() <= 1e-7
    assert np.abs(phi(B, D, PhiConfig(tau=0.1)) - r.mu * r.cost_C).max() <= 1e-7


def test_singular_trace_tracks_mu():
    rng = np.random.default_rng(3)
    U = rng.random((4, 6)) + 0.1
    A, B = canonical_normalization(U)
    r = power_singular(A, B, PhiConfig(tau=0.2))
    assert r.converged
    assert all(t.mu is not None for t in r.trace)
    assert r.cost_C.shape == (4, 4) and r.cost_D.shape == (6, 6)


def test_singular_shape_check():
    with pytest.raises(ValueError, match="incompatible"):
        power_singular(np.eye(3), np.eye(2))


# ---- helpers -------------------------------------------------------------------

def test_projective_distance_faces():
    X = np.array([[0, 1.0, 2.0], [1.0, 0, 0.0], [2.0, 0.0, 0]])
    assert projective_distance(X, 3 * X) == pytest.approx(0.0, abs=1e-15)
    Y = np.array([[0, 1.0, 2.0], [1.0, 0, 1.0], [2.0, 1.0, 0]])
    assert projective_distance(X, Y) == np.inf


def test_trace_csv(torus_result):
    text = trace_to_csv(torus_result.trace)
    lines = text.splitlines()
    assert lines[0] == "iteration,hilbert_delta,residual,lambda"
    assert len(lines) == torus_result.n_iter + 1
    assert float(lines[-1].split(",")[3]) == torus_result.lam


def test_eigen_residual(torus, torus_result):
    # the trace records the step residual; the returned pair is at least as good
    assert eigen_residual(torus, torus_result.cost_C, torus_result.lam) <= 10 * 1e-8
    assert torus_result.residual <= 10 * 1e-8
