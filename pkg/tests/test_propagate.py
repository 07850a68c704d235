import numpy as np
import pytest
import scipy.sparse as sps
from scipy.linalg import expm

from crwfisher.propagate import LinearRK4, rk4_step, step_polynomial


def damped_rotation(n=6, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return 0.5 * (A - A.conj().T) - 0.2 * np.eye(n)  # anti-Hermitian plus uniform damping


def test_step_polynomial_matches_stage_form():
    M = damped_rotation()
    y = np.arange(6, dtype=complex)
    assert np.allclose(step_polynomial(M, 0.05) @ y, rk4_step(lambda v: M @ v, y, 0.05), atol=1e-14)


def test_step_polynomial_is_taylor_truncation():
    M = damped_rotation()
    h = 0.01
    A = h * M
    P = sum(np.linalg.matrix_power(A, k) / f for k, f in enumerate((1, 1, 2, 6, 24)))
    assert np.allclose(step_polynomial(sps.csr_matrix(M), h), P, atol=1e-15)


def test_fourth_order_convergence():
    M = damped_rotation()
    y0 = np.ones(6, complex)
    exact = expm(2.0 * M) @ y0
    errors = []
    for n in (40, 80, 160):
        errors.append(np.abs(LinearRK4(M, 2.0 / n, route="sparse").advance(y0, n) - exact).max())
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(np.abs(orders - 4) < 0.15), orders


def test_dense_and_sparse_routes_agree():
    M = sps.csr_matrix(damped_rotation(8, seed=4))
    y0 = np.linspace(0, 1, 8).astype(complex)
    dense = LinearRK4(M, 0.02, route="dense").sample(y0, stride=7, n_samples=30)
    sparse = LinearRK4(M, 0.02, route="sparse").sample(y0, stride=7, n_samples=30)
    assert dense.shape == (31, 8)
    assert np.allclose(dense, sparse, atol=1e-12)


def test_advance_by_binary_powers():
    M = damped_rotation()
    y0 = np.ones(6, complex)
    dense = LinearRK4(M, 0.01, route="dense")
    sparse = LinearRK4(M, 0.01, route="sparse")
    for n in (0, 1, 5, 64, 77):
        assert np.allclose(dense.advance(y0, n), sparse.advance(y0, n), atol=1e-12)
    with pytest.raises(ValueError):
        dense.advance(y0, -1)


def test_evolve_to_partial_step():
    M = damped_rotation()
    y0 = np.ones(6, complex)
    rk = LinearRK4(M, 0.01, route="sparse")
    y = rk.evolve_to(y0, 0.2345)
    assert np.allclose(y, expm(0.2345 * M) @ y0, atol=1e-8)
    assert np.allclose(rk.evolve_to(y0, 0.23), rk.advance(y0, 23))


def test_observe_and_validation():
    M = damped_rotation()
    out = LinearRK4(M, 0.01, route="sparse").sample(np.ones(6, complex), 2, 3, observe=lambda v: v[:2].copy())
    assert out.shape == (4, 2)
    with pytest.raises(ValueError):
        LinearRK4(M, 0.0)
    with pytest.raises(ValueError):
        LinearRK4(M, 0.1, route="magic")


def test_auto_route_prefers_sparse_for_large_systems():
    M = sps.identity(5000, format="csr")
    assert LinearRK4(M, 0.1, n_samples=10, stride=10).route == "sparse"
