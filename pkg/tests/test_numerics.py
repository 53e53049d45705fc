"""SVD, singular-value shrinkage, and norm primitives."""

import numpy as np
import pytest

from maskrecon.errors import NumericalError, ShapeError
from maskrecon.numerics import (as_matrix, frobenius_norm, nuclear_norm, svd,
                                svt_shrink)


def random_matrix(rows, cols, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((rows, cols))


def test_svd_identity():
    res = svd(np.eye(2))
    assert np.allclose(res.sigma, [1.0, 1.0])


def test_svd_diagonal():
    res = svd(np.diag([3.0, 0.0]))
    assert np.allclose(res.sigma, [3.0, 0.0])


def test_svd_reconstruction_residual():
    a = random_matrix(5, 4, 123)
    res = svd(a)
    rebuilt = res.u @ np.diag(res.sigma) @ res.vt
    assert np.linalg.norm(rebuilt - a) < 1e-10


def test_svd_result_invariants():
    a = random_matrix(7, 5, 9)
    res = svd(a)
    k = min(a.shape)
    assert res.sigma.shape == (k,)
    assert np.all(res.sigma[:-1] >= res.sigma[1:])
    assert np.all(res.sigma >= 0)
    assert np.allclose(res.u.T @ res.u, np.eye(k), atol=1e-8)
    assert np.allclose(res.vt @ res.vt.T, np.eye(k), atol=1e-8)


def test_svd_deterministic_bit_for_bit():
    a = random_matrix(6, 6, 77)
    r1 = svd(a.copy())
    r2 = svd(a.copy())
    assert r1.u.tobytes() == r2.u.tobytes()
    assert r1.sigma.tobytes() == r2.sigma.tobytes()
    assert r1.vt.tobytes() == r2.vt.tobytes()


def test_svd_sign_convention_stable_under_negation_of_factors():
    # largest-|entry| of each left singular vector is positive, so the
    # factorization does not depend on the sign choices of the backend
    a = random_matrix(5, 5, 3)
    res = svd(a)
    for j in range(res.u.shape[1]):
        col = res.u[:, j]
        assert col[np.argmax(np.abs(col))] > 0


def test_svt_lambda_zero_is_identity():
    a = random_matrix(6, 4, 5)
    assert np.linalg.norm(svt_shrink(a, 0.0) - a) < 1e-10


def test_svt_diagonal_soft_threshold():
    out = svt_shrink(np.diag([3.0, 1.0]), 2.0)
    assert np.allclose(out, np.diag([1.0, 0.0]), atol=1e-12)


def test_svt_local_optimality_probe():
    # prox objective 0.5*||Z - a||_F^2 + lam*||Z||_* is minimized at the output
    a = random_matrix(6, 6, 21)
    lam = 0.5
    z = svt_shrink(a, lam)

    def objective(m):
        return 0.5 * np.linalg.norm(m - a) ** 2 + lam * nuclear_norm(m)

    base = objective(z)
    rng = np.random.default_rng(22)
    for _ in range(100):
        d = rng.standard_normal(a.shape)
        d /= np.linalg.norm(d)
        assert objective(z + 1e-3 * d) >= base - 1e-12


def test_svt_nuclear_norm_monotone_in_lambda():
    a = random_matrix(8, 6, 13)
    lams = [0.0, 0.3, 0.7, 1.5, 3.0]
    norms = [nuclear_norm(svt_shrink(a, l)) for l in lams]
    for lo, hi in zip(norms[1:], norms[:-1]):
        assert lo <= hi + 1e-12


def test_svt_annihilates_above_top_singular_value():
    a = random_matrix(5, 5, 4)
    top = svd(a).sigma[0]
    assert np.allclose(svt_shrink(a, top), 0.0, atol=1e-10)
    assert np.allclose(svt_shrink(a, top * 1.5), 0.0)


def test_norms_zero_matrix():
    z = np.zeros((4, 3))
    assert frobenius_norm(z) == 0.0
    assert nuclear_norm(z) == 0.0


def test_norms_identity():
    i3 = np.eye(3)
    assert abs(frobenius_norm(i3) - np.sqrt(3)) < 1e-12
    assert abs(nuclear_norm(i3) - 3.0) < 1e-12


def test_nuclear_norm_rank_one():
    rng = np.random.default_rng(31)
    u = rng.standard_normal(6)
    v = rng.standard_normal(9)
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)
    assert abs(nuclear_norm(np.outer(u, v)) - 1.0) < 1e-10


def test_as_matrix_rejects_bad_inputs():
    with pytest.raises(ShapeError):
        as_matrix(np.zeros(5))
    with pytest.raises(NumericalError):
        as_matrix(np.array([[1.0, np.nan]]))
    with pytest.raises(NumericalError):
        as_matrix(np.array([[np.inf, 0.0]]))
