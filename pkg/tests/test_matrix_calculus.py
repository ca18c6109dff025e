import numpy as np
import pytest
from numpy.testing import assert_allclose

from packages.core.errors import MatrixError
from packages.esc.matrix_calculus import (
    EigDecomposition,
    dalecki_krein_C,
    duplication_matrix,
    eig_decomposition,
    elimination_matrix,
    exp_sym,
    log_coordinate_rate,
    log_spd,
    symmetrize,
    unvech,
    vec,
    vech,
    vech_dim,
    vech_order,
)


def test_vech_is_column_major_lower_triangle():
    X = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    assert_allclose(vech(X), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    assert_allclose(unvech(vech(X)), X)
    assert_allclose(vec(X), X.T.ravel())


def test_vech_rejects_asymmetric_input():
    with pytest.raises(MatrixError):
        vech(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(MatrixError):
        vech(np.ones((2, 3)))


def test_vech_dimensions():
    assert [vech_dim(n) for n in (1, 2, 3, 4)] == [1, 3, 6, 10]
    assert vech_order(6) == 3
    with pytest.raises(MatrixError):
        vech_order(5)
    with pytest.raises(MatrixError):
        unvech(np.zeros(4))


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_duplication_and_elimination(n, random_spd):
    X = random_spd(n)
    X = symmetrize(X)
    D = duplication_matrix(n)
    L = elimination_matrix(n)
    assert D.shape == (n * n, vech_dim(n))
    assert_allclose(D @ vech(X), vec(X))
    assert_allclose(L @ vec(X), vech(X))
    assert_allclose(L @ D, np.eye(vech_dim(n)))


def test_vech_is_batched(random_spd):
    stack = np.stack([symmetrize(random_spd(3)) for _ in range(4)])
    assert vech(stack).shape == (4, 6)
    assert_allclose(unvech(vech(stack)), stack)


def test_log_and_exp_are_inverse(random_spd):
    for _ in range(5):
        G = symmetrize(random_spd(3))
        assert_allclose(exp_sym(log_spd(G)), G, rtol=1e-10, atol=1e-12)
    S = symmetrize(np.array([[0.3, -1.2], [-1.2, 0.5]]))
    assert_allclose(log_spd(exp_sym(S)), S, atol=1e-12)


def test_log_rejects_indefinite_matrices():
    with pytest.raises(MatrixError):
        log_spd(np.diag([1.0, -1.0]))
    with pytest.raises(MatrixError):
        log_spd(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_eig_decomposition_is_ascending(random_spd):
    G = symmetrize(random_spd(4))
    eig = eig_decomposition(G)
    assert np.all(np.diff(eig.values) >= 0.0)
    assert_allclose((eig.vectors * eig.values) @ eig.vectors.T, G, atol=1e-12)


def test_divided_differences_and_ties():
    eig = eig_decomposition(np.diag([1.0, 2.0, 2.0 * (1 + 1e-12)]))
    C = dalecki_krein_C(eig)
    assert C[0, 0] == pytest.approx(1.0)
    assert C[0, 1] == pytest.approx(np.log(2.0))
    assert C[1, 2] == pytest.approx(0.5, rel=1e-9)
    assert_allclose(C, C.T)
    with pytest.raises(MatrixError):
        dalecki_krein_C(eig_decomposition(np.diag([0.0, 1.0])))


def test_rate_at_identity_is_the_rate_itself():
    G_dot = np.array([[0.5, 0.2], [0.2, -1.0]])
    assert_allclose(log_coordinate_rate(np.eye(2), G_dot), vech(G_dot))


def test_rate_matches_finite_differences_along_spd_paths(random_spd, rng):
    h = 1e-4
    for _ in range(20):
        n = int(rng.integers(2, 5))
        G = symmetrize(random_spd(n, spread=2.0))
        G_dot = symmetrize(0.5 * rng.standard_normal((n, n)))
        fd = (vech(log_spd(G + h * G_dot)) - vech(log_spd(G - h * G_dot))) / (2 * h)
        assert_allclose(log_coordinate_rate(G, G_dot), fd, rtol=0.0, atol=1e-6)


def test_rate_with_repeated_eigenvalues():
    G = np.diag([2.0, 2.0, 3.0])
    G_dot = symmetrize(np.arange(9.0).reshape(3, 3) / 10.0)
    h = 1e-5
    fd = (vech(log_spd(G + h * G_dot)) - vech(log_spd(G - h * G_dot))) / (2 * h)
    assert_allclose(log_coordinate_rate(G, G_dot), fd, atol=1e-8)


def test_rate_does_not_depend_on_eigenpair_order(random_spd, rng):
    for n in (2, 3, 4):
        G = symmetrize(random_spd(n))
        G_dot = symmetrize(rng.standard_normal((n, n)))
        expected = log_coordinate_rate(G, G_dot)
        eig = eig_decomposition(G)
        for _ in range(5):
            order = rng.permutation(n)
            signs = rng.choice([-1.0, 1.0], size=n)
            shuffled = EigDecomposition(vectors=eig.vectors[:, order] * signs,
                                        values=eig.values[order])
            Sigma = shuffled.vectors
            rate = Sigma @ (dalecki_krein_C(shuffled) * (Sigma.T @ G_dot @ Sigma)) @ Sigma.T
            assert_allclose(vech(symmetrize(rate)), expected, atol=1e-9)

            P = np.eye(n)[order]
            permuted = log_coordinate_rate(P @ G @ P.T, P @ G_dot @ P.T)
            assert_allclose(unvech(permuted), P @ unvech(expected) @ P.T, atol=1e-9)
