import pickle

import numpy as np
import pytest
from numpy.testing import assert_allclose

from packages.core.errors import CostError
from packages.esc.costs import (
    builtin_cost,
    growth_bounds,
    lie_derivative_model_based,
    quartic2d,
    quadratic,
    sphere,
)


def test_quartic_value_gradient_hessian(quartic):
    theta = np.array([1.0, -2.0])
    assert float(quartic.eval(theta)) == pytest.approx(1.0 + 1.0)
    assert_allclose(quartic.grad(theta), [4.0 * (1.0 - 1.0), -4.0])
    assert_allclose(quartic.hess(theta), 12.0 * np.array([[2.0, 1.0], [1.0, 1.0]]))


def test_quartic_gradient_matches_finite_differences(quartic, rng):
    h = 1e-6
    for theta in rng.uniform(-2, 2, size=(5, 2)):
        fd = np.array([
            (quartic.eval(theta + h * e) - quartic.eval(theta - h * e)) / (2 * h)
            for e in np.eye(2)
        ])
        assert_allclose(quartic.grad(theta), fd, rtol=1e-6, atol=1e-6)


def test_costs_are_vectorised(quartic):
    points = np.zeros((3, 4, 2))
    assert quartic.eval(points).shape == (3, 4)
    assert quartic.grad(points).shape == (3, 4, 2)
    assert quartic.hess(points).shape == (3, 4, 2, 2)


def test_quadratic_oracles(quad):
    theta = np.array([1.0, 2.0])
    assert float(quad.eval(theta)) == pytest.approx(0.5 * (3 + 4 + 8))
    assert_allclose(quad.grad(theta), [5.0, 5.0])
    assert_allclose(quad.hess(theta), [[3.0, 1.0], [1.0, 2.0]])
    assert quad.degree == 2


@pytest.mark.parametrize("Q", [
    [[1.0, 2.0], [0.0, 1.0]],
    [[1.0, 0.0], [0.0, -1.0]],
    [[1.0, 2.0, 3.0]],
    [[np.inf, 0.0], [0.0, 1.0]],
])
def test_quadratic_rejects_bad_matrices(Q):
    with pytest.raises(CostError):
        quadratic(Q)


def test_dimension_mismatch_raises(quartic):
    with pytest.raises(CostError):
        quartic.eval(np.zeros(3))


def test_builtin_lookup():
    assert builtin_cost("quartic2d").dim == 2
    assert builtin_cost("sphere", dim=3).dim == 3
    with pytest.raises(CostError):
        builtin_cost("quadratic")
    with pytest.raises(CostError):
        builtin_cost("rosenbrock")


def test_quartic_growth_bounds(quartic):
    bounds = growth_bounds(quartic)
    assert bounds.degree == 4
    assert bounds.b1 == pytest.approx(0.07778, abs=5e-4)
    assert bounds.b2 == pytest.approx(4.2856, abs=5e-4)


def test_growth_bounds_for_quadratics_are_half_eigenvalues():
    Q = np.diag([1.0, 4.0, 9.0])
    bounds = growth_bounds(quadratic(Q))
    assert bounds.b1 == pytest.approx(0.5, rel=1e-5)
    assert bounds.b2 == pytest.approx(4.5, rel=1e-5)


def test_growth_bounds_one_dimensional():
    bounds = growth_bounds(sphere(1))
    assert bounds.b1 == bounds.b2 == 1.0


def test_lie_derivative_along_model_based_flow(quartic):
    t1, t2 = 0.7, -0.2
    s = t1 + t2
    expected = -16.0 * 0.5 * ((t1 ** 3 + s ** 3) ** 2 + s ** 6)
    assert float(lie_derivative_model_based(quartic, [t1, t2], k=0.5)) == pytest.approx(expected)


def test_quartic_sits_between_its_growth_bounds(quartic, rng):
    bounds = growth_bounds(quartic)
    directions = rng.standard_normal((10_000, 2))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = 10.0 ** rng.uniform(-3.0, 3.0, size=10_000)
    theta = directions * radii[:, None]
    values = quartic.eval(theta)
    quartic_norm = np.linalg.norm(theta, axis=1) ** 4
    assert np.all(values >= bounds.b1 * quartic_norm * (1.0 - 1e-9))
    assert np.all(values <= bounds.b2 * quartic_norm * (1.0 + 1e-9))


@pytest.mark.parametrize("cost", [
    quartic2d(),
    quadratic([[3.0, 1.0], [1.0, 2.0]]),
    quadratic(np.diag([1.0, 4.0, 9.0])),
    sphere(2),
    sphere(3),
], ids=lambda cost: f"{cost.id}-{cost.dim}")
def test_gradient_oracle_matches_central_differences(cost, rng):
    h = 1e-4
    points = rng.uniform(-2.0, 2.0, size=(100, cost.dim))
    steps = h * np.eye(cost.dim)
    fd = np.stack([
        (cost.eval(points + e) - cost.eval(points - e)) / (2 * h) for e in steps
    ], axis=-1)
    assert_allclose(cost.grad(points), fd, rtol=1e-5, atol=1e-5)


def test_costs_survive_pickling(quad):
    theta = np.array([[0.3, -1.2], [2.0, 0.5]])
    for cost in (quad, quartic2d(), sphere(2)):
        copy = pickle.loads(pickle.dumps(cost))
        assert_allclose(copy.eval(theta), cost.eval(theta))
        assert_allclose(copy.grad(theta), cost.grad(theta))
        assert_allclose(copy.hess(theta), cost.hess(theta))
