import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from packages.core.config import DEFAULT_CONFIG, deep_merge
from packages.core.errors import StabilityError
from packages.core.registry import SystemSpec
from packages.esc.costs import GrowthBounds, growth_bounds, quadratic, quartic2d
from packages.esc.dither import make_dither
from packages.esc.dynamics import EscParams, EscSystem
from packages.esc.integrator import Trajectory
from packages.esc.stability import (
    CertMode,
    StabilityQuery,
    certify_practical_stability,
    closeness_experiment,
    decay_radius,
    gamma_gain,
    general_gain,
    linearize,
    quadratic_lyapunov_rate,
    ring_samples,
    sgpas_sweep,
    spectrum,
    sweep_horizon,
    trajectory_gap,
    ultimate_bound,
    ultimate_bounds,
)


def shrinking_family(a):
    def field(t, x):
        return -x * (np.sum(x * x, axis=-1, keepdims=True) - a * a)
    return field


def growing_family(a, omega=None):
    def field(t, x):
        return a * x
    return field


def average_field(quartic, spec):
    system = EscSystem("gesc", "average", quartic, EscParams(k=1.0), spec)
    return lambda x: system.rhs(0.0, x)


def test_linearization_of_skewed_average_system(quartic, skewed_dither):
    J = linearize(average_field(quartic, skewed_dither), np.zeros(2), h=1e-4)
    expected = -(0.01 / 145.0) * np.array([[834.0, 402.0], [-2589.0, -861.0]])
    assert np.max(np.abs(J - expected) / np.abs(expected)) <= 1e-4


def test_skewed_average_system_has_unstable_origin(quartic, skewed_dither):
    J = linearize(average_field(quartic, skewed_dither), np.zeros(2), h=1e-6)
    values = spectrum(J)
    a2 = 0.01
    real = 27.0 * a2 / 290.0
    imag = 9.0 * a2 * math.sqrt(15927.0) / 290.0
    assert np.all(values.real > 0.0)
    assert values[0].real == pytest.approx(real, rel=1e-6)
    assert values[1].real == pytest.approx(real, rel=1e-6)
    assert values[0].imag == pytest.approx(imag, rel=1e-6)
    assert values[1].imag == pytest.approx(-imag, rel=1e-6)


def test_balanced_average_system_is_stable(quartic, balanced_dither):
    values = spectrum(linearize(average_field(quartic, balanced_dither), np.zeros(2), h=1e-6))
    assert_allclose(values.real, [-0.01, -0.075], rtol=1e-6)
    assert_allclose(values.imag, 0.0, atol=1e-12)


def test_linearize_rejects_bad_input():
    with pytest.raises(StabilityError):
        linearize(lambda x: -x, np.zeros(2), h=0.0)
    with pytest.raises(StabilityError):
        linearize(lambda x: -x, np.zeros((2, 2)))
    with pytest.raises(StabilityError):
        linearize(lambda x: np.full_like(x, np.nan), np.zeros(2))


def test_spectrum_ordering():
    values = spectrum(np.diag([-1.0, 2.0, 0.5]))
    assert_allclose(values.real, [2.0, 0.5, -1.0])


def test_quadratic_lyapunov_rate():
    x = np.array([[1.0, 2.0], [0.5, -0.5]])
    assert_allclose(quadratic_lyapunov_rate(lambda y: -y, x), [-5.0, -0.5])


def test_ultimate_bounds_use_the_tail():
    times = np.linspace(0.0, 10.0, 11)
    norms = np.stack([10.0 - times, np.full(11, 0.5)], axis=1)
    states = np.stack([norms, np.zeros_like(norms)], axis=-1)
    traj = Trajectory(times, states, np.array([False, True]), np.array([np.nan, 9.0]))
    bounds = ultimate_bounds(traj, tail_fraction=0.2)
    assert bounds[0] == pytest.approx(2.0)
    assert bounds[1] == math.inf
    single = Trajectory(times, states[:, 0, :], np.array([False]), np.array([np.nan]))
    assert ultimate_bound(single, tail_fraction=0.5) == pytest.approx(5.0)
    with pytest.raises(StabilityError):
        ultimate_bounds(single, tail_fraction=0.0)


def test_gains(quartic):
    assert gamma_gain(1.0, growth_bounds(quartic)) == pytest.approx(29.3, rel=2e-3)
    assert decay_radius(0.5, 2.0, 16.0) == pytest.approx(1.0)
    bounds = GrowthBounds(b1=1.0, b2=16.0, degree=4)
    assert general_gain(0.5, bounds, np.diag([8.0, 1.0])) == pytest.approx(2.0)
    assert gamma_gain(0.01, bounds) == pytest.approx(0.06)


def test_ring_samples():
    samples = ring_samples(2.0, 2, ring_points=16, interior_points=16, seed=3)
    assert samples.shape == (32, 2)
    assert_allclose(np.linalg.norm(samples[:16], axis=1), 2.0)
    assert np.all(np.linalg.norm(samples[16:], axis=1) <= 2.0)
    assert np.array_equal(samples, ring_samples(2.0, 2, 16, 16, seed=3))
    assert ring_samples(1.0, 3).shape == (96, 3)
    assert ring_samples(1.0, 1).shape == (32, 1)
    shifted = ring_samples(1.0, 2, 4, 0, center=[1.0, -1.0])
    assert_allclose(shifted, ring_samples(1.0, 2, 4, 0) + [1.0, -1.0])
    with pytest.raises(StabilityError):
        ring_samples(0.0, 2)


def test_sweep_horizon_policy():
    assert sweep_horizon(0.1, 1.0) == 400.0
    assert sweep_horizon(10.0, 1.0) == pytest.approx(0.5)
    assert sweep_horizon(100.0, 1.0) == 0.05


def test_sweep_of_contracting_family():
    initial = np.array([[2.0, 0.0], [0.0, -1.5]])
    report = sgpas_sweep(shrinking_family, [0.5, 1.0, 0.1], initial, horizon=50.0)
    assert report.grid["a"] == [1.0, 0.5, 0.1]
    assert len(report.cells) == 6
    maxima = report.details["max_bounds"]
    assert maxima[0] == pytest.approx(1.0, abs=1e-3)
    assert maxima[1] == pytest.approx(0.5, abs=1e-3)
    assert maxima[2] < 0.15
    assert report.details["monotone"]
    assert report.details["gamma"] is None
    assert report.verdict


def test_sweep_flags_divergence():
    report = sgpas_sweep(growing_family, [1.0, 0.5], [[1.0, 0.0]], horizon=100.0)
    assert not report.verdict
    assert any(cell.diverged for cell in report.cells)
    assert "divergence at a=1" in report.notes


def test_sweep_skips_gain_for_non_quartic_costs():
    bounds = growth_bounds(quadratic(np.diag([1.0, 2.0])))
    report = sgpas_sweep(shrinking_family, [1.0], [[1.0, 0.0]], horizon=5.0, bounds=bounds)
    assert any("skipped" in note for note in report.notes)
    assert report.details["within_gamma"] is None


def test_sweep_rejects_empty_grid():
    with pytest.raises(StabilityError):
        sgpas_sweep(shrinking_family, [], [[1.0, 0.0]], horizon=1.0)
    with pytest.raises(StabilityError):
        sgpas_sweep(shrinking_family, [1.0, -0.1], [[1.0, 0.0]], horizon=1.0)


def test_closeness_improves_with_frequency(quartic):
    spec = make_dither([1, 3], [1, 1], 0.1)
    report = closeness_experiment(quartic, spec, [500.0, 50.0], [1.0, 1.0], T=2.0,
                                  params=EscParams(k=1.0))
    assert report.omegas == [50.0, 500.0]
    assert report.samples == 1000
    assert report.gaps[1] < report.gaps[0]
    assert not report.diverged[1]


def test_trajectory_gap_needs_a_common_grid():
    a = Trajectory(np.arange(3.0), np.zeros((3, 2)), np.array([False]), np.array([np.nan]))
    b = Trajectory(np.arange(4.0), np.zeros((4, 2)), np.array([False]), np.array([np.nan]))
    with pytest.raises(StabilityError):
        trajectory_gap(a, b)
    c = Trajectory(np.arange(3.0), np.ones((3, 2)), np.array([False]), np.array([np.nan]))
    assert trajectory_gap(a, c) == pytest.approx(math.sqrt(2.0))


def test_query_validation_and_defaults():
    with pytest.raises(StabilityError):
        StabilityQuery(c1=1.0, c2=0.0, amplitudes=[0.1], omegas=[1.0])
    with pytest.raises(StabilityError):
        StabilityQuery(c1=1.0, c2=1.0, amplitudes=[], omegas=[1.0])
    with pytest.raises(StabilityError):
        StabilityQuery(c1=1.0, c2=1.0, amplitudes=[0.1], omegas=[-1.0])
    query = StabilityQuery(c1=1.0, c2=2.0, amplitudes=[0.1, 0.5], omegas=[10.0, 1.0], b1=0.05)
    assert query.amplitudes == [0.5, 0.1]
    assert query.omegas == [1.0, 10.0]
    assert query.resolved_horizon() == pytest.approx(250.0)
    assert query.resolved_horizon(phase_dependent=True) == pytest.approx(10.0)
    with pytest.raises(StabilityError):
        StabilityQuery(c1=1.0, c2=1.0, amplitudes=[0.1], omegas=[1.0], model_free_horizon=0.0)
    assert len(query.resolved_t_grid(10.0)) == 21


SPHERE_FLOW = SystemSpec(algo="gesc-model-based", cost="sphere", dim=2)


def test_certificate_for_exponentially_stable_flow():
    query = StabilityQuery(c1=1.0, c2=0.5, amplitudes=[0.1], omegas=[1.0], horizon=5.0,
                           t_grid=[1.0, 2.0, 5.0])
    report = certify_practical_stability(SPHERE_FLOW.family(), query, CertMode.PUA)
    assert report.verdict
    assert report.thresholds == {"a_star": 0.1, "omega_star": None, "T": 1.0}
    assert len(report.cells) == 32
    assert all(cell.satisfied for cell in report.cells)


def test_stay_in_ball_modes():
    failing = StabilityQuery(c1=1.0, c2=0.5, amplitudes=[0.1], omegas=[1.0], horizon=2.0)
    report = certify_practical_stability(SPHERE_FLOW.family(), failing, "PS")
    assert not report.verdict
    assert any("c1 >= c2" in note for note in report.notes)
    assert report.details["counterexample"]["reason"] == "left the c2 ball"

    passing = StabilityQuery(c1=0.5, c2=1.0, amplitudes=[0.1], omegas=[1.0], horizon=2.0)
    report = certify_practical_stability(SPHERE_FLOW.family(), passing, CertMode.PS)
    assert report.verdict
    assert report.thresholds["T"] is None


def test_exhaustive_search_reports_largest_certified_amplitude():
    query = StabilityQuery(c1=1.0, c2=0.5, amplitudes=[0.1, 0.05, 0.2], omegas=[1.0],
                           horizon=5.0, t_grid=[1.0, 2.0, 5.0], exhaustive=True)
    report = certify_practical_stability(SPHERE_FLOW.family(), query)
    assert report.thresholds["a_star"] == 0.2
    assert len(report.cells) == 3 * 32


def test_failing_family_gives_a_counterexample():
    query = StabilityQuery(c1=0.5, c2=1.0, amplitudes=[1.0], omegas=[1.0], horizon=5.0,
                           center=[0.0, 0.0])
    report = certify_practical_stability(growing_family, query)
    assert not report.verdict
    assert report.thresholds == {"a_star": None, "omega_star": None, "T": None}
    assert report.details["counterexample"]["a"] == 1.0


def test_worker_processes_give_the_same_thresholds():
    spec = SystemSpec(algo="gesc", cost="quartic2d", rates=(1, 3), ramp=(1.0, 1.0), a=0.1)
    query = StabilityQuery(c1=0.5, c2=2.0, amplitudes=[0.1], omegas=[20.0, 40.0], horizon=0.5,
                           spot_check_fraction=0.0)
    serial = certify_practical_stability(spec.family(), query, CertMode.PB, jobs=1)
    parallel = certify_practical_stability(spec.family(), query, CertMode.PB, jobs=2)
    assert serial.thresholds == parallel.thresholds
    assert serial.verdict == parallel.verdict


@pytest.mark.slow
def test_amplitude_sweep_of_skewed_average_system(quartic):
    bounds = growth_bounds(quartic)
    spec = SystemSpec(algo="gesc-average", cost="quartic2d", rates=(1, 3), ramp=(12.0, 1.0))
    initial = ring_samples(2.0, 2, ring_points=4, interior_points=0)
    report = sgpas_sweep(spec.family(), [100.0, 1.0, 0.01], initial, bounds=bounds)
    maxima = report.details["max_bounds"]
    assert maxima[0] > maxima[1] > maxima[2]
    assert maxima[2] < 0.1
    assert report.details["within_gamma"]
    assert report.verdict


@pytest.mark.slow
def test_unstable_origin_is_still_practically_stable(quartic):
    bounds = growth_bounds(quartic)
    spec = SystemSpec(algo="gesc-average", cost="quartic2d", rates=(1, 3), ramp=(12.0, 1.0))
    report = sgpas_sweep(spec.family(), [1.0], [[1e-6, 0.0]], horizon=200.0, bounds=bounds)
    assert report.cells[0].max_norm > 1e-4
    assert report.details["max_bounds"][0] <= report.details["gamma"][0]


@pytest.mark.slow
def test_closeness_at_high_frequency(quartic):
    spec = make_dither([1, 3], [1, 1], 0.1)
    report = closeness_experiment(quartic, spec, [1e2, 1e4], [1.0, 1.0], T=10.0,
                                  params=EscParams(k=1.0))
    assert report.gaps[1] < report.gaps[0]
    assert report.gaps[1] < 0.05


@pytest.mark.slow
def test_model_free_certificate():
    spec = SystemSpec(algo="gesc", cost="quartic2d", rates=(1, 3), ramp=(12.0, 1.0))
    query = StabilityQuery(c1=2.0, c2=0.5, amplitudes=[0.5, 0.1, 0.02], omegas=[1e2, 1e3, 1e4],
                           horizon=10.0, t_grid=[1.0, 2.0, 5.0, 10.0])
    report = certify_practical_stability(spec.family(), query, CertMode.PUA)
    assert report.verdict
    assert report.thresholds["a_star"] is not None
    assert report.thresholds["omega_star"] is not None
    assert report.thresholds["T"] is not None


def test_ultimate_bound_shrinks_as_the_start_is_dropped():
    rng = np.random.default_rng(7)
    times = np.linspace(0.0, 10.0, 201)
    states = rng.standard_normal((201, 2)) * np.exp(-0.2 * times)[:, None]
    flags = (np.array([False]), np.array([np.nan]))
    bounds = [
        ultimate_bound(Trajectory(times[cut:], states[cut:], *flags), tail_fraction=0.3)
        for cut in range(0, 200, 10)
    ]
    assert all(later <= earlier for earlier, later in zip(bounds, bounds[1:]))


def test_certificate_survives_a_larger_target_ball():
    times = []
    for c2 in (0.01, 0.25, 0.5, 1.5):
        query = StabilityQuery(c1=1.0, c2=c2, amplitudes=[0.1], omegas=[1.0], horizon=5.0,
                               t_grid=[1.0, 2.0, 5.0])
        report = certify_practical_stability(SPHERE_FLOW.family(), query, CertMode.PUA)
        assert report.verdict, c2
        times.append(report.thresholds["T"])
    assert times == [5.0, 1.0, 1.0, 1.0]


def test_model_free_certificate_uses_the_capped_default_horizon():
    spec = SystemSpec(algo="gesc", cost="quartic2d", rates=(1, 3), ramp=(1.0, 1.0))
    b1 = growth_bounds(quartic2d()).b1
    query = StabilityQuery(c1=0.5, c2=2.0, amplitudes=[0.1], omegas=[20.0], b1=b1,
                           ring_points=4, interior_points=4, spot_check_fraction=0.0)
    report = certify_practical_stability(spec.family(), query, CertMode.PUA)
    assert report.query["horizon"] == pytest.approx(10.0)
    assert report.cells
    assert not any(c["reason"].startswith("numerical failure") for c in report.details["cells"])

    fast = StabilityQuery(c1=2.0, c2=0.5, amplitudes=[0.02], omegas=[1e4], b1=b1)
    assert fast.resolved_horizon() > 1000.0
    assert fast.resolved_horizon(phase_dependent=True) == pytest.approx(10.0)


def test_integration_failure_fails_the_cell_not_the_search():
    spec = SystemSpec(algo="gesc", cost="quartic2d", rates=(1, 3), ramp=(1.0, 1.0))
    settings = deep_merge(DEFAULT_CONFIG, {"integrator": {"max_steps": 10}})
    query = StabilityQuery(c1=0.5, c2=2.0, amplitudes=[0.1], omegas=[20.0], horizon=5.0,
                           ring_points=4, interior_points=4)
    report = certify_practical_stability(spec.family(), query, CertMode.PUA, settings=settings)
    assert not report.verdict
    assert report.details["counterexample"]["reason"].startswith("numerical failure")
    assert report.details["counterexample"]["max_distance"] == math.inf
    assert len(report.cells) == 8
    assert all(cell.satisfied is False for cell in report.cells)


def test_sweep_worker_processes_match_the_serial_sweep():
    kwargs = dict(horizon=2.0, tail_fraction=0.5)
    serial = sgpas_sweep(SPHERE_FLOW.family(), [1.0, 0.5], [[1.0, 0.0], [0.0, 2.0]], **kwargs)
    parallel = sgpas_sweep(SPHERE_FLOW.family(), [1.0, 0.5], [[1.0, 0.0], [0.0, 2.0]], jobs=2,
                           **kwargs)
    assert parallel.details == serial.details
    assert [c.bound for c in parallel.cells] == [c.bound for c in serial.cells]


def test_closeness_worker_processes_match_the_serial_run(quartic):
    spec = make_dither([1, 3], [1, 1], 0.1)
    serial = closeness_experiment(quartic, spec, [50.0, 100.0], [1.0, 1.0], T=0.5, samples=50)
    parallel = closeness_experiment(quartic, spec, [50.0, 100.0], [1.0, 1.0], T=0.5, samples=50,
                                    jobs=2)
    assert parallel.gaps == serial.gaps
