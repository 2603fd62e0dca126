"""Tests for the array manifold, snapshots and covariances."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from csdml.array import (
    CovarianceMatrix,
    SnapshotMatrix,
    array_manifold,
    beampattern,
    check_scenario,
    derivative_matrix,
    estimate_noise_power,
    exact_covariance,
    half_power_beamwidth,
    half_power_width,
    sample_covariance,
    second_derivative_matrix,
    steering_derivative,
    steering_matrix,
    steering_vector,
    synthesize_snapshots,
    trial_seed,
)
from csdml.errors import DomainError
from csdml.models import ArrayGeometry, SourceScenario


@pytest.fixture
def ula8():
    """Half-wavelength ULA with 8 sensors."""
    return ArrayGeometry.ula(8)


@pytest.fixture
def scenario():
    """Two sources at 10 dB."""
    return SourceScenario.from_degrees([2.37, 30.82], 10.0, snapshots=200)


class TestSteering:
    """Tests for steering vectors and their derivatives."""

    def test_unit_norm(self, ula8):
        """Every steering vector has unit norm."""
        a = steering_matrix(ula8, np.radians([-60.0, 0.0, 45.0]))
        assert_allclose(np.linalg.norm(a, axis=0), 1.0, atol=1e-12)

    def test_broadside_is_constant(self, ula8):
        """At θ = 0 all entries equal 1/sqrt(M)."""
        assert_allclose(steering_vector(ula8, 0.0), np.full(8, 1 / math.sqrt(8)))

    def test_derivative_matches_finite_difference(self, ula8):
        """a'(θ) matches a central difference."""
        h = 1e-6
        for theta in (-0.7, 0.1, 1.2):
            fd = (steering_vector(ula8, theta + h) - steering_vector(ula8, theta - h)) / (2 * h)
            assert_allclose(steering_derivative(ula8, theta), fd, atol=1e-7)

    def test_second_derivative_matches_finite_difference(self, ula8):
        """a''(θ) matches a central difference of a'(θ)."""
        h = 1e-6
        theta = np.array([0.4])
        fd = (derivative_matrix(ula8, theta + h) - derivative_matrix(ula8, theta - h)) / (2 * h)
        assert_allclose(second_derivative_matrix(ula8, theta), fd, atol=1e-6)

    def test_batch_axes(self, ula8):
        """Leading batch axes carry through: (..., K) -> (..., M, K)."""
        angles = np.radians([[0.0, 10.0], [5.0, 20.0], [-30.0, 40.0]])
        batched = steering_matrix(ula8, angles)
        assert batched.shape == (3, 8, 2)
        assert_allclose(batched[1], steering_matrix(ula8, angles[1]))
        assert derivative_matrix(ula8, angles).shape == (3, 8, 2)

    def test_rejects_endfire(self, ula8):
        """Checked constructors refuse ±90°."""
        with pytest.raises(DomainError):
            steering_matrix(ula8, [math.pi / 2])

    def test_unchecked_manifold_allows_endfire(self, ula8):
        """The dictionary manifold accepts the grid endpoints."""
        a = array_manifold(ula8, [-math.pi / 2, math.pi / 2])
        assert a.shape == (8, 2)

    def test_translation_is_a_phase(self, ula8):
        """Shifting the origin multiplies a(θ) by a unit phase."""
        theta, offset = 0.3, 1.7
        shifted = steering_vector(ula8.translated(offset), theta)
        phase = np.exp(-2j * np.pi * math.sin(theta) * offset)
        assert_allclose(shifted, phase * steering_vector(ula8, theta), atol=1e-12)


class TestBeamwidth:
    """Tests for the half-power beamwidth."""

    def test_m8(self, ula8):
        """M=8 ULA has BW_0.5 of about 12.8°."""
        assert 12.6 < math.degrees(half_power_beamwidth(ula8)) < 13.0

    def test_m12(self):
        """M=12 ULA has BW_0.5 of about 8.5°."""
        assert 8.3 < math.degrees(half_power_beamwidth(ArrayGeometry.ula(12))) < 8.7

    def test_narrows_with_m(self):
        """More sensors give a narrower beam."""
        widths = [half_power_beamwidth(ArrayGeometry.ula(m)) for m in (8, 12, 16)]
        assert widths[0] > widths[1] > widths[2]

    def test_half_power_point(self, ula8):
        """The beampattern equals 0.5 at BW_0.5/2."""
        half = half_power_beamwidth(ula8) / 2
        assert beampattern(ula8, 0.0, [half])[0] == pytest.approx(0.5, abs=1e-8)

    def test_width_at_other_levels(self, ula8):
        """A lower level lies farther out."""
        assert half_power_width(ula8, 0.0, level=0.25) > half_power_width(ula8, 0.0)

    def test_translation_invariant(self, ula8):
        """Beamwidth ignores the array origin."""
        assert half_power_beamwidth(ula8.translated(3.0)) == pytest.approx(
            half_power_beamwidth(ula8), rel=1e-9
        )


class TestSnapshots:
    """Tests for snapshot synthesis."""

    def test_shape(self, ula8, scenario):
        """X is M×T."""
        x = synthesize_snapshots(ula8, scenario, seed=0)
        assert (x.m, x.t) == (8, 200)

    def test_reproducible(self, ula8, scenario):
        """Same seed gives the same X."""
        a = synthesize_snapshots(ula8, scenario, seed=7)
        b = synthesize_snapshots(ula8, scenario, seed=7)
        assert np.array_equal(a.data, b.data)

    def test_seeds_differ(self, ula8, scenario):
        """Different seeds give different X."""
        a = synthesize_snapshots(ula8, scenario, seed=1)
        b = synthesize_snapshots(ula8, scenario, seed=2)
        assert not np.array_equal(a.data, b.data)

    def test_trial_seed_streams(self, ula8, scenario):
        """Trial streams are reproducible and distinct."""
        a = synthesize_snapshots(ula8, scenario, trial_seed(5, 0))
        b = synthesize_snapshots(ula8, scenario, trial_seed(5, 0))
        c = synthesize_snapshots(ula8, scenario, trial_seed(5, 1))
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_noiseless_lies_in_signal_subspace(self, ula8):
        """With σ² = 0, X lies in the span of A(θ)."""
        scenario = SourceScenario(doas=[-0.2, 0.5], noise_power=0.0, snapshots=30)
        x = synthesize_snapshots(ula8, scenario, seed=3)
        a = steering_matrix(ula8, scenario.doas)
        residual = x.data - a @ np.linalg.lstsq(a, x.data, rcond=None)[0]
        assert np.linalg.norm(residual) < 1e-10

    def test_requires_fewer_sources_than_sensors(self):
        """K >= M is rejected."""
        geom = ArrayGeometry.ula(2)
        scenario = SourceScenario(doas=[-0.3, 0.3], noise_power=0.1)
        with pytest.raises(DomainError):
            check_scenario(geom, scenario)


class TestCovariance:
    """Tests for exact and sample covariances."""

    def test_exact_is_hermitian(self, ula8, scenario):
        """R = Rᴴ."""
        r = exact_covariance(ula8, scenario)
        assert r.kind == "exact"
        assert_allclose(r.data, r.data.conj().T)

    def test_exact_noise_eigenvalues(self, ula8, scenario):
        """The M−K smallest eigenvalues of R equal σ²."""
        eigenvalues = exact_covariance(ula8, scenario).eigenvalues()
        assert_allclose(eigenvalues[:6], scenario.noise_power, atol=1e-10)
        assert eigenvalues[6] > scenario.noise_power

    def test_noise_power_estimate_exact(self, ula8, scenario):
        """estimate_noise_power recovers σ² from the exact R."""
        r = exact_covariance(ula8, scenario)
        assert estimate_noise_power(r, scenario.k) == pytest.approx(0.1, rel=1e-8)

    def test_noise_power_estimate_sample(self, ula8, scenario):
        """The estimate from R̂ is close to σ² at T=200."""
        x = synthesize_snapshots(ula8, scenario, seed=11)
        estimate = estimate_noise_power(sample_covariance(x), scenario.k)
        assert 0.07 < estimate < 0.13

    def test_sample_covariance(self):
        """R̂ = XXᴴ/T and is Hermitian."""
        x = SnapshotMatrix(data=np.array([[1.0, 1j], [2.0, 0.0]]))
        r = sample_covariance(x)
        assert r.kind == "sample"
        assert_allclose(r.data, np.array([[1.0, 1.0], [1.0, 2.0]]))

    def test_rejects_non_square(self):
        """Covariance matrices are square."""
        with pytest.raises(ValueError):
            CovarianceMatrix(data=np.zeros((2, 3)), kind="exact")

    def _relative_error(self, geometry, snapshots, seed):
        scenario = SourceScenario.from_degrees([2.37, 30.82], 10.0, snapshots=snapshots)
        exact = exact_covariance(geometry, scenario).data
        sample = sample_covariance(synthesize_snapshots(geometry, scenario, seed=seed)).data
        return np.linalg.norm(sample - exact) / np.linalg.norm(exact)

    def test_sample_converges_to_exact(self, ula8):
        """The Frobenius error of R̂ shrinks as T grows by decades."""
        errors = [self._relative_error(ula8, t, seed=5) for t in (100, 1_000, 10_000)]
        assert errors[0] > errors[1] > errors[2]

    def test_large_sample_close_to_exact(self, ula8):
        """At T = 10⁵, R̂ is within 5% of R."""
        assert self._relative_error(ula8, 100_000, seed=6) < 0.05
