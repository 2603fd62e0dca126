"""Array manifold, signal synthesis and covariance matrices.

The steering vector of a sensor at position d (in wavelengths) is

    a_m(θ) = exp(-j 2π sin(θ) d_m) / sqrt(M)

so every steering vector has unit norm. Derivatives are taken with
respect to θ in radians.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import bisect

from csdml.errors import DomainError
from csdml.models import ArrayGeometry, SourceScenario

logger = logging.getLogger(__name__)

ComplexArray = NDArray[np.complex128]

BEAMWIDTH_XTOL = 1e-10


@dataclass
class SnapshotMatrix:
    """M×T array output, column t is x(t)."""

    data: ComplexArray

    def __post_init__(self) -> None:
        self.data = np.atleast_2d(np.asarray(self.data, dtype=complex))

    @property
    def m(self) -> int:
        return int(self.data.shape[0])

    @property
    def t(self) -> int:
        return int(self.data.shape[1])


@dataclass
class CovarianceMatrix:
    """Hermitian M×M array covariance, either exact (R) or estimated (R̂)."""

    data: ComplexArray
    kind: Literal["exact", "sample"]

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim != 2 or self.data.shape[0] != self.data.shape[1]:
            raise ValueError(f"covariance must be square, got shape {self.data.shape}")

    @property
    def m(self) -> int:
        return int(self.data.shape[0])

    def eigenvalues(self) -> NDArray[np.float64]:
        """Eigenvalues in ascending order."""
        return np.asarray(scipy.linalg.eigh(self.data, eigvals_only=True))


def check_angles(angles: ArrayLike) -> NDArray[np.float64]:
    """Return ``angles`` as a float array, rejecting anything outside (-π/2, π/2)."""
    values = np.asarray(angles, dtype=float)
    if not np.all(np.isfinite(values)) or np.any(np.abs(values) >= math.pi / 2):
        raise DomainError(f"angles must lie in (-90°, 90°), got {np.degrees(values)}°")
    return values


def check_scenario(geometry: ArrayGeometry, scenario: SourceScenario) -> None:
    """Require fewer sources than sensors."""
    if scenario.k >= geometry.m:
        raise DomainError(f"need K < M, got K={scenario.k} with M={geometry.m}")


def array_manifold(geometry: ArrayGeometry, angles: ArrayLike) -> ComplexArray:
    """Steering vectors for ``angles`` without domain checks.

    Used for the recovery dictionary, whose grid includes ±90°. The angle
    axis may carry leading batch dimensions: shape (..., K) -> (..., M, K).
    """
    theta = np.asarray(angles, dtype=float)
    d = geometry.positions_array
    phase = -2j * np.pi * d[:, None] * np.sin(theta)[..., None, :]
    return np.exp(phase) / math.sqrt(geometry.m)


def steering_matrix(geometry: ArrayGeometry, angles: ArrayLike) -> ComplexArray:
    """A(θ) = [a(θ_1), ..., a(θ_K)]; accepts leading batch axes."""
    return array_manifold(geometry, check_angles(angles))


def derivative_matrix(geometry: ArrayGeometry, angles: ArrayLike) -> ComplexArray:
    """D = [a'(θ_1), ..., a'(θ_K)]."""
    theta = check_angles(angles)
    d = geometry.positions_array[:, None]
    factor = -2j * np.pi * d * np.cos(theta)[..., None, :]
    return factor * array_manifold(geometry, theta)


def second_derivative_matrix(geometry: ArrayGeometry, angles: ArrayLike) -> ComplexArray:
    """F = [a''(θ_1), ..., a''(θ_K)].

    Differentiating a'_m = -j2π cos(θ) d_m a_m once more gives
    a''_m = (j2π sin(θ) d_m + (-j2π cos(θ) d_m)²) a_m.
    """
    theta = check_angles(angles)
    d = geometry.positions_array[:, None]
    sin = np.sin(theta)[..., None, :]
    cos = np.cos(theta)[..., None, :]
    factor = 2j * np.pi * sin * d + (-2j * np.pi * cos * d) ** 2
    return factor * array_manifold(geometry, theta)


def steering_vector(geometry: ArrayGeometry, angle: float) -> ComplexArray:
    """a(θ) for a single angle."""
    return steering_matrix(geometry, [angle])[:, 0]


def steering_derivative(geometry: ArrayGeometry, angle: float) -> ComplexArray:
    """a'(θ) for a single angle."""
    return derivative_matrix(geometry, [angle])[:, 0]


def steering_second_derivative(geometry: ArrayGeometry, angle: float) -> ComplexArray:
    """a''(θ) for a single angle."""
    return second_derivative_matrix(geometry, [angle])[:, 0]


def trial_seed(base_seed: int, trial: int) -> np.random.SeedSequence:
    """Independent stream for Monte Carlo trial ``trial``.

    The stream depends only on the base seed and the trial index, so the
    same trial sees the same draws at every sweep value.
    """
    return np.random.SeedSequence(base_seed, spawn_key=(trial,))


def synthesize_snapshots(
    geometry: ArrayGeometry,
    scenario: SourceScenario,
    seed: int | np.random.SeedSequence | np.random.Generator | None = None,
) -> SnapshotMatrix:
    """Draw X = A(θ)S + N.

    Signals are circular complex Gaussian with covariance diag(powers) and
    the noise is CN(0, σ²I). Real and imaginary parts each carry half the
    variance. The signal block is drawn before the noise block, so a given
    seed always reproduces the same X.
    """
    check_scenario(geometry, scenario)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k, t, m = scenario.k, scenario.snapshots, geometry.m

    scale = np.sqrt(np.asarray(scenario.powers, dtype=float) / 2.0)[:, None]
    signals = scale * (rng.standard_normal((k, t)) + 1j * rng.standard_normal((k, t)))
    noise = math.sqrt(scenario.noise_power / 2.0) * (
        rng.standard_normal((m, t)) + 1j * rng.standard_normal((m, t))
    )

    a = steering_matrix(geometry, scenario.doas) if k else np.zeros((m, 0), dtype=complex)
    return SnapshotMatrix(data=a @ signals + noise)


def sample_covariance(x: SnapshotMatrix) -> CovarianceMatrix:
    """R̂ = (1/T) Σ_t x(t) x(t)ᴴ."""
    r = x.data @ x.data.conj().T / x.t
    return CovarianceMatrix(data=(r + r.conj().T) / 2, kind="sample")


def exact_covariance(geometry: ArrayGeometry, scenario: SourceScenario) -> CovarianceMatrix:
    """R = AΣAᴴ + σ²I."""
    check_scenario(geometry, scenario)
    r = scenario.noise_power * np.eye(geometry.m, dtype=complex)
    if scenario.k:
        a = steering_matrix(geometry, scenario.doas)
        r = r + a @ scenario.source_covariance @ a.conj().T
    return CovarianceMatrix(data=(r + r.conj().T) / 2, kind="exact")


def estimate_noise_power(covariance: CovarianceMatrix, k: int) -> float:
    """Mean of the M−K smallest eigenvalues of the covariance."""
    if not 0 <= k < covariance.m:
        raise DomainError(f"need 0 <= K < M, got K={k} with M={covariance.m}")
    eigenvalues = covariance.eigenvalues()
    return float(max(np.mean(eigenvalues[: covariance.m - k]), 0.0))


def beampattern(geometry: ArrayGeometry, look: float, offsets: ArrayLike) -> NDArray[np.float64]:
    """Normalized power |a(look + δ)ᴴ a(look)|² for each offset δ."""
    delta = np.atleast_1d(np.asarray(offsets, dtype=float))
    steered = array_manifold(geometry, look + delta)
    reference = array_manifold(geometry, [look])[:, 0]
    return np.asarray(np.abs(steered.conj().T @ reference) ** 2)


def half_power_width(geometry: ArrayGeometry, look: float = 0.0, level: float = 0.5) -> float:
    """Offset δ > 0 at which the beampattern around ``look`` first drops to ``level``.

    The crossing is bracketed by stepping outward, then refined by bisection.
    """
    limit = math.pi / 2 - abs(look)

    def excess(delta: float) -> float:
        return float(beampattern(geometry, look, [delta])[0] - level)

    aperture = geometry.positions[-1] - geometry.positions[0]
    step = limit / (64 * max(geometry.m, math.ceil(4 * aperture)))
    lo, hi = 0.0, step
    while excess(hi) > 0:
        lo, hi = hi, hi + step
        if hi >= limit:
            raise DomainError(
                f"beampattern never drops to {level} within the visible region for "
                f"{geometry.describe()}"
            )
    return float(bisect(excess, lo, hi, xtol=BEAMWIDTH_XTOL))


def half_power_beamwidth(geometry: ArrayGeometry) -> float:
    """Full 3 dB beamwidth BW_0.5 at broadside, in radians."""
    width = 2.0 * half_power_width(geometry, 0.0)
    logger.debug("BW_0.5 = %.4f° for %s", math.degrees(width), geometry.describe())
    return width
