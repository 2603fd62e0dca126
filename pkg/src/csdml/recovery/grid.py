"""Angle grids, dictionaries and SVD reduction for the coarse stage."""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from csdml.array import ComplexArray, SnapshotMatrix, array_manifold, half_power_beamwidth
from csdml.errors import DomainError
from csdml.models import ArrayGeometry

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 0.5
MAX_INTERVAL_DEG = 30.0


@dataclass
class AngleGrid:
    """Uniform grid {-90°, -90° + r, ..., 90°} in radians."""

    angles: NDArray[np.float64]
    interval: float
    gamma: float | None = None

    @property
    def n(self) -> int:
        return int(self.angles.size)

    @property
    def interval_deg(self) -> float:
        return math.degrees(self.interval)

    def nearest_index(self, angle: float) -> int:
        """Index of the grid point closest to ``angle``; ties go to the lower point."""
        upper = int(np.searchsorted(self.angles, angle))
        if upper <= 0:
            return 0
        if upper >= self.n:
            return self.n - 1
        lower = upper - 1
        if angle - self.angles[lower] <= self.angles[upper] - angle:
            return lower
        return upper


@dataclass
class Dictionary:
    """Overcomplete manifold Ψ = [a(Θ_1), ..., a(Θ_N)]."""

    psi: ComplexArray
    grid: AngleGrid


def _uniform_grid(interval: float, gamma: float | None) -> AngleGrid:
    # Snap the interval down so that 180° is an integer number of steps.
    steps = math.ceil(math.pi / interval - 1e-9)
    angles = np.linspace(-math.pi / 2, math.pi / 2, steps + 1)
    return AngleGrid(angles=angles, interval=math.pi / steps, gamma=gamma)


def build_grid(geometry: ArrayGeometry, gamma: float = DEFAULT_GAMMA) -> AngleGrid:
    """Grid whose interval is r = γ·BW_0.5/2, snapped down to divide 180°."""
    if not 0 < gamma <= 1:
        raise DomainError(f"gamma must lie in (0, 1], got {gamma}")
    interval = gamma * half_power_beamwidth(geometry) / 2
    grid = _uniform_grid(interval, gamma)
    logger.debug(
        "grid for gamma=%.3f: r=%.4f° (unsnapped %.4f°), N=%d",
        gamma,
        grid.interval_deg,
        math.degrees(interval),
        grid.n,
    )
    return grid


def build_grid_explicit(r_degrees: float) -> AngleGrid:
    """Grid with a caller-chosen interval in degrees.

    An interval that does not divide 180° is snapped down, with a warning.
    """
    if not 0 < r_degrees <= MAX_INTERVAL_DEG:
        raise DomainError(f"grid interval must lie in (0°, {MAX_INTERVAL_DEG}°], got {r_degrees}°")
    grid = _uniform_grid(math.radians(r_degrees), None)
    if not math.isclose(grid.interval_deg, r_degrees, rel_tol=1e-9):
        logger.warning(
            "grid interval %g° does not divide 180°; using %.4f° (N=%d)",
            r_degrees,
            grid.interval_deg,
            grid.n,
        )
    return grid


def grid_gamma(geometry: ArrayGeometry, r_degrees: float) -> float:
    """Regulation parameter equivalent to an explicit interval, γ = 2r/BW_0.5."""
    return 2 * math.radians(r_degrees) / half_power_beamwidth(geometry)


def build_dictionary(geometry: ArrayGeometry, grid: AngleGrid) -> Dictionary:
    """Evaluate the manifold on every grid angle."""
    if grid.n <= geometry.m:
        raise DomainError(
            f"dictionary must be overcomplete: N={grid.n} grid points for M={geometry.m} sensors"
        )
    return Dictionary(psi=array_manifold(geometry, grid.angles), grid=grid)


def svd_reduce(x: SnapshotMatrix, k: int) -> ComplexArray:
    """X_SV = X·V_K, keeping the K dominant right singular vectors."""
    if k < 1:
        raise DomainError(f"need K >= 1, got {k}")
    if x.t < k:
        raise DomainError(f"SVD reduction needs T >= K, got T={x.t}, K={k}")
    u, s, _ = scipy.linalg.svd(x.data, full_matrices=False)
    # X·V_K = U_K·S_K
    return np.asarray(u[:, :k] * s[:k])
