"""The two-stage CSDML estimator.

1. Build a grid with interval r = γ·BW_0.5/2 and its dictionary.
2. Reduce the snapshots to K columns by SVD and run sparse recovery.
3. Start Newton refinement of the DML cost at the coarse DOAs.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray

from csdml.array import (
    CovarianceMatrix,
    SnapshotMatrix,
    sample_covariance,
)
from csdml.dml import NewtonDiagnostics, newton_refine
from csdml.errors import DomainError, RecoveryError
from csdml.models import ArrayGeometry, NewtonConfig, RecoveryMethodName, SblOptions
from csdml.recovery import (
    AngleGrid,
    Dictionary,
    RecoveryResult,
    build_dictionary,
    build_grid,
    build_grid_explicit,
    get_recovery_method,
    svd_reduce,
)
from csdml.recovery.grid import DEFAULT_GAMMA

logger = logging.getLogger(__name__)


def _spread(doas: NDArray[np.float64], step: float, bound: float) -> NDArray[np.float64]:
    """Sort and push apart DOAs closer than ``step``, staying inside ±bound."""
    out = np.sort(doas)
    for i in range(1, out.size):
        out[i] = max(out[i], out[i - 1] + step)
    if out.size and out[-1] > bound:
        out[-1] = bound
        for i in range(out.size - 2, -1, -1):
            out[i] = min(out[i], out[i + 1] - step)
    return out


@dataclass
class CSDMLResult:
    """Refined DOAs together with everything the two stages produced."""

    doas: NDArray[np.float64]
    coarse: RecoveryResult
    newton: NewtonDiagnostics
    grid: AngleGrid
    method: RecoveryMethodName
    initial: NDArray[np.float64]
    flags: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def doas_deg(self) -> list[float]:
        return [math.degrees(d) for d in self.doas]

    @property
    def coarse_doas_deg(self) -> list[float]:
        return self.coarse.coarse_doas_deg

    def to_dict(self) -> dict[str, Any]:
        """Plain-JSON summary for CLI output."""
        return {
            "method": self.method.value,
            "grid_interval_deg": self.grid.interval_deg,
            "grid_points": self.grid.n,
            "coarse_doas_deg": self.coarse_doas_deg,
            "doas_deg": self.doas_deg,
            "iterations": self.newton.iterations,
            "converged": self.newton.converged,
            "objective": self.newton.objective,
            "gradient_norm": self.newton.gradient_norm,
            "pd_fallbacks": self.newton.pd_fallbacks,
            "step_halvings": self.newton.step_halvings,
            "flags": self.flags + self.coarse.flags,
            "timings_s": self.timings,
        }


class CSDMLEstimator:
    """CSDML for a fixed array, grid and recovery method.

    The grid and dictionary are built once and reused for every call, so a
    Monte Carlo loop should create one estimator and call ``estimate``.

    Example:
        >>> est = CSDMLEstimator(ArrayGeometry.ula(8), method="omp", r_degrees=2.0)
        >>> result = est.estimate(snapshots, k=2)
        >>> result.doas_deg
    """

    def __init__(
        self,
        geometry: ArrayGeometry,
        method: RecoveryMethodName | str = RecoveryMethodName.OMP,
        gamma: float = DEFAULT_GAMMA,
        r_degrees: float | None = None,
        newton: NewtonConfig | None = None,
        sbl_options: SblOptions | None = None,
    ):
        self.geometry = geometry
        self.method_name = RecoveryMethodName(method)
        self.newton = newton or NewtonConfig()
        self.sbl_options = sbl_options or SblOptions()
        self.grid = build_grid_explicit(r_degrees) if r_degrees else build_grid(geometry, gamma)
        self.dictionary: Dictionary = build_dictionary(geometry, self.grid)
        logger.debug(
            "CSDML estimator: %s, %s, r=%.4f°, N=%d",
            geometry.describe(),
            self.method_name.value,
            self.grid.interval_deg,
            self.grid.n,
        )

    def coarse(
        self,
        x: SnapshotMatrix,
        k: int,
        noise_variance: float | None = None,
        covariance: CovarianceMatrix | None = None,
    ) -> tuple[RecoveryResult, dict[str, float]]:
        """Run SVD reduction and sparse recovery; return the result and stage timings."""
        if not 1 <= k < self.geometry.m:
            raise DomainError(f"need 1 <= K < M, got K={k} with M={self.geometry.m}")
        if x.m != self.geometry.m:
            raise DomainError(f"snapshots have {x.m} rows, array has {self.geometry.m} sensors")

        start = time.perf_counter()
        y = svd_reduce(x, k)
        svd_time = time.perf_counter() - start

        options = self.sbl_options
        if noise_variance is not None and options.noise_variance is None:
            options = options.model_copy(update={"noise_variance": noise_variance})
        needs_noise = self.method_name is RecoveryMethodName.SBL and options.noise_variance is None
        if needs_noise and covariance is None:
            covariance = sample_covariance(x)

        method = get_recovery_method(self.method_name, options)
        start = time.perf_counter()
        result = method.recover(self.dictionary, y, k, covariance)
        recovery_time = time.perf_counter() - start
        return result, {"svd": svd_time, "recovery": recovery_time}

    def initial_guess(self, coarse: RecoveryResult, k: int) -> tuple[NDArray[np.float64], list[str]]:
        """Starting point for Newton built from the coarse DOAs.

        Grid endpoints are pulled inside (−90°, 90°) by r/4. The built-in
        methods always return K distinct atoms; a plugged-in method may
        return fewer, and the gap is filled with copies of the strongest DOA.
        Starts closer than r/4 are pushed r/4 apart, inward at the edges.
        """
        if not coarse.support:
            raise RecoveryError("coarse stage returned an empty support")
        flags: list[str] = []
        r = self.grid.interval
        bound = math.pi / 2 - r / 4
        doas = np.asarray(coarse.coarse_doas, dtype=float)
        if np.any(np.abs(doas) > bound):
            flags.append("edge-init")
            doas = np.clip(doas, -bound, bound)

        if doas.size < k:
            flags.append("short-support")
            strength = np.linalg.norm(coarse.coefficients, axis=1)
            strongest = float(doas[int(np.argmax(strength))])
            doas = np.concatenate([doas, np.full(k - doas.size, strongest)])
            logger.warning(
                "coarse stage found %d of %d DOAs; spreading copies of %.3f°",
                coarse.coarse_doas.size,
                k,
                math.degrees(strongest),
            )

        spread = _spread(doas, r / 4, bound)
        if "short-support" not in flags and not np.array_equal(spread, np.sort(doas)):
            flags.append("coincident-init")
        return spread, flags

    def refine(
        self,
        covariance: CovarianceMatrix,
        coarse: RecoveryResult,
        k: int,
    ) -> tuple[NDArray[np.float64], NewtonDiagnostics, NDArray[np.float64], list[str]]:
        """Newton refinement of the DML cost, started at the coarse DOAs."""
        init, flags = self.initial_guess(coarse, k)
        doas, diagnostics = newton_refine(self.geometry, covariance, init, self.newton)
        return doas, diagnostics, init, flags

    def estimate(
        self, x: SnapshotMatrix, k: int, noise_variance: float | None = None
    ) -> CSDMLResult:
        """Run both stages on the snapshots ``x``."""
        covariance = sample_covariance(x)
        coarse, timings = self.coarse(x, k, noise_variance, covariance)

        start = time.perf_counter()
        doas, diagnostics, init, flags = self.refine(covariance, coarse, k)
        timings["newton"] = time.perf_counter() - start

        if not diagnostics.converged:
            flags.append("newton-not-converged")
        return CSDMLResult(
            doas=doas,
            coarse=coarse,
            newton=diagnostics,
            grid=self.grid,
            method=self.method_name,
            initial=init,
            flags=flags,
            timings=timings,
        )


def csdml(
    x: SnapshotMatrix,
    geometry: ArrayGeometry,
    k: int,
    method: RecoveryMethodName | str = RecoveryMethodName.OMP,
    gamma: float = DEFAULT_GAMMA,
    config: NewtonConfig | None = None,
    r_degrees: float | None = None,
    sbl_options: SblOptions | None = None,
    noise_variance: float | None = None,
) -> CSDMLResult:
    """One-shot CSDML; builds an estimator and runs it once."""
    estimator = CSDMLEstimator(
        geometry,
        method=method,
        gamma=gamma,
        r_degrees=r_degrees,
        newton=config,
        sbl_options=sbl_options,
    )
    return estimator.estimate(x, k, noise_variance)
