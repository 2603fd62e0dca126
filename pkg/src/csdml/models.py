"""Data models for arrays, scenarios and solver settings.

Angles are stored in radians. Constructors named ``from_degrees`` and the
``*_deg`` properties are the only places degrees appear.
"""

import math
import re
from enum import Enum

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, Field, field_validator, model_validator


class RecoveryMethodName(str, Enum):
    """Sparse recovery methods for the coarse stage."""

    OMP = "omp"
    SBL = "sbl"


class BenchMethod(str, Enum):
    """Estimators compared by the benchmark harness."""

    OMP = "omp"
    SBL = "sbl"
    CSDML_OMP = "csdml-omp"
    CSDML_SBL = "csdml-sbl"

    @property
    def recovery(self) -> RecoveryMethodName:
        """Coarse-stage method this estimator relies on."""
        if self in (BenchMethod.OMP, BenchMethod.CSDML_OMP):
            return RecoveryMethodName.OMP
        return RecoveryMethodName.SBL

    @property
    def refines(self) -> bool:
        """Whether the estimator runs the Newton refinement stage."""
        return self in (BenchMethod.CSDML_OMP, BenchMethod.CSDML_SBL)


class ApproxMode(str, Enum):
    """How the approximate convex region is formed."""

    CRITERION = "criterion"
    HALF_BEAMWIDTH = "half_beamwidth"


class ArrayGeometry(BaseModel):
    """A one-dimensional sensor array.

    Positions are in wavelengths, so the wavelength itself is 1.
    """

    positions: list[float] = Field(..., description="Sensor coordinates d_1..d_M in wavelengths")

    model_config = {"extra": "forbid", "frozen": True}

    @field_validator("positions")
    @classmethod
    def _check_positions(cls, value: list[float]) -> list[float]:
        if len(value) < 2:
            raise ValueError("an array needs at least 2 sensors")
        if not all(math.isfinite(p) for p in value):
            raise ValueError("sensor positions must be finite")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("sensor positions must be strictly increasing")
        return value

    @property
    def m(self) -> int:
        """Number of sensors."""
        return len(self.positions)

    @property
    def positions_array(self) -> NDArray[np.float64]:
        return np.asarray(self.positions, dtype=float)

    @property
    def is_uniform(self) -> bool:
        """True when the positions form an arithmetic progression."""
        gaps = np.diff(self.positions_array)
        return bool(np.allclose(gaps, gaps[0], rtol=1e-12, atol=1e-12))

    @classmethod
    def ula(cls, m: int, spacing: float = 0.5) -> "ArrayGeometry":
        """Uniform linear array with its first sensor at the origin."""
        if spacing <= 0:
            raise ValueError(f"ULA spacing must be positive, got {spacing}")
        return cls(positions=[spacing * k for k in range(m)])

    @classmethod
    def centered_ula(cls, m: int, spacing: float = 0.5) -> "ArrayGeometry":
        """Uniform linear array with its origin at the array midpoint."""
        offset = spacing * (m - 1) / 2
        return cls.ula(m, spacing).translated(-offset)

    def translated(self, offset: float) -> "ArrayGeometry":
        """Shift every sensor by ``offset`` wavelengths."""
        return ArrayGeometry(positions=[p + offset for p in self.positions])

    @classmethod
    def from_spec(cls, spec: "str | list[float] | ArrayGeometry") -> "ArrayGeometry":
        """Parse a geometry spec like 'ula(8)', 'centered_ula(12, 0.5)' or '0,0.5,1.5'."""
        if isinstance(spec, ArrayGeometry):
            return spec
        if isinstance(spec, list):
            return cls(positions=[float(p) for p in spec])

        text = spec.strip()
        match = re.fullmatch(
            r"(ula|centered_ula)\(\s*(\d+)\s*(?:,\s*([0-9.eE+-]+)\s*)?\)", text, re.IGNORECASE
        )
        if match:
            kind = match.group(1).lower()
            m = int(match.group(2))
            spacing = float(match.group(3)) if match.group(3) else 0.5
            return cls.centered_ula(m, spacing) if kind == "centered_ula" else cls.ula(m, spacing)

        try:
            positions = [float(p) for p in text.strip("[]").split(",") if p.strip()]
        except ValueError as e:
            raise ValueError(f"Cannot parse geometry: {spec}") from e
        return cls(positions=positions)

    def describe(self) -> str:
        if self.is_uniform:
            spacing = self.positions[1] - self.positions[0]
            return f"ULA M={self.m}, spacing={spacing:g}λ, d_1={self.positions[0]:g}λ"
        return f"array M={self.m}, positions={self.positions}"


class SourceScenario(BaseModel):
    """True sources, their powers, the noise level and the snapshot count."""

    doas: list[float] = Field(..., description="True DOAs in radians, strictly increasing")
    powers: list[float] = Field(
        default_factory=list, description="Source powers (diagonal of Σ); default all ones"
    )
    noise_power: float = Field(..., ge=0.0, description="Noise power σ²")
    snapshots: int = Field(200, ge=1, description="Number of snapshots T")

    model_config = {"extra": "forbid"}

    @field_validator("doas")
    @classmethod
    def _check_doas(cls, value: list[float]) -> list[float]:
        for theta in value:
            if not (math.isfinite(theta) and abs(theta) < math.pi / 2):
                raise ValueError(f"DOA {theta} rad is outside (-pi/2, pi/2)")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("DOAs must be strictly increasing")
        return value

    @model_validator(mode="after")
    def _fill_powers(self) -> "SourceScenario":
        if not self.powers:
            self.powers = [1.0] * len(self.doas)
        if len(self.powers) != len(self.doas):
            raise ValueError(
                f"got {len(self.powers)} powers for {len(self.doas)} sources"
            )
        if any(p <= 0 for p in self.powers):
            raise ValueError("source powers must be positive")
        return self

    @classmethod
    def from_degrees(
        cls,
        doas_deg: list[float],
        snr_db: float,
        snapshots: int = 200,
        powers: list[float] | None = None,
    ) -> "SourceScenario":
        """Build a scenario from DOAs in degrees and an SNR in dB.

        The noise power is 10^(-SNR/10), so SNR is exact for unit-power sources.
        """
        return cls(
            doas=[math.radians(d) for d in doas_deg],
            powers=list(powers) if powers else [],
            noise_power=10.0 ** (-snr_db / 10.0),
            snapshots=snapshots,
        )

    @property
    def k(self) -> int:
        """Number of sources."""
        return len(self.doas)

    @property
    def doas_array(self) -> NDArray[np.float64]:
        return np.asarray(self.doas, dtype=float)

    @property
    def doas_deg(self) -> list[float]:
        return [math.degrees(d) for d in self.doas]

    @property
    def source_covariance(self) -> NDArray[np.float64]:
        """Σ = diag(powers); sources are non-coherent."""
        return np.diag(np.asarray(self.powers, dtype=float))

    @property
    def snr_db(self) -> list[float]:
        """Per-source SNR in dB (inf when noiseless)."""
        if self.noise_power == 0:
            return [math.inf] * self.k
        return [10.0 * math.log10(p / self.noise_power) for p in self.powers]

    def with_updates(self, **changes: object) -> "SourceScenario":
        """Copy with some fields replaced, re-validated."""
        data = self.model_dump()
        data.update(changes)
        return SourceScenario(**data)


class NewtonConfig(BaseModel):
    """Settings for the safeguarded Newton refinement."""

    tol: float = Field(1e-8, gt=0.0, description="Step-norm convergence threshold τ (rad)")
    max_iters: int = Field(50, ge=1, description="Maximum Newton iterations")
    damping: float | None = Field(
        None, gt=0.0, description="Eigenvalue floor ε; default 1e-12·trace(R)"
    )
    max_halvings: int = Field(10, ge=0, description="Step halvings allowed per iteration")

    model_config = {"extra": "forbid"}


class SblOptions(BaseModel):
    """Settings for M-SBL."""

    noise_variance: float | None = Field(
        None, ge=0.0, description="Known σ²; estimated from the data when omitted"
    )
    max_iters: int = Field(200, ge=1, description="Maximum EM iterations")
    tol: float = Field(1e-4, gt=0.0, description="Relative hyperparameter change to stop at")

    model_config = {"extra": "forbid"}


class RegionScanSpec(BaseModel):
    """Lattice of candidate DOA vectors scanned around the true DOAs."""

    center: list[float] = Field(..., description="True DOAs θ in radians")
    half_width: list[float] = Field(..., description="Per-axis scan half-width (rad)")
    step: list[float] = Field(..., description="Per-axis lattice step (rad)")
    psd_tolerance: float = Field(1e-8, ge=0.0, description="Relative eigenvalue tolerance")
    include_second_order: bool = Field(
        True, description="Include the a''-term of the Hessian in the exact scan"
    )

    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def _check_axes(self) -> "RegionScanSpec":
        k = len(self.center)
        if k == 0:
            raise ValueError("scan needs at least one axis")
        if len(self.half_width) != k or len(self.step) != k:
            raise ValueError("center, half_width and step must have the same length")
        for h, s in zip(self.half_width, self.step):
            if s <= 0:
                raise ValueError("scan step must be positive")
            if h < s:
                raise ValueError("scan half-width must be at least one step")
        return self

    @property
    def k(self) -> int:
        return len(self.center)

    @property
    def counts(self) -> tuple[int, ...]:
        """Lattice half-count per axis; axis i has 2*counts[i] + 1 points."""
        return tuple(int(math.floor(h / s + 1e-9)) for h, s in zip(self.half_width, self.step))

    def axis_offsets(self, axis: int) -> NDArray[np.float64]:
        n = self.counts[axis]
        return np.arange(-n, n + 1, dtype=float) * self.step[axis]
