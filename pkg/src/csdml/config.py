"""Experiment configuration.

An experiment is described by a YAML mapping or by a flat ``key=value``
file. In the flat form each value goes through ``yaml.safe_load``, so
``trials=100``, ``values=[0, 5, 10]`` and ``record_timing=true`` all get
their natural types. All angles are in degrees.
"""

from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from csdml.errors import DomainError
from csdml.models import (
    ArrayGeometry,
    BenchMethod,
    NewtonConfig,
    SblOptions,
    SourceScenario,
)
from csdml.recovery.grid import DEFAULT_GAMMA


class SweepVariable(str, Enum):
    """Quantity varied across an RMSE sweep."""

    SNR = "snr"
    SNAPSHOTS = "snapshots"
    GRID = "grid"


class ExperimentConfig(BaseModel):
    """Monte Carlo RMSE experiment."""

    name: str = Field("experiment", description="Label used in reports")
    geometry: str = Field("ula(8)", description="Array spec: ula(M), centered_ula(M) or positions")
    doas_deg: list[float] | None = Field(
        None, description="Fixed true DOAs in degrees (mutually exclusive with doa_intervals_deg)"
    )
    doa_intervals_deg: list[tuple[float, float]] | None = Field(
        None, description="Per-source intervals; each trial draws one DOA uniformly from each"
    )
    snr_db: float = Field(10.0, description="SNR in dB when not swept")
    snapshots: int = Field(200, ge=1, description="Snapshots T when not swept")
    grid_interval_deg: float | None = Field(
        2.0, gt=0.0, description="Grid interval r in degrees when not swept; None uses gamma"
    )
    gamma: float = Field(DEFAULT_GAMMA, gt=0.0, le=1.0, description="Regulation parameter γ")
    sweep: SweepVariable = Field(SweepVariable.SNR, description="Swept quantity")
    values: list[float] = Field(..., min_length=1, description="Sweep values")
    methods: list[BenchMethod] = Field(
        default_factory=lambda: list(BenchMethod), description="Estimators to compare"
    )
    trials: int = Field(100, ge=1, description="Monte Carlo trials per sweep value")
    seed: int = Field(0, ge=0, description="Base seed; trial streams derive from it")
    known_noise: bool = Field(True, description="Give M-SBL the true σ² instead of estimating it")
    include_references: bool = Field(True, description="Emit CRB and GLB reference rows")
    record_timing: bool = Field(False, description="Fill mean_time_s (breaks byte-identical output)")
    output: Path | None = Field(None, description="CSV output path; stdout when omitted")
    newton: NewtonConfig = Field(default_factory=NewtonConfig)
    sbl: SblOptions = Field(default_factory=SblOptions)

    model_config = {"extra": "forbid"}

    @field_validator("geometry")
    @classmethod
    def _check_geometry(cls, value: str) -> str:
        ArrayGeometry.from_spec(value)
        return value

    @field_validator("methods")
    @classmethod
    def _check_methods(cls, value: list[BenchMethod]) -> list[BenchMethod]:
        if not value:
            raise ValueError("at least one method is required")
        return list(dict.fromkeys(value))

    @model_validator(mode="after")
    def _check_sources(self) -> "ExperimentConfig":
        if (self.doas_deg is None) == (self.doa_intervals_deg is None):
            raise ValueError("give exactly one of doas_deg and doa_intervals_deg")
        if self.doa_intervals_deg is not None:
            bounds = sorted(self.doa_intervals_deg)
            for lo, hi in bounds:
                if not -90.0 < lo < hi < 90.0:
                    raise ValueError(f"DOA interval ({lo}, {hi}) must satisfy -90 < lo < hi < 90")
            for (_, hi), (lo, _) in zip(bounds, bounds[1:]):
                if lo <= hi:
                    raise ValueError("DOA intervals must not overlap")
            self.doa_intervals_deg = bounds
        if self.doas_deg is not None:
            SourceScenario.from_degrees(self.doas_deg, self.snr_db)
        if self.sweep is SweepVariable.SNAPSHOTS and any(v < 1 or v != int(v) for v in self.values):
            raise ValueError("snapshot sweep values must be positive integers")
        if self.sweep is SweepVariable.GRID and any(not 0 < v <= 30 for v in self.values):
            raise ValueError("grid sweep values must lie in (0, 30] degrees")
        return self

    @property
    def array(self) -> ArrayGeometry:
        return ArrayGeometry.from_spec(self.geometry)

    @property
    def k(self) -> int:
        if self.doas_deg is not None:
            return len(self.doas_deg)
        return len(self.doa_intervals_deg or [])

    @property
    def random_doas(self) -> bool:
        return self.doa_intervals_deg is not None

    def point(self, value: float) -> tuple[float, int, float | None]:
        """(SNR dB, T, r degrees or None) at one sweep value."""
        snr, t, r = self.snr_db, self.snapshots, self.grid_interval_deg
        if self.sweep is SweepVariable.SNR:
            snr = value
        elif self.sweep is SweepVariable.SNAPSHOTS:
            t = int(value)
        else:
            r = value
        return snr, t, r

    def scenario(self, value: float, rng: np.random.Generator) -> SourceScenario:
        """True scenario for one trial; random DOAs are drawn from ``rng``."""
        snr, t, _ = self.point(value)
        if self.doa_intervals_deg is not None:
            doas = [float(rng.uniform(lo, hi)) for lo, hi in self.doa_intervals_deg]
        else:
            doas = list(self.doas_deg or [])
        return SourceScenario.from_degrees(doas, snr, snapshots=t)


def parse_key_value(text: str) -> dict[str, Any]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    data: dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"line {number}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        data[key.strip()] = yaml.safe_load(value.strip()) if value.strip() else None
    return data


def load_config(path: Path | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Load an experiment from YAML or key=value, then apply overrides.

    Overrides with value None are ignored, so unset CLI flags never mask
    file values.
    """
    data: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text()
        if Path(path).suffix.lower() in (".yaml", ".yml"):
            loaded = yaml.safe_load(text) or {}
            if not isinstance(loaded, dict):
                raise DomainError(f"{path}: expected a mapping at top level")
            data.update(loaded)
        else:
            data.update(parse_key_value(text))
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig(**data)

