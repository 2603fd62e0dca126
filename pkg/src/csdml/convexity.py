"""Convex regions of the DML cost around the true DOAs.

The exact region Ω_R is the set of lattice cells where the Hessian is
positive semidefinite. The approximate region Ω_A comes either from the
criterion |a(ϑ_i)ᴴa(θ_i)|² ≥ 0.5 on every axis, or from a box of width
BW_0.5/2 per axis. Their overlap is summarized by

    IRR = (|Ω_R ∩ Ω_A| / |Ω_R|)^(1/K),   IAR = (|Ω_R ∩ Ω_A| / |Ω_A|)^(1/K).
"""

import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from numpy.typing import ArrayLike, NDArray

from csdml.array import (
    CovarianceMatrix,
    beampattern,
    derivative_matrix,
    exact_covariance,
    half_power_beamwidth,
    half_power_width,
    sample_covariance,
    steering_matrix,
    synthesize_snapshots,
    trial_seed,
)
from csdml.dml import MAX_CONDITION, condition_numbers, dml_hessian, projector_bundle
from csdml.errors import RegionError
from csdml.models import ApproxMode, ArrayGeometry, RegionScanSpec, SourceScenario

logger = logging.getLogger(__name__)

CRITERION_LEVEL = 0.5
SCAN_STEPS_PER_BEAMWIDTH = 40
CHUNK_SIZE = 4096

Cell = tuple[int, ...]


@dataclass(frozen=True)
class ConvexRegion:
    """Set of lattice cells, each cell an integer offset index per axis."""

    cells: frozenset[Cell]
    counts: tuple[int, ...]
    step: tuple[float, ...]
    center: tuple[float, ...]
    skipped: int = 0

    @property
    def measure(self) -> int:
        return len(self.cells)

    @property
    def k(self) -> int:
        return len(self.counts)

    def same_lattice(self, other: "ConvexRegion") -> bool:
        return (self.counts, self.step, self.center) == (other.counts, other.step, other.center)

    def __contains__(self, cell: object) -> bool:
        return cell in self.cells


@dataclass
class ConvexityCondition:
    """β_i = |a(ϑ_i)ᴴa(θ_i)|² for each source."""

    beta: NDArray[np.float64]

    @property
    def holds(self) -> bool:
        """True when every β_i reaches the 0.5 threshold."""
        return bool(np.all(self.beta >= CRITERION_LEVEL))


@dataclass
class ApproximationRatios:
    """Largest off-diagonal to diagonal magnitude ratio of BᴴA, DᴴA and DᴴD."""

    bha: float
    dha: float
    dhd: float


@dataclass
class RegionScan:
    """Per-cell Hessian data from one lattice scan."""

    spec: RegionScanSpec
    angles: NDArray[np.float64]
    lambda_min: NDArray[np.float64]
    valid: NDArray[np.bool_]
    in_exact: NDArray[np.bool_]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.lambda_min.shape)

    def region(self, mask: NDArray[np.bool_] | None = None) -> ConvexRegion:
        """ConvexRegion for ``mask`` (the exact region by default)."""
        mask = self.in_exact if mask is None else mask
        return _region_from_mask(self.spec, mask, skipped=int(np.count_nonzero(~self.valid)))


def _region_from_mask(spec: RegionScanSpec, mask: NDArray[np.bool_], skipped: int = 0) -> ConvexRegion:
    counts = np.asarray(spec.counts)
    cells = frozenset(tuple(int(v) for v in row) for row in np.argwhere(mask) - counts)
    return ConvexRegion(
        cells=cells,
        counts=spec.counts,
        step=tuple(spec.step),
        center=tuple(spec.center),
        skipped=skipped,
    )


def _as_covariance(
    geometry: ArrayGeometry,
    scenario: SourceScenario,
    covariance: CovarianceMatrix | None,
) -> CovarianceMatrix:
    return covariance if covariance is not None else exact_covariance(geometry, scenario)


def default_scan_spec(
    geometry: ArrayGeometry,
    doas: Sequence[float],
    half_width: float | None = None,
    step: float | None = None,
    psd_tolerance: float = 1e-8,
    include_second_order: bool = True,
) -> RegionScanSpec:
    """Scan of ±BW_0.5 around each DOA at a step of BW_0.5/40."""
    bw = half_power_beamwidth(geometry)
    half_width = half_width or bw
    step = step or bw / SCAN_STEPS_PER_BEAMWIDTH
    return RegionScanSpec(
        center=list(doas),
        half_width=[half_width] * len(doas),
        step=[step] * len(doas),
        psd_tolerance=psd_tolerance,
        include_second_order=include_second_order,
    )


def scan_region(
    geometry: ArrayGeometry, covariance: CovarianceMatrix, spec: RegionScanSpec
) -> RegionScan:
    """Evaluate λ_min(H) on every lattice cell.

    Cells outside (−90°, 90°) or with an ill-conditioned steering matrix are
    left invalid and never belong to the exact region.
    """
    k = spec.k
    axes = [spec.axis_offsets(i) for i in range(k)]
    offsets = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    shape = offsets.shape[:-1]
    angles = offsets.reshape(-1, k) + np.asarray(spec.center)

    lam = np.full(angles.shape[0], np.nan)
    norm = np.full(angles.shape[0], np.nan)
    candidates = np.flatnonzero(np.all(np.abs(angles) < math.pi / 2, axis=1))
    for start in range(0, candidates.size, CHUNK_SIZE):
        chunk = candidates[start : start + CHUNK_SIZE]
        chunk = chunk[condition_numbers(geometry, angles[chunk]) <= MAX_CONDITION]
        if chunk.size == 0:
            continue
        bundle = projector_bundle(geometry, angles[chunk])
        hessian = dml_hessian(bundle, covariance, spec.include_second_order)
        eig = np.linalg.eigvalsh(hessian)
        lam[chunk] = eig[:, 0]
        norm[chunk] = np.max(np.abs(eig), axis=1)

    valid = ~np.isnan(lam)
    in_exact = np.zeros_like(valid)
    in_exact[valid] = lam[valid] >= -spec.psd_tolerance * norm[valid]
    skipped = int(np.count_nonzero(~valid))
    if skipped:
        logger.debug("region scan skipped %d of %d cells", skipped, valid.size)
    return RegionScan(
        spec=spec,
        angles=angles.reshape(*shape, k),
        lambda_min=lam.reshape(shape),
        valid=valid.reshape(shape),
        in_exact=in_exact.reshape(shape),
    )


def exact_region(
    geometry: ArrayGeometry,
    scenario: SourceScenario,
    spec: RegionScanSpec,
    covariance: CovarianceMatrix | None = None,
) -> ConvexRegion:
    """Ω_R: cells where λ_min(H) ≥ −tol·‖H‖₂; uses the exact R unless one is given."""
    covariance = _as_covariance(geometry, scenario, covariance)
    return scan_region(geometry, covariance, spec).region()


def _approx_mask(geometry: ArrayGeometry, spec: RegionScanSpec, mode: ApproxMode) -> NDArray[np.bool_]:
    keep_per_axis = []
    quarter_beam = half_power_beamwidth(geometry) / 4 if mode is ApproxMode.HALF_BEAMWIDTH else 0.0
    for i in range(spec.k):
        offsets = spec.axis_offsets(i)
        inside = np.abs(spec.center[i] + offsets) < math.pi / 2
        if mode is ApproxMode.CRITERION:
            keep = beampattern(geometry, spec.center[i], offsets) >= CRITERION_LEVEL
        else:
            keep = np.abs(offsets) <= quarter_beam + 1e-12
        keep_per_axis.append(inside & keep)
    grids = np.meshgrid(*keep_per_axis, indexing="ij")
    return np.asarray(np.logical_and.reduce(grids))


def approx_region(
    geometry: ArrayGeometry,
    scenario: SourceScenario,
    spec: RegionScanSpec,
    mode: ApproxMode | str = ApproxMode.CRITERION,
) -> ConvexRegion:
    """Ω_A on the same lattice as ``exact_region``.

    β_i depends on ϑ_i alone, so the region is a product of per-axis sets.
    ``scenario`` is accepted for symmetry with ``exact_region``; neither mode
    depends on the source powers or the noise.
    """
    return _region_from_mask(spec, _approx_mask(geometry, spec, ApproxMode(mode)))


def irr_iar(exact: ConvexRegion, approx: ConvexRegion, k: int | None = None) -> tuple[float, float]:
    """Intersection-to-real and intersection-to-approximate ratios, K-th roots."""
    if not exact.same_lattice(approx):
        raise RegionError("regions were scanned on different lattices")
    k = k or exact.k
    if exact.measure == 0:
        raise RegionError("exact convex region is empty")
    if approx.measure == 0:
        raise RegionError("approximate convex region is empty")
    overlap = len(exact.cells & approx.cells)
    irr = (overlap / exact.measure) ** (1.0 / k)
    iar = (overlap / approx.measure) ** (1.0 / k)
    return irr, iar


def convexity_condition(
    geometry: ArrayGeometry, theta: ArrayLike, vartheta: ArrayLike
) -> ConvexityCondition:
    a = steering_matrix(geometry, theta)
    b = steering_matrix(geometry, vartheta)
    beta = np.abs(np.sum(b.conj() * a, axis=0)) ** 2
    return ConvexityCondition(beta=np.asarray(beta))


def criterion_half_width(geometry: ArrayGeometry, theta_i: float) -> float:
    """Positive offset δ at which |a(θ_i + δ)ᴴa(θ_i)|² falls to 0.5, in radians."""
    return half_power_width(geometry, look=theta_i, level=CRITERION_LEVEL)


def _offdiagonal_ratio(x: NDArray[np.complex128]) -> float:
    magnitude = np.abs(x)
    k = magnitude.shape[0]
    if k < 2:
        return 0.0
    diagonal = np.diag(magnitude)
    off = magnitude[~np.eye(k, dtype=bool)].reshape(k, k - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = off / diagonal[:, None]
    return float(np.max(np.where(np.isnan(ratios), np.inf, ratios)))


def approximation_ratios(
    geometry: ArrayGeometry, theta: ArrayLike, vartheta: ArrayLike
) -> ApproximationRatios:
    """How far BᴴA, DᴴA and DᴴD are from diagonal at ϑ."""
    a = steering_matrix(geometry, theta)
    b = steering_matrix(geometry, vartheta)
    d = derivative_matrix(geometry, vartheta)
    return ApproximationRatios(
        bha=_offdiagonal_ratio(b.conj().T @ a),
        dha=_offdiagonal_ratio(d.conj().T @ a),
        dhd=_offdiagonal_ratio(d.conj().T @ d),
    )


def region_metrics(
    geometry: ArrayGeometry,
    scenario: SourceScenario,
    spec: RegionScanSpec,
    covariance: CovarianceMatrix | None = None,
    modes: Sequence[ApproxMode | str] = (ApproxMode.CRITERION,),
) -> dict[ApproxMode, tuple[float, float]]:
    """IRR and IAR for each approximation mode, sharing one exact scan."""
    exact = exact_region(geometry, scenario, spec, covariance)
    return {
        ApproxMode(mode): irr_iar(exact, approx_region(geometry, scenario, spec, mode))
        for mode in modes
    }


@dataclass
class RegionMap:
    """Exact and approximate membership of every scanned cell."""

    scan: RegionScan
    in_approx: NDArray[np.bool_]
    mode: ApproxMode

    def rows(self) -> Iterator[list[object]]:
        """CSV rows in lattice order: DOAs in degrees, λ_min, in_exact, in_approx."""
        for index in np.ndindex(*self.scan.shape):
            doas = [math.degrees(v) for v in self.scan.angles[index]]
            lam = float(self.scan.lambda_min[index])
            yield [
                *doas,
                lam,
                int(self.scan.in_exact[index]),
                int(self.in_approx[index]),
            ]

    def header(self) -> list[str]:
        k = self.scan.spec.k
        return [f"vartheta_{i + 1}_deg" for i in range(k)] + ["lambda_min", "in_exact", "in_approx"]


def convexity_map(
    geometry: ArrayGeometry,
    scenario: SourceScenario,
    spec: RegionScanSpec,
    mode: ApproxMode | str = ApproxMode.CRITERION,
    covariance: CovarianceMatrix | None = None,
) -> RegionMap:
    mode = ApproxMode(mode)
    scan = scan_region(geometry, _as_covariance(geometry, scenario, covariance), spec)
    return RegionMap(scan=scan, in_approx=_approx_mask(geometry, spec, mode), mode=mode)


@dataclass
class MetricsRow:
    """IRR/IAR for one trial, or their means when ``trial`` is 'mean'."""

    m: int
    snr_db: float
    mode: ApproxMode
    trial: int | str
    irr: float
    iar: float

    def as_row(self) -> list[object]:
        return [self.m, self.snr_db, self.mode.value, self.trial, self.irr, self.iar]


@dataclass
class MetricsSweep:
    rows: list[MetricsRow] = field(default_factory=list)
    failures: int = 0

    header: ClassVar[list[str]] = ["m", "snr_db", "mode", "trial", "irr", "iar"]

    def means(self) -> list[MetricsRow]:
        return [row for row in self.rows if row.trial == "mean"]


def metrics_sweep(
    m_values: Sequence[int],
    snr_values: Sequence[float],
    doas_deg: Sequence[float],
    trials: int = 1,
    seed: int = 0,
    snapshots: int = 200,
    modes: Sequence[ApproxMode | str] = (ApproxMode.CRITERION,),
    use_sample: bool = True,
    spacing: float = 0.5,
) -> MetricsSweep:
    """IRR/IAR over trials for every (M, SNR) pair.

    With ``use_sample`` the regions come from R̂ of fresh snapshots per
    trial; otherwise the exact R is used and a single trial is run.
    Trials whose regions are empty are counted as failures and left out of
    the means.
    """
    modes = [ApproxMode(mode) for mode in modes]
    n_trials = trials if use_sample else 1
    sweep = MetricsSweep()
    for m in m_values:
        geometry = ArrayGeometry.ula(m, spacing)
        for snr in snr_values:
            scenario = SourceScenario.from_degrees(list(doas_deg), snr, snapshots=snapshots)
            spec = default_scan_spec(geometry, scenario.doas)
            collected: dict[ApproxMode, list[tuple[float, float]]] = {mode: [] for mode in modes}
            for trial in range(n_trials):
                covariance = None
                if use_sample:
                    x = synthesize_snapshots(geometry, scenario, trial_seed(seed, trial))
                    covariance = sample_covariance(x)
                try:
                    metrics = region_metrics(geometry, scenario, spec, covariance, modes)
                except RegionError as e:
                    logger.warning("M=%d SNR=%g trial %d: %s", m, snr, trial, e)
                    sweep.failures += 1
                    continue
                for mode, (irr, iar) in metrics.items():
                    collected[mode].append((irr, iar))
                    sweep.rows.append(MetricsRow(m, snr, mode, trial, irr, iar))
            for mode, values in collected.items():
                if values:
                    irr_mean, iar_mean = np.mean(np.asarray(values), axis=0)
                    sweep.rows.append(
                        MetricsRow(m, snr, mode, "mean", float(irr_mean), float(iar_mean))
                    )
            logger.info("convexity metrics done for M=%d, SNR=%g dB", m, snr)
    return sweep
