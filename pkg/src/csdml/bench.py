"""Monte Carlo benchmark harness: RMSE sweeps, reference bounds and timing.

Every trial synthesizes one snapshot matrix and runs every method on it.
Sparse recovery runs once per trial and recovery method; the on-grid
estimate and the CSDML refinement both start from that result.
"""

import logging
import math
import time
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from rich.console import Console
from rich.table import Table

from csdml.array import sample_covariance, synthesize_snapshots, trial_seed
from csdml.config import ExperimentConfig
from csdml.dml import projector_bundle
from csdml.errors import CSDMLError, DomainError, IllConditionedError
from csdml.estimator import CSDMLEstimator
from csdml.models import ArrayGeometry, BenchMethod, RecoveryMethodName, SourceScenario
from csdml.recovery import AngleGrid, RecoveryResult

logger = logging.getLogger(__name__)

console = Console(stderr=True)

SWEEP_HEADER = ["sweep_var", "sweep_value", "method", "rmse_deg", "mean_time_s", "failures", "trials"]
TIMING_HEADER = ["sweep_var", "sweep_value", "stage", "mean_time_s", "trials"]
FAILURE_GRADIENT_NORM = 1e-3


def rmse(truths: Sequence[ArrayLike], estimates: Sequence[ArrayLike]) -> float:
    """sqrt(1/(N K) Σ_trials Σ_k (θ_k − θ̂_k)²) in degrees.

    Inputs are in radians; each truth/estimate pair is sorted before
    differencing.
    """
    if len(truths) != len(estimates):
        raise DomainError(f"{len(truths)} truths but {len(estimates)} estimates")
    if not truths:
        raise DomainError("need at least one trial")
    squared = []
    for truth, estimate in zip(truths, estimates):
        t = np.sort(np.atleast_1d(np.asarray(truth, dtype=float)))
        e = np.sort(np.atleast_1d(np.asarray(estimate, dtype=float)))
        if t.shape != e.shape:
            raise DomainError(f"truth has {t.size} DOAs, estimate has {e.size}")
        squared.append((t - e) ** 2)
    return math.degrees(math.sqrt(float(np.mean(np.concatenate(squared)))))


def glb_uniform(r_degrees: float) -> float:
    """Grid lower bound r/(2√3) for DOAs uniform within a grid cell, in degrees."""
    if r_degrees < 0:
        raise DomainError(f"grid interval must be non-negative, got {r_degrees}")
    return r_degrees / (2 * math.sqrt(3))


def glb_fixed(truths: ArrayLike, grid: AngleGrid) -> float:
    """RMS distance from each true DOA (radians) to its nearest grid point, in degrees."""
    theta = np.atleast_1d(np.asarray(truths, dtype=float))
    lo, hi = grid.angles[0], grid.angles[-1]
    if np.any(theta < lo) or np.any(theta > hi):
        raise DomainError("true DOAs must lie within the grid span")
    nearest = np.array([grid.angles[grid.nearest_index(float(t))] for t in theta])
    return math.degrees(math.sqrt(float(np.mean((theta - nearest) ** 2))))


def crb_matrix(geometry: ArrayGeometry, scenario: SourceScenario) -> np.ndarray:
    """Deterministic CRB (σ²/2T)·{Re[(DᴴP⊥D) ⊙ Σᵀ]}⁻¹ in rad²."""
    bundle = projector_bundle(geometry, scenario.doas)
    dpd = bundle.D.conj().T @ bundle.P_perp @ bundle.D
    information = np.real(dpd * scenario.source_covariance.T)
    try:
        inverse = np.linalg.inv(information)
    except np.linalg.LinAlgError as e:
        raise IllConditionedError("Fisher information matrix is singular") from e
    return np.asarray(scenario.noise_power / (2 * scenario.snapshots) * inverse)


def crb_rmse(geometry: ArrayGeometry, scenario: SourceScenario) -> float:
    """sqrt(tr(CRB)/K) in degrees."""
    crb = crb_matrix(geometry, scenario)
    return math.degrees(math.sqrt(max(float(np.trace(crb)), 0.0) / scenario.k))


@dataclass
class SweepRow:
    """One line of the sweep CSV."""

    sweep_var: str
    sweep_value: float
    method: str
    rmse_deg: float
    mean_time_s: float | None
    failures: int
    trials: int

    def as_row(self) -> list[object]:
        return [
            self.sweep_var,
            self.sweep_value,
            self.method,
            self.rmse_deg,
            self.mean_time_s,
            self.failures,
            self.trials,
        ]


@dataclass
class TimingRow:
    """One line of the timing CSV."""

    sweep_var: str
    sweep_value: float
    stage: str
    mean_time_s: float
    trials: int

    def as_row(self) -> list[object]:
        return [self.sweep_var, self.sweep_value, self.stage, self.mean_time_s, self.trials]


@dataclass
class ExperimentResult:
    """Rows of one sweep plus per-stage wall times."""

    config: ExperimentConfig
    rows: list[SweepRow] = field(default_factory=list)
    stage_times: dict[tuple[float, str], list[float]] = field(default_factory=dict)

    def method_rows(self) -> list[SweepRow]:
        return [r for r in self.rows if r.method not in ("CRB", "GLB")]

    def reference_rows(self) -> list[SweepRow]:
        return [r for r in self.rows if r.method in ("CRB", "GLB")]

    def row(self, value: float, method: str) -> SweepRow:
        for r in self.rows:
            if r.sweep_value == value and r.method == method:
                return r
        raise KeyError((value, method))

    def timing_rows(self) -> list[TimingRow]:
        return [
            TimingRow(
                self.config.sweep.value,
                value,
                stage,
                float(np.mean(times)),
                len(times),
            )
            for (value, stage), times in self.stage_times.items()
            if times
        ]

    def as_rows(self) -> list[list[object]]:
        return [r.as_row() for r in self.rows]

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.config.name,
            "config": self.config.model_dump(mode="json"),
            "rows": [dict(zip(SWEEP_HEADER, r.as_row())) for r in self.rows],
        }


@dataclass
class _Tally:
    truths: list[np.ndarray] = field(default_factory=list)
    estimates: list[np.ndarray] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    failures: int = 0


def _recovery_failed(result: RecoveryResult, k: int) -> bool:
    return len(result.support) < k


def _run_trial(
    config: ExperimentConfig,
    geometry: ArrayGeometry,
    value: float,
    trial: int,
    estimators: dict[RecoveryMethodName, CSDMLEstimator],
    tallies: dict[BenchMethod, _Tally],
    stage_times: dict[tuple[float, str], list[float]],
) -> SourceScenario:
    rng = np.random.default_rng(trial_seed(config.seed, trial))
    scenario = config.scenario(value, rng)
    x = synthesize_snapshots(geometry, scenario, rng)
    covariance = sample_covariance(x)
    k = scenario.k
    noise = scenario.noise_power if config.known_noise else None

    for name, estimator in estimators.items():
        users = [m for m in config.methods if m.recovery is name]
        try:
            coarse, timings = estimator.coarse(x, k, noise, covariance)
        except (CSDMLError, np.linalg.LinAlgError) as e:
            logger.warning("trial %d: %s recovery failed: %s", trial, name.value, e)
            for method in users:
                tallies[method].failures += 1
            continue
        stage_times[(value, name.value)].append(timings["recovery"])

        for method in users:
            tally = tallies[method]
            if _recovery_failed(coarse, k):
                tally.failures += 1
                continue
            if not method.refines:
                tally.truths.append(scenario.doas_array)
                tally.estimates.append(coarse.coarse_doas)
                tally.times.append(timings["recovery"])
                continue
            start = time.perf_counter()
            try:
                doas, diagnostics, _, _ = estimator.refine(covariance, coarse, k)
            except (CSDMLError, np.linalg.LinAlgError) as e:
                logger.warning("trial %d: %s refinement failed: %s", trial, method.value, e)
                tally.failures += 1
                continue
            newton_time = time.perf_counter() - start
            stage_times[(value, "dml")].append(newton_time)
            if not diagnostics.converged and diagnostics.gradient_norm > FAILURE_GRADIENT_NORM:
                tally.failures += 1
                continue
            tally.truths.append(scenario.doas_array)
            tally.estimates.append(doas)
            tally.times.append(timings["recovery"] + newton_time)
    return scenario


def run_sweep(config: ExperimentConfig) -> ExperimentResult:
    """Run every method at every sweep value over ``config.trials`` trials."""
    geometry = config.array
    if config.k >= geometry.m:
        raise DomainError(f"need K < M, got K={config.k} with M={geometry.m}")
    result = ExperimentResult(config=config)
    stage_times: dict[tuple[float, str], list[float]] = defaultdict(list)
    recovery_names = list(dict.fromkeys(m.recovery for m in config.methods))
    sweep_var = config.sweep.value

    for value in config.values:
        _, _, r_degrees = config.point(value)
        estimators = {
            name: CSDMLEstimator(
                geometry,
                method=name,
                gamma=config.gamma,
                r_degrees=r_degrees,
                newton=config.newton,
                sbl_options=config.sbl,
            )
            for name in recovery_names
        }
        grid = next(iter(estimators.values())).grid
        tallies = {method: _Tally() for method in config.methods}
        crb_variances = []

        for trial in range(config.trials):
            scenario = _run_trial(config, geometry, value, trial, estimators, tallies, stage_times)
            if config.include_references and (trial == 0 or config.random_doas):
                crb_variances.append(crb_rmse(geometry, scenario) ** 2)

        for method in config.methods:
            tally = tallies[method]
            error = rmse(tally.truths, tally.estimates) if tally.truths else math.nan
            mean_time = float(np.mean(tally.times)) if config.record_timing and tally.times else None
            result.rows.append(
                SweepRow(sweep_var, value, method.value, error, mean_time, tally.failures, config.trials)
            )

        if config.include_references:
            result.rows.append(
                SweepRow(
                    sweep_var,
                    value,
                    "CRB",
                    math.sqrt(float(np.mean(crb_variances))),
                    None,
                    0,
                    config.trials,
                )
            )
            if config.random_doas:
                glb = glb_uniform(grid.interval_deg)
            else:
                glb = glb_fixed([math.radians(d) for d in config.doas_deg or []], grid)
            result.rows.append(SweepRow(sweep_var, value, "GLB", glb, None, 0, config.trials))

        logger.info("%s=%g done (%d trials)", sweep_var, value, config.trials)

    result.stage_times = dict(stage_times)
    return result


def timing_table(config: ExperimentConfig) -> list[TimingRow]:
    """Mean wall time per stage (omp, sbl, dml) at each sweep value."""
    timed = config.model_copy(update={"record_timing": True, "include_references": False})
    return run_sweep(timed).timing_rows()


def print_sweep_report(result: ExperimentResult, out: Console | None = None) -> None:
    """Print a sweep as a rich table, one row per sweep value."""
    out = out or console
    config = result.config
    out.print()
    out.print(f"[bold]RMSE sweep: {config.name}[/bold]")
    out.print(
        f"[dim]{config.array.describe()}, {config.trials} trials, vary {config.sweep.value}[/dim]"
    )
    methods = list(dict.fromkeys(r.method for r in result.rows))
    table = Table(title="RMSE (degrees)")
    table.add_column(config.sweep.value, style="cyan", justify="right")
    for method in methods:
        table.add_column(method, justify="right")
    for value in config.values:
        cells = []
        for method in methods:
            row = result.row(value, method)
            text = "n/a" if math.isnan(row.rmse_deg) else f"{row.rmse_deg:.4f}"
            if row.failures:
                text += f" [red]({row.failures} failed)[/red]"
            cells.append(text)
        table.add_row(f"{value:g}", *cells)
    out.print(table)


def print_timing_report(rows: list[TimingRow], out: Console | None = None) -> None:
    out = out or console
    table = Table(title="Mean CPU time per stage (s)")
    table.add_column("sweep value", style="cyan", justify="right")
    table.add_column("stage")
    table.add_column("mean time", justify="right")
    table.add_column("runs", justify="right")
    for row in rows:
        table.add_row(f"{row.sweep_value:g}", row.stage, f"{row.mean_time_s:.3e}", str(row.trials))
    out.print(table)
