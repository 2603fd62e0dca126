"""Command-line interface for CSDML experiments.

All angles on the command line are in degrees.
"""

import logging
import math
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any

import click
import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from csdml.array import sample_covariance, synthesize_snapshots
from csdml.bench import (
    SWEEP_HEADER,
    TIMING_HEADER,
    crb_rmse,
    glb_fixed,
    print_sweep_report,
    print_timing_report,
    run_sweep,
    timing_table,
)
from csdml.config import ExperimentConfig, SweepVariable, load_config
from csdml.convexity import convexity_map, default_scan_spec, metrics_sweep
from csdml.errors import CSDMLError
from csdml.estimator import csdml
from csdml.models import ApproxMode, ArrayGeometry, NewtonConfig, RecoveryMethodName, SourceScenario
from csdml.recovery import build_grid_explicit
from csdml.writer import OutputError, write_csv

console = Console()
err_console = Console(stderr=True)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as e:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from e


def _intervals(text: str) -> list[tuple[float, float]]:
    """Parse '-3:3,27:33' into [(-3, 3), (27, 33)]."""
    pairs = []
    for part in text.replace(" ", "").split(","):
        lo, sep, hi = part.partition(":")
        if not sep:
            raise click.BadParameter(f"expected lo:hi intervals, got {text!r}")
        pairs.append((float(lo), float(hi)))
    return pairs


def _geometry(m: int, spec: str | None) -> ArrayGeometry:
    return ArrayGeometry.from_spec(spec) if spec else ArrayGeometry.ula(m)


@contextmanager
def _report_errors() -> Iterator[None]:
    try:
        yield
    except (CSDMLError, OutputError, ValueError) as e:
        err_console.print(f"[red]Error:[/red] {e}")
        raise SystemExit(1) from e


def scenario_options(f: Any) -> Any:
    """Array and source options shared by the single-scenario commands."""
    f = click.option("--snapshots", "-T", default=200, show_default=True, help="Snapshots T")(f)
    f = click.option("--snr", default=10.0, show_default=True, help="SNR in dB")(f)
    f = click.option(
        "--doas", default="2.37,30.82", show_default=True, help="True DOAs in degrees"
    )(f)
    f = click.option("--geometry", default=None, help="Array spec, e.g. 'ula(8)' or '0,0.5,1.5'")(f)
    f = click.option("--m", "m", default=8, show_default=True, help="Sensors of a half-wavelength ULA")(f)
    return f


@click.group()
@click.option("--verbose", "-v", count=True, help="-v for progress, -vv for solver detail")
@click.pass_context
def main(ctx: click.Context, verbose: int) -> None:
    """CSDML - off-grid DOA estimation with sparse recovery and DML refinement."""
    ctx.ensure_object(dict)
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )


@main.command("single-run")
@scenario_options
@click.option("--grid-interval", "-r", type=float, default=None, help="Grid interval r in degrees")
@click.option("--gamma", default=0.5, show_default=True, help="Regulation parameter γ (used without -r)")
@click.option(
    "--method",
    type=click.Choice([m.value for m in RecoveryMethodName]),
    default="omp",
    show_default=True,
)
@click.option("--seed", default=0, show_default=True, help="Random seed")
@click.option("--json", "as_json", is_flag=True, help="Output as JSON")
def single_run(
    m: int,
    geometry: str | None,
    doas: str,
    snr: float,
    snapshots: int,
    grid_interval: float | None,
    gamma: float,
    method: str,
    seed: int,
    as_json: bool,
) -> None:
    """Estimate DOAs once from synthetic snapshots.

    Examples:
        csdml single-run --doas 2.37,30.82 --snr 10 -r 2
        csdml single-run --m 12 --method sbl --json
    """
    with _report_errors():
        array = _geometry(m, geometry)
        scenario = SourceScenario.from_degrees(_floats(doas), snr, snapshots=snapshots)
        x = synthesize_snapshots(array, scenario, seed)
        result = csdml(
            x,
            array,
            scenario.k,
            method=method,
            gamma=gamma,
            r_degrees=grid_interval,
            config=NewtonConfig(),
            noise_variance=scenario.noise_power,
        )

    if as_json:
        payload = {"truth_deg": scenario.doas_deg, **result.to_dict()}
        console.print_json(data=payload)
        return

    def fmt(values: list[float]) -> str:
        return ", ".join(f"{v:.4f}°" for v in values)

    status = "[green]converged[/green]" if result.newton.converged else "[red]not converged[/red]"
    console.print(
        Panel(
            f"[bold]{array.describe()}[/bold]\n"
            f"[dim]SNR {snr:g} dB, T={snapshots}, grid r={result.grid.interval_deg:.4f}° "
            f"(N={result.grid.n}), {method}[/dim]\n\n"
            f"Truth:    {fmt(scenario.doas_deg)}\n"
            f"Coarse:   {fmt(result.coarse_doas_deg)}\n"
            f"Refined:  {fmt(result.doas_deg)}\n\n"
            f"Newton: {result.newton.iterations} iterations, {status}\n"
            f"Objective tr(P⊥R̂) = {result.newton.objective:.6g}, "
            f"|∇| = {result.newton.gradient_norm:.3g}",
            title="CSDML",
        )
    )
    for flag in result.flags + result.coarse.flags:
        console.print(f"[yellow]flag:[/yellow] {flag}")


def _sweep_overrides(**options: Any) -> dict[str, Any]:
    overrides = dict(options)
    if overrides.get("values") is not None:
        overrides["values"] = _floats(overrides["values"])
    if overrides.get("doas_deg") is not None:
        overrides["doas_deg"] = _floats(overrides["doas_deg"])
    if overrides.get("doa_intervals_deg") is not None:
        overrides["doa_intervals_deg"] = _intervals(overrides["doa_intervals_deg"])
    if overrides.get("methods") is not None:
        overrides["methods"] = [v for v in overrides["methods"].split(",") if v]
    if not overrides.get("record_timing"):
        overrides["record_timing"] = None
    return overrides


def sweep_options(f: Any) -> Any:
    """Options of the Monte Carlo commands; each overrides the config file."""
    options = [
        click.option("--out", "-o", type=click.Path(path_type=Path), default=None, help="CSV path (stdout if omitted)"),
        click.option("--record-timing", is_flag=True, help="Fill mean_time_s"),
        click.option("--seed", type=int, default=None, help="Base seed"),
        click.option("--trials", "-n", type=int, default=None, help="Monte Carlo trials"),
        click.option("--methods", default=None, help="Comma list of omp,sbl,csdml-omp,csdml-sbl"),
        click.option("--grid-interval", "-r", type=float, default=None, help="Grid interval r (deg)"),
        click.option("--snapshots", "-T", type=int, default=None, help="Snapshots T"),
        click.option("--snr", type=float, default=None, help="SNR in dB"),
        click.option("--doa-intervals", default=None, help="Random DOAs, e.g. '-3:3,27:33'"),
        click.option("--doas", default=None, help="Fixed DOAs in degrees"),
        click.option("--geometry", default=None, help="Array spec, e.g. 'ula(8)'"),
        click.option("--values", default=None, help="Comma list of sweep values"),
        click.option(
            "--vary",
            type=click.Choice([v.value for v in SweepVariable]),
            default=None,
            help="Swept quantity",
        ),
        click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), default=None, help="YAML or key=value experiment file"),
    ]
    for option in options:
        f = option(f)
    return f


def _load_sweep(
    config_path: Path | None,
    vary: str | None,
    values: str | None,
    geometry: str | None,
    doas: str | None,
    doa_intervals: str | None,
    snr: float | None,
    snapshots: int | None,
    grid_interval: float | None,
    methods: str | None,
    trials: int | None,
    seed: int | None,
    record_timing: bool,
    out: Path | None,
) -> ExperimentConfig:
    overrides = _sweep_overrides(
        sweep=vary,
        values=values,
        geometry=geometry,
        doas_deg=doas,
        doa_intervals_deg=doa_intervals,
        snr_db=snr,
        snapshots=snapshots,
        grid_interval_deg=grid_interval,
        methods=methods,
        trials=trials,
        seed=seed,
        record_timing=record_timing,
        output=out,
    )
    if config_path is None and doas is None and doa_intervals is None:
        overrides["doas_deg"] = [2.37, 30.82]
    return load_config(config_path, overrides)


@main.command("rmse-sweep")
@sweep_options
def rmse_sweep(**options: Any) -> None:
    """RMSE of every method across SNR, snapshots or grid interval.

    Examples:
        csdml rmse-sweep --vary snr --values 0,5,10,15,20 -r 2 -n 1000
        csdml rmse-sweep --config catalog/experiments/rmse_vs_grid.yaml -o out/grid.csv
    """
    with _report_errors():
        config = _load_sweep(**options)
        with err_console.status(f"Running {config.trials} trials x {len(config.values)} values..."):
            result = run_sweep(config)
        count = write_csv(config.output, SWEEP_HEADER, result.as_rows())
    print_sweep_report(result, err_console)
    if config.output:
        err_console.print(f"[green]Wrote {count} rows to {config.output}[/green]")


@main.command()
@sweep_options
def timing(**options: Any) -> None:
    """Mean wall time of the recovery and Newton stages.

    Example:
        csdml timing --vary grid --values 1,2,3,4 -n 50
    """
    with _report_errors():
        config = _load_sweep(**options)
        with err_console.status("Timing stages..."):
            rows = timing_table(config)
        count = write_csv(config.output, TIMING_HEADER, [r.as_row() for r in rows])
    print_timing_report(rows, err_console)
    if config.output:
        err_console.print(f"[green]Wrote {count} rows to {config.output}[/green]")


@main.command()
@scenario_options
@click.option("--grid-interval", "-r", type=float, default=2.0, show_default=True, help="Grid interval for the GLB (deg)")
@click.option("--json", "as_json", is_flag=True, help="Output as JSON")
def crb(
    m: int,
    geometry: str | None,
    doas: str,
    snr: float,
    snapshots: int,
    grid_interval: float,
    as_json: bool,
) -> None:
    """Cramér-Rao bound and grid lower bound for one scenario."""
    with _report_errors():
        array = _geometry(m, geometry)
        scenario = SourceScenario.from_degrees(_floats(doas), snr, snapshots=snapshots)
        bound = crb_rmse(array, scenario)
        glb = glb_fixed(scenario.doas, build_grid_explicit(grid_interval))

    if as_json:
        console.print_json(
            data={
                "geometry": array.describe(),
                "doas_deg": scenario.doas_deg,
                "snr_db": snr,
                "snapshots": snapshots,
                "crb_rmse_deg": bound,
                "grid_interval_deg": grid_interval,
                "glb_deg": glb,
            }
        )
        return

    table = Table(title=f"Bounds for {array.describe()}")
    table.add_column("Bound", style="cyan")
    table.add_column("RMSE (deg)", justify="right")
    table.add_row("CRB", f"{bound:.6f}")
    table.add_row(f"GLB (r={grid_interval:g}°)", f"{glb:.6f}")
    console.print(table)


@main.command("convexity-map")
@scenario_options
@click.option("--half-width", type=float, default=None, help="Scan half-width per axis (deg); default BW")
@click.option("--step", type=float, default=None, help="Scan step (deg); default BW/40")
@click.option(
    "--mode",
    type=click.Choice([m.value for m in ApproxMode]),
    default=ApproxMode.CRITERION.value,
    show_default=True,
)
@click.option("--sample", is_flag=True, help="Use R̂ from synthetic snapshots instead of the exact R")
@click.option("--seed", default=0, show_default=True, help="Seed for --sample")
@click.option("--first-order-only", is_flag=True, help="Drop the a''-term from the Hessian")
@click.option("--out", "-o", type=click.Path(path_type=Path), default=None, help="CSV path (stdout if omitted)")
def convexity_map_command(
    m: int,
    geometry: str | None,
    doas: str,
    snr: float,
    snapshots: int,
    half_width: float | None,
    step: float | None,
    mode: str,
    sample: bool,
    seed: int,
    first_order_only: bool,
    out: Path | None,
) -> None:
    """Scan the Hessian around the true DOAs and mark convex cells.

    Example:
        csdml convexity-map --doas=-7.5,7.5 --step 0.5 -o out/map.csv
    """
    with _report_errors():
        array = _geometry(m, geometry)
        scenario = SourceScenario.from_degrees(_floats(doas), snr, snapshots=snapshots)
        spec = default_scan_spec(
            array,
            scenario.doas,
            half_width=math.radians(half_width) if half_width else None,
            step=math.radians(step) if step else None,
            include_second_order=not first_order_only,
        )
        covariance = None
        if sample:
            covariance = sample_covariance(synthesize_snapshots(array, scenario, seed))
        region_map = convexity_map(array, scenario, spec, mode, covariance)
        count = write_csv(out, region_map.header(), region_map.rows())

    exact = int(np.count_nonzero(region_map.scan.in_exact))
    approx = int(np.count_nonzero(region_map.in_approx))
    err_console.print(
        f"[dim]{count} cells scanned: {exact} in the exact region, {approx} in the approximate region[/dim]"
    )


@main.command("convexity-metrics")
@click.option("--m-values", default="8", show_default=True, help="Comma list of sensor counts")
@click.option("--snr-values", default="10", show_default=True, help="Comma list of SNRs (dB)")
@click.option("--doas", default="-7.5,7.5", show_default=True, help="True DOAs in degrees")
@click.option("--snapshots", "-T", default=200, show_default=True)
@click.option("--trials", "-n", default=20, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--modes", default="criterion,half_beamwidth", show_default=True)
@click.option("--exact", is_flag=True, help="Use the exact R (one trial) instead of R̂")
@click.option("--out", "-o", type=click.Path(path_type=Path), default=None, help="CSV path (stdout if omitted)")
def convexity_metrics(
    m_values: str,
    snr_values: str,
    doas: str,
    snapshots: int,
    trials: int,
    seed: int,
    modes: str,
    exact: bool,
    out: Path | None,
) -> None:
    """IRR and IAR of the approximate convex region across M and SNR.

    Example:
        csdml convexity-metrics --m-values 8,10,12,14 --doas=-10,10 -n 100
    """
    with _report_errors():
        with err_console.status("Scanning convex regions..."):
            sweep = metrics_sweep(
                [int(v) for v in _floats(m_values)],
                _floats(snr_values),
                _floats(doas),
                trials=trials,
                seed=seed,
                snapshots=snapshots,
                modes=[v for v in modes.split(",") if v],
                use_sample=not exact,
            )
        write_csv(out, sweep.header, [row.as_row() for row in sweep.rows])

    table = Table(title="Mean IRR / IAR")
    table.add_column("M", justify="right", style="cyan")
    table.add_column("SNR (dB)", justify="right")
    table.add_column("Mode")
    table.add_column("IRR", justify="right")
    table.add_column("IAR", justify="right")
    for row in sweep.means():
        table.add_row(str(row.m), f"{row.snr_db:g}", row.mode.value, f"{row.irr:.3f}", f"{row.iar:.3f}")
    err_console.print(table)
    if sweep.failures:
        err_console.print(f"[yellow]{sweep.failures} trials had an empty region[/yellow]")


if __name__ == "__main__":
    main()
