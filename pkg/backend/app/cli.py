"""
Command line: run, fit, mesh and report.

    python -m app.cli run bending -o out/
    python -m app.cli run dam.scn --variant dt72 --override healing.b=3.0 -o out/
    python -m app.cli fit bending --measured reload.csv -o fit/
    python -m app.cli mesh beam --param columns=79 -o beam.mesh
    python -m app.cli report bending -o report/

Exit codes: 0 success, 1 usage error, 2 input error, 3 solver failure
(outputs written up to the failure are kept).
"""
import sys
from typing import Dict, List, Optional, Sequence, Tuple

import click

from app.core.config import settings
from app.core.errors import ConfigurationError, HealFracError, MeshFormatError, ScenarioError, SolverFailure
from app.core.logging_setup import configure_logging
from app.data_import import mesher
from app.data_import.mesh_io import write_mesh
from app.schemas.fit import FITTABLE, FitParameter, FitSpec
from app.services.back_analysis import calibrate, load_measured_curve, write_fit_report
from app.services.simulation_service import SimulationService


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3

MM = 1e-3

# Command-line units of the healing parameters (scenario-file units)
FIT_UNITS = {
    "ultimate_strength": 1e6,
    "ultimate_fracture_energy": 1.0,
    "healing_rate": 1.0,
    "release_threshold": 1e6,
    "contact_exponent": 1.0,
}


class SolverFailureExit(Exception):
    """A run ended early; outputs up to the failure are on disk."""


def _key_values(values: Sequence[str], option: str) -> List[Tuple[str, str]]:
    pairs = []
    for item in values:
        if "=" not in item:
            raise click.BadParameter(f"expected key=value, got '{item}'", param_hint=option)
        key, value = item.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def _fit_value(name: str, text: str, option: str) -> float:
    if name not in FITTABLE:
        raise click.BadParameter(f"unknown healing parameter '{name}' (known: {', '.join(FITTABLE)})",
                                 param_hint=option)
    try:
        return float(text) * FIT_UNITS[name]
    except ValueError:
        raise click.BadParameter(f"'{text}' is not a number", param_hint=option)


def _free_parameter(item: str) -> FitParameter:
    parts = item.split(":")
    if len(parts) != 3:
        raise click.BadParameter(f"expected name:lower:upper, got '{item}'", param_hint="--free")
    name = parts[0].strip()
    lower, upper = (_fit_value(name, value, "--free") for value in parts[1:])
    try:
        return FitParameter(name=name, lower=lower, upper=upper)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--free")


def _service(threads: Optional[int]) -> SimulationService:
    return SimulationService(threads=threads)


scenario_argument = click.argument("scenario")
variant_option = click.option("--variant", default=None, help="Scenario variant section to apply")
override_option = click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE",
                               help="Scenario override section.key=value (repeatable)")
strict_option = click.option("--strict", is_flag=True, help="Reject unknown scenario keys")
threads_option = click.option("--threads", type=click.IntRange(min=1), default=None,
                              help="Threads for the cracked-element assembly")


@click.group()
@click.option("--log-level", default=settings.LOG_LEVEL, show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level: str) -> None:
    """HealFrac: fracture and healing of quasi-brittle materials."""
    configure_logging(log_level)


@cli.command()
@scenario_argument
@click.option("-o", "--output", "output", type=click.Path(file_okay=False), default="out", show_default=True)
@variant_option
@override_option
@strict_option
@threads_option
@click.option("--no-healing", is_flag=True, help="Drop the healing agent (reference run)")
def run(scenario: str, output: str, variant: Optional[str], overrides: Tuple[str, ...], strict: bool,
        threads: Optional[int], no_healing: bool) -> None:
    """Run a scenario file (or bundled scenario name) and write its outputs."""
    service = _service(threads)
    parsed = service.load(scenario, variant, overrides, strict, healing=not no_healing)
    result = service.run(parsed, output)
    click.echo(f"{parsed.name}: {len(result.history.rows)} steps written to {output}")
    if not result.history.complete:
        raise SolverFailureExit(result.history.failure)


@cli.command()
@scenario_argument
@click.option("--measured", required=True, type=click.Path(dir_okay=False),
              help="Measured reload curve: CSV of CMOD (mm) and force (N)")
@click.option("-o", "--output", "output", type=click.Path(file_okay=False), default="fit", show_default=True)
@click.option("--free", "free", multiple=True, metavar="NAME:LOWER:UPPER",
              help="Free parameter with bounds in scenario units (default: fh_inf and Gh_inf)")
@click.option("--fixed", "fixed", multiple=True, metavar="NAME=VALUE", help="Fixed parameter in scenario units")
@click.option("--grid-points", type=click.IntRange(min=1), default=settings.FIT_GRID_POINTS, show_default=True)
@click.option("--budget", type=click.IntRange(min=0), default=settings.FIT_REFINEMENT_BUDGET, show_default=True,
              help="Simulator evaluations of the simplex refinement")
@click.option("--ensemble", multiple=True, metavar="VARIANT", help="Average the misfit over these variants")
@click.option("--no-restart", is_flag=True, help="Skip the simplex restart")
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker processes of the grid stage")
@variant_option
@override_option
@strict_option
@threads_option
def fit(scenario: str, measured: str, output: str, free: Tuple[str, ...], fixed: Tuple[str, ...],
        grid_points: int, budget: int, ensemble: Tuple[str, ...], no_restart: bool, jobs: int,
        variant: Optional[str], overrides: Tuple[str, ...], strict: bool, threads: Optional[int]) -> None:
    """Calibrate healing parameters against a measured reload curve."""
    spec_values: Dict = dict(
        fixed={name: _fit_value(name, value, "--fixed") for name, value in _key_values(fixed, "--fixed")},
        grid_points=grid_points,
        max_evaluations=budget,
        restart=not no_restart,
        restart_perturbation=settings.FIT_RESTART_PERTURBATION,
        ensemble=list(ensemble),
        n_jobs=jobs,
    )
    if free:
        spec_values["free"] = [_free_parameter(item) for item in free]
    spec = FitSpec(**spec_values)

    service = _service(threads)
    parsed = service.load(scenario, variant, overrides, strict)
    curve = load_measured_curve(measured)
    result = calibrate(spec, parsed, curve, controls=service.controls)
    write_fit_report(result, output, parsed.name)
    for name, value in result.params.items():
        click.echo(f"{name} = {value / FIT_UNITS[name]:.6g}")
    click.echo(f"misfit = {result.misfit:.6g} N ({'converged' if result.converged else 'not converged'})")


@cli.command()
@click.argument("generator", type=click.Choice(sorted(mesher.GENERATORS)))
@click.option("-o", "--output", "output", type=click.Path(dir_okay=False), required=True)
@click.option("--param", "params", multiple=True, metavar="KEY=VALUE",
              help="Generator parameter; lengths in mm, counts as integers")
def mesh(generator: str, output: str, params: Tuple[str, ...]) -> None:
    """Generate a structured benchmark mesh."""
    parameters = {}
    for key, value in _key_values(params, "--param"):
        try:
            number = float(value)
        except ValueError:
            raise click.BadParameter(f"'{value}' is not a number", param_hint="--param")
        parameters[key] = number if key in mesher.COUNT_PARAMETERS else number * MM
    try:
        generated = mesher.generate(generator, **parameters)
    except (TypeError, ValueError) as exc:
        raise click.BadParameter(str(exc), param_hint="--param")
    path = write_mesh(generated, output)
    click.echo(f"{generator}: {generated.n_nodes} nodes, {generated.n_elements} elements written to {path}")


@cli.command()
@scenario_argument
@click.option("-o", "--output", "output", type=click.Path(file_okay=False), default="report", show_default=True)
@variant_option
@override_option
@strict_option
@threads_option
def report(scenario: str, output: str, variant: Optional[str], overrides: Tuple[str, ...], strict: bool,
           threads: Optional[int]) -> None:
    """Run a scenario with and without healing and write a comparison (CSV + gnuplot script)."""
    service = _service(threads)
    parsed = service.load(scenario, variant, overrides, strict)
    runs = service.compare(parsed, output)
    click.echo(f"{parsed.name}: report of {', '.join(runs)} written to {output}")
    failures = service.failures(runs)
    if failures:
        raise SolverFailureExit("; ".join(failures))


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point returning the process exit code."""
    try:
        cli.main(args=list(argv) if argv is not None else None, prog_name="healfrac", standalone_mode=False)
    except click.exceptions.Abort:
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except (ScenarioError, MeshFormatError, ConfigurationError) as exc:
        click.echo(f"Error: {exc}", err=True)
        return EXIT_INPUT
    except (SolverFailure, SolverFailureExit) as exc:
        click.echo(f"Solver failure: {exc}", err=True)
        return EXIT_SOLVER
    except HealFracError as exc:
        click.echo(f"Error: {exc}", err=True)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
