import logging
from pathlib import Path
from typing import List, Optional

import typer
from pydantic import ValidationError

from core.config import load_run_config, settings
from core.exceptions import DatasetError, LodestarError, ScenarioError
from core.logger import setup_logging
from schemas.config import Preset
from schemas.scenario import Scenario, ScenarioName
from services.dataset_service import DatasetService
from services.evaluation_service import EvaluationService
from services.odometry_service import OdometryResult, OdometryService
from services.simulator_service import SimulatorService

setup_logging()
logger = logging.getLogger(__name__)

app = typer.Typer(
    name="lodestar",
    help="Degeneracy-aware LiDAR-inertial odometry on synthetic planar worlds.",
    no_args_is_help=True,
    add_completion=False,
)


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log at DEBUG level."),
    log_file: Optional[Path] = typer.Option(None, "--log-file", help="Also log to this file."),
):
    setup_logging("DEBUG" if verbose else None, log_file)


def fail(action: str, e: LodestarError) -> typer.Exit:
    logger.error(f"{action} failed: {e.detail}", exc_info=settings.APP_MODE == "dev")
    typer.echo(f"error: {e.detail}", err=True)
    return typer.Exit(code=1)


def write_outputs(result: OdometryResult, out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(
            result.report.model_dump_json(indent=settings.REPORT_INDENT)
        )
    except OSError as e:
        logger.error(f"Could not write outputs to {out}: {e}", exc_info=True)
        raise DatasetError(f"cannot write outputs to {out}: {e}")
    EvaluationService().write_tum(out / "est.tum", result.trajectory)
    logger.info(f"Wrote {out / 'est.tum'} and {out / 'report.json'}.")


@app.command()
def simulate(
    scenario: ScenarioName = typer.Option(..., "--scenario", help="Bundled world to simulate."),
    seed: int = typer.Option(0, "--seed"),
    out: Path = typer.Option(..., "--out", help="Dataset directory to create."),
    duration: Optional[float] = typer.Option(None, "--duration", help="Override length (s)."),
    noiseless: bool = typer.Option(False, "--noiseless", help="Zero sensor noise and biases."),
):
    """Generate a deterministic synthetic dataset."""
    try:
        data = {"name": scenario, "seed": seed}
        if duration is not None:
            data["duration"] = duration
        try:
            described = Scenario.model_validate(data)
        except ValidationError as e:
            fields = sorted({str(err["loc"][0]) for err in e.errors() if err["loc"]})
            raise ScenarioError(f"invalid scenario values: {', '.join(fields) or 'model'}")
        if noiseless:
            described = described.noiseless()
        SimulatorService().generate(described, out)
    except LodestarError as e:
        raise fail("simulate", e)
    typer.echo(str(out))


@app.command()
def run(
    data: Path = typer.Option(..., "--data", help="Dataset directory."),
    config: Optional[Path] = typer.Option(None, "--config", help="key = value config file."),
    set_: Optional[List[str]] = typer.Option(None, "--set", help="Override, key=value."),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory (default: data)."),
    gt: Optional[Path] = typer.Option(None, "--gt", help="Ground-truth TUM file for APE."),
):
    """Run the filter over a dataset and write est.tum and report.json."""
    try:
        run_config = load_run_config(config, set_ or [])
        dataset = DatasetService().read(data)
        truth = EvaluationService().read_tum(gt) if gt is not None else None
        result = OdometryService(run_config).run(dataset, truth)
        write_outputs(result, out or data)
    except LodestarError as e:
        raise fail("run", e)

    summary = result.report.summary
    if summary.ape is not None:
        typer.echo(f"APE RMSE {summary.ape.rmse:.4f} m")
    if result.aborted:
        logger.warning(f"{result.aborted} scans aborted on a singular normal matrix.")
        raise typer.Exit(code=2)


@app.command()
def ape(
    gt: Path = typer.Argument(..., help="Ground-truth TUM file."),
    est: Path = typer.Argument(..., help="Estimated TUM file."),
    max_dt: float = typer.Option(0.02, "--max-dt", help="Association tolerance (s)."),
):
    """Print the rigidly aligned absolute position error RMSE."""
    evaluation = EvaluationService()
    try:
        pairs = evaluation.associate(evaluation.read_tum(gt), evaluation.read_tum(est), max_dt)
        result = evaluation.ape_rmse(pairs)
    except LodestarError as e:
        raise fail("ape", e)
    typer.echo(f"{result.rmse:.4f}")


@app.command()
def ablate(
    data: Path = typer.Option(..., "--data", help="Dataset directory."),
    out: Path = typer.Option(..., "--out", help="One sub-directory per preset goes here."),
    preset: Optional[List[Preset]] = typer.Option(None, "--preset", help="Defaults to all."),
    config: Optional[Path] = typer.Option(None, "--config"),
    set_: Optional[List[str]] = typer.Option(None, "--set"),
    gt: Optional[Path] = typer.Option(None, "--gt"),
):
    """Run several presets on one dataset and print a comparison table."""
    presets = preset or list(Preset)
    rows = []
    aborted = 0
    try:
        dataset = DatasetService().read(data)
        truth = EvaluationService().read_tum(gt) if gt is not None else None
        for name in presets:
            run_config = load_run_config(config, [f"preset={name.value}", *(set_ or [])])
            result = OdometryService(run_config).run(dataset, truth)
            write_outputs(result, out / name.value)
            aborted += result.aborted
            rows.append((name.value, result.report.summary))
    except LodestarError as e:
        raise fail("ablate", e)

    typer.echo(f"{'preset':<16}{'median chi':>12}{'APE [m]':>10}{'ms/scan':>10}")
    for name, summary in rows:
        chi = summary.median_chi_post
        chi_text = f"{chi:.3f}" if chi is not None else "-"
        ape_text = f"{summary.ape.rmse:.4f}" if summary.ape is not None else "-"
        typer.echo(f"{name:<16}{chi_text:>12}{ape_text:>10}{summary.mean_scan_ms:>10.1f}")
    if aborted:
        raise typer.Exit(code=2)


if __name__ == "__main__":
    app()
