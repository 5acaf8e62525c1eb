from __future__ import annotations

import json
from pathlib import Path

import pytest
from typer.testing import CliRunner

from core.exceptions import SingularNormalMatrixError
from main import app
from services.daaskf_service import DaaskfService

runner = CliRunner()


@pytest.fixture(scope="module")
def room_data(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("room")
    result = runner.invoke(app, ["simulate", "--scenario", "room", "--seed", "2", "--duration", "2", "--out", str(out)])
    assert result.exit_code == 0, result.output
    return out


def test_simulate_is_byte_identical_on_rerun(tmp_path: Path, room_data: Path) -> None:
    again = tmp_path / "again"
    result = runner.invoke(app, ["simulate", "--scenario", "room", "--seed", "2", "--duration", "2", "--out", str(again)])
    assert result.exit_code == 0
    files = sorted(p.relative_to(room_data) for p in room_data.rglob("*.*"))
    assert {"imu.csv", "scans.csv", "gt.tum", "world.txt"} <= {str(p) for p in files}
    for name in files:
        assert (again / name).read_bytes() == (room_data / name).read_bytes()


def test_simulate_rejects_bad_arguments(tmp_path: Path) -> None:
    assert runner.invoke(app, ["simulate", "--scenario", "bogus", "--out", str(tmp_path)]).exit_code != 0
    result = runner.invoke(app, ["simulate", "--scenario", "room", "--duration=-1", "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert "duration" in result.output


def test_run_writes_trajectory_and_report(tmp_path: Path, room_data: Path) -> None:
    out = tmp_path / "run"
    result = runner.invoke(
        app, ["run", "--data", str(room_data), "--gt", str(room_data / "gt.tum"), "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert "APE RMSE" in result.output

    report = json.loads((out / "report.json").read_text())
    assert len(report["records"]) == 20
    assert report["config"]["preset"] == "lodestar"
    assert report["summary"]["ape"]["rmse"] >= 0.0
    assert len((out / "est.tum").read_text().splitlines()) == 20


def test_run_names_unknown_config_keys(tmp_path: Path, room_data: Path) -> None:
    result = runner.invoke(app, ["run", "--data", str(room_data), "--out", str(tmp_path), "--set", "bogus=1"])
    assert result.exit_code == 1
    assert "bogus" in result.output


def test_run_reports_missing_dataset(tmp_path: Path) -> None:
    result = runner.invoke(app, ["run", "--data", str(tmp_path / "nowhere")])
    assert result.exit_code == 1


def test_ape_of_identical_trajectories(room_data: Path) -> None:
    gt = str(room_data / "gt.tum")
    result = runner.invoke(app, ["ape", gt, gt])
    assert result.exit_code == 0
    assert result.stdout.strip() == "0.0000"


def test_ape_reports_missing_file(room_data: Path, tmp_path: Path) -> None:
    result = runner.invoke(app, ["ape", str(room_data / "gt.tum"), str(tmp_path / "missing.tum")])
    assert result.exit_code == 1


def test_ablate_writes_one_directory_per_preset(tmp_path: Path, room_data: Path) -> None:
    out = tmp_path / "ablation"
    result = runner.invoke(
        app,
        ["ablate", "--data", str(room_data), "--out", str(out), "--preset", "lodestar", "--preset", "baseline", "--preset", "daaskf",
         "--gt", str(room_data / "gt.tum")],
    )
    assert result.exit_code == 0, result.output
    for preset in ("lodestar", "baseline", "daaskf"):
        assert (out / preset / "report.json").exists()
        assert (out / preset / "est.tum").exists()
        assert preset in result.stdout
    assert "median chi" in result.stdout


def test_aborted_scans_exit_with_two(tmp_path: Path, room_data: Path, monkeypatch) -> None:
    def singular(self, state, *args, **kwargs):
        raise SingularNormalMatrixError("normal matrix not invertible", state=state)

    monkeypatch.setattr(DaaskfService, "update", singular)
    result = runner.invoke(app, ["run", "--data", str(room_data), "--out", str(tmp_path / "run")])
    assert result.exit_code == 2
    assert (tmp_path / "run" / "report.json").exists()

    result = runner.invoke(app, ["ablate", "--data", str(room_data), "--out", str(tmp_path / "ab"), "--preset", "baseline"])
    assert result.exit_code == 2
