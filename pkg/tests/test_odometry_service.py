from __future__ import annotations

import json

import numpy as np
import pytest

from core.config import load_run_config
from core.exceptions import SingularNormalMatrixError
from model import SlidingDecision, UpdateStatus
from schemas.scenario import Scenario
from services.daaskf_service import DaaskfService
from services.odometry_service import OdometryService
from services.simulator_service import SimulatorService


def simulate(name: str = "room", seed: int = 0, noiseless: bool = False, **overrides):
    scenario = Scenario(name=name, seed=seed, **overrides)
    if noiseless:
        scenario = scenario.noiseless()
    return SimulatorService().generate(scenario)


def run(dataset, *overrides: str):
    config = load_run_config(overrides=list(overrides))
    return OdometryService(config).run(dataset, dataset.ground_truth)


@pytest.fixture(scope="module")
def short_room():
    return simulate(duration=3.0, rays_per_scan=2048)


def test_noiseless_room_is_tracked_exactly() -> None:
    dataset = simulate(duration=10.0, rays_per_scan=4096, noiseless=True)
    result = run(dataset)

    assert result.aborted == 0
    assert len(result.trajectory) == 100
    assert result.report.summary.ape.rmse < 1e-3


def test_dense_scans_stay_well_under_a_second() -> None:
    dataset = simulate(duration=1.0, rays_per_scan=10_000)
    records = run(dataset).report.records

    assert len(records) == 10
    assert any(r.rows_total > 5_000 for r in records)
    assert max(r.wall_clock_ms for r in records) < 1000.0


def test_baseline_leaves_rows_untouched(short_room) -> None:
    result = run(short_room, "preset=baseline")
    records = result.report.records

    assert all(r.sliding_decision == SlidingDecision.NONE for r in records)
    assert all(r.rows_pruned == 0 and r.rows_compensated == 0 for r in records)
    assert all(r.chi_pre == r.chi_post for r in records)
    assert not result.final_state.window


def test_runs_are_deterministic(short_room) -> None:
    first = run(short_room)
    second = run(short_room)
    np.testing.assert_array_equal(first.trajectory.positions, second.trajectory.positions)
    np.testing.assert_array_equal(first.trajectory.rotations, second.trajectory.rotations)
    assert [r.chi_post for r in first.report.records] == [r.chi_post for r in second.report.records]


def test_window_slides_and_stays_bounded(short_room) -> None:
    result = run(short_room, "s_a=2", "s_f=1")
    decisions = [r.sliding_decision for r in result.report.records]

    assert decisions[:2] == [SlidingDecision.NONE] * 2
    assert all(d != SlidingDecision.NONE for d in decisions[2:])
    assert len(result.final_state.active) == 2
    assert len(result.final_state.fixed) <= 1
    summary = result.report.summary
    assert sum(summary.decisions.values()) == summary.scans == len(short_room.scans)
    assert summary.mean_stages.update_ms > 0.0


def test_full_pipeline_updates_every_room_scan(short_room) -> None:
    records = run(short_room).report.records
    assert all(r.status == UpdateStatus.OK for r in records)
    assert all(r.rows_total > 0 and 1 <= r.iterations <= 5 for r in records)
    assert all(np.isfinite(r.chi_post) for r in records)


def test_point_map_backend_starts_empty(short_room) -> None:
    result = run(short_room, "map_backend=point_map")
    statuses = [r.status for r in result.report.records]

    assert statuses[0] == UpdateStatus.SKIPPED
    assert UpdateStatus.OK in statuses[1:]
    assert result.aborted == 0


def test_singular_updates_are_counted(short_room, monkeypatch) -> None:
    def singular(self, state, *args, **kwargs):
        raise SingularNormalMatrixError("normal matrix not invertible", state=state)

    monkeypatch.setattr(DaaskfService, "update", singular)
    result = run(short_room)

    assert result.aborted == len(short_room.scans)
    assert result.report.summary.aborted_scans == result.aborted
    assert all(r.status == UpdateStatus.SINGULAR for r in result.report.records)
    payload = result.report.model_dump_json()
    assert "Infinity" in payload
    json.loads(payload)


def corridor_runs(preset: str, seeds=range(5)):
    return [run(simulate("corridor", seed=seed), f"preset={preset}") for seed in seeds]


@pytest.mark.slow
def test_corridor_benefits_from_degeneracy_awareness() -> None:
    full = corridor_runs("lodestar")
    baseline = corridor_runs("baseline")

    full_ape = np.median([r.report.summary.ape.rmse for r in full])
    base_ape = np.median([r.report.summary.ape.rmse for r in baseline])
    assert full_ape <= 0.7 * base_ape

    along = np.median([r.report.summary.ape.per_axis_rmse[1] for r in baseline])
    across = np.median([r.report.summary.ape.per_axis_rmse[0] for r in baseline])
    assert along >= 3.0 * across


@pytest.mark.slow
def test_corridor_condition_number_ordering() -> None:
    dataset = simulate("corridor", seed=0)
    medians = {
        preset: run(dataset, f"preset={preset}").report.summary.median_chi_post
        for preset in ("lodestar", "prune_only", "baseline")
    }
    assert medians["lodestar"] <= medians["prune_only"]
    assert medians["lodestar"] <= medians["baseline"]


@pytest.mark.slow
def test_throughput_at_ten_thousand_rays() -> None:
    dataset = simulate("room", duration=10.0, rays_per_scan=10_000)
    assert run(dataset).report.summary.mean_scan_ms < 50.0
