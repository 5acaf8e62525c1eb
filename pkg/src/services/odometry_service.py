import logging
import math
import time
from collections import Counter
from dataclasses import dataclass

import numpy as np
import scipy

from core.exceptions import DatasetError, SingularNormalMatrixError
from model import (
    FullState,
    ImuState,
    MeasurementSet,
    ScenarioDataset,
    SlidingDecision,
    Trajectory,
    UpdateStatus,
)
from schemas.config import RunConfig
from schemas.report import RunReport, RunSummary, ScanRecord, StageTimings, UpdateReport
from services.daaskf_service import DaaskfService
from services.dade_service import DadeService, chi_columns
from services.evaluation_service import EvaluationService
from services.measurement_service import MeasurementService
from services.plane_map_service import PlaneMapService, voxel_first
from services.propagation_service import PropagationService
from services.state_service import StateService

logger = logging.getLogger(__name__)


@dataclass
class Selection:
    """Rows chosen by DA-DE for one scan."""

    current_points: np.ndarray
    window: MeasurementSet
    chi_pre: float
    chi_post_prune: float
    chi_post: float
    rows_candidate: int
    rows_pruned: int
    rows_compensated: int


@dataclass
class OdometryResult:
    trajectory: Trajectory
    report: RunReport
    aborted: int = 0
    final_state: FullState | None = None


class OdometryService:
    def __init__(self, config: RunConfig):
        self.config = config
        self.ext = config.extrinsics
        self.window_config = config.window_config
        self.update_config = config.update_config
        self.states = StateService()
        self.propagation = PropagationService()
        self.measurements = MeasurementService()
        self.dade = DadeService()
        self.filter = DaaskfService(self.measurements, self.states)
        self.maps = PlaneMapService()
        self.evaluation = EvaluationService()
        self.plane_map = None

    def initial_state(self, dataset: ScenarioDataset) -> tuple[FullState, np.ndarray]:
        c = self.config
        t0 = dataset.imu[0].timestamp
        init = self.propagation.static_initialize(
            [s for s in dataset.imu if s.timestamp - t0 <= c.init_duration + 1e-9]
        )
        state = FullState(imu=ImuState(gyro_bias=init.gyro_bias, gravity=init.gravity))
        std = np.repeat(
            [c.init_rot_std, c.init_pos_std, c.init_vel_std, c.init_bg_std, c.init_ba_std, c.init_g_std],
            3,
        )
        return state, np.diag(std**2)

    def associate(self, state: FullState, points: np.ndarray) -> MeasurementSet:
        """Current-scan correspondences at the given iterate (owner 0)."""
        if len(points) == 0:
            return MeasurementSet()
        rot, pos = state.imu.rotation, state.imu.position
        world = self.ext.to_imu(points) @ rot.T + pos
        origin = rot @ self.ext.translation + pos
        result = self.plane_map.query(world, origin)
        found = result.found
        return MeasurementSet(
            points=points[found],
            normals=result.normals[found],
            anchors=result.anchors[found],
            variances=np.full(int(found.sum()), self.config.point_noise_std**2),
            owners=np.zeros(int(found.sum()), dtype=int),
        )

    def window_measurements(self, state: FullState) -> MeasurementSet:
        sets = [
            pose.measurements.with_owner(offset)
            for offset, pose in enumerate(state.window, start=1)
            if pose.measurements is not None
        ]
        return MeasurementSet.concat(sets)

    def _chi(self, H: np.ndarray) -> float:
        if H.shape[0] == 0:
            return math.inf
        return self.dade.condition_number(H)

    def select(self, state: FullState, current: MeasurementSet) -> Selection:
        """Prune current+active rows, then compensate from fixed rows."""
        c = self.config
        wc = self.window_config
        layout = self.states.error_block_layout(wc, state)
        window = self.window_measurements(state) if c.window else MeasurementSet()
        rows = MeasurementSet.concat([current, window])
        system = self.measurements.stack_system(rows, state.chain_poses(), self.ext, layout)
        columns = chi_columns(layout, wc.chi_block)

        updating = system.owners <= layout.n_active
        fixed = ~updating
        chi_pre = self._chi(system.H[updating][:, columns])

        keep = updating.copy()
        if c.dade_prune and updating.any():
            H_R, H_p = self.dade.split_jacobian(system, layout)
            _, V_p = self.dade.right_singular(H_p[updating])
            _, V_R = self.dade.right_singular(H_R[updating])
            omega_p, omega_r = self.dade.localizability_rows(H_R, H_p, V_p, V_R)
            keep = self.dade.prune(omega_p, omega_r, wc.t_loc) & updating
        chi_post_prune = self._chi(system.H[keep][:, columns])

        mask = keep
        compensated = 0
        if c.dade_compensate and fixed.any() and keep.any():
            report = self.dade.degeneracy_report(system.restrict(keep), layout, wc.chi_block)
            result = self.dade.compensate(
                system,
                layout,
                keep,
                fixed,
                report,
                wc.t_chi,
                wc.t_loc,
                batch=wc.compensation_batch,
                block=wc.chi_block,
            )
            mask, compensated = result.mask, result.added
        elif not c.dade_prune and not c.dade_compensate:
            mask = keep | fixed
        chi_post = self._chi(system.H[mask][:, columns])

        chosen = system.rows[mask]
        n_current = len(current)
        return Selection(
            current_points=current.points[np.sort(chosen[chosen < n_current])],
            window=rows.subset(np.sort(chosen[chosen >= n_current])),
            chi_pre=chi_pre,
            chi_post_prune=chi_post_prune,
            chi_post=chi_post,
            rows_candidate=int(updating.sum()),
            rows_pruned=int(updating.sum() - keep.sum()),
            rows_compensated=compensated,
        )

    def _propagate_to(self, state, cov, imu, cursor, t_now, t_target):
        noise = self.config.noise
        while cursor + 1 < len(imu) and imu[cursor + 1].timestamp <= t_target:
            dt = imu[cursor + 1].timestamp - t_now
            if dt > 0.0:
                state, cov = self.propagation.propagate(
                    state, cov, imu[cursor], dt, noise, self.config.gravity_noise
                )
            t_now = imu[cursor + 1].timestamp
            cursor += 1
        if t_target - t_now > 1e-12:
            state, cov = self.propagation.propagate(
                state, cov, imu[cursor], t_target - t_now, noise, self.config.gravity_noise
            )
            t_now = t_target
        return state, cov, cursor, t_now

    def run(self, dataset: ScenarioDataset, gt: Trajectory | None = None) -> OdometryResult:
        c = self.config
        if not dataset.imu:
            raise DatasetError("dataset has no IMU samples")
        self.plane_map = self.maps.build_map(c, dataset.world)
        state, cov = self.initial_state(dataset)
        logger.info(
            f"Running {len(dataset.scans)} scans with preset '{c.preset.value}' "
            f"(window={c.window}, schmidt={c.schmidt}, prune={c.dade_prune}, "
            f"compensate={c.dade_compensate})."
        )

        cursor, t_now = 0, dataset.imu[0].timestamp
        records: list[ScanRecord] = []
        times, positions, rotations = [], [], []
        aborted = 0

        for k, (t_scan, raw) in enumerate(zip(dataset.scan_times, dataset.scans)):
            t_scan = float(t_scan)
            stages = StageTimings()
            start = time.perf_counter()

            state, cov, cursor, t_now = self._propagate_to(
                state, cov, dataset.imu, cursor, t_now, t_scan
            )
            tick = time.perf_counter()
            stages.propagation_ms = (tick - start) * 1e3

            points = raw[voxel_first(raw, c.scan_voxel_size)]
            current = self.associate(state, points)
            selection = self.select(state, current)
            now = time.perf_counter()
            stages.selection_ms = (now - tick) * 1e3
            tick = now

            stored = current
            chi_state = math.inf
            if len(selection.current_points) == 0 and len(selection.window) == 0:
                logger.warning(f"Scan {k} at t={t_scan:.3f}: no correspondences, update skipped.")
                update = UpdateReport(status=UpdateStatus.SKIPPED)
            else:
                try:
                    outcome = self.filter.update(
                        state,
                        cov,
                        selection.window,
                        self.update_config,
                        self.ext,
                        associate=self.associate,
                        current_points=selection.current_points,
                    )
                    state, cov, update = outcome.state, outcome.cov, outcome.report
                    if update.status == UpdateStatus.OK:
                        stored = outcome.current
                        layout = self.states.error_block_layout(self.window_config, state)
                        chi_state = self.dade.degeneracy_of_state(
                            outcome.system, layout, 0, self.window_config.chi_block
                        )
                except SingularNormalMatrixError as e:
                    aborted += 1
                    logger.warning(
                        f"Scan {k} at t={t_scan:.3f}: update aborted after "
                        f"{e.iterations} iterations ({e.detail}); keeping propagated state."
                    )
                    update = UpdateReport(status=UpdateStatus.SINGULAR)
            now = time.perf_counter()
            stages.update_ms = (now - tick) * 1e3
            tick = now

            decision = SlidingDecision.NONE
            if c.window:
                state, cov, decision = self.filter.slide(
                    state,
                    cov,
                    self.window_config,
                    adaptive=c.adaptive_sliding,
                    scan_index=k,
                    timestamp=t_scan,
                    chi=chi_state,
                    measurements=stored,
                )
            now = time.perf_counter()
            stages.sliding_ms = (now - tick) * 1e3
            tick = now

            rot, pos = state.imu.rotation, state.imu.position
            self.plane_map.insert_scan(self.ext.to_imu(points) @ rot.T + pos)
            now = time.perf_counter()
            stages.mapping_ms = (now - tick) * 1e3

            records.append(
                ScanRecord(
                    index=k,
                    timestamp=t_scan,
                    status=update.status,
                    chi_pre=selection.chi_pre,
                    chi_post=selection.chi_post,
                    chi_state=chi_state,
                    rows_total=update.rows_total,
                    rows_pruned=selection.rows_pruned,
                    rows_compensated=selection.rows_compensated,
                    iterations=update.iterations,
                    sliding_decision=decision,
                    wall_clock_ms=(now - start) * 1e3,
                    stages=stages,
                )
            )
            times.append(t_scan)
            positions.append(pos.copy())
            rotations.append(rot.copy())
            logger.debug(
                f"Scan {k}: χ {selection.chi_pre:.2f} -> {selection.chi_post:.2f}, "
                f"rows {update.rows_total} (pruned {selection.rows_pruned}, "
                f"compensated {selection.rows_compensated}), {decision.value} sliding."
            )

        trajectory = Trajectory(
            timestamps=np.array(times),
            positions=np.array(positions).reshape(-1, 3),
            rotations=np.array(rotations).reshape(-1, 3, 3),
        )
        report = RunReport(
            config=c.model_dump(mode="json"),
            runtime={
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "selection_basis": "once per scan, before the first iteration",
            },
            records=records,
            summary=self.summarize(records, trajectory, gt),
        )
        logger.info(
            f"Run finished: {len(records)} scans, {aborted} aborted, "
            f"mean {report.summary.mean_scan_ms:.1f} ms/scan."
        )
        return OdometryResult(
            trajectory=trajectory, report=report, aborted=aborted, final_state=state
        )

    def summarize(
        self, records: list[ScanRecord], trajectory: Trajectory, gt: Trajectory | None
    ) -> RunSummary:
        if not records:
            return RunSummary()

        def median(values):
            values = [v for v in values if v is not None]
            return float(np.median(values)) if values else None

        stage_names = StageTimings.model_fields.keys()
        mean_stages = StageTimings(
            **{
                name: float(np.mean([getattr(r.stages, name) for r in records]))
                for name in stage_names
            }
        )
        ape = None
        if gt is not None and len(trajectory) >= 3:
            ape = self.evaluation.ape_rmse(self.evaluation.associate(gt, trajectory))
            logger.info(f"APE RMSE {ape.rmse:.4f} m (per axis {ape.per_axis_rmse}).")
        return RunSummary(
            scans=len(records),
            aborted_scans=sum(r.status == UpdateStatus.SINGULAR for r in records),
            skipped_scans=sum(r.status == UpdateStatus.SKIPPED for r in records),
            decisions=dict(Counter(r.sliding_decision for r in records)),
            median_chi_pre=median(r.chi_pre for r in records),
            median_chi_post=median(r.chi_post for r in records),
            mean_scan_ms=float(np.mean([r.wall_clock_ms for r in records])),
            mean_stages=mean_stages,
            ape=ape,
        )
