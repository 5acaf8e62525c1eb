import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from core.exceptions import TrajectoryError
from model import (
    ImuSample,
    PlanePatch,
    ScenarioDataset,
    Trajectory,
    TrajectorySample,
    patch_axes,
)
from schemas.scenario import Scenario, ScenarioName
from services.dataset_service import DatasetService

logger = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.81])
HIT_TOLERANCE = 1e-9


@dataclass
class RayPattern:
    directions: np.ndarray  # unit vectors, LiDAR frame

    def __len__(self) -> int:
        return len(self.directions)


def box_patch(center, normal, size) -> PlanePatch:
    """Axis-aligned patch; ``size`` is the world-axis box, the normal axis ignored."""
    normal = np.asarray(normal, dtype=float)
    size = np.asarray(size, dtype=float)
    u, v = patch_axes(normal)
    return PlanePatch(
        center=np.asarray(center, dtype=float),
        normal=normal,
        extent_u=float(np.abs(u) @ size),
        extent_v=float(np.abs(v) @ size),
    )


def _cosine_wave(amplitude: float, frequency: float, tau: float) -> tuple[float, float, float]:
    """A(1 - cos wτ) with its first and second derivatives."""
    w = 2.0 * math.pi * frequency
    return (
        amplitude * (1.0 - math.cos(w * tau)),
        amplitude * w * math.sin(w * tau),
        amplitude * w * w * math.cos(w * tau),
    )


class SimulatorService:
    def build_world(self, scenario: Scenario) -> list[PlanePatch]:
        if scenario.name == ScenarioName.CORRIDOR:
            return [
                box_patch((-1.5, 25.0, 0.3), (1.0, 0.0, 0.0), (0.0, 60.0, 3.0)),
                box_patch((1.5, 25.0, 0.3), (-1.0, 0.0, 0.0), (0.0, 60.0, 3.0)),
                box_patch((0.0, 25.0, -1.2), (0.0, 0.0, 1.0), (3.0, 60.0, 0.0)),
                box_patch((0.0, 25.0, 1.8), (0.0, 0.0, -1.0), (3.0, 60.0, 0.0)),
                box_patch((0.0, 55.0, 0.3), (0.0, -1.0, 0.0), (3.0, 0.0, 3.0)),
            ]
        if scenario.name == ScenarioName.ROOM:
            return [
                box_patch((6.0, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 12.0, 8.0)),
                box_patch((-6.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 12.0, 8.0)),
                box_patch((0.0, 6.0, 0.0), (0.0, -1.0, 0.0), (12.0, 0.0, 8.0)),
                box_patch((0.0, -6.0, 0.0), (0.0, 1.0, 0.0), (12.0, 0.0, 8.0)),
                box_patch((0.0, 0.0, 4.0), (0.0, 0.0, -1.0), (12.0, 12.0, 0.0)),
                box_patch((0.0, 0.0, -4.0), (0.0, 0.0, 1.0), (12.0, 12.0, 0.0)),
            ]
        if scenario.name == ScenarioName.OPEN_PLANE:
            reach = scenario.speed * scenario.duration
            forward = np.asarray(scenario.forward_axis, dtype=float)
            center = forward * reach / 2.0 + np.array([0.0, 0.0, -15.0])
            side = reach + 4.0 * scenario.max_range
            return [box_patch(center, (0.0, 0.0, 1.0), (side, side, 0.0))]
        return self._cavern(scenario)

    def _cavern(self, scenario: Scenario) -> list[PlanePatch]:
        rng = np.random.default_rng([scenario.seed, 3])
        forward = np.asarray(scenario.forward_axis, dtype=float)
        forward /= np.linalg.norm(forward)
        side, up = patch_axes(forward)
        reach = scenario.speed * scenario.duration
        patches = []
        for _ in range(40):
            along = rng.uniform(-5.0, reach + 5.0)
            angle = rng.uniform(0.0, 2.0 * math.pi)
            radius = rng.uniform(3.0, 8.0)
            offset = radius * (math.cos(angle) * side + math.sin(angle) * up)
            normal = -offset / radius + 0.4 * rng.standard_normal(3)
            patches.append(
                PlanePatch(
                    center=along * forward + offset,
                    normal=normal / np.linalg.norm(normal),
                    extent_u=float(rng.uniform(1.0, 3.0)),
                    extent_v=float(rng.uniform(1.0, 3.0)),
                )
            )
        return patches

    def sample_trajectory(self, scenario: Scenario, t: float) -> TrajectorySample:
        """Closed-form pose with analytic IMU quantities at time ``t``."""
        if not -HIT_TOLERANCE <= t <= scenario.duration + HIT_TOLERANCE:
            raise TrajectoryError(
                f"t={t} outside scenario duration [0, {scenario.duration}]"
            )
        tau = max(t - scenario.hold_duration, 0.0)
        moving = t > scenario.hold_duration

        forward = np.asarray(scenario.forward_axis, dtype=float)
        forward /= np.linalg.norm(forward)
        lateral = np.cross([0.0, 0.0, 1.0], forward)
        lateral /= np.linalg.norm(lateral)
        vertical = np.array([0.0, 0.0, 1.0])

        ramp = scenario.ramp_time
        decay = math.exp(-tau / ramp)
        d = scenario.speed * (tau - ramp * (1.0 - decay))
        d1 = scenario.speed * (1.0 - decay)
        d2 = scenario.speed / ramp * decay
        lat = _cosine_wave(scenario.lateral_amplitude, scenario.lateral_frequency, tau)
        ver = _cosine_wave(scenario.vertical_amplitude, scenario.vertical_frequency, tau)

        position = forward * d + lateral * lat[0] + vertical * ver[0]
        velocity = forward * d1 + lateral * lat[1] + vertical * ver[1]
        accel = forward * d2 + lateral * lat[2] + vertical * ver[2]

        yaw, yaw1, _ = _cosine_wave(scenario.yaw_amplitude, scenario.yaw_frequency, tau)
        roll, roll1, _ = _cosine_wave(
            scenario.roll_amplitude, scenario.attitude_frequency, tau
        )
        pitch, pitch1, _ = _cosine_wave(
            scenario.pitch_amplitude, 1.3 * scenario.attitude_frequency, tau
        )
        rotation = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()
        sr, cr = math.sin(roll), math.cos(roll)
        sp, cp = math.sin(pitch), math.cos(pitch)
        angular_rate = np.array(
            [
                roll1 - yaw1 * sp,
                pitch1 * cr + yaw1 * sr * cp,
                -pitch1 * sr + yaw1 * cr * cp,
            ]
        )
        if not moving:
            accel = np.zeros(3)
        return TrajectorySample(
            rotation=rotation,
            position=position,
            velocity=velocity,
            angular_rate=angular_rate,
            acceleration=rotation.T @ (accel - GRAVITY),
        )

    def ray_pattern(self, scenario: Scenario) -> RayPattern:
        total = scenario.rays_per_scan
        if total == 0:
            return RayPattern(directions=np.zeros((0, 3)))
        lines = min(scenario.elevation_lines, total)
        per_line = total // lines
        elevation = np.radians(
            np.linspace(scenario.elevation_min_deg, scenario.elevation_max_deg, lines)
        )
        azimuth = 2.0 * np.pi * np.arange(per_line) / per_line
        el, az = np.meshgrid(elevation, azimuth, indexing="ij")
        directions = np.stack(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1
        )
        return RayPattern(directions=directions.reshape(-1, 3))

    def raycast_scan(
        self,
        world: list[PlanePatch],
        rotation: np.ndarray,
        position: np.ndarray,
        pattern: RayPattern,
        range_std: float = 0.0,
        seed: int | list[int] = 0,
        min_range: float = 0.0,
        max_range: float = math.inf,
    ) -> tuple[np.ndarray, np.ndarray]:
        """LiDAR-frame hit points and the patch index each ray hit."""
        if len(pattern) == 0 or not world:
            return np.zeros((0, 3)), np.zeros(0, dtype=int)

        centers = np.array([p.center for p in world], dtype=float)
        normals = np.array([p.normal for p in world], dtype=float)
        axes = [p.axes() for p in world]
        axis_u = np.array([a[0] for a in axes])
        axis_v = np.array([a[1] for a in axes])
        half_u = np.array([p.extent_u for p in world]) / 2.0 + HIT_TOLERANCE
        half_v = np.array([p.extent_v for p in world]) / 2.0 + HIT_TOLERANCE

        dirs = pattern.directions @ rotation.T  # (n, 3) world
        denom = dirs @ normals.T  # (n, m)
        numer = np.einsum("mk,mk->m", centers - position, normals)
        with np.errstate(divide="ignore", invalid="ignore"):
            ranges = numer[None, :] / denom
            ranges[np.abs(denom) < 1e-12] = np.inf
            valid = (ranges >= min_range) & (ranges <= max_range)
            ranges = np.where(valid, ranges, 0.0)

            hits = position + ranges[..., None] * dirs[:, None, :]  # (n, m, 3)
            rel = hits - centers[None, :, :]
            inside = (np.abs(np.einsum("nmk,mk->nm", rel, axis_u)) <= half_u) & (
                np.abs(np.einsum("nmk,mk->nm", rel, axis_v)) <= half_v
            )
        ranges = np.where(valid & inside, ranges, np.inf)

        patch_ids = np.argmin(ranges, axis=1)
        best = ranges[np.arange(len(dirs)), patch_ids]
        hit = np.isfinite(best)

        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(int(hit.sum())) * range_std
        measured = best[hit] + noise
        points = measured[:, None] * pattern.directions[hit]
        return points, patch_ids[hit]

    def generate(self, scenario: Scenario, out_dir: Path | None = None) -> ScenarioDataset:
        logger.info(
            f"Generating scenario '{scenario.name.value}' seed={scenario.seed} "
            f"duration={scenario.duration}s."
        )
        world = self.build_world(scenario)

        n_imu = int(math.floor(scenario.duration * scenario.imu_rate + 1e-9)) + 1
        imu_rng = np.random.default_rng([scenario.seed, 1])
        gyro_std = math.sqrt(scenario.gyro_noise * scenario.imu_rate)
        accel_std = math.sqrt(scenario.accel_noise * scenario.imu_rate)
        gyro_bias = np.asarray(scenario.gyro_bias, dtype=float)
        accel_bias = np.asarray(scenario.accel_bias, dtype=float)

        imu: list[ImuSample] = []
        gt_times = np.zeros(n_imu)
        gt_positions = np.zeros((n_imu, 3))
        gt_rotations = np.zeros((n_imu, 3, 3))
        for i in range(n_imu):
            t = i / scenario.imu_rate
            sample = self.sample_trajectory(scenario, t)
            noise = imu_rng.standard_normal(6)
            imu.append(
                ImuSample(
                    timestamp=t,
                    angular_rate=sample.angular_rate + gyro_bias + gyro_std * noise[:3],
                    acceleration=sample.acceleration + accel_bias + accel_std * noise[3:],
                )
            )
            gt_times[i] = t
            gt_positions[i] = sample.position
            gt_rotations[i] = sample.rotation

        pattern = self.ray_pattern(scenario)
        n_scans = int(math.floor(scenario.duration * scenario.scan_rate + 1e-9))
        scan_times = np.array([(k + 1) / scenario.scan_rate for k in range(n_scans)])
        scans = []
        for k, t in enumerate(scan_times):
            sample = self.sample_trajectory(scenario, float(t))
            points, _ = self.raycast_scan(
                world,
                sample.rotation,
                sample.position,
                pattern,
                range_std=scenario.range_noise_std,
                seed=[scenario.seed, 2, k],
                min_range=scenario.min_range,
                max_range=scenario.max_range,
            )
            scans.append(points)

        dataset = ScenarioDataset(
            imu=imu,
            scan_times=scan_times,
            scans=scans,
            ground_truth=Trajectory(
                timestamps=gt_times, positions=gt_positions, rotations=gt_rotations
            ),
            world=world,
        )
        logger.info(
            f"Generated {len(imu)} IMU samples and {len(scans)} scans "
            f"({sum(len(s) for s in scans)} points)."
        )
        if out_dir is not None:
            DatasetService().write(dataset, out_dir)
        return dataset
