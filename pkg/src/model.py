from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class PoseRole(str, Enum):
    ACTIVE = "active"
    FIXED = "fixed"


class SlidingDecision(str, Enum):
    FULL = "full"
    PARTIAL = "partial"
    NONE = "none"


class MapBackend(str, Enum):
    ANALYTIC = "analytic"
    POINT_MAP = "point_map"


class ChiBlock(str, Enum):
    POSITION = "position"
    ROTATION = "rotation"
    POSE = "pose"


class UpdateStatus(str, Enum):
    OK = "ok"
    SKIPPED = "skipped"  # no correspondences
    SINGULAR = "singular"  # normal matrix could not be inverted


@dataclass
class ImuState:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))


@dataclass
class WindowPose:
    rotation: np.ndarray
    position: np.ndarray
    role: PoseRole = PoseRole.ACTIVE
    scan_index: int = 0
    timestamp: float = 0.0
    chi: float | None = None
    # Measurements this pose used in its own update, associations frozen.
    measurements: MeasurementSet | None = None


@dataclass
class FullState:
    imu: ImuState = field(default_factory=ImuState)
    active: list[WindowPose] = field(default_factory=list)  # newest first
    fixed: list[WindowPose] = field(default_factory=list)  # newest first

    @property
    def window(self) -> list[WindowPose]:
        return self.active + self.fixed

    def chain_poses(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Current pose followed by every window pose, in coupling order."""
        poses = [(self.imu.rotation, self.imu.position)]
        poses.extend((pose.rotation, pose.position) for pose in self.window)
        return poses

    def copy(self) -> FullState:
        return FullState(
            imu=replace(self.imu),
            active=[replace(pose) for pose in self.active],
            fixed=[replace(pose) for pose in self.fixed],
        )


@dataclass
class ImuSample:
    timestamp: float
    angular_rate: np.ndarray
    acceleration: np.ndarray


@dataclass
class NoiseParams:
    """Continuous-time variance rates, per axis."""

    gyro: float = 1e-4
    accel: float = 1e-3
    gyro_bias: float = 1e-8
    accel_bias: float = 1e-6


@dataclass
class Extrinsics:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def to_imu(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


@dataclass
class Plane:
    anchor: np.ndarray
    normal: np.ndarray


@dataclass
class Measurement:
    point: np.ndarray  # LiDAR frame
    owner: int  # scans before current, 0 = current
    normal: np.ndarray
    anchor: np.ndarray
    variance: float


@dataclass
class MeasurementSet:
    """Struct-of-arrays view over many `Measurement`s."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    anchors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    variances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    owners: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @classmethod
    def from_measurements(cls, measurements: Iterable[Measurement]) -> MeasurementSet:
        items = list(measurements)
        if not items:
            return cls()
        return cls(
            points=np.array([m.point for m in items], dtype=float).reshape(-1, 3),
            normals=np.array([m.normal for m in items], dtype=float).reshape(-1, 3),
            anchors=np.array([m.anchor for m in items], dtype=float).reshape(-1, 3),
            variances=np.array([m.variance for m in items], dtype=float),
            owners=np.array([m.owner for m in items], dtype=int),
        )

    @classmethod
    def concat(cls, sets: Sequence[MeasurementSet]) -> MeasurementSet:
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls()
        return cls(
            points=np.vstack([s.points for s in sets]),
            normals=np.vstack([s.normals for s in sets]),
            anchors=np.vstack([s.anchors for s in sets]),
            variances=np.concatenate([s.variances for s in sets]),
            owners=np.concatenate([s.owners for s in sets]),
        )

    def subset(self, index: np.ndarray | Sequence[int]) -> MeasurementSet:
        index = np.asarray(index)
        return MeasurementSet(
            points=self.points[index].reshape(-1, 3),
            normals=self.normals[index].reshape(-1, 3),
            anchors=self.anchors[index].reshape(-1, 3),
            variances=self.variances[index],
            owners=self.owners[index],
        )

    def with_owner(self, owner: int) -> MeasurementSet:
        return replace(self, owners=np.full(len(self), owner, dtype=int))

    def __getitem__(self, i: int) -> Measurement:
        return Measurement(
            point=self.points[i],
            owner=int(self.owners[i]),
            normal=self.normals[i],
            anchor=self.anchors[i],
            variance=float(self.variances[i]),
        )


@dataclass
class Trajectory:
    timestamps: np.ndarray
    positions: np.ndarray
    rotations: np.ndarray  # (n, 3, 3)

    def __len__(self) -> int:
        return int(self.timestamps.shape[0])


@dataclass(frozen=True)
class ErrorLayout:
    """Named column ranges of the error-state tangent space.

    Blocks: ``rot``, ``pos``, ``vel``, ``bg``, ``ba``, ``grav`` then
    ``active_<i>`` and ``fixed_<j>`` (newest first, 6 columns each).
    """

    blocks: dict[str, slice]
    n_active: int
    n_fixed: int

    @property
    def dim(self) -> int:
        return 18 + 6 * (self.n_active + self.n_fixed)

    @property
    def n_window(self) -> int:
        return self.n_active + self.n_fixed

    def pose_block(self, offset: int) -> slice:
        """Rotation+position columns of the pose ``offset`` steps along the chain."""
        if offset == 0:
            return slice(0, 6)
        if not 1 <= offset <= self.n_window:
            raise IndexError(f"chain offset {offset} outside window of {self.n_window}")
        start = 18 + 6 * (offset - 1)
        return slice(start, start + 6)

    def rotation_block(self, offset: int) -> slice:
        block = self.pose_block(offset)
        return slice(block.start, block.start + 3)

    def position_block(self, offset: int) -> slice:
        block = self.pose_block(offset)
        return slice(block.start + 3, block.stop)

    @property
    def fixed_start(self) -> int:
        return 18 + 6 * self.n_active

    @property
    def updating(self) -> slice:
        return slice(0, self.fixed_start)

    @property
    def fixed(self) -> slice:
        return slice(self.fixed_start, self.dim)


@dataclass
class StackedSystem:
    H: np.ndarray  # (rows, dim)
    z: np.ndarray  # (rows,)
    variances: np.ndarray  # diagonal of C
    rows: np.ndarray  # row -> index into the input MeasurementSet
    owners: np.ndarray

    def __len__(self) -> int:
        return int(self.z.shape[0])

    def restrict(self, mask: np.ndarray) -> StackedSystem:
        return StackedSystem(
            H=self.H[mask],
            z=self.z[mask],
            variances=self.variances[mask],
            rows=self.rows[mask],
            owners=self.owners[mask],
        )


@dataclass
class PlanePatch:
    """Finite rectangle; extents are full side lengths along ``axes()``."""

    center: np.ndarray
    normal: np.ndarray
    extent_u: float
    extent_v: float

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return patch_axes(self.normal)


def patch_axes(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """In-plane axes picked deterministically from the normal alone."""
    normal = np.asarray(normal, dtype=float)
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(normal)))] = 1.0
    u = np.cross(normal, helper)
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    return u, v


@dataclass
class TrajectorySample:
    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    angular_rate: np.ndarray  # body frame
    acceleration: np.ndarray  # body-frame specific force


@dataclass
class ScenarioDataset:
    imu: list[ImuSample]
    scan_times: np.ndarray
    scans: list[np.ndarray]  # LiDAR-frame points per scan
    ground_truth: Trajectory | None = None
    world: list[PlanePatch] | None = None
