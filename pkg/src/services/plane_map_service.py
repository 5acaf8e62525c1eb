import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.spatial import KDTree

from core.exceptions import ConfigError, DatasetError
from model import MapBackend, Plane, PlanePatch
from schemas.config import RunConfig

logger = logging.getLogger(__name__)


@dataclass
class PlaneQuery:
    """Batch correspondence result; rows where ``found`` is False are unset."""

    found: np.ndarray
    anchors: np.ndarray
    normals: np.ndarray
    patch_ids: np.ndarray | None = None

    @classmethod
    def empty(cls, n: int) -> "PlaneQuery":
        return cls(
            found=np.zeros(n, dtype=bool),
            anchors=np.zeros((n, 3)),
            normals=np.zeros((n, 3)),
        )


class PlaneMap(Protocol):
    def query(self, points: np.ndarray, origin: np.ndarray | None = None) -> PlaneQuery: ...

    def insert_scan(self, points: np.ndarray) -> None: ...


def orient_toward(
    normals: np.ndarray, anchors: np.ndarray, origin: np.ndarray | None
) -> np.ndarray:
    if origin is None:
        return normals
    sign = np.where(np.einsum("ij,ij->i", normals, origin - anchors) < 0.0, -1.0, 1.0)
    return normals * sign[:, None]


class AnalyticPlaneMap:
    """Fixed world of finite rectangular patches."""

    def __init__(self, patches: list[PlanePatch], max_distance: float = 1.0):
        if not patches:
            raise DatasetError("analytic map needs at least one patch")
        for patch in patches:
            if patch.extent_u <= 0.0 or patch.extent_v <= 0.0:
                raise DatasetError(f"patch at {patch.center} has non-positive extent")
        self.patches = patches
        self.max_distance = max_distance
        self.centers = np.array([p.center for p in patches], dtype=float)
        self.normals = np.array(
            [p.normal / np.linalg.norm(p.normal) for p in patches], dtype=float
        )
        axes = [p.axes() for p in patches]
        self.axis_u = np.array([a[0] for a in axes])
        self.axis_v = np.array([a[1] for a in axes])
        self.half_u = np.array([p.extent_u for p in patches]) / 2.0
        self.half_v = np.array([p.extent_v for p in patches]) / 2.0

    def __len__(self) -> int:
        return len(self.patches)

    def query(self, points: np.ndarray, origin: np.ndarray | None = None) -> PlaneQuery:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(points) == 0:
            return PlaneQuery.empty(0)

        rel = points[:, None, :] - self.centers[None, :, :]  # (n, m, 3)
        a = np.einsum("nmk,mk->nm", rel, self.axis_u)
        b = np.einsum("nmk,mk->nm", rel, self.axis_v)
        h = np.einsum("nmk,mk->nm", rel, self.normals)
        a_c = np.clip(a, -self.half_u, self.half_u)
        b_c = np.clip(b, -self.half_v, self.half_v)
        dist2 = (a - a_c) ** 2 + (b - b_c) ** 2 + h**2

        best = np.argmin(dist2, axis=1)
        rows = np.arange(len(points))
        found = dist2[rows, best] <= self.max_distance**2
        anchors = (
            self.centers[best]
            + a_c[rows, best][:, None] * self.axis_u[best]
            + b_c[rows, best][:, None] * self.axis_v[best]
        )
        normals = orient_toward(self.normals[best], anchors, origin)
        return PlaneQuery(found=found, anchors=anchors, normals=normals, patch_ids=best)

    def nearest_plane(
        self, point: np.ndarray, origin: np.ndarray | None = None
    ) -> Plane | None:
        result = self.query(np.asarray(point, dtype=float)[None, :], origin)
        if not result.found[0]:
            return None
        return Plane(anchor=result.anchors[0], normal=result.normals[0])

    def insert_scan(self, points: np.ndarray) -> None:
        # world geometry is fixed
        return None


def voxel_first(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Indices of the first point falling in each voxel, in input order."""
    if len(points) == 0 or voxel_size <= 0.0:
        return np.arange(len(points))
    keys = np.floor(points / voxel_size).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return np.sort(first)


class PointPlaneMap:
    """Accumulated global points, one per voxel, with a KD-tree for plane fits."""

    def __init__(
        self,
        voxel_size: float = 0.3,
        neighbors: int = 5,
        planarity_threshold: float = 0.1,
        max_neighbor_distance: float = 2.0,
    ):
        if voxel_size <= 0.0:
            logger.error(f"Point map voxel size must be positive, got {voxel_size}.")
            raise ConfigError(f"voxel_size must be positive, got {voxel_size}", ["voxel_size"])
        self.voxel_size = voxel_size
        self.neighbors = neighbors
        self.planarity_threshold = planarity_threshold
        self.max_neighbor_distance = max_neighbor_distance
        self._voxels: set[tuple[int, int, int]] = set()
        self._points: list[np.ndarray] = []
        self._cloud = np.zeros((0, 3))
        self._tree: KDTree | None = None

    def __len__(self) -> int:
        return len(self._cloud)

    @property
    def points(self) -> np.ndarray:
        return self._cloud

    def insert_scan(self, points: np.ndarray) -> None:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(points) == 0:
            return
        keys = np.floor(points / self.voxel_size).astype(np.int64)
        added = []
        for i in voxel_first(points, self.voxel_size):
            key = tuple(int(k) for k in keys[i])
            if key in self._voxels:
                continue
            self._voxels.add(key)
            added.append(points[i])
        if added:
            self._cloud = np.vstack([self._cloud, np.array(added)])
            self._tree = None
        logger.debug(f"Point map grew by {len(added)} to {len(self._cloud)} points.")

    def query(self, points: np.ndarray, origin: np.ndarray | None = None) -> PlaneQuery:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        result = PlaneQuery.empty(len(points))
        if len(points) == 0 or len(self._cloud) < self.neighbors:
            return result
        if self._tree is None:
            self._tree = KDTree(self._cloud)

        dist, idx = self._tree.query(points, k=self.neighbors)
        nbrs = self._cloud[idx]  # (n, k, 3)
        centroids = nbrs.mean(axis=1)
        _, _, vt = np.linalg.svd(nbrs - centroids[:, None, :])
        normals = vt[:, -1, :]
        offsets = np.abs(np.einsum("nkj,nj->nk", nbrs - centroids[:, None, :], normals))

        found = (dist.max(axis=1) <= self.max_neighbor_distance) & (
            offsets.max(axis=1) <= self.planarity_threshold
        )
        result.found = found
        result.anchors = centroids
        result.normals = orient_toward(normals, centroids, origin)
        return result

    def nearest_plane(
        self, point: np.ndarray, origin: np.ndarray | None = None
    ) -> Plane | None:
        result = self.query(np.asarray(point, dtype=float)[None, :], origin)
        if not result.found[0]:
            return None
        return Plane(anchor=result.anchors[0], normal=result.normals[0])


class PlaneMapService:
    def build_map(
        self, config: RunConfig, world: list[PlanePatch] | None
    ) -> AnalyticPlaneMap | PointPlaneMap:
        if config.map_backend == MapBackend.ANALYTIC:
            if not world:
                raise DatasetError("analytic map backend needs a world file")
            logger.info(f"Using analytic map with {len(world)} patches.")
            return AnalyticPlaneMap(world, max_distance=config.max_plane_distance)
        logger.info(f"Using point map with {config.voxel_size} m voxels.")
        return PointPlaneMap(
            voxel_size=config.voxel_size,
            neighbors=config.plane_neighbors,
            planarity_threshold=config.planarity_threshold,
            max_neighbor_distance=config.max_neighbor_distance,
        )

    def load_world(self, path: Path) -> list[PlanePatch]:
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as e:
            logger.error(f"Could not read world file {path}: {e}", exc_info=True)
            raise DatasetError(f"cannot read world file {path}: {e}")

        patches = []
        for number, raw in enumerate(lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                values = [float(v) for v in line.split()]
            except ValueError:
                raise DatasetError(f"{path}:{number}: non-numeric patch entry")
            if len(values) != 8:
                raise DatasetError(
                    f"{path}:{number}: expected 8 values, got {len(values)}"
                )
            normal = np.array(values[3:6])
            norm = np.linalg.norm(normal)
            if norm == 0.0 or values[6] <= 0.0 or values[7] <= 0.0:
                raise DatasetError(f"{path}:{number}: degenerate patch")
            patches.append(
                PlanePatch(
                    center=np.array(values[0:3]),
                    normal=normal / norm,
                    extent_u=values[6],
                    extent_v=values[7],
                )
            )
        logger.debug(f"Loaded {len(patches)} patches from {path}.")
        return patches

    def save_world(self, path: Path, patches: list[PlanePatch]) -> None:
        lines = ["# q_x q_y q_z n_x n_y n_z extent_u extent_v"]
        for patch in patches:
            values = [*patch.center, *patch.normal, patch.extent_u, patch.extent_v]
            lines.append(" ".join(f"{v:.17g}" for v in values))
        try:
            Path(path).write_text("\n".join(lines) + "\n")
        except OSError as e:
            logger.error(f"Could not write world file {path}: {e}", exc_info=True)
            raise DatasetError(f"cannot write world file {path}: {e}")
