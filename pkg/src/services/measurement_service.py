"""Window measurement model.

A measurement owned ``N`` scans back is tied to the current pose through the
chain of change terms between neighbouring poses. With ``δ_m`` the error of
the ``m``-th pose along the chain (0 = current), the owner pose is

    R = R̂_0 Exp(δθ_0) Exp(Δθ_1)ᵀ Exp(δθ_1) ... Exp(Δθ_N)ᵀ Exp(δθ_N)
    p = p̂_0 + δp_0 - Δp_1 + δp_1 ... - Δp_N + δp_N

so the residual of that point depends on every pose from the current one back
to its owner.
"""

import logging
from typing import Sequence

import numpy as np

from core.exceptions import DimensionMismatchError
from core.manifold import pose_boxminus, so3_exp
from model import ErrorLayout, Extrinsics, Measurement, MeasurementSet, StackedSystem

logger = logging.getLogger(__name__)

Pose = tuple[np.ndarray, np.ndarray]


class MeasurementService:
    def change_term(self, pose_k: Pose, pose_km1: Pose) -> np.ndarray:
        """(Δθ, Δp) taking pose k-1 to pose k."""
        return pose_boxminus(pose_k[0], pose_k[1], pose_km1[0], pose_km1[1])

    def coupled_pose(
        self,
        chain: Sequence[Pose],
        owner: int,
        delta: np.ndarray | None = None,
        layout: ErrorLayout | None = None,
    ) -> Pose:
        """Owner pose rebuilt from the current pose through the change terms.

        ``delta`` is a full error vector placed by ``layout``; ``None`` means zero
        error, which reproduces ``chain[owner]`` up to round-off.
        """
        if owner >= len(chain):
            raise DimensionMismatchError(
                f"owner offset {owner} beyond chain of {len(chain)} poses"
            )

        def pose_delta(m: int) -> np.ndarray:
            if delta is None:
                return np.zeros(6)
            return delta[layout.pose_block(m)]

        d0 = pose_delta(0)
        rot = chain[0][0] @ so3_exp(d0[:3])
        pos = chain[0][1] + d0[3:]
        for m in range(1, owner + 1):
            change = self.change_term(chain[m - 1], chain[m])
            dm = pose_delta(m)
            rot = rot @ so3_exp(change[:3]).T @ so3_exp(dm[:3])
            pos = pos - change[3:] + dm[3:]
        return rot, pos

    def lever_arms(self, points: np.ndarray, ext: Extrinsics) -> np.ndarray:
        """D_j: LiDAR points expressed in the IMU frame."""
        return ext.to_imu(np.asarray(points, dtype=float).reshape(-1, 3))

    def residual(self, pose_owner: Pose, m: Measurement, ext: Extrinsics) -> float:
        rot, pos = pose_owner
        d = self.lever_arms(m.point, ext)[0]
        return float(m.normal @ (rot @ d + pos - m.anchor))

    def jacobian_row(
        self,
        chain: Sequence[Pose],
        m: Measurement,
        ext: Extrinsics,
        layout: ErrorLayout,
    ) -> np.ndarray:
        system = self.stack_system(
            MeasurementSet.from_measurements([m]), chain, ext, layout
        )
        return system.H[0]

    def stack_system(
        self,
        measurements: MeasurementSet,
        chain: Sequence[Pose],
        ext: Extrinsics,
        layout: ErrorLayout,
    ) -> StackedSystem:
        """Rows ordered by owner offset, then input order."""
        if len(chain) != layout.n_window + 1:
            raise DimensionMismatchError(
                f"chain has {len(chain)} poses, layout expects {layout.n_window + 1}"
            )
        n = len(measurements)
        if n == 0:
            return StackedSystem(
                H=np.zeros((0, layout.dim)),
                z=np.zeros(0),
                variances=np.zeros(0),
                rows=np.zeros(0, dtype=int),
                owners=np.zeros(0, dtype=int),
            )
        if measurements.owners.max() > layout.n_window or measurements.owners.min() < 0:
            raise DimensionMismatchError(
                f"owner offsets up to {measurements.owners.max()} but only "
                f"{layout.n_window} window poses"
            )

        order = np.argsort(measurements.owners, kind="stable")
        ordered = measurements.subset(order)
        lever = self.lever_arms(ordered.points, ext)
        H = np.zeros((n, layout.dim))
        z = np.zeros(n)

        for owner in np.unique(ordered.owners):
            rows = np.flatnonzero(ordered.owners == owner)
            normals = ordered.normals[rows]
            rot_n, pos_n = chain[owner]
            world = lever[rows] @ rot_n.T + pos_n
            z[rows] = np.einsum("ij,ij->i", normals, world - ordered.anchors[rows])
            for m in range(owner + 1):
                rot_m = chain[m][0]
                u = lever[rows] @ (rot_m.T @ rot_n).T
                a = normals @ rot_m
                H[rows, layout.rotation_block(m)] = np.cross(u, a)
                H[rows, layout.position_block(m)] = normals

        return StackedSystem(
            H=H,
            z=z,
            variances=ordered.variances.copy(),
            rows=order,
            owners=ordered.owners.copy(),
        )
