import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from core.exceptions import DatasetError, TrajectoryError
from model import Trajectory
from schemas.report import ApeResult

logger = logging.getLogger(__name__)

MIN_APE_PAIRS = 3


@dataclass
class PosePairs:
    gt_times: np.ndarray
    est_times: np.ndarray
    gt_positions: np.ndarray
    est_positions: np.ndarray

    def __len__(self) -> int:
        return len(self.est_times)


class EvaluationService:
    def associate(
        self, gt: Trajectory, est: Trajectory, max_dt: float = 0.02
    ) -> PosePairs:
        """Pair each estimate with the nearest ground-truth timestamp."""
        if len(gt) == 0 or len(est) == 0:
            raise TrajectoryError("cannot associate an empty trajectory")

        right = np.clip(np.searchsorted(gt.timestamps, est.timestamps), 1, len(gt) - 1)
        left = right - 1
        if len(gt) == 1:
            nearest = np.zeros(len(est), dtype=int)
        else:
            closer_left = np.abs(est.timestamps - gt.timestamps[left]) <= np.abs(
                gt.timestamps[right] - est.timestamps
            )
            nearest = np.where(closer_left, left, right)
        keep = np.abs(gt.timestamps[nearest] - est.timestamps) <= max_dt
        if not keep.any():
            raise TrajectoryError(
                f"no pose pairs within {max_dt} s "
                f"(gt {len(gt)} poses, est {len(est)} poses)"
            )
        logger.debug(f"Associated {int(keep.sum())} of {len(est)} estimated poses.")
        return PosePairs(
            gt_times=gt.timestamps[nearest[keep]],
            est_times=est.timestamps[keep],
            gt_positions=gt.positions[nearest[keep]],
            est_positions=est.positions[keep],
        )

    def align(self, pairs: PosePairs) -> tuple[np.ndarray, np.ndarray, bool]:
        """Rigid (R, t) mapping estimate onto ground truth; flag collinear input."""
        to_points, from_points = pairs.gt_positions, pairs.est_positions
        mean_to = to_points.mean(axis=0)
        mean_from = from_points.mean(axis=0)
        delta_to = to_points - mean_to
        delta_from = from_points - mean_from

        cov_matrix = delta_to.T @ delta_from / len(pairs)
        U, _, V_t = np.linalg.svd(cov_matrix)
        if np.linalg.matrix_rank(cov_matrix) < 2:
            logger.warning("Collinear trajectory; falling back to translation-only alignment.")
            return np.eye(3), mean_to - mean_from, True

        S = np.eye(3)
        if np.linalg.det(U) * np.linalg.det(V_t) < 0.0:
            S[2, 2] = -1.0
        R = U @ S @ V_t
        return R, mean_to - R @ mean_from, False

    def ape_rmse(self, pairs: PosePairs) -> ApeResult:
        if len(pairs) < MIN_APE_PAIRS:
            raise TrajectoryError(
                f"APE needs at least {MIN_APE_PAIRS} pose pairs, got {len(pairs)}"
            )
        R, t, degenerate = self.align(pairs)
        residuals = pairs.gt_positions - (pairs.est_positions @ R.T + t)
        rmse = float(np.sqrt(np.mean(np.sum(residuals**2, axis=1))))
        per_axis = np.sqrt(np.mean(residuals**2, axis=0))
        return ApeResult(
            rmse=rmse,
            per_axis_rmse=tuple(float(v) for v in per_axis),
            pairs=len(pairs),
            alignment_degenerate=degenerate,
            rotation=R.tolist(),
            translation=tuple(float(v) for v in t),
        )

    def read_tum(self, path: Path) -> Trajectory:
        rows = []
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as e:
            logger.error(f"Could not read trajectory {path}: {e}", exc_info=True)
            raise DatasetError(f"cannot read trajectory {path}: {e}")
        for number, raw in enumerate(lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                values = [float(v) for v in line.split()]
            except ValueError:
                raise DatasetError(f"{path}:{number}: non-numeric TUM entry")
            if len(values) != 8:
                raise DatasetError(f"{path}:{number}: expected 8 values, got {len(values)}")
            rows.append(values)

        if not rows:
            return Trajectory(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3, 3)))
        data = np.array(rows)
        if np.any(np.diff(data[:, 0]) <= 0.0):
            raise TrajectoryError(f"{path}: timestamps are not strictly increasing")
        return Trajectory(
            timestamps=data[:, 0],
            positions=data[:, 1:4],
            rotations=Rotation.from_quat(data[:, 4:8]).as_matrix(),
        )

    def write_tum(self, path: Path, trajectory: Trajectory) -> None:
        lines = []
        if len(trajectory):
            quats = Rotation.from_matrix(trajectory.rotations).as_quat()
            for t, p, q in zip(trajectory.timestamps, trajectory.positions, quats):
                lines.append(" ".join(f"{v:.17g}" for v in (t, *p, *q)))
        try:
            Path(path).write_text("".join(line + "\n" for line in lines))
        except OSError as e:
            logger.error(f"Could not write trajectory {path}: {e}", exc_info=True)
            raise DatasetError(f"cannot write trajectory {path}: {e}")
