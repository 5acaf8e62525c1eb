import logging
from dataclasses import replace

import numpy as np

from core.exceptions import (
    DimensionMismatchError,
    InvalidPoseIndexError,
    WindowOverflowError,
)
from core.manifold import IMU_ERROR_DIM, POSE_ERROR_DIM, error_dim
from model import ErrorLayout, FullState, MeasurementSet, PoseRole, WindowPose
from schemas.config import WindowConfig

logger = logging.getLogger(__name__)

IMU_BLOCKS = (
    ("rot", slice(0, 3)),
    ("pos", slice(3, 6)),
    ("vel", slice(6, 9)),
    ("bg", slice(9, 12)),
    ("ba", slice(12, 15)),
    ("grav", slice(15, 18)),
)


class StateService:
    def error_block_layout(
        self, config: WindowConfig | None, state: FullState
    ) -> ErrorLayout:
        if config is not None and (
            len(state.active) > config.s_a or len(state.fixed) > config.s_f
        ):
            raise WindowOverflowError(
                f"state holds {len(state.active)} active / {len(state.fixed)} fixed "
                f"poses, window allows {config.s_a} / {config.s_f}"
            )

        blocks = dict(IMU_BLOCKS)
        start = IMU_ERROR_DIM
        for i in range(len(state.active)):
            blocks[f"active_{i}"] = slice(start, start + POSE_ERROR_DIM)
            start += POSE_ERROR_DIM
        for j in range(len(state.fixed)):
            blocks[f"fixed_{j}"] = slice(start, start + POSE_ERROR_DIM)
            start += POSE_ERROR_DIM
        return ErrorLayout(
            blocks=blocks, n_active=len(state.active), n_fixed=len(state.fixed)
        )

    def check_covariance(self, state: FullState, cov: np.ndarray) -> None:
        dim = error_dim(state)
        if cov.shape != (dim, dim):
            raise DimensionMismatchError(
                f"covariance is {cov.shape}, state error dimension is {dim}"
            )

    def augment(
        self,
        state: FullState,
        cov: np.ndarray,
        config: WindowConfig,
        scan_index: int = 0,
        timestamp: float = 0.0,
        chi: float | None = None,
        measurements: MeasurementSet | None = None,
    ) -> tuple[FullState, np.ndarray]:
        """Clone the current pose as the newest active pose."""
        self.check_covariance(state, cov)
        if len(state.active) >= config.s_a:
            raise WindowOverflowError(
                f"cannot clone: active set already holds {len(state.active)} poses "
                f"(s_a={config.s_a})"
            )

        clone = WindowPose(
            rotation=state.imu.rotation.copy(),
            position=state.imu.position.copy(),
            role=PoseRole.ACTIVE,
            scan_index=scan_index,
            timestamp=timestamp,
            chi=chi,
            measurements=measurements,
        )
        dim = cov.shape[0]
        index = np.concatenate(
            [
                np.arange(IMU_ERROR_DIM),
                np.arange(POSE_ERROR_DIM),
                np.arange(IMU_ERROR_DIM, dim),
            ]
        )
        new_cov = cov[np.ix_(index, index)]
        new_state = FullState(
            imu=state.imu, active=[clone] + list(state.active), fixed=list(state.fixed)
        )
        logger.debug(
            f"Cloned scan {scan_index} into the window "
            f"(active={len(new_state.active)}, fixed={len(new_state.fixed)})."
        )
        return new_state, new_cov

    def marginalize_drop(
        self, state: FullState, cov: np.ndarray, pose_index: int
    ) -> tuple[FullState, np.ndarray]:
        """Remove window pose ``pose_index`` (active first, then fixed)."""
        self.check_covariance(state, cov)
        window = state.window
        if not 0 <= pose_index < len(window):
            raise InvalidPoseIndexError(
                f"pose index {pose_index} outside window of {len(window)}"
            )

        start = IMU_ERROR_DIM + POSE_ERROR_DIM * pose_index
        drop = np.arange(start, start + POSE_ERROR_DIM)
        new_cov = np.delete(np.delete(cov, drop, axis=0), drop, axis=1)

        n_active = len(state.active)
        active = [p for i, p in enumerate(state.active) if i != pose_index]
        fixed = [p for j, p in enumerate(state.fixed) if j + n_active != pose_index]
        logger.debug(
            f"Dropped window pose {pose_index} (scan {window[pose_index].scan_index})."
        )
        return FullState(imu=state.imu, active=active, fixed=fixed), new_cov

    def transfer_to_fixed(
        self,
        state: FullState,
        cov: np.ndarray,
        config: WindowConfig,
        pose_index: int,
    ) -> tuple[FullState, np.ndarray]:
        """Relabel the oldest active pose as the newest fixed pose."""
        self.check_covariance(state, cov)
        if not state.active or pose_index != len(state.active) - 1:
            raise InvalidPoseIndexError(
                f"only the oldest active pose ({len(state.active) - 1}) can be "
                f"transferred, got {pose_index}"
            )

        if config.s_f == 0:
            logger.debug("No fixed slots; transferred pose is dropped instead.")
            return self.marginalize_drop(state, cov, pose_index)

        if len(state.fixed) >= config.s_f:
            state, cov = self.marginalize_drop(state, cov, len(state.window) - 1)

        pose = replace(state.active[pose_index], role=PoseRole.FIXED)
        new_state = FullState(
            imu=state.imu,
            active=list(state.active[:pose_index]),
            fixed=[pose] + list(state.fixed),
        )
        logger.debug(f"Scan {pose.scan_index} moved to the fixed set.")
        return new_state, cov
