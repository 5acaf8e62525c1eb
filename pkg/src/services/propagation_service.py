import logging
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import block_diag

from core.exceptions import (
    DimensionMismatchError,
    InitializationError,
    InvalidTimestepError,
    InsufficientSamplesError,
    NonFiniteInputError,
)
from core.manifold import IMU_ERROR_DIM, error_dim, right_jacobian, skew, so3_exp
from model import FullState, ImuSample, ImuState, NoiseParams

logger = logging.getLogger(__name__)

NOISE_DIM = 12
MIN_INIT_SAMPLES = 100
GRAVITY_NORM_RANGE = (9.0, 10.5)
STATIONARY_GYRO_STD = 0.1
STATIONARY_ACCEL_STD = 0.5


class StaticInit(NamedTuple):
    gravity: np.ndarray
    gyro_bias: np.ndarray
    motion_detected: bool


class PropagationService:
    def f_model(self, imu: ImuState, u: ImuSample, window_dim: int = 0) -> np.ndarray:
        """Noise-free continuous-time rate over the error layout."""
        rate = np.zeros(IMU_ERROR_DIM + window_dim)
        rate[0:3] = u.angular_rate - imu.gyro_bias
        rate[3:6] = imu.velocity
        rate[6:9] = imu.rotation @ (u.acceleration - imu.accel_bias) + imu.gravity
        return rate

    def discrete_step(
        self,
        imu: ImuState,
        u: ImuSample,
        dt: float,
        noise_sample: np.ndarray | None = None,
    ) -> ImuState:
        """One forward-Euler step; ``noise_sample`` is [n_ω, n_a, n_bω, n_ba]."""
        w = np.zeros(NOISE_DIM) if noise_sample is None else noise_sample
        omega = u.angular_rate - imu.gyro_bias - w[0:3]
        accel = u.acceleration - imu.accel_bias - w[3:6]
        return ImuState(
            rotation=imu.rotation @ so3_exp(omega * dt),
            position=imu.position + imu.velocity * dt,
            velocity=imu.velocity + (imu.rotation @ accel + imu.gravity) * dt,
            gyro_bias=imu.gyro_bias + w[6:9] * dt,
            accel_bias=imu.accel_bias + w[9:12] * dt,
            gravity=imu.gravity.copy(),
        )

    def jacobians(
        self, imu: ImuState, u: ImuSample, dt: float
    ) -> tuple[np.ndarray, np.ndarray]:
        """F_x̃ (18x18) and F_w (18x12) of ``discrete_step``."""
        omega_dt = (u.angular_rate - imu.gyro_bias) * dt
        accel = u.acceleration - imu.accel_bias
        jr = right_jacobian(omega_dt)
        rot = imu.rotation
        eye = np.eye(3)

        F = np.eye(IMU_ERROR_DIM)
        F[0:3, 0:3] = so3_exp(-omega_dt)
        F[0:3, 9:12] = -jr * dt
        F[3:6, 6:9] = eye * dt
        F[6:9, 0:3] = -rot @ skew(accel) * dt
        F[6:9, 12:15] = -rot * dt
        F[6:9, 15:18] = eye * dt

        Fw = np.zeros((IMU_ERROR_DIM, NOISE_DIM))
        Fw[0:3, 0:3] = -jr * dt
        Fw[6:9, 3:6] = -rot * dt
        Fw[9:12, 6:9] = eye * dt
        Fw[12:15, 9:12] = eye * dt
        return F, Fw

    def process_noise(self, noise: NoiseParams, dt: float) -> np.ndarray:
        return block_diag(
            np.eye(3) * noise.gyro,
            np.eye(3) * noise.accel,
            np.eye(3) * noise.gyro_bias,
            np.eye(3) * noise.accel_bias,
        ) / dt

    def propagate(
        self,
        state: FullState,
        cov: np.ndarray,
        u: ImuSample,
        dt: float,
        noise: NoiseParams,
        gravity_noise: float = 0.0,
    ) -> tuple[FullState, np.ndarray]:
        if not dt > 0.0:
            raise InvalidTimestepError(f"propagation step must be positive, got {dt}")
        dim = error_dim(state)
        if cov.shape != (dim, dim):
            raise DimensionMismatchError(
                f"covariance is {cov.shape}, state error dimension is {dim}"
            )
        if not (np.all(np.isfinite(u.angular_rate)) and np.all(np.isfinite(u.acceleration))):
            raise NonFiniteInputError(f"non-finite IMU sample at t={u.timestamp}")

        F, Fw = self.jacobians(state.imu, u, dt)
        Q = self.process_noise(noise, dt)
        imu_block = slice(0, IMU_ERROR_DIM)
        window_block = slice(IMU_ERROR_DIM, dim)

        new_cov = cov.copy()
        p_ii = F @ cov[imu_block, imu_block] @ F.T + Fw @ Q @ Fw.T
        p_ii[15:18, 15:18] += np.eye(3) * gravity_noise * dt
        new_cov[imu_block, imu_block] = 0.5 * (p_ii + p_ii.T)
        if dim > IMU_ERROR_DIM:
            p_iw = F @ cov[imu_block, window_block]
            new_cov[imu_block, window_block] = p_iw
            new_cov[window_block, imu_block] = p_iw.T

        new_state = FullState(
            imu=self.discrete_step(state.imu, u, dt),
            active=state.active,
            fixed=state.fixed,
        )
        return new_state, new_cov

    def static_initialize(
        self, samples: Sequence[ImuSample], min_samples: int = MIN_INIT_SAMPLES
    ) -> StaticInit:
        if len(samples) < min_samples:
            raise InsufficientSamplesError(
                f"static initialization needs {min_samples} samples, got {len(samples)}"
            )
        omega = np.array([s.angular_rate for s in samples])
        accel = np.array([s.acceleration for s in samples])

        gyro_bias = omega.mean(axis=0)
        gravity = -accel.mean(axis=0)
        gravity_norm = float(np.linalg.norm(gravity))
        low, high = GRAVITY_NORM_RANGE
        if not low <= gravity_norm <= high:
            raise InitializationError(
                f"estimated gravity norm {gravity_norm:.3f} outside [{low}, {high}]"
            )

        motion = bool(
            np.any(omega.std(axis=0) > STATIONARY_GYRO_STD)
            or np.any(accel.std(axis=0) > STATIONARY_ACCEL_STD)
        )
        if motion:
            logger.warning(
                f"Motion detected during static initialization "
                f"(gyro std {omega.std(axis=0)}, accel std {accel.std(axis=0)})."
            )
        logger.info(
            f"Static initialization over {len(samples)} samples: "
            f"gravity {gravity}, gyro bias {gyro_bias}."
        )
        return StaticInit(gravity=gravity, gyro_bias=gyro_bias, motion_detected=motion)
