"""SO(3) and compound-manifold algebra.

All rotation blocks use right perturbation: ``R ⊞ δθ = R · Exp(δθ)``.
Vector blocks are added componentwise. The tangent layout of a full state is
owned by ``services.state_service.StateService.error_block_layout``; the
functions here walk the same order: current pose (θ, p), velocity, gyro bias,
accel bias, gravity, then active poses and fixed poses (θ, p each).
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from core.exceptions import DimensionMismatchError, NonFiniteInputError
from model import FullState, ImuState, WindowPose

SMALL_ANGLE = 1e-8
IMU_ERROR_DIM = 18
POSE_ERROR_DIM = 6


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def so3_exp(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (3,):
        raise DimensionMismatchError(f"so3_exp expects a 3-vector, got {phi.shape}")
    if not np.all(np.isfinite(phi)):
        raise NonFiniteInputError(f"so3_exp received non-finite input {phi}")

    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(rot: np.ndarray) -> np.ndarray:
    rot = np.asarray(rot, dtype=float)
    cos_theta = np.clip(0.5 * (np.trace(rot) - 1.0), -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    antisym = vee(rot - rot.T) * 0.5

    if theta < SMALL_ANGLE:
        return antisym
    if np.pi - theta > 1e-2:
        return theta / np.sin(theta) * antisym

    # Near π: the symmetric part is cosθ·I + (1 - cosθ)·aaᵀ. Read the axis
    # off the column with the largest diagonal entry.
    outer = (0.5 * (rot + rot.T) - cos_theta * np.eye(3)) / (1.0 - cos_theta)
    k = int(np.argmax(np.diag(outer)))
    axis = outer[:, k] / np.sqrt(outer[k, k])
    axis /= np.linalg.norm(axis)
    if float(axis @ antisym) < 0.0:
        axis = -axis
    return theta * axis


def right_jacobian(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * k
    return (
        np.eye(3)
        - (1.0 - np.cos(theta)) / theta**2 * k
        + (theta - np.sin(theta)) / theta**3 * (k @ k)
    )


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * k
    coeff = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * k + coeff * (k @ k)


def pose_boxplus(
    rot: np.ndarray, pos: np.ndarray, delta: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    return rot @ so3_exp(delta[:3]), pos + delta[3:6]


def pose_boxminus(
    rot_a: np.ndarray, pos_a: np.ndarray, rot_b: np.ndarray, pos_b: np.ndarray
) -> np.ndarray:
    return np.concatenate([so3_log(rot_b.T @ rot_a), pos_a - pos_b])


def error_dim(state: FullState) -> int:
    return IMU_ERROR_DIM + POSE_ERROR_DIM * (len(state.active) + len(state.fixed))


def _shift_pose(pose: WindowPose, delta: np.ndarray) -> WindowPose:
    if not np.any(delta):
        return pose
    rot, pos = pose_boxplus(pose.rotation, pose.position, delta)
    return replace(pose, rotation=rot, position=pos)


def boxplus(state: FullState, delta: np.ndarray) -> FullState:
    delta = np.asarray(delta, dtype=float)
    dim = error_dim(state)
    if delta.shape != (dim,):
        raise DimensionMismatchError(
            f"boxplus delta has shape {delta.shape}, state error dimension is {dim}"
        )

    imu = state.imu
    if np.any(delta[:3]):
        rotation = imu.rotation @ so3_exp(delta[0:3])
    else:
        rotation = imu.rotation
    new_imu = ImuState(
        rotation=rotation,
        position=imu.position + delta[3:6],
        velocity=imu.velocity + delta[6:9],
        gyro_bias=imu.gyro_bias + delta[9:12],
        accel_bias=imu.accel_bias + delta[12:15],
        gravity=imu.gravity + delta[15:18],
    )

    offset = IMU_ERROR_DIM
    active = []
    for pose in state.active:
        active.append(_shift_pose(pose, delta[offset : offset + POSE_ERROR_DIM]))
        offset += POSE_ERROR_DIM
    fixed = []
    for pose in state.fixed:
        fixed.append(_shift_pose(pose, delta[offset : offset + POSE_ERROR_DIM]))
        offset += POSE_ERROR_DIM

    return FullState(imu=new_imu, active=active, fixed=fixed)


def boxminus(a: FullState, b: FullState) -> np.ndarray:
    if len(a.active) != len(b.active) or len(a.fixed) != len(b.fixed):
        raise DimensionMismatchError(
            f"boxminus on states with different windows: "
            f"({len(a.active)}, {len(a.fixed)}) vs ({len(b.active)}, {len(b.fixed)})"
        )

    parts = [
        so3_log(b.imu.rotation.T @ a.imu.rotation),
        a.imu.position - b.imu.position,
        a.imu.velocity - b.imu.velocity,
        a.imu.gyro_bias - b.imu.gyro_bias,
        a.imu.accel_bias - b.imu.accel_bias,
        a.imu.gravity - b.imu.gravity,
    ]
    for pose_a, pose_b in zip(a.active + a.fixed, b.active + b.fixed):
        parts.append(
            pose_boxminus(
                pose_a.rotation, pose_a.position, pose_b.rotation, pose_b.position
            )
        )
    return np.concatenate(parts)
