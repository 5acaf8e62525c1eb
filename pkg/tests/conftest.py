from __future__ import annotations

import numpy as np
import pytest

from core.manifold import error_dim, so3_exp
from model import FullState, ImuState, MeasurementSet, PoseRole, WindowPose


def random_rotation(rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return so3_exp(rng.normal(scale=scale, size=3))


def random_spd(rng: np.random.Generator, dim: int, scale: float = 1e-2) -> np.ndarray:
    a = rng.normal(size=(dim, dim))
    return scale * (a @ a.T / dim + np.eye(dim))


def random_state(
    rng: np.random.Generator, n_active: int = 0, n_fixed: int = 0, spread: float = 0.5
) -> FullState:
    imu = ImuState(
        rotation=random_rotation(rng),
        position=rng.normal(scale=2.0, size=3),
        velocity=rng.normal(size=3),
        gyro_bias=rng.normal(scale=0.01, size=3),
        accel_bias=rng.normal(scale=0.05, size=3),
        gravity=np.array([0.0, 0.0, -9.81]) + rng.normal(scale=0.05, size=3),
    )

    def pose(role: PoseRole, index: int) -> WindowPose:
        return WindowPose(
            rotation=imu.rotation @ random_rotation(rng, spread),
            position=imu.position + rng.normal(scale=spread, size=3),
            role=role,
            scan_index=index,
        )

    return FullState(
        imu=imu,
        active=[pose(PoseRole.ACTIVE, i) for i in range(n_active)],
        fixed=[pose(PoseRole.FIXED, n_active + j) for j in range(n_fixed)],
    )


def random_measurements(
    rng: np.random.Generator, n: int, owners: np.ndarray | int = 0, variance: float = 1e-4
) -> MeasurementSet:
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return MeasurementSet(
        points=rng.uniform(-10.0, 10.0, size=(n, 3)),
        normals=normals,
        anchors=rng.uniform(-10.0, 10.0, size=(n, 3)),
        variances=np.full(n, variance),
        owners=np.broadcast_to(np.asarray(owners, dtype=int), (n,)).copy(),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(7)


@pytest.fixture
def make_state():
    return random_state


@pytest.fixture
def make_spd():
    return random_spd


@pytest.fixture
def make_measurements():
    return random_measurements


@pytest.fixture
def make_cov(rng):
    def build(state: FullState) -> np.ndarray:
        return random_spd(rng, error_dim(state))

    return build
