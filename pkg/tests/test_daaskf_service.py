from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.linalg import cho_factor, cho_solve

from core.exceptions import DimensionMismatchError, SingularNormalMatrixError
from core.manifold import boxminus, boxplus, pose_boxplus, right_jacobian, so3_exp, so3_log
from model import Extrinsics, FullState, ImuState, MeasurementSet, SlidingDecision, UpdateStatus
from schemas.config import UpdateConfig, WindowConfig
from services.daaskf_service import DaaskfService
from services.measurement_service import MeasurementService
from services.state_service import StateService


@pytest.fixture
def service() -> DaaskfService:
    return DaaskfService()


def test_schmidt_gain_zeroes_fixed_rows(rng, make_state, service) -> None:
    layout = StateService().error_block_layout(None, make_state(rng, 1, 2))
    K = rng.normal(size=(layout.dim, 7))
    gain = service.schmidt_gain(K, layout)
    assert not np.any(gain[layout.fixed])
    np.testing.assert_array_equal(gain[layout.updating], K[layout.updating])
    with pytest.raises(DimensionMismatchError):
        service.schmidt_gain(K[:-1], layout)


def test_joseph_update_matches_classic_without_fixed_poses(rng, make_state, make_spd, service) -> None:
    states = StateService()
    for _ in range(100):
        layout = states.error_block_layout(None, make_state(rng, int(rng.integers(0, 3)), 0))
        rows = int(rng.integers(1, 30))
        P = make_spd(rng, layout.dim)
        H = rng.normal(size=(rows, layout.dim))
        C = rng.uniform(1e-3, 1e-1, size=rows)
        S = H @ P @ H.T + np.diag(C)
        K = P @ H.T @ np.linalg.inv(S) + rng.normal(scale=1e-2, size=(layout.dim, rows))

        partitioned = service.joseph_update(P, K, H, C, layout)
        classic = service.classic_joseph(P, K, H, C)

        np.testing.assert_allclose(partitioned, classic, rtol=1e-9, atol=1e-12)
        np.testing.assert_array_equal(partitioned, partitioned.T)
        assert np.linalg.eigvalsh(partitioned).min() > -1e-12


def test_joseph_update_scales_to_many_rows(rng, make_state, make_spd, service) -> None:
    # a rows × rows innovation matrix here would need tens of gigabytes
    layout = StateService().error_block_layout(None, make_state(rng, 2, 2))
    rows = 60_000
    P = make_spd(rng, layout.dim)
    H = rng.normal(size=(rows, layout.dim))
    C = rng.uniform(1e-3, 1e-1, size=rows)
    K = service.schmidt_gain(rng.normal(scale=1e-4, size=(layout.dim, rows)), layout)

    partitioned = service.joseph_update(P, K[layout.updating], H, C, layout)
    classic = service.classic_joseph(P, K, H, C)

    np.testing.assert_allclose(partitioned, classic, rtol=1e-8, atol=1e-10)
    np.testing.assert_array_equal(partitioned[layout.fixed, layout.fixed], P[layout.fixed, layout.fixed])


def window_problem(rng, make_state, n_active, n_fixed, rows=60):
    state = make_state(rng, n_active, n_fixed, spread=0.3)
    owners = rng.integers(0, n_active + n_fixed + 1, size=rows)
    chain = state.chain_poses()
    points = rng.uniform(-8.0, 8.0, size=(rows, 3))
    normals = rng.normal(size=(rows, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    anchors = np.array(
        [chain[o][0] @ p + chain[o][1] for o, p in zip(owners, points)]
    ) + normals * rng.normal(scale=0.05, size=(rows, 1))
    ms = MeasurementSet(
        points=points, normals=normals, anchors=anchors,
        variances=np.full(rows, 1e-3), owners=owners,
    )
    return state, ms


def test_schmidt_update_keeps_fixed_poses_bit_identical(rng, make_state, make_spd, service) -> None:
    states = StateService()
    config = UpdateConfig(window=WindowConfig(s_a=2, s_f=2))
    for _ in range(50):
        n_active = int(rng.integers(0, 3))
        n_fixed = int(rng.integers(1, 3))
        state, ms = window_problem(rng, make_state, n_active, n_fixed)
        layout = states.error_block_layout(config.window, state)
        cov = make_spd(rng, layout.dim)

        new_state, new_cov, report = service.iterated_update(state, cov, ms, config, Extrinsics())

        assert report.status == UpdateStatus.OK
        for before, after in zip(state.fixed, new_state.fixed):
            np.testing.assert_array_equal(after.rotation, before.rotation)
            np.testing.assert_array_equal(after.position, before.position)
        np.testing.assert_array_equal(new_cov[layout.fixed, layout.fixed], cov[layout.fixed, layout.fixed])
        u = layout.updating
        assert np.trace(new_cov[u, u]) < np.trace(cov[u, u])


def covariance_form_iekf(state, cov, ms, iterations):
    """Unpartitioned iterated EKF in covariance form, gain P Hᵀ (H P Hᵀ + C)⁻¹."""
    layout = StateService().error_block_layout(None, state)
    eye = np.eye(layout.dim)
    iterate = state
    for _ in range(iterations):
        system = MeasurementService().stack_system(ms, iterate.chain_poses(), Extrinsics(), layout)
        H, z, C = system.H, system.z, np.diag(system.variances)
        error = boxminus(iterate, state)
        J_inv = np.eye(layout.dim)
        for offset in range(len(state.active) + 1):
            block = layout.rotation_block(offset)
            J_inv[block, block] = right_jacobian(error[block])
        P = J_inv @ cov @ J_inv.T
        K = P @ H.T @ np.linalg.inv(H @ P @ H.T + C)
        iterate = boxplus(iterate, -K @ z - (eye - K @ H) @ J_inv @ error)
    A = eye - K @ H
    return iterate, A @ P @ A.T + K @ C @ K.T


@pytest.mark.parametrize("schmidt", [True, False])
def test_update_without_fixed_poses_matches_plain_iekf(rng, make_state, make_spd, service, schmidt) -> None:
    config = UpdateConfig(
        max_iterations=3, convergence_eps=1e-300, window=WindowConfig(s_a=2, s_f=0), schmidt=schmidt
    )
    for _ in range(20):
        state, ms = window_problem(rng, make_state, int(rng.integers(0, 3)), 0)
        cov = make_spd(rng, 18 + 6 * len(state.active))

        new_state, new_cov, report = service.iterated_update(state, cov, ms, config, Extrinsics())
        oracle_state, oracle_cov = covariance_form_iekf(state, cov, ms, 3)

        assert report.iterations == 3
        step = boxminus(new_state, state)
        expected = boxminus(oracle_state, state)
        assert np.linalg.norm(step - expected) <= 1e-9 * np.linalg.norm(expected)
        np.testing.assert_allclose(new_cov, oracle_cov, rtol=1e-9, atol=1e-9 * np.abs(oracle_cov).max())


def test_update_without_schmidt_moves_every_pose(rng, make_state, make_spd, service) -> None:
    config = UpdateConfig(window=WindowConfig(), schmidt=False)
    state, ms = window_problem(rng, make_state, 1, 1)
    cov = make_spd(rng, 30)
    new_state, new_cov, _ = service.iterated_update(state, cov, ms, config, Extrinsics())
    assert not np.array_equal(new_state.fixed[0].position, state.fixed[0].position)
    assert np.trace(new_cov[24:30, 24:30]) < np.trace(cov[24:30, 24:30])


def plane_scene(rng, n=240, noise=0.005):
    truth_rot = so3_exp(rng.normal(scale=0.5, size=3))
    truth_pos = rng.normal(size=3)
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    world = rng.uniform(-10.0, 10.0, size=(n, 3))
    anchors = world + np.cross(normals, rng.normal(size=(n, 3))) + normals * rng.normal(scale=noise, size=(n, 1))
    points = (world - truth_pos) @ truth_rot
    ms = MeasurementSet(
        points=points, normals=normals, anchors=anchors,
        variances=np.full(n, noise**2), owners=np.zeros(n, dtype=int),
    )
    return truth_rot, truth_pos, ms


def gauss_newton_map(prior_rot, prior_pos, prior_std, ms, iterations=30, eps=1e-6):
    """Pose-only MAP by Gauss-Newton with a central-difference Jacobian."""
    weights = np.concatenate([1.0 / prior_std, 1.0 / np.sqrt(ms.variances)])

    def residuals(delta):
        rot, pos = pose_boxplus(prior_rot, prior_pos, delta)
        plane = np.einsum("ij,ij->i", ms.normals, ms.points @ rot.T + pos - ms.anchors)
        return weights * np.concatenate([delta, plane])

    delta = np.zeros(6)
    for _ in range(iterations):
        r = residuals(delta)
        J = np.zeros((len(r), 6))
        for i in range(6):
            step = np.zeros(6)
            step[i] = eps
            J[:, i] = (residuals(delta + step) - residuals(delta - step)) / (2 * eps)
        delta = delta - cho_solve(cho_factor(J.T @ J), J.T @ r)
    return pose_boxplus(prior_rot, prior_pos, delta)


def test_iterated_update_matches_map_oracle(service) -> None:
    config = UpdateConfig(max_iterations=50, convergence_eps=1e-10, window=WindowConfig())
    for seed in range(20):
        rng = np.random.default_rng(seed)
        truth_rot, truth_pos, ms = plane_scene(rng)
        prior_rot = truth_rot @ so3_exp(rng.normal(scale=0.02, size=3))
        prior_pos = truth_pos + rng.normal(scale=0.05, size=3)
        std = np.full(18, 0.1)
        std[0:3] = 0.05
        state = FullState(imu=ImuState(rotation=prior_rot, position=prior_pos))

        new_state, _, report = service.iterated_update(state, np.diag(std**2), ms, config, Extrinsics())
        oracle_rot, oracle_pos = gauss_newton_map(prior_rot, prior_pos, std[0:6], ms)

        assert report.converged
        assert np.linalg.norm(so3_log(oracle_rot.T @ new_state.imu.rotation)) < 1e-6
        assert np.linalg.norm(new_state.imu.position - oracle_pos) < 1e-6
        np.testing.assert_array_equal(new_state.imu.velocity, state.imu.velocity)


def test_iterate_steps_shrink_at_the_end(service) -> None:
    config = UpdateConfig(max_iterations=50, convergence_eps=1e-10, window=WindowConfig())
    for seed in range(20):
        rng = np.random.default_rng(seed)
        truth_rot, truth_pos, ms = plane_scene(rng)
        state = FullState(
            imu=ImuState(
                rotation=truth_rot @ so3_exp(rng.normal(scale=0.02, size=3)),
                position=truth_pos + rng.normal(scale=0.05, size=3),
            )
        )
        _, _, report = service.iterated_update(state, np.eye(18) * 0.01, ms, config, Extrinsics())

        assert len(report.step_norms) == report.iterations >= 2
        assert report.step_norms[-1] <= report.step_norms[-2]


def test_update_reassociates_current_points(rng, service) -> None:
    truth_rot, truth_pos, ms = plane_scene(rng, noise=0.0)
    calls = []

    def associate(iterate, points):
        calls.append(iterate.imu.position.copy())
        return MeasurementSet(
            points=points, normals=ms.normals, anchors=ms.anchors,
            variances=np.full(len(points), 1e-4), owners=ms.owners,
        )

    state = FullState(imu=ImuState(rotation=truth_rot, position=truth_pos + 0.05))
    outcome = service.update(
        state, np.eye(18) * 0.01, MeasurementSet(), UpdateConfig(), Extrinsics(),
        associate=associate, current_points=ms.points,
    )
    assert len(calls) == outcome.report.iterations
    assert len(outcome.current) == len(ms)
    np.testing.assert_allclose(outcome.state.imu.position, truth_pos, atol=1e-3)


def test_update_without_rows_is_skipped(rng, make_state, make_cov, service) -> None:
    state = make_state(rng, 1, 1)
    cov = make_cov(state)
    new_state, new_cov, report = service.iterated_update(state, cov, MeasurementSet(), UpdateConfig(), Extrinsics())
    assert report.status == UpdateStatus.SKIPPED
    assert new_state is state and new_cov is cov


def test_update_raises_on_singular_prior(rng, service) -> None:
    _, _, ms = plane_scene(rng)
    cov = np.eye(18)
    cov[4, 4] = 0.0
    with pytest.raises(SingularNormalMatrixError) as info:
        service.iterated_update(FullState(), cov, ms, UpdateConfig(), Extrinsics())
    assert info.value.state is not None


def test_update_checks_covariance_shape(rng, service) -> None:
    _, _, ms = plane_scene(rng)
    with pytest.raises(DimensionMismatchError):
        service.iterated_update(FullState(), np.eye(24), ms, UpdateConfig(), Extrinsics())


def slide_n(service, config, chis, adaptive=True):
    state, cov = FullState(), np.eye(18) * 1e-2
    decisions = []
    for k, chi in enumerate(chis):
        state = FullState(imu=ImuState(position=np.array([float(k), 0.0, 0.0])), active=state.active, fixed=state.fixed)
        state, cov, decision = service.slide(state, cov, config, adaptive=adaptive, scan_index=k, chi=chi)
        decisions.append(decision)
    return state, cov, decisions


def test_slide_fills_window_then_transfers_well_conditioned_poses(service) -> None:
    state, cov, decisions = slide_n(service, WindowConfig(), [1.1, 1.2, 1.3, 1.4, 1.2])

    assert decisions == [SlidingDecision.NONE] * 2 + [SlidingDecision.FULL] * 3
    assert [p.scan_index for p in state.active] == [4, 3]
    assert [p.scan_index for p in state.fixed] == [2, 1]
    assert cov.shape == (42, 42)


def test_slide_drops_degenerate_poses(service) -> None:
    state, _, decisions = slide_n(service, WindowConfig(), [5.0, math.inf, None, 1.2])

    assert decisions == [SlidingDecision.NONE, SlidingDecision.NONE, SlidingDecision.PARTIAL, SlidingDecision.PARTIAL]
    assert not state.fixed
    assert [p.scan_index for p in state.active] == [3, 2]


def test_slide_without_adaptivity_always_transfers(service) -> None:
    state, _, decisions = slide_n(service, WindowConfig(), [9.0, 9.0, 9.0], adaptive=False)
    assert decisions[-1] == SlidingDecision.FULL
    assert [p.scan_index for p in state.fixed] == [0]
