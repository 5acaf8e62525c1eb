import logging
import math
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from core.exceptions import DimensionMismatchError, SingularNormalMatrixError
from core.manifold import boxminus, boxplus, right_jacobian, right_jacobian_inv
from model import (
    ErrorLayout,
    Extrinsics,
    FullState,
    MeasurementSet,
    SlidingDecision,
    StackedSystem,
    UpdateStatus,
)
from schemas.config import UpdateConfig, WindowConfig
from schemas.report import UpdateReport
from services.measurement_service import MeasurementService
from services.state_service import StateService

logger = logging.getLogger(__name__)

# Re-associates current-scan points against the map at a given iterate.
Associator = Callable[[FullState, np.ndarray], MeasurementSet]


class UpdateOutcome(NamedTuple):
    state: FullState
    cov: np.ndarray
    report: UpdateReport
    system: StackedSystem
    current: MeasurementSet


class DaaskfService:
    def __init__(
        self,
        measurement_service: MeasurementService | None = None,
        state_service: StateService | None = None,
    ):
        self.measurements = measurement_service or MeasurementService()
        self.states = state_service or StateService()

    def schmidt_gain(self, K_full: np.ndarray, layout: ErrorLayout) -> np.ndarray:
        if K_full.shape[0] != layout.dim:
            raise DimensionMismatchError(
                f"gain has {K_full.shape[0]} rows, error dimension is {layout.dim}"
            )
        K = K_full.copy()
        K[layout.fixed, :] = 0.0
        return K

    def joseph_update(
        self,
        P: np.ndarray,
        K_u: np.ndarray,
        H: np.ndarray,
        C: np.ndarray,
        layout: ErrorLayout,
    ) -> np.ndarray:
        """Partitioned Joseph form; the fixed-fixed block is copied unchanged.

        ``K_u`` holds the gain rows of the updating block, ``C`` the diagonal
        measurement variances.
        """
        u, f = layout.updating, layout.fixed
        if K_u.shape != (u.stop, H.shape[0]) or P.shape != (layout.dim, layout.dim):
            raise DimensionMismatchError(
                f"joseph_update got K_u {K_u.shape}, H {H.shape}, P {P.shape}"
            )
        # K S Kᵀ = (KH) P (KH)ᵀ + K C Kᵀ; nothing here is rows × rows
        KH = K_u @ H
        KHP = KH @ P
        KHP_u = KHP[:, u]

        P_uu = P[u, u] - KHP_u - KHP_u.T + KHP @ KH.T + (K_u * C) @ K_u.T
        P_uf = P[u, f] - KHP[:, f]

        out = P.copy()
        out[u, u] = 0.5 * (P_uu + P_uu.T)
        out[u, f] = P_uf
        out[f, u] = P_uf.T
        return out

    def classic_joseph(
        self, P: np.ndarray, K: np.ndarray, H: np.ndarray, C: np.ndarray
    ) -> np.ndarray:
        A = np.eye(P.shape[0]) - K @ H
        out = A @ P @ A.T + (K * C) @ K.T
        return 0.5 * (out + out.T)

    def tangent_jacobians(
        self, error: np.ndarray, layout: ErrorLayout
    ) -> tuple[np.ndarray, np.ndarray]:
        """J and J⁻¹ of (x^λ ⊞ δ) ⊟ x̂ ≈ e + J δ; identity off the rotation blocks."""
        J = np.eye(layout.dim)
        J_inv = np.eye(layout.dim)
        for offset in range(layout.n_active + 1):
            block = layout.rotation_block(offset)
            J[block, block] = right_jacobian_inv(error[block])
            J_inv[block, block] = right_jacobian(error[block])
        return J, J_inv

    def update(
        self,
        state: FullState,
        cov: np.ndarray,
        measurements: MeasurementSet,
        config: UpdateConfig,
        ext: Extrinsics,
        associate: Associator | None = None,
        current_points: np.ndarray | None = None,
    ) -> UpdateOutcome:
        """Iterated Schmidt-Kalman update over a fixed measurement selection.

        ``measurements`` holds the frozen rows. When ``associate`` is given,
        ``current_points`` are re-associated against the map at every iterate
        and stacked as owner-0 rows.
        """
        layout = self.states.error_block_layout(config.window, state)
        if cov.shape != (layout.dim, layout.dim):
            raise DimensionMismatchError(
                f"covariance is {cov.shape}, state error dimension is {layout.dim}"
            )
        try:
            prior_info = cho_solve(cho_factor(cov), np.eye(layout.dim))
        except LinAlgError as e:
            logger.warning(f"Prior covariance not positive definite: {e}")
            raise SingularNormalMatrixError(
                f"prior covariance is not positive definite: {e}", state=state
            )

        fixed = layout.fixed
        eye = np.eye(layout.dim)
        iterate = state
        current = MeasurementSet()
        converged = False
        steps: list[float] = []

        for iterations in range(1, config.max_iterations + 1):
            if associate is not None and current_points is not None:
                current = associate(iterate, current_points)
            system = self.measurements.stack_system(
                MeasurementSet.concat([current, measurements]),
                iterate.chain_poses(),
                ext,
                layout,
            )
            if len(system) == 0:
                logger.warning("Update skipped: no measurement rows.")
                return UpdateOutcome(
                    state, cov, UpdateReport(status=UpdateStatus.SKIPPED), system, current
                )

            error = boxminus(iterate, state)
            J, J_inv = self.tangent_jacobians(error, layout)
            P = J_inv @ cov @ J_inv.T
            P[fixed, fixed] = cov[fixed, fixed]

            H, z = system.H, system.z
            HtCinv = H.T / system.variances
            try:
                normal = cho_factor(HtCinv @ H + J.T @ prior_info @ J)
            except LinAlgError as e:
                logger.warning(f"Normal matrix singular at iteration {iterations}: {e}")
                raise SingularNormalMatrixError(
                    f"normal matrix not invertible at iteration {iterations}",
                    state=iterate,
                    iterations=iterations - 1,
                )
            K = cho_solve(normal, HtCinv)
            if config.schmidt:
                K = self.schmidt_gain(K, layout)

            delta = -K @ z - (eye - K @ H) @ (J_inv @ error)
            if config.schmidt:
                delta[fixed] = 0.0
            iterate = boxplus(iterate, delta)

            step = float(np.linalg.norm(delta))
            steps.append(step)
            logger.debug(
                f"Iteration {iterations}: {len(system)} rows, |δ|={step:.3e}, "
                f"|z|={np.linalg.norm(z):.3e}"
            )
            if step < config.convergence_eps:
                converged = True
                break

        if config.schmidt:
            new_cov = self.joseph_update(
                P, K[layout.updating], H, system.variances, layout
            )
        else:
            new_cov = self.classic_joseph(P, K, H, system.variances)

        report = UpdateReport(
            status=UpdateStatus.OK,
            iterations=iterations,
            converged=converged,
            rows_total=len(system),
            step_norms=steps,
        )
        return UpdateOutcome(iterate, new_cov, report, system, current)

    def iterated_update(
        self,
        state: FullState,
        cov: np.ndarray,
        measurements: MeasurementSet,
        config: UpdateConfig,
        ext: Extrinsics,
        associate: Associator | None = None,
        current_points: np.ndarray | None = None,
    ) -> tuple[FullState, np.ndarray, UpdateReport]:
        outcome = self.update(
            state, cov, measurements, config, ext, associate, current_points
        )
        return outcome.state, outcome.cov, outcome.report

    def slide(
        self,
        state: FullState,
        cov: np.ndarray,
        config: WindowConfig,
        adaptive: bool = True,
        scan_index: int = 0,
        timestamp: float = 0.0,
        chi: float | None = None,
        measurements: MeasurementSet | None = None,
    ) -> tuple[FullState, np.ndarray, SlidingDecision]:
        """Make room for the current pose, then clone it into the active set."""
        decision = SlidingDecision.NONE
        if len(state.active) >= config.s_a:
            oldest = len(state.active) - 1
            chi_last = state.active[oldest].chi
            chi_last = math.inf if chi_last is None else chi_last
            if not adaptive or chi_last < config.t_chi:
                decision = SlidingDecision.FULL
                state, cov = self.states.transfer_to_fixed(state, cov, config, oldest)
            else:
                decision = SlidingDecision.PARTIAL
                state, cov = self.states.marginalize_drop(state, cov, oldest)
            logger.debug(
                f"Sliding {decision.value}: oldest active χ={chi_last:.3f} "
                f"(T_χ={config.t_chi})."
            )

        state, cov = self.states.augment(
            state,
            cov,
            config,
            scan_index=scan_index,
            timestamp=timestamp,
            chi=chi,
            measurements=measurements,
        )
        return state, cov, decision
