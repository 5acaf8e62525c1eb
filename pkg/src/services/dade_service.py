import logging
import math
from dataclasses import dataclass

import numpy as np

from core.exceptions import DimensionMismatchError
from model import ChiBlock, ErrorLayout, Extrinsics, Measurement, StackedSystem
from schemas.report import DegeneracyReport, LocalizabilityScores

logger = logging.getLogger(__name__)

RANK_FLOOR = 1e-12


@dataclass
class CompensationResult:
    mask: np.ndarray
    added: int
    chi: float
    exhausted: bool


def chi_columns(layout: ErrorLayout, block: ChiBlock, offset: int = 0) -> slice:
    if block == ChiBlock.POSITION:
        return layout.position_block(offset)
    if block == ChiBlock.ROTATION:
        return layout.rotation_block(offset)
    return layout.pose_block(offset)


def condition_from_gram(gram: np.ndarray) -> float:
    """σ_max / σ_min of H from the eigenvalues of HᵀH."""
    eig = np.linalg.eigvalsh(gram)
    if eig[-1] <= 0.0 or eig[0] <= RANK_FLOOR**2 * eig[-1]:
        return math.inf
    return float(math.sqrt(eig[-1] / eig[0]))


class DadeService:
    def condition_number(self, H: np.ndarray) -> float:
        H = np.asarray(H, dtype=float)
        if H.ndim != 2 or H.shape[0] == 0 or H.shape[1] == 0:
            raise DimensionMismatchError(f"condition number of empty matrix {H.shape}")
        if H.shape[0] < H.shape[1]:
            return math.inf
        sigma = np.linalg.svd(H, compute_uv=False)
        if sigma[0] == 0.0 or sigma[-1] < RANK_FLOOR * sigma[0]:
            return math.inf
        return float(sigma[0] / sigma[-1])

    def split_jacobian(
        self, system: StackedSystem, layout: ErrorLayout
    ) -> tuple[np.ndarray, np.ndarray]:
        """Current-pose rotation and position columns (H_R, H_p)."""
        return system.H[:, layout.rotation_block(0)], system.H[:, layout.position_block(0)]

    def localizability(
        self,
        m: Measurement,
        pose_k: tuple[np.ndarray, np.ndarray],
        ext: Extrinsics,
        V_p: np.ndarray,
        V_R: np.ndarray,
        pose_owner: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> LocalizabilityScores:
        """Absolute projections of one measurement's current-pose row."""
        rot_k = pose_k[0]
        lever = ext.to_imu(np.asarray(m.point, dtype=float)[None, :])[0]
        if pose_owner is not None:
            lever = rot_k.T @ pose_owner[0] @ lever
        row_r = np.cross(lever, m.normal @ rot_k)
        omega_p, omega_r = self.localizability_rows(
            row_r[None, :], np.asarray(m.normal, dtype=float)[None, :], V_p, V_R
        )
        return LocalizabilityScores(
            omega_p=tuple(float(v) for v in omega_p[0]),
            omega_r=tuple(float(v) for v in omega_r[0]),
        )

    def localizability_rows(
        self, H_R: np.ndarray, H_p: np.ndarray, V_p: np.ndarray, V_R: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        return np.abs(H_p @ V_p), np.abs(H_R @ V_R)

    def right_singular(self, H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Singular values (descending, padded to 3) and V with columns as directions."""
        if H.shape[0] == 0:
            return np.zeros(3), np.eye(3)
        if H.shape[0] < H.shape[1]:
            # zero rows complete V without changing the spectrum
            H = np.vstack([H, np.zeros((H.shape[1] - H.shape[0], H.shape[1]))])
        _, sigma, vt = np.linalg.svd(H, full_matrices=False)
        return sigma, vt.T

    def prune(
        self, omega_p: np.ndarray, omega_r: np.ndarray, t_loc: float
    ) -> np.ndarray:
        """Keep mask: any score component above ``t_loc``."""
        if len(omega_p) == 0:
            return np.zeros(0, dtype=bool)
        peak = np.maximum(omega_p.max(axis=1), omega_r.max(axis=1))
        return peak > t_loc

    def degeneracy_report(
        self,
        system: StackedSystem,
        layout: ErrorLayout,
        block: ChiBlock = ChiBlock.POSITION,
    ) -> DegeneracyReport:
        H_R, H_p = self.split_jacobian(system, layout)
        sigma_p, V_p = self.right_singular(H_p)
        sigma_r, V_R = self.right_singular(H_R)
        H_chi = system.H[:, chi_columns(layout, block)]
        chi = self.condition_number(H_chi) if len(system) else math.inf
        sigma = np.linalg.svd(H_chi, compute_uv=False) if len(system) else np.zeros(0)
        return DegeneracyReport(
            chi=chi,
            singular_values=[float(s) for s in sigma],
            singular_values_p=[float(s) for s in sigma_p],
            singular_values_r=[float(s) for s in sigma_r],
            direction_p=tuple(float(v) for v in V_p[:, 2]),
            direction_r=tuple(float(v) for v in V_R[:, 2]),
        )

    def compensate(
        self,
        system: StackedSystem,
        layout: ErrorLayout,
        selected: np.ndarray,
        candidates: np.ndarray,
        report: DegeneracyReport,
        t_chi: float,
        t_loc: float,
        batch: int = 10,
        block: ChiBlock = ChiBlock.POSITION,
    ) -> CompensationResult:
        """Add candidate rows along the weakest directions until χ < t_chi.

        ``selected`` and ``candidates`` are boolean row masks over ``system``.
        """
        mask = selected.copy()
        chi = report.chi
        cand_rows = np.flatnonzero(candidates & ~selected)
        if chi < t_chi:
            return CompensationResult(mask=mask, added=0, chi=chi, exhausted=False)

        H_R, H_p = self.split_jacobian(system, layout)
        score_p = np.abs(H_p[cand_rows] @ np.asarray(report.direction_p))
        score_r = np.abs(H_R[cand_rows] @ np.asarray(report.direction_r))
        score = np.maximum(score_p, score_r)
        keep = score > t_loc
        ranked = cand_rows[keep][np.argsort(-score[keep], kind="stable")]

        columns = chi_columns(layout, block)
        H_chi = system.H[:, columns]
        gram = H_chi[mask].T @ H_chi[mask]
        added = 0
        for start in range(0, len(ranked), batch):
            rows = ranked[start : start + batch]
            mask[rows] = True
            added += len(rows)
            gram += H_chi[rows].T @ H_chi[rows]
            chi = condition_from_gram(gram)
            logger.debug(f"Compensation added {added} rows, χ={chi:.3f}.")
            if chi < t_chi:
                chi = self.condition_number(H_chi[mask])
                return CompensationResult(mask=mask, added=added, chi=chi, exhausted=False)
        if added:
            chi = self.condition_number(H_chi[mask])
        return CompensationResult(mask=mask, added=added, chi=chi, exhausted=True)

    def degeneracy_of_state(
        self,
        system: StackedSystem,
        layout: ErrorLayout,
        offset: int = 0,
        block: ChiBlock = ChiBlock.POSE,
    ) -> float:
        """χ of the rows owned by one pose, over that pose's own columns."""
        owned = system.owners == offset
        if owned.sum() < 6:
            return math.inf
        return self.condition_number(system.H[owned][:, chi_columns(layout, block, offset)])
