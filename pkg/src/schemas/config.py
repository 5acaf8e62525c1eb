import math
from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from core.manifold import so3_exp
from model import ChiBlock, Extrinsics, MapBackend, NoiseParams

DEFAULT_T_LOC = math.cos(math.radians(35.0))


class Preset(str, Enum):
    LODESTAR = "lodestar"
    BASELINE = "baseline"
    VANILLA_SW = "vanilla_sw"
    VANILLA_SCHMIDT = "vanilla_schmidt"
    PRUNE_ONLY = "prune_only"
    DAASKF = "daaskf"


PRESET_TOGGLES: dict[Preset, dict[str, bool]] = {
    Preset.LODESTAR: dict(
        window=True, schmidt=True, dade_prune=True, dade_compensate=True,
        adaptive_sliding=True,
    ),
    Preset.BASELINE: dict(
        window=False, schmidt=False, dade_prune=False, dade_compensate=False,
        adaptive_sliding=False,
    ),
    Preset.VANILLA_SW: dict(
        window=True, schmidt=False, dade_prune=False, dade_compensate=False,
        adaptive_sliding=False,
    ),
    Preset.VANILLA_SCHMIDT: dict(
        window=True, schmidt=True, dade_prune=False, dade_compensate=False,
        adaptive_sliding=False,
    ),
    Preset.PRUNE_ONLY: dict(
        window=False, schmidt=False, dade_prune=True, dade_compensate=False,
        adaptive_sliding=False,
    ),
    Preset.DAASKF: dict(
        window=True, schmidt=True, dade_prune=False, dade_compensate=False,
        adaptive_sliding=True,
    ),
}


class WindowConfig(BaseModel):
    s_a: int = Field(default=2, ge=1)
    s_f: int = Field(default=2, ge=0)
    t_chi: float = Field(default=1.5, gt=1.0)
    t_loc: float = Field(default=DEFAULT_T_LOC, gt=0.0, lt=1.0)
    chi_block: ChiBlock = ChiBlock.POSITION
    compensation_batch: int = Field(default=10, ge=1)


class UpdateConfig(BaseModel):
    max_iterations: int = Field(default=5, ge=1)
    convergence_eps: float = Field(default=1e-4, gt=0.0)
    window: WindowConfig = Field(default_factory=WindowConfig)
    schmidt: bool = True


class RunConfig(BaseModel):
    """Flat run configuration; one field per documented config-file key."""

    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    preset: Preset = Preset.LODESTAR

    window: bool = True
    schmidt: bool = True
    dade_prune: bool = True
    dade_compensate: bool = True
    adaptive_sliding: bool = True

    s_a: int = Field(default=2, ge=1)
    s_f: int = Field(default=2, ge=0)
    t_chi: float = Field(default=1.5, gt=1.0)
    t_loc: float = Field(default=DEFAULT_T_LOC, gt=0.0, lt=1.0)
    chi_block: ChiBlock = ChiBlock.POSITION
    compensation_batch: int = Field(default=10, ge=1)
    max_iterations: int = Field(default=5, ge=1)
    convergence_eps: float = Field(default=1e-4, gt=0.0)

    gyro_noise: float = Field(default=1e-4, ge=0.0)
    accel_noise: float = Field(default=1e-3, ge=0.0)
    gyro_bias_noise: float = Field(default=1e-8, ge=0.0)
    accel_bias_noise: float = Field(default=1e-6, ge=0.0)
    gravity_noise: float = Field(default=1e-10, ge=0.0)
    point_noise_std: float = Field(default=0.05, gt=0.0)

    map_backend: MapBackend = MapBackend.ANALYTIC
    voxel_size: float = Field(default=0.3, gt=0.0)
    scan_voxel_size: float = Field(default=0.3, ge=0.0)
    max_plane_distance: float = Field(default=1.0, gt=0.0)
    plane_neighbors: int = Field(default=5, ge=3)
    planarity_threshold: float = Field(default=0.1, gt=0.0)
    max_neighbor_distance: float = Field(default=2.0, gt=0.0)

    extrinsic_rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    extrinsic_translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    init_duration: float = Field(default=0.5, gt=0.0)
    init_rot_std: float = Field(default=1e-3, gt=0.0)
    init_pos_std: float = Field(default=1e-3, gt=0.0)
    init_vel_std: float = Field(default=1e-2, gt=0.0)
    init_bg_std: float = Field(default=1e-3, gt=0.0)
    init_ba_std: float = Field(default=5e-2, gt=0.0)
    init_g_std: float = Field(default=1e-2, gt=0.0)

    @model_validator(mode="before")
    @classmethod
    def apply_preset_and_aliases(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        try:
            preset = Preset(data.get("preset", Preset.LODESTAR))
        except ValueError:
            return data
        merged: dict[str, Any] = dict(PRESET_TOGGLES[preset])
        if "dade" in data:
            dade = data.pop("dade")
            merged["dade_prune"] = dade
            merged["dade_compensate"] = dade
        merged.update(data)
        return merged

    @field_validator("extrinsic_rotation", "extrinsic_translation", mode="before")
    @classmethod
    def parse_vector(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(float(part) for part in value.replace(" ", "").split(","))
        return value

    @property
    def window_config(self) -> WindowConfig:
        return WindowConfig(
            s_a=self.s_a,
            s_f=self.s_f,
            t_chi=self.t_chi,
            t_loc=self.t_loc,
            chi_block=self.chi_block,
            compensation_batch=self.compensation_batch,
        )

    @property
    def update_config(self) -> UpdateConfig:
        return UpdateConfig(
            max_iterations=self.max_iterations,
            convergence_eps=self.convergence_eps,
            window=self.window_config,
            schmidt=self.schmidt,
        )

    @property
    def noise(self) -> NoiseParams:
        return NoiseParams(
            gyro=self.gyro_noise,
            accel=self.accel_noise,
            gyro_bias=self.gyro_bias_noise,
            accel_bias=self.accel_bias_noise,
        )

    @property
    def extrinsics(self) -> Extrinsics:
        return Extrinsics(
            rotation=so3_exp(np.array(self.extrinsic_rotation)),
            translation=np.array(self.extrinsic_translation, dtype=float),
        )
