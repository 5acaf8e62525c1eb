from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ScenarioName(str, Enum):
    CORRIDOR = "corridor"
    OPEN_PLANE = "open_plane"
    ROOM = "room"
    CAVERN = "cavern"


class Scenario(BaseModel):
    """Synthetic run description. Unset motion fields come from the name preset."""

    model_config = ConfigDict(extra="forbid")

    name: ScenarioName
    seed: int = 0
    duration: float = Field(default=60.0, gt=0.0)
    hold_duration: float = Field(default=1.0, ge=0.0)
    imu_rate: float = Field(default=200.0, gt=0.0)
    scan_rate: float = Field(default=10.0, gt=0.0)

    rays_per_scan: int = Field(default=8192, ge=0)
    elevation_lines: int = Field(default=16, ge=1)
    elevation_min_deg: float = -45.0
    elevation_max_deg: float = 45.0
    min_range: float = Field(default=0.3, ge=0.0)
    max_range: float = Field(default=60.0, gt=0.0)

    range_noise_std: float = Field(default=0.02, ge=0.0)
    gyro_noise: float = Field(default=1e-6, ge=0.0)
    accel_noise: float = Field(default=1e-4, ge=0.0)
    gyro_bias: tuple[float, float, float] = (0.0005, -0.0008, 0.0004)
    accel_bias: tuple[float, float, float] = (0.01, -0.008, 0.012)

    # motion profile
    forward_axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    speed: float = 0.5
    ramp_time: float = Field(default=2.0, gt=0.0)
    lateral_amplitude: float = 0.2
    lateral_frequency: float = 0.1
    vertical_amplitude: float = 0.05
    vertical_frequency: float = 0.15
    yaw_amplitude: float = 0.2
    yaw_frequency: float = 0.05
    roll_amplitude: float = 0.03
    pitch_amplitude: float = 0.03
    attitude_frequency: float = 0.2

    @model_validator(mode="before")
    @classmethod
    def apply_name_preset(cls, data: Any) -> Any:
        if not isinstance(data, dict) or "name" not in data:
            return data
        preset = SCENARIO_PRESETS[ScenarioName(data["name"])]
        return {**preset, **data}

    @model_validator(mode="after")
    def check_rates(self) -> "Scenario":
        if self.scan_rate > self.imu_rate:
            raise ValueError("scan_rate must not exceed imu_rate")
        return self

    def noiseless(self) -> "Scenario":
        return self.model_copy(
            update=dict(
                range_noise_std=0.0,
                gyro_noise=0.0,
                accel_noise=0.0,
                gyro_bias=(0.0, 0.0, 0.0),
                accel_bias=(0.0, 0.0, 0.0),
            )
        )


SCENARIO_PRESETS: dict[ScenarioName, dict[str, Any]] = {
    # Walls at x=±1.5, floor/ceiling at z=-1.2/1.8, open behind, end patch at y=55.
    ScenarioName.CORRIDOR: dict(
        duration=60.0,
        forward_axis=(0.0, 1.0, 0.0),
        speed=0.6,
        lateral_amplitude=0.3,
        lateral_frequency=0.1,
        vertical_amplitude=0.05,
        yaw_amplitude=0.15,
        yaw_frequency=0.05,
    ),
    # Single ground plane 15 m below the start pose.
    ScenarioName.OPEN_PLANE: dict(
        duration=60.0,
        speed=2.0,
        max_range=100.0,
        lateral_amplitude=1.0,
        vertical_amplitude=0.5,
        yaw_amplitude=0.3,
    ),
    # Closed 12 x 12 x 8 m box centred on the start pose.
    ScenarioName.ROOM: dict(
        duration=20.0,
        speed=0.2,
        lateral_amplitude=0.3,
        yaw_amplitude=0.3,
        yaw_frequency=0.08,
    ),
    ScenarioName.CAVERN: dict(
        duration=60.0,
        speed=0.4,
        max_range=30.0,
        lateral_amplitude=0.4,
        yaw_amplitude=0.25,
    ),
}
