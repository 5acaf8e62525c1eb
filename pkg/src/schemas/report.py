from pydantic import BaseModel, ConfigDict, Field

from model import SlidingDecision, UpdateStatus


class ReportModel(BaseModel):
    # χ sentinel is +inf; keep it representable in report.json.
    model_config = ConfigDict(ser_json_inf_nan="constants")


Vector3 = tuple[float, float, float]


class LocalizabilityScores(ReportModel):
    omega_p: Vector3
    omega_r: Vector3

    @property
    def peak(self) -> float:
        return max(max(self.omega_p), max(self.omega_r))


class DegeneracyReport(ReportModel):
    chi: float = Field(ge=1.0)
    singular_values: list[float]
    singular_values_p: list[float]
    singular_values_r: list[float]
    direction_p: Vector3
    direction_r: Vector3


class UpdateReport(ReportModel):
    status: UpdateStatus = UpdateStatus.OK
    iterations: int = 0
    converged: bool = False
    chi_pre_prune: float | None = None
    chi_post_prune: float | None = None
    chi_post_compensate: float | None = None
    rows_candidate: int = 0
    rows_pruned: int = 0
    rows_compensated: int = 0
    rows_total: int = 0
    sliding_decision: SlidingDecision = SlidingDecision.NONE
    step_norms: list[float] = Field(default_factory=list)


class StageTimings(ReportModel):
    propagation_ms: float = 0.0
    selection_ms: float = 0.0
    update_ms: float = 0.0
    sliding_ms: float = 0.0
    mapping_ms: float = 0.0


class ScanRecord(ReportModel):
    index: int
    timestamp: float
    status: UpdateStatus
    chi_pre: float | None = None
    chi_post: float | None = None
    chi_state: float | None = None
    rows_total: int = 0
    rows_pruned: int = 0
    rows_compensated: int = 0
    iterations: int = 0
    sliding_decision: SlidingDecision = SlidingDecision.NONE
    wall_clock_ms: float = 0.0
    stages: StageTimings = Field(default_factory=StageTimings)


class ApeResult(ReportModel):
    rmse: float
    per_axis_rmse: Vector3
    pairs: int
    alignment_degenerate: bool = False
    rotation: list[list[float]]
    translation: Vector3


class RunSummary(ReportModel):
    scans: int = 0
    aborted_scans: int = 0
    skipped_scans: int = 0
    decisions: dict[SlidingDecision, int] = Field(default_factory=dict)
    median_chi_pre: float | None = None
    median_chi_post: float | None = None
    mean_scan_ms: float = 0.0
    mean_stages: StageTimings = Field(default_factory=StageTimings)
    ape: ApeResult | None = None


class RunReport(ReportModel):
    config: dict
    runtime: dict[str, str] = Field(default_factory=dict)
    records: list[ScanRecord] = Field(default_factory=list)
    summary: RunSummary = Field(default_factory=RunSummary)
