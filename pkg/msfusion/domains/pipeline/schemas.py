"""
Pydantic schemas for the Pipeline domain
"""

from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from msfusion.domains.fusion.schemas import FusionConfig
from msfusion.domains.icp.schemas import IcpConfig
from msfusion.domains.mps.schemas import MixingConfig, SegmentationConfig


class PipelineConfig(BaseModel):
    bundle_dir: Path
    output_dir: Path
    segmentation: SegmentationConfig = Field(default_factory=SegmentationConfig)
    mixing: MixingConfig = Field(default_factory=MixingConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    icp: IcpConfig = Field(default_factory=IcpConfig)
    voxel_size: float = Field(
        0.005, gt=0, description="Merge voxel edge in scene units"
    )
    prior_smoothing: float = Field(
        6.0,
        ge=0,
        description="Gaussian sigma (pixels) on the filled depth before prior normals",
    )
    workers: Optional[int] = Field(
        None, ge=1, description="Defaults to PIPELINE_WORKERS"
    )
    evaluate: bool = Field(True, description="Compare with gt/ when the bundle has it")
    write_keyframe_clouds: bool = True


class AccuracyMetrics(BaseModel):
    """Errors against ground truth. Angles in degrees, RMSE in scene units."""

    normal_count: int = 0
    normal_error_mean_deg: Optional[float] = Field(None, ge=0, le=180)
    normal_error_median_deg: Optional[float] = Field(None, ge=0, le=180)
    normal_error_p95_deg: Optional[float] = Field(None, ge=0, le=180)
    point_count: int = 0
    position_rmse: Optional[float] = Field(None, ge=0)


class RegistrationMetrics(BaseModel):
    fitness: float
    rms: float
    iterations: int
    rotation_deg: float
    translation: List[float]


class KeyframeMetrics(BaseModel):
    keyframe_id: int
    status: str = "fused"
    semidense_points: int = 0
    fused_points: int = Field(0, ge=0)
    density_ratio: float = Field(0.0, ge=0)
    segments: int = 0
    failed_segments: Dict[int, str] = Field(default_factory=dict)
    worst_condition: Optional[float] = None
    degenerate_gradients: int = 0
    solver_iterations: int = 0
    relative_residual: Optional[float] = None
    objective_before: Optional[float] = None
    objective_after: Optional[float] = None
    normals: Optional[AccuracyMetrics] = None
    cloud: Optional[AccuracyMetrics] = None
    registration: Optional[RegistrationMetrics] = None
    stage_ms: Dict[str, float] = Field(default_factory=dict)
    errors: List[Dict[str, Any]] = Field(default_factory=list)


class MetricsReport(BaseModel):
    keyframes: List[KeyframeMetrics] = Field(default_factory=list)
    fused_keyframes: int = 0
    global_points: int = 0
    density_ratio: float = Field(0.0, ge=0)
    normals: Optional[AccuracyMetrics] = None
    cloud: Optional[AccuracyMetrics] = None
    total_ms: float = 0.0
    error: Optional[Dict[str, Any]] = None

    def to_json_dict(self, include_timings: bool = True) -> Dict[str, Any]:
        exclude = None
        if not include_timings:
            exclude = {"total_ms": True, "keyframes": {"__all__": {"stage_ms"}}}
        return self.model_dump(mode="json", exclude=exclude)
