import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from msfusion.core.config import Settings, get_settings
from msfusion.core.error_handlers import (
    AppException,
    create_error_record,
    report_exception,
)
from msfusion.core.logging_config import (
    StageTimer,
    get_logger,
    get_run_id,
    keyframe_context,
    log_pipeline_event,
    set_run_context,
)
from msfusion.domains.bundle_io.repository import ArtifactRepository, BundleRepository
from msfusion.domains.fusion.service import (
    correct_normal_bias,
    densify,
    fused_cloud,
    optimize_positions,
    transform_cloud_to_keyframe,
)
from msfusion.domains.geometry.schemas import CameraIntrinsics, PointCloud
from msfusion.domains.icp.service import icp_register, merge_clouds
from msfusion.domains.ingest.service import (
    backproject,
    image_colors,
    invdepth_to_depth,
    load_keyframe,
)
from msfusion.domains.mps.schemas import MixingModel, MixingScope
from msfusion.domains.mps.service import (
    adopt_mixing,
    chromaticity_features,
    estimate_mixing,
    fit_global_shading,
    recover_normals,
    segment_centroids,
    segment_chromaticity,
    shadow_mask,
)
from msfusion.domains.pipeline.evaluation import (
    cloud_errors,
    evaluate_cloud,
    normal_map_errors,
    reference_cloud,
    summarize_angles,
    summarize_cloud,
)
from msfusion.domains.pipeline.schemas import (
    KeyframeMetrics,
    MetricsReport,
    PipelineConfig,
    RegistrationMetrics,
)

logger = get_logger(__name__)


@dataclass
class KeyframeOutcome:
    """What the parallel stages hand to the serial registration stage."""

    metrics: KeyframeMetrics
    cloud: Optional[PointCloud] = None
    mixing: Optional[MixingModel] = None
    normal_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    distances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cloud_normal_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def keyframe_id(self) -> int:
        return self.metrics.keyframe_id


class ReconstructionService:
    def __init__(self, cfg: PipelineConfig, settings: Optional[Settings] = None):
        self.cfg = cfg
        self.settings = settings or get_settings()
        self.bundles = BundleRepository(cfg.bundle_dir)
        self.artifacts = ArtifactRepository(cfg.output_dir)

    def _timer(self, stage: str, timings: Dict[str, float], **context) -> StageTimer:
        return StageTimer(
            stage,
            timings,
            slow_threshold_ms=self.settings.KEYFRAME_BUDGET_MS,
            enable_performance_logging=self.settings.ENABLE_PERFORMANCE_LOGGING,
            **context,
        )

    # ==================== RUN ====================

    def run(self) -> MetricsReport:
        """
        Process every keyframe of the bundle and write the artifacts.

        Keyframe preparation (ingest, normal recovery, fusion) runs on a
        thread pool; registration and merging consume the results in
        keyframe order on the calling thread. Keyframes that fail are
        recorded in the report and left out of the global cloud.

        Raises:
            BundleNotFound / EmptyBundle / BundleFormatError: the bundle
                itself is unusable
        """
        started = time.perf_counter()
        run_id = get_run_id() or set_run_context()
        keyframe_ids = self.bundles.keyframe_ids()
        intrinsics = self.bundles.read_intrinsics()
        evaluate = self.cfg.evaluate and self.bundles.has_ground_truth()
        workers = self.cfg.workers or self.settings.PIPELINE_WORKERS

        logger.info(
            "Reconstruction started",
            bundle=str(self.cfg.bundle_dir),
            keyframes=len(keyframe_ids),
            workers=workers,
            evaluate=evaluate,
        )

        outcomes: Dict[int, KeyframeOutcome] = {}
        pending = list(keyframe_ids)
        reference: Optional[MixingModel] = None
        if self.cfg.mixing.scope == MixingScope.VIDEO:
            first = pending.pop(0)
            outcomes[first] = self._prepare(first, intrinsics, run_id, evaluate, None)
            reference = outcomes[first].mixing
            if reference is None:
                log_pipeline_event(
                    "video_mixing_unavailable",
                    keyframe_id=first,
                    level="warning",
                    fallback="per-keyframe estimation",
                )

        global_cloud = PointCloud.empty()
        with ThreadPoolExecutor(
            max_workers=workers, thread_name_prefix="keyframe"
        ) as pool:
            futures: Dict[int, Future] = {
                kid: pool.submit(
                    self._prepare, kid, intrinsics, run_id, evaluate, reference
                )
                for kid in pending
            }
            for kid in keyframe_ids:
                outcome = outcomes[kid] if kid in outcomes else futures[kid].result()
                outcomes[kid] = outcome
                with keyframe_context(kid, run_id):
                    global_cloud = self._register_and_merge(outcome, global_cloud)
                    self._check_budget(outcome.metrics)

        self.artifacts.write_global_cloud(global_cloud)
        report = self._assemble_report(
            [outcomes[kid] for kid in keyframe_ids], global_cloud
        )
        report.total_ms = round((time.perf_counter() - started) * 1000, 3)
        self.artifacts.write_metrics(report.to_json_dict())

        logger.info(
            "Reconstruction finished",
            keyframes=len(keyframe_ids),
            fused_keyframes=report.fused_keyframes,
            global_points=report.global_points,
            density_ratio=round(report.density_ratio, 3),
            total_ms=report.total_ms,
        )
        return report

    # ==================== PARALLEL STAGES ====================

    def _prepare(
        self,
        keyframe_id: int,
        intrinsics: CameraIntrinsics,
        run_id: Optional[str],
        evaluate: bool,
        reference: Optional[MixingModel],
    ) -> KeyframeOutcome:
        """Ingest, normal recovery and fusion of one keyframe; never raises."""
        outcome = KeyframeOutcome(metrics=KeyframeMetrics(keyframe_id=keyframe_id))
        metrics = outcome.metrics
        timings = metrics.stage_ms
        stage = "ingest"

        with keyframe_context(keyframe_id, run_id):
            try:
                with self._timer(stage, timings, keyframe_id=keyframe_id):
                    bundle = self.bundles.load_bundle(keyframe_id)
                    prepared = load_keyframe(bundle, self.cfg.prior_smoothing)
                image = bundle.image
                metrics.semidense_points = prepared.semidense_depth.valid_count
                metrics.degenerate_gradients = prepared.degenerate_gradients

                stage = "segmentation"
                with self._timer(stage, timings, keyframe_id=keyframe_id):
                    mask = shadow_mask(image, self.cfg.mixing.shadow_threshold)
                    shading = None
                    if bundle.labels is not None:
                        labels = np.where(mask, bundle.labels, 0)
                    else:
                        if self.cfg.segmentation.shading_normalized:
                            shading = fit_global_shading(
                                image,
                                prepared.prior_normals,
                                mask,
                                prepared.dense_depth.interpolated,
                                self.cfg.mixing,
                            )
                        labels = segment_chromaticity(
                            image, self.cfg.segmentation, mask, shading
                        )
                    features, _ = chromaticity_features(image, shading)
                    centroids = segment_centroids(features, labels)

                stage = "mixing"
                with self._timer(stage, timings, keyframe_id=keyframe_id):
                    if reference is not None:
                        model = adopt_mixing(reference, labels, centroids)
                    else:
                        model = estimate_mixing(
                            image,
                            prepared.prior_normals,
                            labels,
                            self.cfg.mixing,
                            mask=mask,
                            interpolated=prepared.dense_depth.interpolated,
                            centroids=centroids,
                        )
                outcome.mixing = model
                metrics.segments = len(model.segments)
                metrics.failed_segments = dict(model.failures)
                metrics.worst_condition = max(
                    model.condition_numbers.values(), default=None
                )

                stage = "normals"
                with self._timer(stage, timings, keyframe_id=keyframe_id):
                    normals = recover_normals(image, model, mask)

                stage = "fusion"
                with self._timer(stage, timings, keyframe_id=keyframe_id):
                    slam_cloud = backproject(
                        prepared.semidense_depth,
                        intrinsics,
                        prepared.pose,
                        image,
                        keyframe_id,
                    )
                    surface = densify(
                        transform_cloud_to_keyframe(slam_cloud, prepared.pose),
                        prepared.dense_depth,
                        normals,
                        intrinsics,
                        colors=image_colors(image),
                        keyframe_id=keyframe_id,
                    )
                    surface = correct_normal_bias(surface, self.cfg.fusion)

                stage = "optimization"
                with self._timer(stage, timings, keyframe_id=keyframe_id):
                    solution = optimize_positions(surface, self.cfg.fusion)
                    cloud = fused_cloud(surface, solution.positions, pose=prepared.pose)
                outcome.cloud = cloud
                metrics.fused_points = len(cloud)
                if metrics.semidense_points:
                    metrics.density_ratio = len(cloud) / metrics.semidense_points
                metrics.solver_iterations = solution.iterations
                metrics.relative_residual = solution.relative_residual
                metrics.objective_before = solution.objective_before
                metrics.objective_after = solution.objective_after

                if evaluate:
                    stage = "evaluation"
                    with self._timer(stage, timings, keyframe_id=keyframe_id):
                        truth = self.bundles.read_ground_truth(keyframe_id)
                        outcome.normal_errors = normal_map_errors(
                            normals, truth.normals, exclude=truth.shadow
                        )
                        outcome.distances, outcome.cloud_normal_errors = cloud_errors(
                            cloud, reference_cloud(truth, intrinsics, prepared.pose)
                        )
                    metrics.normals = summarize_angles(outcome.normal_errors)
                    metrics.cloud = summarize_cloud(
                        outcome.distances, outcome.cloud_normal_errors
                    )

            except Exception as exc:
                expected = isinstance(exc, AppException)
                app_exc = report_exception(
                    exc, keyframe_id=keyframe_id, stage=stage, expected=expected
                )
                metrics.errors.append(create_error_record(app_exc, keyframe_id))
                metrics.status = "skipped"
                outcome.cloud = None
                log_pipeline_event(
                    "keyframe_skipped",
                    keyframe_id=keyframe_id,
                    level="warning",
                    stage=stage,
                    error_code=app_exc.error_code,
                )
                return outcome

        logger.info(
            "Keyframe fused",
            keyframe_id=keyframe_id,
            segments=metrics.segments,
            fused_points=metrics.fused_points,
            density_ratio=round(metrics.density_ratio, 3),
            solver_iterations=metrics.solver_iterations,
        )
        return outcome

    # ==================== SERIAL STAGES ====================

    def _register_and_merge(
        self, outcome: KeyframeOutcome, global_cloud: PointCloud
    ) -> PointCloud:
        """Write the keyframe cloud, register it onto the global cloud and merge."""
        if outcome.cloud is None:
            return global_cloud
        kid = outcome.keyframe_id
        metrics = outcome.metrics
        if self.cfg.write_keyframe_clouds:
            self.artifacts.write_keyframe_cloud(kid, outcome.cloud)

        if len(global_cloud) == 0:
            log_pipeline_event(
                "global_cloud_started", keyframe_id=kid, points=len(outcome.cloud)
            )
            return outcome.cloud

        stage = "registration"
        try:
            with self._timer(stage, metrics.stage_ms, keyframe_id=kid):
                registration = icp_register(outcome.cloud, global_cloud, self.cfg.icp)
            metrics.registration = RegistrationMetrics(
                fitness=registration.fitness,
                rms=registration.rms,
                iterations=registration.iterations,
                rotation_deg=registration.transform.rotation_angle_deg(),
                translation=[float(v) for v in registration.transform.translation],
            )
            log_pipeline_event(
                "registration_accepted",
                keyframe_id=kid,
                fitness=round(registration.fitness, 6),
                rms=registration.rms,
            )
            stage = "merge"
            with self._timer(stage, metrics.stage_ms, keyframe_id=kid):
                merged = merge_clouds(
                    global_cloud, outcome.cloud, registration, self.cfg.voxel_size
                )
        except AppException as exc:
            report_exception(exc, keyframe_id=kid, stage=stage)
            metrics.errors.append(create_error_record(exc, kid))
            metrics.status = "unregistered"
            log_pipeline_event(
                "keyframe_not_merged",
                keyframe_id=kid,
                level="warning",
                error_code=exc.error_code,
            )
            return global_cloud
        return merged

    def _check_budget(self, metrics: KeyframeMetrics) -> None:
        total = sum(
            ms for stage, ms in metrics.stage_ms.items() if stage != "evaluation"
        )
        if total > self.settings.KEYFRAME_BUDGET_MS:
            log_pipeline_event(
                "keyframe_budget_exceeded",
                keyframe_id=metrics.keyframe_id,
                level="warning",
                duration_ms=round(total, 3),
                budget_ms=self.settings.KEYFRAME_BUDGET_MS,
            )

    def _assemble_report(
        self, outcomes: List[KeyframeOutcome], global_cloud: PointCloud
    ) -> MetricsReport:
        fused = [o for o in outcomes if o.cloud is not None]
        semidense = sum(o.metrics.semidense_points for o in fused)
        report = MetricsReport(
            keyframes=[o.metrics for o in outcomes],
            fused_keyframes=len(fused),
            global_points=len(global_cloud),
            density_ratio=(
                sum(o.metrics.fused_points for o in fused) / semidense
                if semidense
                else 0.0
            ),
        )
        if any(o.metrics.normals is not None for o in fused):
            report.normals = summarize_angles(
                np.concatenate([o.normal_errors for o in fused])
            )
            report.cloud = summarize_cloud(
                np.concatenate([o.distances for o in fused]),
                np.concatenate([o.cloud_normal_errors for o in fused]),
            )
        return report


def run_pipeline(
    cfg: PipelineConfig, settings: Optional[Settings] = None
) -> MetricsReport:
    """
    Run a reconstruction. When the run cannot start or crashes, metrics.json
    receives only the error record and the exception propagates.
    """
    service = ReconstructionService(cfg, settings)
    try:
        return service.run()
    except Exception as exc:
        report = MetricsReport(error=create_error_record(exc))
        service.artifacts.write_metrics(report.to_json_dict())
        raise


def evaluate_reconstruction(cfg: PipelineConfig) -> MetricsReport:
    """
    Recompute counts and accuracy from the emitted clouds and the bundle's
    ground truth, independently of the metrics written by the run.
    """
    bundles = BundleRepository(cfg.bundle_dir)
    artifacts = ArtifactRepository(cfg.output_dir)
    intrinsics = bundles.read_intrinsics()
    poses = bundles.read_poses()
    has_truth = bundles.has_ground_truth()

    keyframes: List[KeyframeMetrics] = []
    references: List[PointCloud] = []
    fused_total = 0
    semidense_total = 0
    for kid, pose in poses.items():
        metrics = KeyframeMetrics(keyframe_id=kid)
        metrics.semidense_points = (
            invdepth_to_depth(bundles.read_inverse_depth(kid)).valid_count
        )
        reference = None
        if has_truth:
            reference = reference_cloud(
                bundles.read_ground_truth(kid), intrinsics, pose
            )
            references.append(reference)
        if not artifacts.cloud_path(kid).is_file():
            metrics.status = "missing"
            keyframes.append(metrics)
            continue
        cloud = artifacts.read_keyframe_cloud(kid)
        metrics.fused_points = len(cloud)
        if metrics.semidense_points:
            metrics.density_ratio = len(cloud) / metrics.semidense_points
        if reference is not None:
            metrics.cloud = evaluate_cloud(cloud, reference)
        fused_total += metrics.fused_points
        semidense_total += metrics.semidense_points
        keyframes.append(metrics)

    report = MetricsReport(
        keyframes=keyframes,
        fused_keyframes=sum(1 for m in keyframes if m.status == "fused"),
        density_ratio=fused_total / semidense_total if semidense_total else 0.0,
    )
    if artifacts.global_path.is_file():
        global_cloud = artifacts.read_global_cloud()
        report.global_points = len(global_cloud)
        if references:
            report.cloud = evaluate_cloud(
                global_cloud, PointCloud.concatenate(references)
            )

    logger.info(
        "Reconstruction evaluated",
        keyframes=len(keyframes),
        global_points=report.global_points,
        density_ratio=round(report.density_ratio, 3),
    )
    return report
