"""
Command-line entry point.

    msfusion synth        --output DIR [scene options]
    msfusion reconstruct  --bundle DIR --output DIR [pipeline options]
    msfusion evaluate     --bundle DIR --output DIR
    msfusion register     --source A.ply --target B.ply [--output C.ply]

Exit codes: 0 success, 1 unexpected failure, 2 invalid input, 3 numerical
failure, 4 missing file.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence, Tuple

import sentry_sdk

from msfusion import __version__
from msfusion.core.config import get_settings
from msfusion.core.error_handlers import (
    EXIT_OK,
    FOREIGN_EXCEPTION_MAP,
    AppException,
    create_error_record,
    report_exception,
)
from msfusion.core.logging_config import (
    clear_run_context,
    get_logger,
    set_run_context,
    setup_logging,
)
from msfusion.domains.bundle_io.ply_handler import PLYHandler
from msfusion.domains.bundle_io.repository import ArtifactRepository, BundleRepository
from msfusion.domains.fusion.schemas import FusionConfig
from msfusion.domains.icp.schemas import IcpConfig
from msfusion.domains.icp.service import apply_registration, icp_register
from msfusion.domains.mps.schemas import (
    MixingConfig,
    MixingEstimator,
    MixingScope,
    SegmentationBackend,
    SegmentationConfig,
)
from msfusion.domains.pipeline.schemas import MetricsReport, PipelineConfig
from msfusion.domains.pipeline.service import evaluate_reconstruction, run_pipeline
from msfusion.domains.synth.schemas import (
    AlbedoLayout,
    HeightfieldShape,
    PlaneShape,
    SceneSpec,
    SphereShape,
    SynthConfig,
)
from msfusion.domains.synth.service import generate_sequence

logger = get_logger(__name__)

EVALUATION_FILE = "evaluation.json"


def _triple(text: str) -> Tuple[float, float, float]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected three comma-separated numbers, got {text!r}"
        )
    if len(values) != 3:
        raise argparse.ArgumentTypeError(
            f"expected three comma-separated numbers, got {text!r}"
        )
    return values  # type: ignore[return-value]


# ============================================================================
# ARGUMENT PARSING
# ============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msfusion",
        description=(
            "Dense reconstruction from semi-dense SLAM keyframes and multispectral "
            "photometric stereo"
        ),
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="Render a synthetic keyframe bundle")
    synth.add_argument(
        "--output", type=Path, required=True, help="Bundle directory to write"
    )
    synth.add_argument(
        "--shape", choices=["sphere", "plane", "heightfield"], default="sphere"
    )
    synth.add_argument(
        "--albedo",
        type=_triple,
        action="append",
        help="Albedo r,g,b; give twice with --layout left_right",
    )
    synth.add_argument(
        "--layout", choices=[layout.value for layout in AlbedoLayout], default="uniform"
    )
    synth.add_argument("--texture-contrast", type=float, default=0.3)
    synth.add_argument("--keyframes", type=int, default=1)
    synth.add_argument("--arc", type=float, default=360.0, help="Orbit arc in degrees")
    synth.add_argument("--orbit-radius", type=float, default=3.0)
    synth.add_argument("--image-size", type=int, default=512)
    synth.add_argument("--tilt", type=float, default=30.0, help="Light tilt in degrees")
    synth.add_argument("--grad-threshold", type=float, default=0.02)
    synth.add_argument("--noise-fraction", type=float, default=0.0)
    synth.add_argument("--seed", type=int, default=0)

    reconstruct = commands.add_parser(
        "reconstruct", help="Run the full pipeline on a bundle"
    )
    _add_bundle_arguments(reconstruct)
    reconstruct.add_argument("--weight-position", type=float, default=1.0)
    reconstruct.add_argument("--weight-normal", type=float, default=3.0)
    reconstruct.add_argument("--smoothing-radius", type=int, default=7)
    reconstruct.add_argument("--solver-tolerance", type=float, default=1e-8)
    reconstruct.add_argument("--solver-iterations", type=int, default=2000)
    reconstruct.add_argument("--clusters", type=int, default=4)
    reconstruct.add_argument(
        "--segmentation-backend",
        choices=[b.value for b in SegmentationBackend],
        default="kmeans",
    )
    reconstruct.add_argument(
        "--mixing-estimator",
        choices=[e.value for e in MixingEstimator],
        default="forward",
    )
    reconstruct.add_argument(
        "--mixing-scope", choices=[s.value for s in MixingScope], default="keyframe"
    )
    reconstruct.add_argument("--shadow-threshold", type=float, default=None)
    reconstruct.add_argument("--prior-smoothing", type=float, default=6.0)
    reconstruct.add_argument("--voxel-size", type=float, default=0.005)
    _add_icp_arguments(reconstruct)
    reconstruct.add_argument("--workers", type=int, default=None)
    reconstruct.add_argument("--seed", type=int, default=0)
    reconstruct.add_argument(
        "--no-evaluate", action="store_true", help="Skip ground-truth metrics"
    )
    reconstruct.add_argument(
        "--no-keyframe-clouds", action="store_true", help="Write only global.ply"
    )

    evaluate = commands.add_parser(
        "evaluate", help="Score emitted clouds against ground truth"
    )
    _add_bundle_arguments(evaluate)

    register = commands.add_parser(
        "register", help="Register one PLY cloud onto another"
    )
    register.add_argument("--source", type=Path, required=True)
    register.add_argument("--target", type=Path, required=True)
    register.add_argument(
        "--output", type=Path, default=None, help="Write the moved source here"
    )
    _add_icp_arguments(register)

    return parser


def _add_bundle_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--bundle", type=Path, required=True, help="Keyframe bundle directory"
    )
    parser.add_argument("--output", type=Path, required=True, help="Output directory")


def _add_icp_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--icp-max-distance", type=float, default=0.1)
    parser.add_argument("--icp-iterations", type=int, default=50)
    parser.add_argument("--icp-trim", type=float, default=0.1)
    parser.add_argument("--icp-min-fitness", type=float, default=0.3)


def _icp_config(args: argparse.Namespace) -> IcpConfig:
    return IcpConfig(
        max_iterations=args.icp_iterations,
        max_correspondence_distance=args.icp_max_distance,
        trim_fraction=args.icp_trim,
        min_fitness=args.icp_min_fitness,
    )


def pipeline_config_from_args(args: argparse.Namespace) -> PipelineConfig:
    return PipelineConfig(
        bundle_dir=args.bundle,
        output_dir=args.output,
        segmentation=SegmentationConfig(
            n_clusters=args.clusters,
            backend=args.segmentation_backend,
            seed=args.seed,
        ),
        mixing=MixingConfig(
            estimator=args.mixing_estimator,
            scope=args.mixing_scope,
            shadow_threshold=args.shadow_threshold,
        ),
        fusion=FusionConfig(
            weight_position=args.weight_position,
            weight_normal=args.weight_normal,
            smoothing_radius=args.smoothing_radius,
            tolerance=args.solver_tolerance,
            max_iterations=args.solver_iterations,
        ),
        icp=_icp_config(args),
        voxel_size=args.voxel_size,
        prior_smoothing=args.prior_smoothing,
        workers=args.workers,
        evaluate=not args.no_evaluate,
        write_keyframe_clouds=not args.no_keyframe_clouds,
    )


def synth_config_from_args(args: argparse.Namespace) -> SynthConfig:
    layout = AlbedoLayout(args.layout)
    albedos = args.albedo
    if not albedos:
        if layout == AlbedoLayout.UNIFORM:
            albedos = [(0.8, 0.8, 0.8)]
        else:
            albedos = [(0.9, 0.5, 0.3), (0.3, 0.6, 0.9)]
    shapes = {
        "sphere": SphereShape, "plane": PlaneShape, "heightfield": HeightfieldShape
    }
    return SynthConfig(
        scene=SceneSpec(
            shape=shapes[args.shape](),
            albedos=albedos,
            layout=layout,
            texture_contrast=args.texture_contrast,
        ),
        tilt_deg=args.tilt,
        n_keyframes=args.keyframes,
        orbit_radius=args.orbit_radius,
        arc_deg=args.arc,
        image_size=args.image_size,
        grad_threshold=args.grad_threshold,
        noise_fraction=args.noise_fraction,
        seed=args.seed,
    )


# ============================================================================
# COMMANDS
# ============================================================================


def command_synth(args: argparse.Namespace) -> int:
    sequence = generate_sequence(synth_config_from_args(args))
    metadata = BundleRepository(args.output).write_bundle(sequence)
    print(json.dumps(metadata.model_dump(mode="json"), indent=2, sort_keys=True))
    return EXIT_OK


def command_reconstruct(args: argparse.Namespace) -> int:
    try:
        cfg = pipeline_config_from_args(args)
    except Exception as exc:
        # An invalid option still leaves an error record behind
        failed = MetricsReport(error=create_error_record(exc))
        ArtifactRepository(args.output).write_metrics(failed.to_json_dict())
        raise
    report = run_pipeline(cfg)
    print(
        json.dumps(
            {
                "fused_keyframes": report.fused_keyframes,
                "global_points": report.global_points,
                "density_ratio": report.density_ratio,
                "metrics": str(ArtifactRepository(args.output).metrics_path),
            },
            indent=2,
            sort_keys=True,
        )
    )
    return EXIT_OK


def command_evaluate(args: argparse.Namespace) -> int:
    cfg = PipelineConfig(bundle_dir=args.bundle, output_dir=args.output)
    report = evaluate_reconstruction(cfg)
    payload = json.dumps(
        report.to_json_dict(include_timings=False), indent=2, sort_keys=True
    )
    (Path(args.output) / EVALUATION_FILE).write_text(payload + "\n")
    print(payload)
    return EXIT_OK


def command_register(args: argparse.Namespace) -> int:
    ply = PLYHandler()
    source = ply.read(args.source)
    target = ply.read(args.target)
    registration = icp_register(source, target, _icp_config(args))
    if args.output is not None:
        ply.write(args.output, apply_registration(source, registration.transform))
    print(
        json.dumps(
            {
                "fitness": registration.fitness,
                "rms": registration.rms,
                "iterations": registration.iterations,
                "rms_trace": list(registration.rms_trace),
                "rotation_deg": registration.transform.rotation_angle_deg(),
                "matrix": registration.transform.matrix().tolist(),
            },
            indent=2,
        )
    )
    return EXIT_OK


COMMANDS = {
    "synth": command_synth,
    "reconstruct": command_reconstruct,
    "evaluate": command_evaluate,
    "register": command_register,
}


# ============================================================================
# ENTRY POINT
# ============================================================================


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()

    # Initialize Sentry for error reporting (production only)
    if settings.SENTRY_DSN and settings.is_production:
        sentry_sdk.init(
            dsn=settings.SENTRY_DSN,
            environment=settings.ENVIRONMENT,
            traces_sample_rate=0.0,
            send_default_pii=False,
            attach_stacktrace=True,
            release=f"msfusion@{__version__}",
        )

    setup_logging(
        environment=settings.ENVIRONMENT,
        log_level=settings.LOG_LEVEL,
        log_format=settings.log_format,
    )
    run_id = set_run_context()
    logger.info("Command started", command=args.command, run_id=run_id)

    try:
        return COMMANDS[args.command](args)
    except AppException as exc:
        report_exception(exc, stage=args.command)
        print(f"error [{exc.error_code}]: {exc.message}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        app_exc = report_exception(exc, stage=args.command, expected=not _is_crash(exc))
        print(f"error [{app_exc.error_code}]: {app_exc.message}", file=sys.stderr)
        return app_exc.exit_code
    finally:
        clear_run_context()


def _is_crash(exc: BaseException) -> bool:
    """Library errors with a known mapping are input problems, not crashes."""
    return not isinstance(exc, tuple(FOREIGN_EXCEPTION_MAP))


if __name__ == "__main__":
    sys.exit(main())
