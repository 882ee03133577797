from typing import List, Sequence, Tuple

import numpy as np

from msfusion.core.logging_config import get_logger
from msfusion.domains.geometry.schemas import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    InverseDepthMap,
    MultispectralImage,
    NormalMap,
)
from msfusion.domains.synth.schemas import (
    AlbedoLayout,
    HeightfieldShape,
    LightRig,
    PlaneShape,
    SceneSpec,
    SphereShape,
    SynthConfig,
    SyntheticKeyframe,
    SyntheticRender,
    SyntheticSequence,
)

logger = get_logger(__name__)

MARCH_STEPS = 128
BISECTION_STEPS = 40

Hits = Tuple[np.ndarray, np.ndarray, np.ndarray]


# ============================================================================
# RAY CASTING
# ============================================================================


def _intersect_sphere(shape: SphereShape, origin: np.ndarray, dirs: np.ndarray) -> Hits:
    centre = shape.anchor
    oc = origin - centre
    a = np.sum(dirs * dirs, axis=-1)
    b = dirs @ oc
    c = float(oc @ oc) - shape.radius**2
    disc = b * b - a * c
    hit = disc >= 0
    t = np.where(hit, (-b - np.sqrt(np.where(hit, disc, 0.0))) / a, 0.0)
    hit &= t > 0
    normals = (origin + t[:, None] * dirs - centre) / shape.radius
    return t, normals, hit


def _intersect_plane(shape: PlaneShape, origin: np.ndarray, dirs: np.ndarray) -> Hits:
    normal = np.asarray(shape.normal, dtype=np.float64)
    denom = dirs @ normal
    facing = np.abs(denom) > 1e-12
    offset = float(normal @ (shape.anchor - origin))
    t = np.where(facing, offset / np.where(facing, denom, 1.0), 0.0)
    hit = facing & (t > 0)
    return t, np.broadcast_to(normal, dirs.shape).copy(), hit


def _height(shape: HeightfieldShape, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x0, y0, z0 = shape.base
    f = shape.frequency
    return z0 + shape.amplitude * np.sin(f * (x - x0)) * np.sin(f * (y - y0))


def _intersect_heightfield(
    shape: HeightfieldShape, origin: np.ndarray, dirs: np.ndarray
) -> Hits:
    """Ray march inside the bounding box, then bisect the first crossing."""
    x0, y0, z0 = shape.base
    amp = abs(shape.amplitude)
    lower = np.array([x0 - shape.extent, y0 - shape.extent, z0 - amp])
    upper = np.array([x0 + shape.extent, y0 + shape.extent, z0 + amp])

    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lower - origin) / dirs
        t2 = (upper - origin) / dirs
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    near = np.maximum(np.max(np.minimum(t1, t2), axis=-1), 0.0)
    far = np.min(np.maximum(t1, t2), axis=-1)
    inside_box = far > near

    def gap(t: np.ndarray) -> np.ndarray:
        p = origin + t[:, None] * dirs
        return p[:, 2] - _height(shape, p[:, 0], p[:, 1])

    span = np.where(inside_box, far - near, 0.0)
    start_sign = np.sign(gap(near))
    lo = near.copy()
    hi = near.copy()
    found = np.zeros(dirs.shape[0], dtype=bool)
    previous = near.copy()
    for step in range(1, MARCH_STEPS + 1):
        t = near + span * step / MARCH_STEPS
        crossed = inside_box & ~found & (np.sign(gap(t)) != start_sign)
        lo[crossed] = previous[crossed]
        hi[crossed] = t[crossed]
        found |= crossed
        previous = t

    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        same = np.sign(gap(mid)) == start_sign
        lo = np.where(found & same, mid, lo)
        hi = np.where(found & ~same, mid, hi)

    t = np.where(found, 0.5 * (lo + hi), 0.0)
    p = origin + t[:, None] * dirs
    f = shape.frequency
    dx = f * (p[:, 0] - x0)
    dy = f * (p[:, 1] - y0)
    normals = np.stack(
        [
            -shape.amplitude * f * np.cos(dx) * np.sin(dy),
            -shape.amplitude * f * np.sin(dx) * np.cos(dy),
            np.ones_like(dx),
        ],
        axis=-1,
    )
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    return t, normals, found & (t > 0)


_INTERSECTORS = {
    "sphere": _intersect_sphere,
    "plane": _intersect_plane,
    "heightfield": _intersect_heightfield,
}


def _texture(scene: SceneSpec, points: np.ndarray) -> np.ndarray:
    """Achromatic checkerboard multiplier in [1 - contrast, 1] with tanh edges."""
    if scene.texture_contrast == 0:
        return np.ones(points.shape[0])
    anchor = scene.shape.anchor
    f = scene.texture_frequency
    product = (
        np.sin(f * (points[:, 0] - anchor[0])) * np.sin(f * (points[:, 1] - anchor[1]))
    )
    dark = 0.5 * (1.0 + np.tanh(scene.texture_sharpness * product))
    return 1.0 - scene.texture_contrast * dark


# ============================================================================
# RENDERING
# ============================================================================


def true_mixing(scene: SceneSpec, rig: LightRig) -> List[np.ndarray]:
    """Exact mixing matrix diag(albedo) @ sum_j E_j (-l_j)^T of every albedo region."""
    shading = rig.shading_matrix()
    return [
        np.diag(np.asarray(albedo, dtype=np.float64)) @ shading
        for albedo in scene.albedos
    ]


def render_multispectral(
    scene: SceneSpec, rig: LightRig, intr: CameraIntrinsics, pose: CameraPose
) -> SyntheticRender:
    """
    Ray-cast the scene from `pose` (camera-to-world, rigid part used).
    Channel i = albedo_i * texture * sum_j E_j[i] * max(0, -l_j . n), with the
    lights fixed in the camera frame; depth is the hit distance along +z.
    """
    height, width = intr.shape
    rays = intr.ray_directions().reshape(-1, 3)
    rotation = pose.rotation
    dirs = rays @ rotation.T
    origin = pose.t

    t, normals_world, hit = _INTERSECTORS[scene.shape.kind](scene.shape, origin, dirs)

    normals = normals_world @ rotation
    flip = np.sum(normals * rays, axis=-1) > 0
    normals[flip] *= -1.0
    normals[~hit] = 0.0

    points = origin + t[:, None] * dirs
    regions = np.full(rays.shape[0], -1, dtype=np.int64)
    if scene.layout == AlbedoLayout.LEFT_RIGHT:
        regions[hit] = (points[hit, 0] >= scene.shape.anchor[0]).astype(np.int64)
    else:
        regions[hit] = 0

    albedo = np.zeros((rays.shape[0], 3))
    albedo[hit] = np.asarray(scene.albedos, dtype=np.float64)[regions[hit]]
    albedo *= _texture(scene, points)[:, None]

    facing = -(normals @ rig.directions().T)
    cosines = np.maximum(facing, 0.0)
    radiance = albedo * (cosines @ rig.intensities())
    radiance[~hit] = 0.0

    lit = np.any(rig.intensities() > 0, axis=1)
    shadow = hit & np.any(facing[:, lit] <= 0, axis=1)

    depth = np.where(hit, t, 0.0)
    return SyntheticRender(
        image=MultispectralImage(data=radiance.reshape(height, width, 3)),
        depth=DepthMap(
            depth=depth.reshape(height, width), valid=hit.reshape(height, width)
        ),
        normals=NormalMap(
            normals=normals.reshape(height, width, 3), valid=hit.reshape(height, width)
        ),
        regions=regions.reshape(height, width),
        shadow=shadow.reshape(height, width),
    )


def image_gradient_magnitude(img: MultispectralImage) -> np.ndarray:
    """Central-difference luminance gradient magnitude, normalised to its maximum."""
    luminance = img.data.mean(axis=-1)
    peak = float(luminance.max()) if luminance.size else 0.0
    if peak <= 0:
        return np.zeros(img.shape)
    gy, gx = np.gradient(luminance / peak)
    return np.hypot(gx, gy)


def make_semidense(
    depth_gt: DepthMap,
    img: MultispectralImage,
    grad_threshold: float = 0.02,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> InverseDepthMap:
    """
    SLAM-like semi-dense inverse depth: 1/depth plus seeded Gaussian noise
    where the (normalised) image gradient reaches `grad_threshold`, NaN
    elsewhere.
    """
    if grad_threshold < 0 or noise_sigma < 0:
        raise ValueError("grad_threshold and noise_sigma must be >= 0")
    selected = depth_gt.valid & (image_gradient_magnitude(img) >= grad_threshold)
    noise = (
        np.random.default_rng(seed).normal(0.0, 1.0, size=depth_gt.shape) * noise_sigma
    )
    values = np.full(depth_gt.shape, np.nan)
    values[selected] = 1.0 / depth_gt.depth[selected] + noise[selected]
    return InverseDepthMap(values=values)


def generate_trajectory(
    n_keyframes: int,
    orbit_radius: float,
    target: Sequence[float] = (0.0, 0.0, 0.0),
    arc_deg: float = 360.0,
) -> List[CameraPose]:
    """
    Camera-to-world poses on a circle in the xz-plane around `target`,
    equally spaced by arc_deg / n, each looking at the target with image
    +y along world -y. The first pose sits on +z looking down -z.
    """
    if n_keyframes < 1:
        raise ValueError("n_keyframes must be >= 1")
    target = np.asarray(target, dtype=np.float64)
    poses = []
    for k in range(n_keyframes):
        phi = np.radians(arc_deg) * k / n_keyframes
        s, c = np.sin(phi), np.cos(phi)
        rotation = np.array(
            [
                [c, 0.0, -s],
                [0.0, -1.0, 0.0],
                [-s, 0.0, -c],
            ]
        )
        centre = target + orbit_radius * np.array([s, 0.0, c])
        poses.append(CameraPose.from_rotation_matrix(rotation, centre))
    return poses


def generate_sequence(cfg: SynthConfig) -> SyntheticSequence:
    """Render every keyframe of the orbit with its semi-dense inverse depth."""
    intr = cfg.intrinsics()
    rig = LightRig.default(cfg.tilt_deg)
    poses = generate_trajectory(
        cfg.n_keyframes, cfg.orbit_radius, cfg.target, cfg.arc_deg
    )

    keyframes = []
    for keyframe_id, pose in enumerate(poses):
        render = render_multispectral(cfg.scene, rig, intr, pose)
        valid_depth = render.depth.depth[render.depth.valid]
        mean_inverse = float(np.mean(1.0 / valid_depth)) if valid_depth.size else 0.0
        inverse_depth = make_semidense(
            render.depth,
            render.image,
            grad_threshold=cfg.grad_threshold,
            noise_sigma=cfg.noise_fraction * mean_inverse,
            seed=cfg.seed + keyframe_id,
        )
        keyframes.append(
            SyntheticKeyframe(
                keyframe_id=keyframe_id,
                pose=pose,
                render=render,
                inverse_depth=inverse_depth,
            )
        )
        logger.debug(
            "Keyframe rendered",
            keyframe_id=keyframe_id,
            object_pixels=render.depth.valid_count,
            semidense_pixels=inverse_depth.present_count,
        )

    return SyntheticSequence(
        config=cfg,
        intrinsics=intr,
        rig=rig,
        keyframes=keyframes,
        mixing=true_mixing(cfg.scene, rig),
    )
