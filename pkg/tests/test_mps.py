import numpy as np
import pytest

from msfusion.core.error_handlers import InputValidationError
from msfusion.core.utils import angle_between_deg
from msfusion.domains.geometry.schemas import (
    CameraPose,
    MultispectralImage,
    NormalMap,
)
from msfusion.domains.ingest.schemas import KeyframeBundle
from msfusion.domains.ingest.service import depth_to_prior_normals, load_keyframe
from msfusion.domains.mps.exceptions import (
    DegeneratePriors,
    InsufficientPriors,
    SingularMixing,
)
from msfusion.domains.mps.schemas import (
    MixingConfig,
    MixingEstimator,
    MixingModel,
    SegmentationBackend,
    SegmentationConfig,
)
from msfusion.domains.mps.service import (
    adopt_mixing,
    estimate_mixing,
    fit_global_shading,
    recover_normals,
    segment_chromaticity,
    shadow_mask,
)
from msfusion.domains.synth.schemas import LightRig, SceneSpec, SynthConfig
from msfusion.domains.synth.service import (
    generate_sequence,
    render_multispectral,
    true_mixing,
)


def image_of(pixels):
    return MultispectralImage(data=np.asarray(pixels, dtype=np.float64))


def identity_model(labels):
    return MixingModel(
        labels=labels, matrices={1: np.eye(3)}, condition_numbers={1: 1.0}
    )


def positive_octant_normals(rng, shape):
    """Unit normals with all components positive, spanning three dimensions."""
    vectors = rng.uniform(0.05, 1.0, size=shape + (3,))
    return vectors / np.linalg.norm(vectors, axis=-1, keepdims=True)


def camera_facing_normals(rng, shape, max_tilt_deg=20.0):
    tilt = np.radians(rng.uniform(0.0, max_tilt_deg, size=shape))
    azimuth = rng.uniform(0.0, 2 * np.pi, size=shape)
    return np.stack(
        [np.sin(tilt) * np.cos(azimuth), np.sin(tilt) * np.sin(azimuth), -np.cos(tilt)],
        axis=-1,
    )


def all_valid(normals):
    return NormalMap(normals=normals, valid=np.ones(normals.shape[:2], dtype=bool))


def sphere_view(scene, image_size):
    cfg = SynthConfig(scene=scene, image_size=image_size)
    intr = cfg.intrinsics()
    rig = LightRig.default()
    render = render_multispectral(
        scene, rig, intr, CameraPose(translation=(0.0, 0.0, -3.0))
    )
    return render, intr, rig


# ==================== SHADOW MASK ====================


def test_shadow_mask_examples():
    img = image_of([[[0.5, 0.5, 0.5], [0.5, 0.0, 0.5]]])
    assert shadow_mask(img, 0.1).tolist() == [[True, False]]


def test_zero_threshold_keeps_non_negative_pixels():
    img = image_of([[[0.5, 0.0, 0.5], [0.1, 0.2, 0.3]]])
    assert shadow_mask(img, 0.0).all()


def test_default_threshold_is_two_percent_of_peak():
    img = image_of([[[1.0, 1.0, 1.0], [0.019, 0.5, 0.5], [0.021, 0.5, 0.5]]])
    assert shadow_mask(img).tolist() == [[True, False, True]]


def test_negative_threshold_is_rejected():
    with pytest.raises(InputValidationError):
        shadow_mask(image_of([[[1.0, 1.0, 1.0]]]), -0.1)


# ==================== SEGMENTATION ====================


def two_colour_image(size=20):
    pixels = np.empty((size, size, 3))
    pixels[:, : size // 2] = (0.8, 0.1, 0.1)
    pixels[:, size // 2 :] = (0.1, 0.1, 0.8)
    return image_of(pixels)


def test_uniform_chromaticity_gives_one_segment():
    img = image_of(np.full((16, 16, 3), (0.3, 0.4, 0.5)))
    labels = segment_chromaticity(img, SegmentationConfig(n_clusters=4))
    assert np.unique(labels).tolist() == [1]


def test_uniform_chromaticity_ignores_brightness():
    pixels = np.full((16, 16, 3), (0.3, 0.4, 0.5))
    pixels[:, 8:] *= 2.0
    labels = segment_chromaticity(image_of(pixels), SegmentationConfig(n_clusters=4))
    assert np.unique(labels).tolist() == [1]


def test_chromaticity_drift_stays_one_segment():
    # residual shading error: chromaticity drifts 0.196 across the image
    weight = np.linspace(0.0, 1.0, 64)[None, :, None]
    start = np.array([0.40, 0.30, 0.30])
    end = np.array([0.24, 0.38, 0.38])
    pixels = np.broadcast_to(start + weight * (end - start), (32, 64, 3))
    labels = segment_chromaticity(image_of(pixels), SegmentationConfig(n_clusters=4))
    assert np.unique(labels).tolist() == [1]


@pytest.mark.parametrize("backend", list(SegmentationBackend))
def test_two_chromaticities_split_into_halves(backend):
    cfg = SegmentationConfig(n_clusters=2, backend=backend)
    labels = segment_chromaticity(two_colour_image(), cfg)
    assert np.all(labels[:, :10] == 1)
    assert np.all(labels[:, 10:] == 2)


def test_small_segments_are_merged():
    pixels = np.full((20, 20, 3), (0.3, 0.3, 0.4))
    pixels[2:5, 2:5] = (0.9, 0.05, 0.05)
    labels = segment_chromaticity(
        image_of(pixels), SegmentationConfig(n_clusters=2, min_size=64)
    )
    assert np.unique(labels).tolist() == [1]


def test_fully_shadowed_image_is_unlabelled():
    img = two_colour_image()
    labels = segment_chromaticity(img, mask=np.zeros(img.shape, dtype=bool))
    assert not labels.any()


def test_segmentation_is_deterministic(rng):
    pixels = rng.uniform(0.1, 1.0, size=(24, 24, 3))
    cfg = SegmentationConfig(n_clusters=3, min_size=1, merge_distance=0.0, seed=5)
    first = segment_chromaticity(image_of(pixels), cfg)
    second = segment_chromaticity(image_of(pixels), cfg)
    np.testing.assert_array_equal(first, second)
    assert 1 <= first.max() <= 3


# ==================== MIXING ESTIMATION ====================


def test_identity_mixing_is_recovered(rng):
    normals = positive_octant_normals(rng, (10, 10))
    model = estimate_mixing(
        image_of(normals), all_valid(normals), np.ones((10, 10), dtype=int)
    )
    np.testing.assert_allclose(model.matrices[1], np.eye(3), atol=1e-9)
    assert model.condition_numbers[1] == pytest.approx(1.0)


@pytest.mark.parametrize("estimator", list(MixingEstimator))
def test_known_mixing_round_trip(rng, estimator):
    m0 = true_mixing(SceneSpec(), LightRig.default())[0]
    normals = camera_facing_normals(rng, (12, 12))
    img = image_of(normals @ m0.T)
    labels = np.ones((12, 12), dtype=int)
    model = estimate_mixing(
        img, all_valid(normals), labels, MixingConfig(estimator=estimator)
    )
    np.testing.assert_allclose(model.matrices[1], m0, atol=1e-6)

    recovered = recover_normals(img, model)
    np.testing.assert_allclose(recovered.normals, normals, atol=1e-6)


def test_planar_priors_are_degenerate():
    normals = np.zeros((6, 6, 3))
    normals[..., 2] = 1.0
    with pytest.raises(DegeneratePriors):
        estimate_mixing(
            image_of(normals), all_valid(normals), np.ones((6, 6), dtype=int)
        )


def test_too_few_priors(rng):
    normals = positive_octant_normals(rng, (2, 4))
    with pytest.raises(InsufficientPriors):
        estimate_mixing(
            image_of(normals), all_valid(normals), np.ones((2, 4), dtype=int)
        )


def test_interpolated_priors_are_excluded(rng):
    normals = positive_octant_normals(rng, (4, 4))
    interpolated = np.ones((4, 4), dtype=bool)
    labels = np.ones((4, 4), dtype=int)
    with pytest.raises(InsufficientPriors):
        estimate_mixing(
            image_of(normals), all_valid(normals), labels, interpolated=interpolated
        )
    cfg = MixingConfig(exclude_interpolated=False)
    model = estimate_mixing(
        image_of(normals), all_valid(normals), labels, cfg, interpolated=interpolated
    )
    assert model.segments == (1,)


def test_failed_segment_is_recorded(rng):
    normals = positive_octant_normals(rng, (8, 8))
    normals[:, 4:] = (0.0, 0.0, 1.0)
    labels = np.ones((8, 8), dtype=int)
    labels[:, 4:] = 2
    model = estimate_mixing(image_of(normals), all_valid(normals), labels)
    assert model.segments == (1,)
    assert model.failures == {2: "DEGENERATE_PRIORS"}

    recovered = recover_normals(image_of(normals), model)
    assert recovered.valid[:, :4].all()
    assert not recovered.valid[:, 4:].any()


def test_intensity_scaling_invariance(rng):
    m0 = true_mixing(SceneSpec(), LightRig.default())[0]
    normals = camera_facing_normals(rng, (10, 10))
    labels = np.ones((10, 10), dtype=int)
    img = image_of(normals @ m0.T)
    brighter = img.scaled(3.7)

    model = estimate_mixing(img, all_valid(normals), labels)
    scaled_model = estimate_mixing(brighter, all_valid(normals), labels)
    np.testing.assert_allclose(
        scaled_model.matrices[1], 3.7 * model.matrices[1], rtol=1e-9
    )
    np.testing.assert_allclose(
        recover_normals(brighter, scaled_model).normals,
        recover_normals(img, model).normals,
        atol=1e-9,
    )


# ==================== NORMAL RECOVERY ====================


def test_identity_recovery_normalises():
    labels = np.ones((1, 2), dtype=int)
    img = image_of([[[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]]])
    recovered = recover_normals(img, identity_model(labels))
    np.testing.assert_allclose(recovered.normals, [[[0, 0, 1], [0, 0, 1]]])


def test_masked_and_unlabelled_pixels_are_invalid():
    labels = np.array([[1, 1, 0]])
    img = image_of(np.full((1, 3, 3), 0.5))
    recovered = recover_normals(
        img, identity_model(labels), mask=np.array([[True, False, True]])
    )
    assert recovered.valid.tolist() == [[True, False, False]]
    np.testing.assert_array_equal(recovered.normals[0, 1:], 0.0)


def test_relabelling_leaves_normals_unchanged(rng):
    normals = positive_octant_normals(rng, (8, 8))
    labels = np.ones((8, 8), dtype=int)
    labels[4:] = 2
    img = image_of(normals)
    swapped = np.where(labels == 1, 2, 1)
    a = recover_normals(img, estimate_mixing(img, all_valid(normals), labels))
    b = recover_normals(img, estimate_mixing(img, all_valid(normals), swapped))
    np.testing.assert_allclose(a.normals, b.normals, atol=1e-12)


def test_ill_conditioned_model_is_refused():
    labels = np.ones((2, 2), dtype=int)
    model = MixingModel(
        labels=labels,
        matrices={1: np.diag([1.0, 1.0, 1e-8])},
        condition_numbers={1: 1e8},
    )
    with pytest.raises(SingularMixing):
        recover_normals(image_of(np.ones((2, 2, 3))), model)


def test_label_map_must_match_image():
    with pytest.raises(InputValidationError):
        recover_normals(
            image_of(np.ones((2, 2, 3))), identity_model(np.ones((3, 3), dtype=int))
        )


# ==================== PER-VIDEO MIXING ====================


def test_adopt_mixing_matches_nearest_centroid():
    a = np.diag([1.0, 2.0, 3.0])
    b = np.diag([3.0, 2.0, 1.0])
    reference = MixingModel(
        labels=np.array([[1, 2]]),
        matrices={1: a, 2: b},
        condition_numbers={1: 3.0, 2: 3.0},
        centroids={1: (0.6, 0.2, 0.2), 2: (0.2, 0.2, 0.6)},
    )
    labels = np.array([[1, 1, 2]])
    adopted = adopt_mixing(
        reference, labels, {1: (0.21, 0.2, 0.59), 2: (0.58, 0.21, 0.21)}
    )
    np.testing.assert_array_equal(adopted.matrices[1], b)
    np.testing.assert_array_equal(adopted.matrices[2], a)


def test_adopt_mixing_needs_centroids_for_several_segments():
    reference = MixingModel(
        labels=np.array([[1, 2]]),
        matrices={1: np.eye(3), 2: np.eye(3)},
        condition_numbers={1: 1.0, 2: 1.0},
    )
    with pytest.raises(InputValidationError):
        adopt_mixing(reference, np.array([[1]]), {1: (0.3, 0.3, 0.4)})


def test_global_shading_needs_three_dimensional_priors():
    normals = np.zeros((6, 6, 3))
    normals[..., 2] = -1.0
    img = image_of(np.full((6, 6, 3), 0.5))
    assert (
        fit_global_shading(img, all_valid(normals), np.ones((6, 6), dtype=bool)) is None
    )


# ==================== SYNTHETIC SPHERES ====================


def test_render_then_recover_with_true_mixing(two_albedo_scene):
    render, _, rig = sphere_view(two_albedo_scene, 64)
    truth = true_mixing(two_albedo_scene, rig)
    lit = render.normals.valid & ~render.shadow
    labels = np.where(lit, render.regions + 1, 0)
    model = MixingModel(
        labels=labels,
        matrices={i + 1: m for i, m in enumerate(truth)},
        condition_numbers={
            i + 1: float(np.linalg.cond(m)) for i, m in enumerate(truth)
        },
    )

    recovered = recover_normals(render.image, model, lit)
    assert recovered.valid.sum() == lit.sum() > 0
    np.testing.assert_allclose(
        recovered.normals[lit], render.normals.normals[lit], atol=1e-6
    )


@pytest.mark.slow
def test_sphere_closure_with_exact_depth_priors():
    render, intr, _ = sphere_view(SceneSpec(), 512)
    priors = depth_to_prior_normals(render.depth, intr)
    mask = shadow_mask(render.image)
    labels = np.where(mask, 1, 0)
    model = estimate_mixing(render.image, priors, labels, mask=mask)
    normals = recover_normals(render.image, model, mask)

    evaluated = normals.valid & render.normals.valid & ~render.shadow
    errors = angle_between_deg(
        normals.normals[evaluated], render.normals.normals[evaluated]
    )
    assert np.median(errors) <= 2.0
    assert np.percentile(errors, 95) <= 5.0


@pytest.mark.slow
def test_sphere_with_noisy_semidense_priors():
    cfg = SynthConfig(
        scene=SceneSpec(texture_contrast=0.3),
        image_size=512,
        noise_fraction=0.01,
        seed=3,
    )
    sequence = generate_sequence(cfg)
    keyframe = sequence.keyframes[0]
    render = keyframe.render
    bundle = KeyframeBundle(
        keyframe_id=0,
        image=render.image,
        inverse_depth=keyframe.inverse_depth,
        pose=keyframe.pose,
        scale=1.0,
        intrinsics=sequence.intrinsics,
    )
    prepared = load_keyframe(bundle, prior_smoothing=6.0)
    mask = shadow_mask(render.image)
    model = estimate_mixing(
        render.image,
        prepared.prior_normals,
        np.where(mask, 1, 0),
        MixingConfig(estimator=MixingEstimator.INVERSE),
        mask=mask,
        interpolated=prepared.dense_depth.interpolated,
    )
    normals = recover_normals(render.image, model, mask)

    evaluated = normals.valid & render.normals.valid & ~render.shadow
    errors = angle_between_deg(
        normals.normals[evaluated], render.normals.normals[evaluated]
    )
    assert np.median(errors) <= 5.0


@pytest.mark.slow
def test_two_albedo_sphere_segments_and_mixing(two_albedo_scene):
    render, intr, rig = sphere_view(two_albedo_scene, 256)
    truth = true_mixing(two_albedo_scene, rig)
    priors = depth_to_prior_normals(render.depth, intr)
    mask = shadow_mask(render.image)

    shading = fit_global_shading(render.image, priors, mask)
    assert shading is not None
    labels = segment_chromaticity(
        render.image, SegmentationConfig(n_clusters=2), mask, shading
    )
    assert labels.max() == 2

    model = estimate_mixing(render.image, priors, labels, mask=mask)
    normals = recover_normals(render.image, model, mask)
    for segment in (1, 2):
        region = np.bincount(render.regions[labels == segment]).argmax()
        expected = truth[region]
        residual = np.linalg.norm(model.matrices[segment] - expected)
        error = residual / np.linalg.norm(expected)
        assert error <= 0.02

        evaluated = (labels == segment) & normals.valid & ~render.shadow
        errors = angle_between_deg(
            normals.normals[evaluated], render.normals.normals[evaluated]
        )
        assert np.median(errors) <= 2.0
