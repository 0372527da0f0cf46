import numpy as np
import pytest

from evsplat import (
    DepthPrediction,
    IntensityPrediction,
    PerPixelRegressor,
    PredictorSuite,
    VoxelGrid,
    accumulate_frames,
    depth_from_disparity,
    make_oracle_suite,
    run_cascade,
    run_cascade_full,
    segment_stream,
    unproject_pixel,
    voxelize,
)
from evsplat.pipeline import DEFAULT_D_MAX, regressor_render_gradients

from util import make_camera


def scene_inputs(scene, k):
    """Voxel grids for segments k and k-1 plus the accumulation frame."""
    segs = segment_stream(scene.events, scene.meta.n_views)
    vox_k = voxelize(segs[k])
    if k > 0:
        vox_prev = voxelize(segs[k - 1])
    else:
        vox_prev = VoxelGrid(np.zeros_like(vox_k.data))
    return vox_k, vox_prev, accumulate_frames(segs[k])


# ---------------------------------------------------------------------------
# depth decoding


def test_depth_from_disparity_zero_disp():
    depth = depth_from_disparity(np.zeros((3, 3)), np.ones((3, 3)), d_max=2.0)
    assert np.allclose(depth, np.exp(1.0))


def test_depth_from_disparity_masked_pixels_land_at_one():
    mask = np.zeros((2, 2))
    mask[0, 0] = 1.0
    depth = depth_from_disparity(np.full((2, 2), 3.0), mask, d_max=2.0)
    assert depth[1, 1] == 1.0
    assert depth[0, 0] > 1.0


def test_depth_from_disparity_monotonic_in_disparity():
    rng = np.random.default_rng(0)
    disp = np.sort(rng.normal(0, 3, 10_000))
    depth = depth_from_disparity(disp.reshape(1, -1), np.ones((1, 10_000)), d_max=2.0)[0]
    assert np.all(np.diff(depth) > 0)


def test_depth_from_disparity_range():
    rng = np.random.default_rng(1)
    d_max = 2.0
    depth = depth_from_disparity(rng.normal(0, 10, (50, 50)), rng.uniform(0, 1, (50, 50)), d_max)
    assert depth.min() >= 1.0
    assert depth.max() <= np.exp(d_max)


# ---------------------------------------------------------------------------
# oracle suite


def test_oracle_depth_round_trip(sphere_scenes):
    scene = sphere_scenes[0]
    view = scene.views[1]
    suite = make_oracle_suite(view.depth, view.frame, focal_px=scene.meta.fx, d_max=scene.meta.d_max)
    pred = suite.depth(None, None)
    decoded = depth_from_disparity(pred.disp, pred.mask, scene.meta.d_max)
    fg = view.depth > 0
    assert np.max(np.abs(decoded[fg] - view.depth[fg]) / view.depth[fg]) < 1e-9
    assert np.all(pred.mask[~fg] == 0.0)


def test_oracle_intensity_passthrough(sphere_scenes):
    scene = sphere_scenes[0]
    view = scene.views[1]
    suite = make_oracle_suite(view.depth, view.frame, focal_px=scene.meta.fx, d_max=scene.meta.d_max)
    result = run_cascade_full(*scene_inputs(scene, 1), suite, scene.camera(1), scene.meta.d_max)
    assert np.array_equal(result.intensity, view.frame * result.mask)


def test_oracle_rejects_unrepresentable_depth():
    depth = np.full((4, 4), 10.0)  # above e^2
    with pytest.raises(ValueError, match="e\\^d_max"):
        make_oracle_suite(depth, np.zeros((4, 4)), focal_px=30.0, d_max=2.0)


# ---------------------------------------------------------------------------
# cascade


def test_cascade_empty_mask_gives_empty_cloud_and_background():
    h = w = 16
    cam = make_camera((w, h))
    zeros = VoxelGrid(np.zeros((5, h, w)))
    accum = accumulate_frames(segment_stream(__import__("evsplat").EventStream.empty((w, h), 0, 10), 1)[0])

    def depth_pred(vk, vp):
        return DepthPrediction(np.zeros((h, w)), np.zeros((h, w)), np.zeros((h, w, 4)))

    def inten_pred(fd, vk, ac):
        return IntensityPrediction(np.full((h, w), 0.5), np.zeros((h, w, 4)))

    def regress(depth, intensity, feature, vk):
        return np.zeros((h, w, 8))

    suite = PredictorSuite(depth_pred, inten_pred, regress)
    cloud = run_cascade(zeros, zeros, accum, suite, cam)
    assert len(cloud) == 0

    from evsplat import render_forward

    out = render_forward(cloud, cam, background=0.4)
    assert np.all(out.image == 0.4)


def test_cascade_oracle_primitives_lie_on_depth_surface(sphere_scenes):
    for scene in sphere_scenes:
        k = 1
        view = scene.views[k]
        cam = scene.camera(k)
        suite = make_oracle_suite(view.depth, view.frame, focal_px=scene.meta.fx, d_max=scene.meta.d_max)
        cloud = run_cascade(*scene_inputs(scene, k), suite, cam, scene.meta.d_max)
        sel_y, sel_x = np.nonzero(view.depth > 0)
        assert len(cloud) == sel_y.size
        for i in range(0, sel_y.size, max(1, sel_y.size // 50)):
            expected = unproject_pixel(sel_x[i], sel_y[i], view.depth[sel_y[i], sel_x[i]], cam)
            assert np.max(np.abs(cloud.mu[i] - expected)) < 1e-9


def test_cascade_cardinality_matches_mask_census(sphere_scenes):
    scene = sphere_scenes[1]
    view = scene.views[2]
    suite = make_oracle_suite(view.depth, view.frame, focal_px=scene.meta.fx, d_max=scene.meta.d_max)
    cloud = run_cascade(*scene_inputs(scene, 2), suite, scene.camera(2), scene.meta.d_max)
    assert len(cloud) == int((view.depth > 0).sum())


def test_cascade_is_deterministic(sphere_scenes):
    scene = sphere_scenes[0]
    view = scene.views[1]
    suite = make_oracle_suite(view.depth, view.frame, focal_px=scene.meta.fx, d_max=scene.meta.d_max)
    a = run_cascade(*scene_inputs(scene, 1), suite, scene.camera(1), scene.meta.d_max)
    b = run_cascade(*scene_inputs(scene, 1), suite, scene.camera(1), scene.meta.d_max)
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.q, b.q)
    assert np.array_equal(a.s, b.s) and np.array_equal(a.opacity, b.opacity)
    assert np.array_equal(a.intensity, b.intensity)


def test_cascade_shape_mismatch_names_stage():
    h = w = 8
    cam = make_camera((w, h))
    vox = VoxelGrid(np.zeros((5, h, w)))
    from evsplat import EventStream

    accum = accumulate_frames(EventStream.empty((w, h), 0, 10))

    def bad_depth(vk, vp):
        return DepthPrediction(np.zeros((h + 1, w)), np.zeros((h + 1, w)), np.zeros((h + 1, w, 2)))

    suite = PredictorSuite(bad_depth, None, None)
    with pytest.raises(ValueError, match="depth stage"):
        run_cascade(vox, vox, accum, suite, cam)

    def good_depth(vk, vp):
        return DepthPrediction(np.zeros((h, w)), np.zeros((h, w)), np.zeros((h, w, 2)))

    def bad_intensity(fd, vk, ac):
        return IntensityPrediction(np.zeros((h, w + 2)), np.zeros((h, w + 2, 2)))

    suite = PredictorSuite(good_depth, bad_intensity, None)
    with pytest.raises(ValueError, match="intensity stage"):
        run_cascade(vox, vox, accum, suite, cam)

    def good_intensity(fd, vk, ac):
        return IntensityPrediction(np.zeros((h, w)), np.zeros((h, w, 2)))

    def bad_regressor(depth, intensity, feature, vk):
        return np.zeros((h, w, 7))

    suite = PredictorSuite(good_depth, good_intensity, bad_regressor)
    with pytest.raises(ValueError, match="regressor stage"):
        run_cascade(vox, vox, accum, suite, cam)


# ---------------------------------------------------------------------------
# per-pixel linear regressor


def test_regressor_zero_weights_give_bias():
    reg = PerPixelRegressor(np.zeros((8, 2 + 5 + 3)), np.arange(8.0))
    h = w = 6
    vox = VoxelGrid(np.zeros((5, h, w)))
    out = reg.forward(np.ones((h, w)), np.zeros((h, w)), np.zeros((h, w, 3)), vox)
    assert out.shape == (h, w, 8)
    assert np.array_equal(out[3, 4], np.arange(8.0))


def test_regressor_output_shape_for_any_input():
    rng = np.random.default_rng(2)
    for h, w, kf in ((4, 7, 2), (9, 3, 32)):
        reg = PerPixelRegressor(rng.normal(size=(8, 2 + 5 + kf)), rng.normal(size=8))
        vox = VoxelGrid(rng.normal(size=(5, h, w)))
        out = reg.forward(
            rng.uniform(1, 5, (h, w)), rng.uniform(0, 1, (h, w)), rng.normal(size=(h, w, kf)), vox
        )
        assert out.shape == (h, w, 8)


def test_regressor_feature_count_mismatch():
    reg = PerPixelRegressor.zeros(bins=5, feature_dim=4)
    vox = VoxelGrid(np.zeros((5, 3, 3)))
    with pytest.raises(ValueError, match="features"):
        reg.forward(np.ones((3, 3)), np.zeros((3, 3)), np.zeros((3, 3, 9)), vox)


def test_regressor_weight_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    h, w, kf = 5, 4, 3
    reg = PerPixelRegressor(rng.normal(0, 0.3, (8, 2 + 5 + kf)), rng.normal(0, 0.3, 8))
    vox = VoxelGrid(rng.normal(size=(5, h, w)))
    depth = rng.uniform(1, 5, (h, w))
    inten = rng.uniform(0, 1, (h, w))
    feat = rng.normal(size=(h, w, kf))
    up = rng.normal(size=(h, w, 8))

    def loss(r):
        return float(np.sum(up * r.forward(depth, inten, feat, vox)))

    d_w, d_b, d_depth, d_inten, d_feat, d_vox = reg.backward(depth, inten, feat, vox, up)
    step = 1e-6
    for idx in [(0, 0), (3, 5), (7, 2 + 5 + kf - 1)]:
        wp, wm = reg.weight.copy(), reg.weight.copy()
        wp[idx] += step
        wm[idx] -= step
        fd = (loss(PerPixelRegressor(wp, reg.bias)) - loss(PerPixelRegressor(wm, reg.bias))) / (2 * step)
        assert fd == pytest.approx(d_w[idx], rel=1e-4, abs=1e-9)
    bp, bm = reg.bias.copy(), reg.bias.copy()
    bp[4] += step
    bm[4] -= step
    fd = (loss(PerPixelRegressor(reg.weight, bp)) - loss(PerPixelRegressor(reg.weight, bm))) / (2 * step)
    assert fd == pytest.approx(d_b[4], rel=1e-4, abs=1e-9)
    # input-map gradients are exact for a linear map
    assert np.allclose(d_depth, np.einsum("hwo,o->hw", up, reg.weight[:, 0]))
    assert np.allclose(d_inten, np.einsum("hwo,o->hw", up, reg.weight[:, 1]))
    assert d_feat.shape == feat.shape and d_vox.shape == vox.data.shape


# ---------------------------------------------------------------------------
# end-to-end gradient through activation, unprojection, and rendering


def build_toy_problem(size=12, seed=0):
    rng = np.random.default_rng(seed)
    h = w = size
    cam = make_camera((w, h))
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    r2 = (xx - w / 2 + 0.5) ** 2 + (yy - h / 2 + 0.5) ** 2
    mask = (r2 < (size / 3.2) ** 2).astype(np.float64)
    depth = np.where(mask > 0, 3.0 + 0.5 * np.sin(xx * 0.7) * np.cos(yy * 0.5), 0.0)
    intensity = np.where(mask > 0, 0.3 + 0.4 * rng.uniform(size=(h, w)), 0.0)
    voxel = VoxelGrid(rng.normal(0, 0.5, (5, h, w)))
    feature = rng.normal(0, 0.5, (h, w, 4))
    from scipy.special import logit

    bias = np.concatenate([[1.0, 0.0, 0.0, 0.0], np.log(0.3) * np.ones(3), [logit(0.7)]])
    weight = rng.normal(0, 0.02, (8, 2 + 5 + 4))
    reg = PerPixelRegressor(weight, bias)
    target = rng.uniform(0, 1, (h, w))
    return reg, depth, intensity, feature, voxel, mask, cam, target


def test_end_to_end_weight_gradient_matches_finite_differences():
    reg, depth, inten, feat, vox, mask, cam, target = build_toy_problem()
    loss0, d_w, d_b, rendered = regressor_render_gradients(
        reg, depth, inten, feat, vox, mask, cam, target, background=0.1
    )
    assert rendered.shape == target.shape

    def loss_of(r):
        value, *_ = regressor_render_gradients(r, depth, inten, feat, vox, mask, cam, target, background=0.1)
        return value

    rng = np.random.default_rng(1)
    step = 1e-5
    checked = 0
    for _ in range(12):
        i, j = rng.integers(0, 8), rng.integers(0, reg.n_features)
        wp, wm = reg.weight.copy(), reg.weight.copy()
        wp[i, j] += step
        wm[i, j] -= step
        fd = (loss_of(PerPixelRegressor(wp, reg.bias)) - loss_of(PerPixelRegressor(wm, reg.bias))) / (2 * step)
        if max(abs(fd), abs(d_w[i, j])) < 1e-10:
            continue
        assert fd == pytest.approx(d_w[i, j], rel=1e-3, abs=1e-8)
        checked += 1
    assert checked >= 6
