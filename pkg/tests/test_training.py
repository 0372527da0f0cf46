import numpy as np
import pytest

from evsplat import (
    FitConfig,
    JointLossTargets,
    LossWeights,
    fit_gaussians,
    joint_loss,
    psnr,
    render_forward,
)
from evsplat.synthetic import make_smooth_target

from util import make_camera


def random_branch_inputs(seed=0, shape=(8, 8)):
    rng = np.random.default_rng(seed)
    return (
        rng.uniform(0, 1, shape),
        rng.uniform(1, 5, shape),
        rng.uniform(0, 1, shape),
        JointLossTargets(
            intensity_src=rng.uniform(0, 1, shape),
            depth_src=rng.uniform(1, 5, shape),
            intensity_tgt=rng.uniform(0, 1, shape),
        ),
    )


# ---------------------------------------------------------------------------
# joint loss


def test_joint_loss_zero_at_ground_truth():
    rng = np.random.default_rng(0)
    i = rng.uniform(0, 1, (6, 6))
    d = rng.uniform(1, 5, (6, 6))
    r = rng.uniform(0, 1, (6, 6))
    total, grads = joint_loss(i, d, r, JointLossTargets(i, d, r))
    assert total == 0.0
    assert not grads.d_intensity.any()
    assert not grads.d_rendered.any()


def test_joint_loss_default_weights():
    w = LossWeights()
    assert (w.lambda1, w.lambda2, w.lambda3) == (0.2, 0.2, 0.6)
    assert (w.beta1, w.beta2) == (0.8, 0.2)


def test_joint_loss_matches_straight_line_oracle():
    i_pred, d_pred, rendered, targets = random_branch_inputs(1)
    w = LossWeights()
    total, _ = joint_loss(i_pred, d_pred, rendered, targets, w)
    expected = (
        w.lambda1 * w.beta1 * np.mean((i_pred - targets.intensity_src) ** 2)
        + w.lambda2 * np.mean(np.abs(d_pred - targets.depth_src))
        + w.lambda3 * w.beta1 * np.mean((rendered - targets.intensity_tgt) ** 2)
    )
    assert total == pytest.approx(expected, rel=1e-12)


def test_joint_loss_nonnegative_and_shape_checked():
    i_pred, d_pred, rendered, targets = random_branch_inputs(2)
    total, _ = joint_loss(i_pred, d_pred, rendered, targets)
    assert total >= 0
    with pytest.raises(ValueError, match="shape"):
        joint_loss(i_pred[:4], d_pred, rendered, targets)


def test_joint_loss_gradients_match_finite_differences():
    i_pred, d_pred, rendered, targets = random_branch_inputs(3)
    w = LossWeights()
    _, grads = joint_loss(i_pred, d_pred, rendered, targets, w)
    step = 1e-7
    rng = np.random.default_rng(4)
    for arr, grad in ((i_pred, grads.d_intensity), (d_pred, grads.d_depth), (rendered, grads.d_rendered)):
        for _ in range(5):
            y, x = rng.integers(0, arr.shape[0]), rng.integers(0, arr.shape[1])
            plus, minus = arr.copy(), arr.copy()
            plus[y, x] += step
            minus[y, x] -= step
            args = {id(i_pred): (i_pred, 0), id(d_pred): (d_pred, 1), id(rendered): (rendered, 2)}
            which = args[id(arr)][1]
            trio_p = [i_pred, d_pred, rendered]
            trio_m = [i_pred, d_pred, rendered]
            trio_p[which] = plus
            trio_m[which] = minus
            fd = (joint_loss(*trio_p, targets, w)[0] - joint_loss(*trio_m, targets, w)[0]) / (2 * step)
            assert fd == pytest.approx(grad[y, x], rel=1e-4, abs=1e-10)


def test_joint_loss_perceptual_slot():
    i_pred, d_pred, rendered, targets = random_branch_inputs(5)

    def fake_perceptual(pred, gt):
        diff = pred - gt
        return float(np.sum(diff**2)), 2.0 * diff

    w = LossWeights()
    base, _ = joint_loss(i_pred, d_pred, rendered, targets, w)
    with_p, grads = joint_loss(i_pred, d_pred, rendered, targets, w, perceptual=fake_perceptual)
    extra = w.lambda1 * w.beta2 * np.sum((i_pred - targets.intensity_src) ** 2) + w.lambda3 * w.beta2 * np.sum(
        (rendered - targets.intensity_tgt) ** 2
    )
    assert with_p == pytest.approx(base + extra, rel=1e-12)
    manual = w.lambda1 * (w.beta1 * 2 * (i_pred - targets.intensity_src) / i_pred.size + w.beta2 * 2 * (i_pred - targets.intensity_src))
    assert np.allclose(grads.d_intensity, manual, rtol=1e-12)


def test_loss_weights_reject_negative():
    with pytest.raises(ValueError):
        LossWeights(lambda1=-0.1)


# ---------------------------------------------------------------------------
# fitting


def test_fit_zero_iterations_returns_initialization():
    cam = make_camera((24, 24))
    target = make_smooth_target((24, 24), seed=1)
    cloud, trace = fit_gaussians(target, cam, n=10, iters=0, seed=5)
    assert len(trace) == 1
    assert len(cloud) == 10


def test_fit_is_deterministic_for_a_seed():
    cam = make_camera((24, 24))
    target = make_smooth_target((24, 24), seed=2)
    c1, t1 = fit_gaussians(target, cam, n=15, iters=25, seed=9)
    c2, t2 = fit_gaussians(target, cam, n=15, iters=25, seed=9)
    assert t1 == t2
    assert np.array_equal(c1.mu, c2.mu)
    assert np.array_equal(c1.q, c2.q)
    assert np.array_equal(c1.s, c2.s)
    assert np.array_equal(c1.opacity, c2.opacity)
    assert np.array_equal(c1.intensity, c2.intensity)


def test_fit_reduces_loss_and_preserves_invariants():
    cam = make_camera((24, 24))
    target = make_smooth_target((24, 24), seed=3)
    cloud, trace = fit_gaussians(target, cam, n=40, iters=150, seed=0)
    assert trace[-1] < trace[0]
    assert np.all(cloud.s > 0)
    assert np.all((cloud.opacity > 0) & (cloud.opacity < 1))
    assert np.all((cloud.intensity >= 0) & (cloud.intensity <= 1))
    assert np.allclose(np.linalg.norm(cloud.q, axis=1), 1.0, atol=1e-12)
    final = render_forward(cloud, cam, 0.0).image
    assert psnr(np.clip(final, 0, 1), target) > psnr(np.full_like(target, target.mean()), target) - 20


def test_fit_rejects_bad_arguments():
    cam = make_camera((16, 16))
    target = make_smooth_target((16, 16), seed=0)
    with pytest.raises(ValueError):
        fit_gaussians(target, cam, n=0, iters=1)
    with pytest.raises(ValueError):
        fit_gaussians(target, cam, n=1, iters=-1)
    with pytest.raises(ValueError, match="target"):
        fit_gaussians(target[:8], cam, n=1, iters=1)
