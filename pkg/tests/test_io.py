import filecmp
from pathlib import Path

import numpy as np
import pytest

from evsplat import EventStream, GaussianCloud, PerPixelRegressor
from evsplat.io import (
    FormatError,
    format_metric_report,
    load_cloud_ply,
    load_depth_raw,
    load_events,
    load_metric_report,
    load_pgm,
    load_poses,
    load_regressor,
    load_scene,
    load_voxel_stack,
    save_cloud_ply,
    save_depth_raw,
    save_events,
    save_metric_report,
    save_pgm,
    save_poses,
    save_regressor,
    save_scene,
    save_voxel_stack,
)
from evsplat.synthetic import make_random_cloud, make_sphere_scene

from util import make_camera

FIXTURE = Path(__file__).parent / "data" / "minimal_scene"


def small_stream(seed=0, n=64):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.integers(0, 5000, n))
    return EventStream(t, rng.integers(0, 13, n), rng.integers(0, 7, n), rng.choice([-1, 1], n), (13, 7), 0, 5000)


# ---------------------------------------------------------------------------
# event files


def test_event_file_round_trip(tmp_path):
    stream = small_stream()
    path = tmp_path / "events.bin"
    save_events(path, stream)
    again = load_events(path, stream.t_begin, stream.t_end)
    assert np.array_equal(again.t, stream.t)
    assert np.array_equal(again.x, stream.x)
    assert np.array_equal(again.y, stream.y)
    assert np.array_equal(again.p, stream.p)
    assert again.resolution == stream.resolution

    second = tmp_path / "again.bin"
    save_events(second, again)
    assert path.read_bytes() == second.read_bytes()


def test_event_file_rejects_truncation(tmp_path):
    path = tmp_path / "events.bin"
    save_events(path, small_stream())
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(FormatError, match="size"):
        load_events(path)


def test_event_file_rejects_trailing_garbage(tmp_path):
    path = tmp_path / "events.bin"
    save_events(path, small_stream())
    path.write_bytes(path.read_bytes() + b"\x00" * 3)
    with pytest.raises(FormatError, match="size"):
        load_events(path)


def test_event_file_rejects_bad_magic(tmp_path):
    path = tmp_path / "events.bin"
    save_events(path, small_stream())
    blob = bytearray(path.read_bytes())
    blob[0] = ord(b"X")
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="magic"):
        load_events(path)


def test_event_file_rejects_nonzero_padding(tmp_path):
    path = tmp_path / "events.bin"
    save_events(path, small_stream(n=4))
    blob = bytearray(path.read_bytes())
    blob[16 + 14] = 7  # pad byte of the first record
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="pad"):
        load_events(path)


def test_event_file_default_window(tmp_path):
    stream = small_stream()
    path = tmp_path / "events.bin"
    save_events(path, stream)
    again = load_events(path)
    assert again.t_begin == int(stream.t[0])
    assert again.t_end == int(stream.t[-1]) + 1


# ---------------------------------------------------------------------------
# images, depth, poses


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    img = np.round(rng.uniform(0, 1, (9, 14)) * 255) / 255
    path = tmp_path / "img.pgm"
    save_pgm(path, img)
    assert np.array_equal(load_pgm(path), img)
    second = tmp_path / "img2.pgm"
    save_pgm(second, load_pgm(path))
    assert path.read_bytes() == second.read_bytes()


def test_pgm_rejects_wrong_payload(tmp_path):
    path = tmp_path / "img.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + b"\x00" * 7)
    with pytest.raises(FormatError, match="payload"):
        load_pgm(path)


def test_depth_raw_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    depth = rng.uniform(1, 6, (6, 8)).astype(np.float32).astype(np.float64)
    path = tmp_path / "d.raw"
    save_depth_raw(path, depth)
    assert np.array_equal(load_depth_raw(path), depth)


def test_depth_raw_rejects_truncation(tmp_path):
    path = tmp_path / "d.raw"
    save_depth_raw(path, np.ones((4, 4)))
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(FormatError, match="size"):
        load_depth_raw(path)


def test_poses_round_trip(tmp_path):
    from util import random_pose

    rng = np.random.default_rng(3)
    poses = [random_pose(rng) for _ in range(3)]
    path = tmp_path / "poses.txt"
    save_poses(path, poses)
    loaded = load_poses(path)
    for a, b in zip(poses, loaded):
        assert np.array_equal(a, b)
    second = tmp_path / "p2.txt"
    save_poses(second, loaded)
    assert path.read_bytes() == second.read_bytes()


# ---------------------------------------------------------------------------
# scenes


def test_minimal_fixture_loads():
    bundle = load_scene(FIXTURE)
    assert bundle.meta.n_views == 2
    assert len(bundle.views) == 2
    assert bundle.events.resolution == (bundle.meta.width, bundle.meta.height)
    cam = bundle.camera(0)
    assert cam.resolution == (bundle.meta.width, bundle.meta.height)


def test_scene_round_trip_is_byte_identical(tmp_path):
    bundle = load_scene(FIXTURE)
    out = tmp_path / "copy"
    save_scene(bundle, out)
    names = sorted(p.name for p in FIXTURE.iterdir())
    assert names == sorted(p.name for p in out.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(FIXTURE, out, names, shallow=False)
    assert not mismatch and not errors


def test_scene_save_load_from_memory(tmp_path):
    bundle = make_sphere_scene(variant=5, n_views=3, resolution=(16, 16))
    where = tmp_path / "scene"
    save_scene(bundle, where)
    again = load_scene(where)
    assert again.meta == bundle.meta
    for a, b in zip(again.views, bundle.views):
        assert np.array_equal(a.frame, b.frame)
        assert np.array_equal(a.depth, b.depth)
        assert np.array_equal(a.mask, b.mask)
        assert np.array_equal(a.pose, b.pose)
    assert np.array_equal(again.events.t, bundle.events.t)


def test_scene_missing_meta_named(tmp_path):
    with pytest.raises(FormatError, match="meta"):
        load_scene(tmp_path)


def test_scene_corrupt_events_named(tmp_path):
    bundle = make_sphere_scene(variant=5, n_views=2, resolution=(16, 16))
    where = tmp_path / "scene"
    save_scene(bundle, where)
    events = where / "events.bin"
    events.write_bytes(events.read_bytes()[:-7])
    with pytest.raises(FormatError, match="events.bin"):
        load_scene(where)


def test_scene_view_count_invariant_named(tmp_path):
    bundle = make_sphere_scene(variant=5, n_views=2, resolution=(16, 16))
    where = tmp_path / "scene"
    save_scene(bundle, where)
    poses = load_poses(where / "poses.txt")
    save_poses(where / "poses.txt", poses + [np.eye(4)])
    with pytest.raises(FormatError, match="n_views"):
        load_scene(where)


# ---------------------------------------------------------------------------
# point clouds


def test_empty_cloud_ply_round_trip(tmp_path):
    path = tmp_path / "empty.ply"
    save_cloud_ply(GaussianCloud.empty(), path)
    cloud = load_cloud_ply(path)
    assert len(cloud) == 0
    assert b"element vertex 0" in path.read_bytes()


def test_single_primitive_ply_size(tmp_path):
    cam = make_camera()
    cloud = make_random_cloud(cam, 1, seed=0)
    path = tmp_path / "one.ply"
    save_cloud_ply(cloud, path)
    blob = path.read_bytes()
    header = blob[: blob.find(b"end_header\n") + len(b"end_header\n")]
    assert len(blob) == len(header) + 12 * 4


def test_cloud_ply_round_trip_within_float32(tmp_path):
    cam = make_camera()
    cloud = make_random_cloud(cam, 57, seed=1)
    path = tmp_path / "cloud.ply"
    save_cloud_ply(cloud, path)
    again = load_cloud_ply(path)
    assert len(again) == 57
    assert np.allclose(again.mu, cloud.mu, rtol=1e-6, atol=1e-6)
    assert np.allclose(again.s, cloud.s, rtol=1e-6)
    assert np.allclose(again.opacity, cloud.opacity, rtol=1e-6)
    assert np.allclose(again.intensity, cloud.intensity, atol=1e-6)
    dots = np.abs(np.sum(again.q * cloud.q, axis=1))
    assert np.all(dots > 1 - 1e-9)  # same rotations after renormalization


def test_cloud_ply_rejects_wrong_properties(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_bytes(b"ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n")
    with pytest.raises(FormatError, match="property"):
        load_cloud_ply(path)


def test_cloud_ply_rejects_truncated_payload(tmp_path):
    cam = make_camera()
    path = tmp_path / "cloud.ply"
    save_cloud_ply(make_random_cloud(cam, 3, seed=2), path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FormatError, match="payload"):
        load_cloud_ply(path)


# ---------------------------------------------------------------------------
# regressor weights, voxel stacks, reports


def test_regressor_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    reg = PerPixelRegressor(rng.normal(size=(8, 39)), rng.normal(size=8))
    path = tmp_path / "weights.bin"
    save_regressor(path, reg)
    again = load_regressor(path)
    assert np.array_equal(again.weight, reg.weight)
    assert np.array_equal(again.bias, reg.bias)


def test_regressor_rejects_garbage(tmp_path):
    path = tmp_path / "weights.bin"
    save_regressor(path, PerPixelRegressor.zeros())
    path.write_bytes(path.read_bytes() + b"zz")
    with pytest.raises(FormatError, match="size"):
        load_regressor(path)


def test_voxel_stack_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    stack = rng.normal(size=(3, 5, 6, 7)).astype(np.float32).astype(np.float64)
    path = tmp_path / "vox.bin"
    save_voxel_stack(path, stack)
    assert np.array_equal(load_voxel_stack(path), stack)


def test_metric_report_round_trip(tmp_path):
    values = {"psnr": 31.25, "ssim": 0.912345, "rmse": 0.002}
    path = tmp_path / "report.txt"
    save_metric_report(path, values)
    assert load_metric_report(path) == values
    assert format_metric_report(values).startswith("psnr=")
