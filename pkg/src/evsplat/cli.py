"""Command-line surface: simulate, voxelize, render, cascade, fit, eval.

Exit codes: 0 on success, 1 on usage errors (unknown flags, bad arguments),
2 on data errors (missing or corrupt files, invariant violations). All
commands are deterministic for identical inputs.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .events import (
    DEFAULT_BINS,
    DEFAULT_SEGMENTS,
    DEFAULT_THRESHOLD,
    SimulatorState,
    VoxelGrid,
    accumulate_frames,
    concatenate_streams,
    segment_stream,
    simulate_events,
    voxelize,
)
from .metrics import depth_metrics, image_metrics
from .pipeline import make_linear_suite, make_oracle_suite, run_cascade_full
from .rasterizer import render_forward
from .synthetic import LOG_EPS
from .training import FitConfig, fit_gaussians

DEFAULT_FRAME_DT_NS = 10_000_000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="evsplat", allow_abbrev=False, description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="convert a directory of PGM frames into an event file")
    p.add_argument("frames", help="directory of grayscale .pgm frames, lexicographic order")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--dt-ns", type=int, default=DEFAULT_FRAME_DT_NS, help="nanoseconds between frames")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("voxelize", help="segment an event file and write voxel grids")
    p.add_argument("--events", required=True)
    p.add_argument("--segments", type=int, default=DEFAULT_SEGMENTS)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_voxelize)

    p = sub.add_parser("render", help="render a cloud from a scene view")
    p.add_argument("--cloud", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--bg", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("cascade", help="run the prediction cascade and render a target view")
    p.add_argument("--scene", required=True)
    p.add_argument("--predictor", choices=("oracle", "linear"), required=True)
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--target", type=int, default=None, help="target view, defaults to view + 1")
    p.add_argument("--weights", default=None, help="regressor weight file (linear predictor)")
    p.add_argument("--bg", type=float, default=0.0)
    p.add_argument("--out-cloud", required=True)
    p.add_argument("--out-image", required=True)
    p.set_defaults(func=_cmd_cascade)

    p = sub.add_parser("fit", help="fit Gaussians to one scene view by gradient descent")
    p.add_argument("--scene", required=True)
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-cloud", required=True)
    p.add_argument("--out-trace", default=None)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("eval", help="compare prediction and ground-truth directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--depth", action="store_true", help="also evaluate depth .raw pairs")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)
    return parser


def _check_view(index: int, n_views: int, what: str = "view") -> None:
    if not 0 <= index < n_views:
        raise ValueError(f"{what} {index} out of range for a {n_views}-view scene")


def _cmd_simulate(args) -> None:
    frames_dir = Path(args.frames)
    paths = sorted(frames_dir.glob("*.pgm"))
    if len(paths) < 2:
        raise ValueError(f"{frames_dir}: need at least two .pgm frames, found {len(paths)}")
    if args.threshold <= 0:
        raise UsageError("--threshold must be positive")
    if args.dt_ns <= 0:
        raise UsageError("--dt-ns must be positive")
    frames = [io.load_pgm(p) for p in paths]
    h, w = frames[0].shape
    for p, f in zip(paths, frames):
        if f.shape != (h, w):
            raise ValueError(f"{p}: frame shape {f.shape} != first frame {(h, w)}")
    state = SimulatorState.zeros((w, h), args.threshold)
    streams = []
    for k in range(len(frames) - 1):
        prev = np.log(LOG_EPS + frames[k])
        nxt = np.log(LOG_EPS + frames[k + 1])
        stream, state = simulate_events(prev, nxt, k * args.dt_ns, (k + 1) * args.dt_ns, state)
        streams.append(stream)
    io.save_events(args.out, concatenate_streams(streams))


def _cmd_voxelize(args) -> None:
    if args.segments < 1:
        raise UsageError("--segments must be >= 1")
    if args.bins < 2:
        raise UsageError("--bins must be >= 2")
    stream = io.load_events(args.events)
    grids = [voxelize(seg, args.bins) for seg in segment_stream(stream, args.segments)]
    io.save_voxel_stack(args.out, np.stack([g.data for g in grids]))


def _cmd_render(args) -> None:
    cloud = io.load_cloud_ply(args.cloud)
    scene = io.load_scene(args.scene)
    _check_view(args.view, scene.meta.n_views)
    out = render_forward(cloud, scene.camera(args.view), args.bg)
    io.save_pgm(args.out, np.clip(out.image, 0.0, 1.0))


def _cmd_cascade(args) -> None:
    scene = io.load_scene(args.scene)
    n_views = scene.meta.n_views
    _check_view(args.view, n_views)
    target = args.target if args.target is not None else (args.view + 1) % n_views
    _check_view(target, n_views, "target")

    segments = segment_stream(scene.events, n_views)
    bins = DEFAULT_BINS
    vox_k = voxelize(segments[args.view], bins)
    if args.view > 0:
        vox_prev = voxelize(segments[args.view - 1], bins)
    else:
        vox_prev = VoxelGrid(np.zeros((bins, scene.meta.height, scene.meta.width)))
    accum = accumulate_frames(segments[args.view])

    view = scene.views[args.view]
    if args.predictor == "oracle":
        suite = make_oracle_suite(
            view.depth, view.frame, focal_px=scene.meta.fx, d_max=scene.meta.d_max
        )
    else:
        if args.weights is None:
            raise UsageError("--weights is required with --predictor linear")
        regressor = io.load_regressor(args.weights)
        suite = make_linear_suite(
            view.depth, view.frame, regressor, focal_px=scene.meta.fx, d_max=scene.meta.d_max
        )

    result = run_cascade_full(vox_k, vox_prev, accum, suite, scene.camera(args.view), scene.meta.d_max)
    io.save_cloud_ply(result.cloud, args.out_cloud)
    out = render_forward(result.cloud, scene.camera(target), args.bg)
    io.save_pgm(args.out_image, np.clip(out.image, 0.0, 1.0))


def _cmd_fit(args) -> None:
    scene = io.load_scene(args.scene)
    _check_view(args.view, scene.meta.n_views)
    cloud, trace = fit_gaussians(
        scene.views[args.view].frame,
        scene.camera(args.view),
        n=args.n,
        iters=args.iters,
        config=FitConfig(),
        seed=args.seed,
    )
    io.save_cloud_ply(cloud, args.out_cloud)
    if args.out_trace is not None:
        Path(args.out_trace).write_text("\n".join("%.17g" % v for v in trace) + "\n")


def _matched_files(pred_dir: Path, gt_dir: Path, pattern: str) -> list[tuple[Path, Path]]:
    pred_names = sorted(p.name for p in pred_dir.glob(pattern))
    gt_names = sorted(p.name for p in gt_dir.glob(pattern))
    if pred_names != gt_names:
        raise ValueError(
            f"prediction and ground-truth directories hold different {pattern} sets: "
            f"{pred_names} vs {gt_names}"
        )
    if not pred_names:
        raise ValueError(f"no {pattern} files to compare in {pred_dir}")
    return [(pred_dir / n, gt_dir / n) for n in pred_names]


def _cmd_eval(args) -> None:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    psnrs, ssims = [], []
    for pp, gp in _matched_files(pred_dir, gt_dir, "*.pgm"):
        p, s = image_metrics(io.load_pgm(pp), io.load_pgm(gp))
        psnrs.append(p)
        ssims.append(s)
    report = {"psnr": float(np.mean(psnrs)), "ssim": float(np.mean(ssims))}
    if args.depth:
        vals = []
        for pp, gp in _matched_files(pred_dir, gt_dir, "*.raw"):
            gt = io.load_depth_raw(gp)
            vals.append(depth_metrics(io.load_depth_raw(pp), gt, gt > 0))
        rmse, mae, abs_rel, sq_rel = np.mean(np.array(vals), axis=0)
        report.update(rmse=float(rmse), mae=float(mae), abs_rel=float(abs_rel), sq_rel=float(sq_rel))
    text = io.format_metric_report(report)
    sys.stdout.write(text)
    if args.out is not None:
        Path(args.out).write_text(text)


def cli_dispatch(argv: list[str]) -> int:
    """Parse and run one command; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("missing command (try --help)")
        args.func(args)
        return 0
    except SystemExit as e:  # argparse --help
        return int(e.code or 0)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (io.FormatError, OSError, ValueError, IndexError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))
