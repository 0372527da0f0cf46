"""Event-based grayscale Gaussian splatting on the CPU.

Event stream encodings, a pinhole camera model, a differentiable tile-based
rasterizer with an analytic backward pass, a cascaded depth/intensity/
parameter-regression pipeline with ground-truth and linear reference
predictors, the joint loss with evaluation metrics, and binary dataset IO.
"""
from .camera import CameraView, PointBehindCamera, project_point, projection_jacobian, unproject_pixel, view_transform
from .events import (
    AccumFrame,
    DEFAULT_BINS,
    DEFAULT_SEGMENTS,
    DEFAULT_THRESHOLD,
    Event,
    EventStream,
    SimulatorState,
    VoxelGrid,
    accumulate_frames,
    concatenate_streams,
    integrate_events,
    segment_stream,
    simulate_events,
    voxelize,
)
from .gaussians import (
    GaussianCloud,
    GaussianPrimitive,
    ParameterMaps,
    activate_parameter_maps,
    build_covariance,
    maps_to_cloud,
)
from .metrics import MetricReport, depth_metrics, image_metrics, psnr, ssim
from .pipeline import (
    DepthPrediction,
    IntensityPrediction,
    PerPixelRegressor,
    PredictorSuite,
    depth_from_disparity,
    make_linear_suite,
    make_oracle_suite,
    run_cascade,
    run_cascade_full,
)
from .rasterizer import (
    GradientSet,
    Projected2D,
    RasterizerConfig,
    RenderOutput,
    evaluate_alpha,
    project_gaussian_2d,
    render_backward,
    render_forward,
    render_forward_naive,
)
from .training import FitConfig, JointLossTargets, LossWeights, fit_gaussians, joint_loss

__version__ = "0.1.0"
