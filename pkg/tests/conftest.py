import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evsplat import render_backward, render_forward, render_forward_naive
from evsplat.synthetic import make_random_cloud, make_sphere_scene

from util import make_camera


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the numba kernels once so timed tests measure work, not JIT."""
    cam = make_camera((16, 16))
    cloud = make_random_cloud(cam, 3, seed=0)
    render_forward(cloud, cam, 0.0)
    render_forward_naive(cloud, cam, 0.0)
    render_backward(cloud, cam, 0.0, np.ones((16, 16)))


@pytest.fixture(scope="session")
def sphere_scenes():
    """Three synthetic scenes with calibrated depth, mask, and intensity."""
    return [make_sphere_scene(variant=v, n_views=4, resolution=(32, 32)) for v in range(3)]
