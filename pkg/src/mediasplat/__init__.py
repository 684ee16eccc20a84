"""Differentiable Gaussian splatting through a scattering medium, on the CPU.

The main entry points are ``render`` / ``render_backward`` for the medium-aware
rasterizer, ``train`` for joint optimization of primitives and the plenoptic medium
grid, and ``sim.make_dataset`` for synthetic degraded scenes with ground truth.
"""

from .errors import *  # noqa: F401,F403
from .io import Checkpoint, Dataset, load_checkpoint, load_dataset, save_checkpoint
from .medium import MediumGrid, MediumSample, medium_eval, medium_variant
from .objective import LossWeights, exposure_align, ms_ssim, psnr, ssim, total_loss
from .pdgc import affine_fit, complement, init_from_points, region_masks
from .render import RenderOptions, RenderOutput, Upstream, render, render_backward, render_vanilla
from .scene import Bounds, Camera, GaussianPrimitive, Scene
from .trainer import TrainConfig, train

__version__ = "0.1.0"
