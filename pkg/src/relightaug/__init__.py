"""Physically based G-buffer relighting and demonstration-episode augmentation."""

__version__ = "0.1.0"

from .envmap import EnvironmentMap, build_sampling_tables, constant_env
from .errors import (
    DegenerateEnvironmentError,
    DimensionMismatchError,
    ImageIOError,
    RelightError,
    ValidationError,
)
from .geometry import TriMesh, depth_to_mesh, project_mask, render_background, save_mesh_obj
from .imagery import GBuffer, load_gbuffer, load_image, load_pfm, load_png, save_image, save_pfm, save_png
from .metrics import SsimParams, psnr, ssim, temporal_ssim
from .optimize import EnvEstimateConfig, RefineConfig, estimate_envmap, loss_lp, refine_properties, transport_basis
from .pipeline import Episode, JitterParams, augment_episode, degrade_episode, load_episode, save_episode, swap_albedo
from .relight import RenderSettings, relight_frame, shade_pixel
from .temporal import QuotientMap, propagate, quotient_map
