"""Semantic garment workbench.

3D Gaussian garments anchored to a semantic-labeled parametric skinned body:
initialization from body regions, differentiable CPU splatting, guided
optimization, semantic editing, and self-occlusion repair.
"""

__version__ = "0.1.0"

from .body import Pose, RegionSpec, SkinnedBody, load_body, make_test_humanoid, save_body
from .cloud import GaussianCloud, load_ply, save_ply
from .garment_init import init_garment

__all__ = [
    "GaussianCloud",
    "Pose",
    "RegionSpec",
    "SkinnedBody",
    "init_garment",
    "load_body",
    "load_ply",
    "make_test_humanoid",
    "save_body",
    "save_ply",
]
