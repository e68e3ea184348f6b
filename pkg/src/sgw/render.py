"""Deterministic CPU splatting of isotropic gaussians with analytic gradients.

Isotropy collapses the usual 2x2 screen-space covariance to a circular
footprint of radius sigma2d = s * f / depth, so projection and compositing
need no EWA machinery. Compositing is front-to-back with per-pixel
transmittance; splats are cut off at 3 sigma. The backward pass returns exact
reverse-mode gradients for positions, scales, colors, and opacities; the
rotation gradient of an isotropic gaussian is identically zero and is not
reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import Camera
from .cloud import GaussianCloud


@dataclass
class Projection:
    mean2d: np.ndarray  # (P, 2) pixels
    sigma2d: np.ndarray  # (P,) pixels
    depth: np.ndarray  # (P,) meters along the camera axis
    visible: np.ndarray  # (P,) bool
    cam_xyz: np.ndarray  # (P, 3) camera-space positions


@dataclass
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3) linear
    alpha: np.ndarray  # (H, W)
    depth: np.ndarray  # (H, W), +inf where nothing contributed


@dataclass
class RenderGrads:
    d_position: np.ndarray  # (P, 3)
    d_scale: np.ndarray  # (P,)
    d_color: np.ndarray  # (P, 3)
    d_opacity: np.ndarray  # (P,)

    def __iadd__(self, other: "RenderGrads") -> "RenderGrads":
        self.d_position += other.d_position
        self.d_scale += other.d_scale
        self.d_color += other.d_color
        self.d_opacity += other.d_opacity
        return self

    @classmethod
    def zeros(cls, n: int) -> "RenderGrads":
        return cls(np.zeros((n, 3)), np.zeros(n), np.zeros((n, 3)), np.zeros(n))


def project(cloud: GaussianCloud, camera: Camera) -> Projection:
    """Pinhole projection of gaussian centers plus the isotropic footprint.

    A gaussian is visible when its depth lies in (near, far) and its 3-sigma
    disk intersects the image rectangle.
    """
    n = len(cloud)
    rot = camera.world_to_cam[:3, :3]
    t = camera.world_to_cam[:3, 3]
    cam_xyz = cloud.positions @ rot.T + t
    z = cam_xyz[:, 2]

    in_depth = (z > camera.near) & (z < camera.far)
    safe_z = np.where(in_depth, z, 1.0)

    mean2d = np.zeros((n, 2))
    mean2d[:, 0] = camera.fx * cam_xyz[:, 0] / safe_z + camera.cx
    mean2d[:, 1] = camera.fy * cam_xyz[:, 1] / safe_z + camera.cy
    sigma2d = cloud.scales * camera.focal / safe_z

    s3 = 3.0 * sigma2d
    on_image = (
        (mean2d[:, 0] + s3 > 0.0) & (mean2d[:, 0] - s3 < camera.width)
        & (mean2d[:, 1] + s3 > 0.0) & (mean2d[:, 1] - s3 < camera.height)
    )
    visible = in_depth & on_image
    mean2d[~visible] = 0.0
    sigma2d = np.where(visible, sigma2d, 0.0)
    return Projection(mean2d=mean2d, sigma2d=sigma2d,
                      depth=np.where(visible, z, 0.0), visible=visible, cam_xyz=cam_xyz)


def _draw_order(proj: Projection) -> np.ndarray:
    vis = np.flatnonzero(proj.visible)
    return vis[np.lexsort((vis, proj.depth[vis]))].astype(np.int64)


def render(cloud: GaussianCloud, camera: Camera, background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Forward splat: depth-sorted front-to-back compositing over `background`."""
    bg = np.ascontiguousarray(background, dtype=np.float64).reshape(3)
    proj = project(cloud, camera)
    order = _draw_order(proj)
    rgb, alpha, _, depth_img = _kernels.composite_forward(
        order, np.ascontiguousarray(proj.mean2d), np.ascontiguousarray(proj.sigma2d),
        np.ascontiguousarray(proj.depth), np.ascontiguousarray(cloud.colors),
        np.ascontiguousarray(cloud.opacities), bg, camera.width, camera.height,
    )
    return RenderOutput(rgb=rgb, alpha=alpha, depth=depth_img)


def render_backward(cloud: GaussianCloud, camera: Camera, d_rgb: np.ndarray,
                    d_alpha: np.ndarray, background=(0.0, 0.0, 0.0)) -> RenderGrads:
    """Gradients of the compositing equation w.r.t. gaussian attributes.

    d_rgb and d_alpha are the upstream loss derivatives of the rendered
    images. Gaussians culled from the frustum receive zero gradients.
    """
    d_rgb = np.ascontiguousarray(d_rgb, dtype=np.float64)
    d_alpha = np.ascontiguousarray(d_alpha, dtype=np.float64)
    if d_rgb.shape != (camera.height, camera.width, 3):
        raise ValueError(f"d_rgb must be (H, W, 3) = ({camera.height}, {camera.width}, 3)")
    if d_alpha.shape != (camera.height, camera.width):
        raise ValueError(f"d_alpha must be (H, W) = ({camera.height}, {camera.width})")
    if not (np.all(np.isfinite(d_rgb)) and np.all(np.isfinite(d_alpha))):
        raise ValueError("upstream gradients must be finite")

    bg = np.ascontiguousarray(background, dtype=np.float64).reshape(3)
    proj = project(cloud, camera)
    order = _draw_order(proj)
    mean2d = np.ascontiguousarray(proj.mean2d)
    sigma2d = np.ascontiguousarray(proj.sigma2d)
    depth = np.ascontiguousarray(proj.depth)
    colors = np.ascontiguousarray(cloud.colors)
    opac = np.ascontiguousarray(cloud.opacities)

    _, _, tfinal, _ = _kernels.composite_forward(
        order, mean2d, sigma2d, depth, colors, opac, bg, camera.width, camera.height)
    d_mean2d, d_sigma, d_color, d_opacity = _kernels.composite_backward(
        order, mean2d, sigma2d, depth, colors, opac, bg,
        np.ascontiguousarray(tfinal), d_rgb, d_alpha, camera.width, camera.height)

    # chain through the projection for visible gaussians
    n = len(cloud)
    d_position = np.zeros((n, 3))
    d_scale = np.zeros(n)
    vis = proj.visible
    if vis.any():
        z = proj.depth[vis]
        x_cam = proj.cam_xyz[vis, 0]
        y_cam = proj.cam_xyz[vis, 1]
        du = d_mean2d[vis, 0]
        dv = d_mean2d[vis, 1]
        ds2 = d_sigma[vis]
        f = camera.focal
        d_cam = np.empty((int(vis.sum()), 3))
        d_cam[:, 0] = du * camera.fx / z
        d_cam[:, 1] = dv * camera.fy / z
        d_cam[:, 2] = (-du * camera.fx * x_cam / z ** 2
                       - dv * camera.fy * y_cam / z ** 2
                       - ds2 * cloud.scales[vis] * f / z ** 2)
        rot = camera.world_to_cam[:3, :3]
        d_position[vis] = d_cam @ rot
        d_scale[vis] = ds2 * f / z

    return RenderGrads(d_position=d_position, d_scale=d_scale,
                       d_color=d_color, d_opacity=d_opacity)


def kernel_backend() -> str:
    return _kernels.BACKEND
