"""Pinhole camera: OpenCV convention, +z forward, +y down in camera space."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

DEFAULT_SIZE = 512  # rendered image side in pixels
DEFAULT_FOV_DEG = 50.0
DEFAULT_NEAR = 0.05
DEFAULT_FAR = 100.0


@dataclass(frozen=True)
class Camera:
    world_to_cam: np.ndarray  # 4x4 rigid transform
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = DEFAULT_NEAR
    far: float = DEFAULT_FAR

    def __post_init__(self):
        object.__setattr__(self, "world_to_cam",
                           np.ascontiguousarray(self.world_to_cam, dtype=np.float64))
        if self.world_to_cam.shape != (4, 4):
            raise ValueError("world_to_cam must be 4x4")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not self.near < self.far:
            raise ValueError("near must be < far")
        if self.width < 1 or self.height < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def focal(self) -> float:
        return 0.5 * (self.fx + self.fy)

    @classmethod
    def look_at(cls, position, target, up=(0.0, 1.0, 0.0), *,
                width: int = DEFAULT_SIZE, height: int = DEFAULT_SIZE,
                fov_deg: float = DEFAULT_FOV_DEG,
                near: float = DEFAULT_NEAR, far: float = DEFAULT_FAR) -> "Camera":
        position = np.asarray(position, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        up = np.asarray(up, dtype=np.float64)

        forward = target - position
        fn = np.linalg.norm(forward)
        if fn < 1e-12:
            raise ValueError("camera position coincides with the target")
        forward /= fn
        right = np.cross(forward, up)
        rn = np.linalg.norm(right)
        if rn < 1e-12:
            raise ValueError("up vector is parallel to the view direction")
        right /= rn
        down = np.cross(forward, right)

        rot = np.stack([right, down, forward])  # world -> camera axes
        w2c = np.eye(4)
        w2c[:3, :3] = rot
        w2c[:3, 3] = -rot @ position

        f = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2.0)
        return cls(world_to_cam=w2c, fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                   width=width, height=height, near=near, far=far)

    @classmethod
    def orbit(cls, azimuth_deg: float, elevation_deg: float, radius: float,
              target=(0.0, 0.0, 0.0), **kwargs) -> "Camera":
        """Camera on a sphere around the target; azimuth 0 sits on +z."""
        az = np.deg2rad(azimuth_deg)
        el = np.deg2rad(elevation_deg)
        target = np.asarray(target, dtype=np.float64)
        offset = radius * np.array([
            np.sin(az) * np.cos(el),
            np.sin(el),
            np.cos(az) * np.cos(el),
        ])
        return cls.look_at(target + offset, target, **kwargs)

    def to_json_dict(self) -> dict:
        c2w = np.linalg.inv(self.world_to_cam)
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "near": self.near, "far": self.far,
            "position": c2w[:3, 3].tolist(),
            "look_at": (c2w[:3, 3] + c2w[:3, 2]).tolist(),
            "up": (-c2w[:3, 1]).tolist(),
        }


def camera_from_dict(spec: dict) -> Camera:
    """Build a camera from the JSON schema, full or orbit shorthand."""
    spec = dict(spec)
    width = int(spec.pop("width", DEFAULT_SIZE))
    height = int(spec.pop("height", DEFAULT_SIZE))
    near = float(spec.pop("near", DEFAULT_NEAR))
    far = float(spec.pop("far", DEFAULT_FAR))
    if "azimuth_deg" in spec:
        return Camera.orbit(
            float(spec["azimuth_deg"]), float(spec.get("elevation_deg", 0.0)),
            float(spec["radius"]), target=spec.get("target", (0.0, 0.0, 0.0)),
            width=width, height=height,
            fov_deg=float(spec.get("fov_deg", DEFAULT_FOV_DEG)),
            near=near, far=far,
        )
    if "position" in spec:
        cam = Camera.look_at(
            spec["position"], spec["look_at"], spec.get("up", (0.0, 1.0, 0.0)),
            width=width, height=height,
            fov_deg=float(spec.get("fov_deg", DEFAULT_FOV_DEG)),
            near=near, far=far,
        )
        if "fx" in spec:  # explicit intrinsics override the fov-derived ones
            return Camera(world_to_cam=cam.world_to_cam,
                          fx=float(spec["fx"]), fy=float(spec["fy"]),
                          cx=float(spec.get("cx", width / 2.0)),
                          cy=float(spec.get("cy", height / 2.0)),
                          width=width, height=height, near=near, far=far)
        return cam
    raise ValueError("camera spec needs either orbit keys (azimuth_deg, radius) "
                     "or look-at keys (position, look_at)")


def load_camera(path) -> Camera:
    with open(path, "r", encoding="utf-8") as f:
        return camera_from_dict(json.load(f))
