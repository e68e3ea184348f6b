"""Pluggable guidance: the noise-prediction side of score-distillation updates.

Three modes share one interface. `mock` is an in-process image-matching force
for testing the optimization plumbing end to end; `text` and `image` talk to
a noise-prediction service over HTTP.

Wire protocol (shared with any bridge implementation):
  POST {endpoint}/eps_hat
  request  {"mode", "prompt", "guidance_scale", "t", "camera", "image"}
  response {"eps_hat": base64 PFM}
The request image is the noised rendering x_t in linear-light PFM, base64
encoded. The noise epsilon added by the client is derived deterministically
from the request's timestep and image size (see protocol_noise), so a server
that wants to echo the exact noise back can reconstruct it from the request
alone; no noise crosses the wire and requests stay stateless.
"""

from __future__ import annotations

import base64
import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .errors import GuidanceError
from .images import pfm_from_bytes, pfm_to_bytes

TEXT_GUIDANCE_SCALE = 10.0
IMAGE_GUIDANCE_SCALE = 3.0
DEFAULT_T_RANGE = (0.02, 0.98)

WEIGHT_SCHEDULES = {
    "constant": lambda t: 1.0,
    "zero": lambda t: 0.0,
    "one_minus_alpha_bar": lambda t: 1.0 - alpha_bar(t),
}


def alpha_bar(t: float) -> float:
    """Cosine noise schedule on continuous t in [0, 1]."""
    return float(np.cos(0.5 * np.pi * np.clip(t, 0.0, 1.0)) ** 2)


def protocol_noise(t: float, height: int, width: int) -> np.ndarray:
    """The client-side noise image for timestep t, (H, W, 3).

    Seeded from the exact float64 bits of t plus the image size; both ends of
    the wire can derive it independently. Values are quantized to float32 (the
    wire precision) so an echoed prediction cancels the noise bit-exactly.
    """
    material = b"sgw-eps|" + struct.pack("<dII", float(t), int(height), int(width))
    seed = int.from_bytes(hashlib.sha256(material).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((height, width, 3))
    return eps.astype(np.float32).astype(np.float64)


def noise_image(x: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    ab = alpha_bar(t)
    return np.sqrt(ab) * x + np.sqrt(1.0 - ab) * eps


@dataclass
class GuidanceSpec:
    """Serializable guidance configuration.

    mock requires a target image; text and image modes require an endpoint.
    guidance_scale defaults by mode (10.0 text, 3.0 image).
    """

    mode: str = "mock"
    prompt: str = ""
    guidance_scale: float | None = None
    t_range: tuple[float, float] = DEFAULT_T_RANGE
    weighting: str = "constant"
    target_image: np.ndarray | None = None
    endpoint: str | None = None
    timeout_s: float = 30.0
    retries: int = 2

    def __post_init__(self):
        if self.mode not in ("mock", "text", "image"):
            raise ValueError(f"unknown guidance mode {self.mode!r}")
        if self.weighting not in WEIGHT_SCHEDULES:
            raise ValueError(f"unknown weighting schedule {self.weighting!r}")
        if self.mode == "mock" and self.target_image is None:
            raise ValueError("mock guidance requires target_image")
        if self.mode in ("text", "image") and not self.endpoint:
            raise ValueError(f"{self.mode} guidance requires an endpoint")
        t0, t1 = self.t_range
        if not t0 <= t1:
            raise ValueError(f"t_range must be an interval, got {self.t_range}")
        if self.guidance_scale is None:
            self.guidance_scale = {"mock": 1.0, "text": TEXT_GUIDANCE_SCALE,
                                   "image": IMAGE_GUIDANCE_SCALE}[self.mode]

    def weight(self, t: float) -> float:
        return float(WEIGHT_SCHEDULES[self.weighting](t))


class MockGuidance:
    """Image-matching guidance: the pixel gradient is exactly w(t) * (x - target).

    Equivalent to a noise predictor answering eps + (x - target), but computed
    in closed form so no sampling noise leaks into the gradient.
    """

    def __init__(self, spec: GuidanceSpec, targets: list[np.ndarray] | None = None,
                 target_masks: list[np.ndarray] | None = None):
        if spec.mode != "mock":
            raise ValueError("MockGuidance requires a mock-mode spec")
        self.spec = spec
        self.targets = targets if targets is not None else [spec.target_image]
        self.target_masks = target_masks

    def target_for(self, view_index: int) -> np.ndarray:
        if len(self.targets) == 1:
            return self.targets[0]
        return self.targets[view_index % len(self.targets)]

    def mask_for(self, view_index: int, rendered_alpha: np.ndarray) -> np.ndarray:
        """Reference mask for loss reporting; falls back to the rendered alpha
        (a zero mask term) when the mock carries none."""
        if self.target_masks is None:
            return rendered_alpha
        if len(self.target_masks) == 1:
            return self.target_masks[0]
        return self.target_masks[view_index % len(self.target_masks)]

    def pixel_gradient(self, x: np.ndarray, t: float, camera: Camera | None,
                       view_index: int) -> np.ndarray:
        target = self.target_for(view_index)
        if target.shape != x.shape:
            raise ValueError(f"mock target shape {target.shape} != render shape {x.shape}")
        w = self.spec.weight(t)
        return w * (x - target)


class BridgeGuidance:
    """HTTP client for the guidance wire protocol."""

    def __init__(self, spec: GuidanceSpec):
        if spec.mode not in ("text", "image"):
            raise ValueError("BridgeGuidance requires a text- or image-mode spec")
        self.spec = spec

    def pixel_gradient(self, x: np.ndarray, t: float, camera: Camera | None,
                       view_index: int) -> np.ndarray:
        w = self.spec.weight(t)
        if w == 0.0:
            return np.zeros_like(x)
        h, width = x.shape[:2]
        eps = protocol_noise(t, h, width)
        eps_hat = self._request_eps_hat(noise_image(x, eps, t), t, camera)
        if eps_hat.shape != x.shape:
            raise GuidanceError(f"bridge returned shape {eps_hat.shape}, expected {x.shape}")
        return w * (eps_hat - eps)

    def _request_eps_hat(self, x_t: np.ndarray, t: float, camera: Camera | None) -> np.ndarray:
        import httpx

        payload = {
            "mode": self.spec.mode,
            "prompt": self.spec.prompt,
            "guidance_scale": self.spec.guidance_scale,
            "t": float(t),
            "camera": camera.to_json_dict() if camera is not None else None,
            "image": base64.b64encode(pfm_to_bytes(x_t)).decode("ascii"),
        }
        url = self.spec.endpoint.rstrip("/") + "/eps_hat"
        last_exc: Exception | None = None
        for _ in range(self.spec.retries + 1):
            try:
                resp = httpx.post(url, json=payload, timeout=self.spec.timeout_s)
            except httpx.HTTPError as exc:
                last_exc = exc
                continue
            if resp.status_code != 200:
                raise GuidanceError(f"bridge returned HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                body = resp.json()
                eps_hat = pfm_from_bytes(base64.b64decode(body["eps_hat"]))
            except Exception as exc:
                raise GuidanceError(f"malformed bridge response: {exc}") from exc
            if not np.all(np.isfinite(eps_hat)):
                raise GuidanceError("bridge returned non-finite noise prediction")
            return eps_hat
        raise GuidanceError(f"guidance endpoint unreachable: {last_exc}")


def build_guidance(spec: GuidanceSpec):
    if spec.mode == "mock":
        return MockGuidance(spec)
    return BridgeGuidance(spec)
