"""Image export/import: 8-bit sRGB PNG and float32 linear PFM.

PNG crosses the sRGB transfer function (IEC 61966-2-1 piecewise curve);
single-channel masks are written linearly. PFM payloads are little-endian
(negative scale) with rows ordered bottom-to-top per the format convention.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import FormatError


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def save_png(rgb: np.ndarray, path) -> None:
    """Linear (H, W, 3) floats -> 8-bit sRGB PNG."""
    u8 = np.round(linear_to_srgb(rgb) * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def save_mask_png(mask: np.ndarray, path) -> None:
    """(H, W) floats in [0, 1] -> single-channel PNG, no transfer function."""
    u8 = np.round(np.clip(mask, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """8-bit PNG -> linear floats; RGB images give (H, W, 3), grayscale (H, W)."""
    img = Image.open(path)
    if img.mode == "L":
        return np.asarray(img, dtype=np.float64) / 255.0
    arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return srgb_to_linear(arr)


def save_pfm(image: np.ndarray, path) -> None:
    with open(path, "wb") as f:
        f.write(pfm_to_bytes(image))


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    return pfm_from_bytes(raw)


def pfm_to_bytes(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        header = b"Pf\n"
        h, w = image.shape
    elif image.ndim == 3 and image.shape[2] == 3:
        header = b"PF\n"
        h, w = image.shape[:2]
    else:
        raise ValueError("PFM supports (H, W) or (H, W, 3) images")
    # negative scale marks little-endian
    return header + f"{w} {h}\n".encode("ascii") + b"-1.0\n" + image[::-1].astype("<f4").tobytes()


def pfm_from_bytes(raw: bytes) -> np.ndarray:
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"PF", b"Pf"):
        raise FormatError("not a PFM payload")
    channels = 3 if parts[0] == b"PF" else 1
    try:
        w, h = (int(v) for v in parts[1].split())
        scale = float(parts[2])
    except ValueError as exc:
        raise FormatError(f"malformed PFM header: {exc}") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    data = np.frombuffer(parts[3][: count * 4], dtype=dtype)
    if data.size != count:
        raise FormatError("truncated PFM payload")
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.asarray(data.reshape(shape)[::-1], dtype=np.float64)
