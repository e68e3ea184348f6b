"""PFM payload codec for the wire protocol.

Little-endian (negative scale), rows bottom-to-top. Implemented here
independently of the client package: the byte format is the contract.
"""

import numpy as np


class PfmError(ValueError):
    pass


def encode(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        header = b"Pf\n"
        h, w = image.shape
    elif image.ndim == 3 and image.shape[2] == 3:
        header = b"PF\n"
        h, w = image.shape[:2]
    else:
        raise PfmError("PFM supports (H, W) or (H, W, 3) images")
    return header + f"{w} {h}\n".encode("ascii") + b"-1.0\n" + image[::-1].astype("<f4").tobytes()


def decode(raw: bytes) -> np.ndarray:
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"PF", b"Pf"):
        raise PfmError("not a PFM payload")
    channels = 3 if parts[0] == b"PF" else 1
    try:
        w, h = (int(v) for v in parts[1].split())
        scale = float(parts[2])
    except ValueError as exc:
        raise PfmError(f"malformed PFM header: {exc}") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    data = np.frombuffer(parts[3][: count * 4], dtype=dtype)
    if data.size != count:
        raise PfmError("truncated PFM payload")
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.asarray(data.reshape(shape)[::-1], dtype=np.float64)
