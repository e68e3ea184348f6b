"""Shared-derivation client noise.

The wire protocol carries no noise: both ends derive epsilon from the
request's timestep (exact float64 bits) and the image dimensions. The stream
is numpy's default generator seeded from a sha256 prefix, so client and
server must run compatible numpy generator implementations; within one
deployment this is exact to the bit.
"""

import hashlib
import struct

import numpy as np


def client_noise(t: float, height: int, width: int) -> np.ndarray:
    material = b"sgw-eps|" + struct.pack("<dII", float(t), int(height), int(width))
    seed = int.from_bytes(hashlib.sha256(material).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    # quantized to the wire's float32 so an echoed prediction cancels exactly
    eps = rng.standard_normal((height, width, 3))
    return eps.astype(np.float32).astype(np.float64)
