"""Model adapters.

An adapter is any object with `model_id`, `t_range`, and
`predict(x_t, prompt, guidance_scale, t, camera) -> eps_hat`. Classifier-free
guidance mixing belongs inside the adapter so clients stay model-agnostic.

`echo` ships built in: it answers with the client's own derived noise, which
zeroes the score-distillation residual and is the protocol-conformance
reference. Real diffusion models (multi-view text models, single-image
novel-view models, plain text-to-image) are wired in by pointing
--model/SGW_BRIDGE_MODEL at a `module:factory` callable that returns an
adapter; weights never ship with this package.
"""

from __future__ import annotations

import importlib

import numpy as np

from .protocol import client_noise


class EchoAdapter:
    """Returns eps_hat == eps: a perfect predictor, by construction."""

    model_id = "echo"
    t_range = (0.0, 1.0)

    def predict(self, x_t: np.ndarray, prompt: str, guidance_scale: float,
                t: float, camera: dict | None) -> np.ndarray:
        h, w = x_t.shape[:2]
        return client_noise(t, h, w)


def load_adapter(spec: str, model_path: str | None = None, device: str = "cpu"):
    """Resolve an adapter spec: "echo" or "module.path:factory"."""
    if spec == "echo":
        return EchoAdapter()
    if ":" not in spec:
        raise ValueError(f"adapter spec must be 'echo' or 'module:factory', got {spec!r}")
    module_name, factory_name = spec.split(":", 1)
    module = importlib.import_module(module_name)
    factory = getattr(module, factory_name)
    adapter = factory(model_path=model_path, device=device)
    for attr in ("model_id", "t_range", "predict"):
        if not hasattr(adapter, attr):
            raise TypeError(f"adapter from {spec!r} lacks required attribute {attr!r}")
    return adapter
