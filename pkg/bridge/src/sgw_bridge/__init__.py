"""Guidance bridge: serves noise predictions over the sgw wire protocol.

The optimizer posts {mode, prompt, guidance_scale, t, camera, image} where
`image` is the noised rendering x_t as base64 PFM; the bridge answers
{eps_hat: base64 PFM}. Echo mode reconstructs the client's deterministic
noise (derived from t and the image size) and returns it unchanged, which
makes the client's score-distillation gradient exactly zero; real models
plug in as adapters.
"""

__version__ = "0.1.0"

from .app import create_app

__all__ = ["create_app"]
