"""FastAPI application answering the guidance wire protocol."""

from __future__ import annotations

import base64
import binascii

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .adapters import EchoAdapter
from .pfm import PfmError, decode, encode


class EpsHatRequest(BaseModel):
    mode: str
    prompt: str = ""
    guidance_scale: float = 1.0
    t: float
    camera: dict | None = None
    image: str  # base64 PFM of the noised rendering x_t


def create_app(adapter=None) -> FastAPI:
    adapter = adapter if adapter is not None else EchoAdapter()
    app = FastAPI(title="sgw-bridge", version="0.1.0")

    @app.get("/healthz")
    def healthz():
        return {"model_id": adapter.model_id, "t_range": list(adapter.t_range)}

    @app.post("/eps_hat")
    def eps_hat(req: EpsHatRequest):
        if req.mode not in ("text", "image"):
            raise HTTPException(status_code=400, detail=f"unsupported mode {req.mode!r}")
        t0, t1 = adapter.t_range
        if not t0 <= req.t <= t1:
            raise HTTPException(
                status_code=400,
                detail=f"t={req.t} outside the model schedule [{t0}, {t1}]")
        try:
            x_t = decode(base64.b64decode(req.image, validate=True))
        except (PfmError, binascii.Error, ValueError) as exc:
            raise HTTPException(status_code=400, detail=f"bad image payload: {exc}")
        if x_t.ndim != 3:
            raise HTTPException(status_code=400, detail="image must be a 3-channel PFM")
        try:
            prediction = adapter.predict(x_t, req.prompt, req.guidance_scale,
                                         req.t, req.camera)
        except Exception as exc:
            raise HTTPException(status_code=500, detail=f"inference failed: {exc}")
        if prediction.shape != x_t.shape or not np.all(np.isfinite(prediction)):
            raise HTTPException(status_code=500, detail="model produced an invalid prediction")
        return {"eps_hat": base64.b64encode(encode(prediction)).decode("ascii")}

    return app
