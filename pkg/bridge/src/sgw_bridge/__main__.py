"""Serve the bridge: `python -m sgw_bridge` or the `sgw-bridge` script.

Environment defaults: SGW_BRIDGE_MODEL (adapter spec), SGW_BRIDGE_MODEL_PATH,
SGW_BRIDGE_DEVICE, SGW_BRIDGE_WORKERS.
"""

import argparse
import os

import uvicorn

from .adapters import load_adapter
from .app import create_app


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="sgw-bridge", description=__doc__.splitlines()[0])
    ap.add_argument("--model", default=os.environ.get("SGW_BRIDGE_MODEL", "echo"),
                    help="adapter spec: 'echo' or 'module:factory'")
    ap.add_argument("--model-path", default=os.environ.get("SGW_BRIDGE_MODEL_PATH"))
    ap.add_argument("--device", default=os.environ.get("SGW_BRIDGE_DEVICE", "cpu"))
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8731)
    ap.add_argument("--workers", type=int,
                    default=int(os.environ.get("SGW_BRIDGE_WORKERS", "1")))
    args = ap.parse_args(argv)

    adapter = load_adapter(args.model, model_path=args.model_path, device=args.device)
    app = create_app(adapter)
    uvicorn.run(app, host=args.host, port=args.port, workers=args.workers)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
