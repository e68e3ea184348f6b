"""Command-line surface.

Exit codes: 0 ok, 2 usage, 3 I/O or format, 4 numerical failure, 5 guidance
protocol failure. Every stochastic command takes --seed and is byte-
deterministic for a fixed seed; --config overrides optimizer defaults from a
TOML or JSON file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .body import Pose, RegionSpec, load_body, make_test_humanoid, save_body
from .camera import Camera, load_camera
from .cloud import load_ply, save_ply
from .editor import animate, edit_local, edit_shape, edit_texture_global
from .errors import FormatError, GuidanceError, NumericalError
from .garment_init import DEFAULT_ETA, DEFAULT_OFFSET_M, init_garment
from .guidance import GuidanceSpec, MockGuidance
from .images import load_png, save_mask_png, save_png
from .occlusion import DEFAULT_REGION_NAMES, OcclusionConfig, run_pipeline
from .optim import FixedViews, OptimConfig, OrbitSampler, optimize

MOCK_DEFAULT_ITERS = 300
TEXT_DEFAULT_ITERS = 800
IMAGE_DEFAULT_ITERS = 2000


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    text = p.read_bytes()
    if p.suffix.lower() == ".toml":
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        return tomllib.loads(text.decode("utf-8"))
    return json.loads(text.decode("utf-8"))


def _make_optim_config(args, overrides: dict) -> OptimConfig:
    cfg_kwargs = {}
    valid = {f.name for f in dataclasses.fields(OptimConfig)}
    for key, value in overrides.items():
        if key not in valid:
            raise ValueError(f"unknown config key {key!r}")
        cfg_kwargs[key] = tuple(value) if isinstance(value, list) else value
    if getattr(args, "iterations", None) is not None:
        cfg_kwargs["iterations"] = args.iterations
    if getattr(args, "seed", None) is not None:
        cfg_kwargs["seed"] = args.seed
    return OptimConfig(**cfg_kwargs)


def _parse_region(body, text: str) -> RegionSpec:
    return RegionSpec.from_names(body, [part.strip() for part in text.split(",") if part.strip()])


def _body_centroid(body) -> tuple:
    return tuple(body.vertices.mean(axis=0))


def _cloud_centroid(cloud) -> tuple:
    return tuple(cloud.positions.mean(axis=0))


def _build_guidance_and_views(args, cfg: OptimConfig, target_point):
    """Resolve the guidance object/spec and the view provider for a command."""
    if args.guidance == "mock":
        if not args.target:
            raise ValueError("mock guidance requires --target")
        target = load_png(args.target)
        h, w = target.shape[:2]
        cam = Camera.orbit(0.0, 10.0, cfg.view_radius, target=target_point,
                           width=w, height=h)
        spec = GuidanceSpec(mode="mock", target_image=target)
        return MockGuidance(spec), FixedViews([cam]), "mock"
    if not args.endpoint:
        raise ValueError("bridge guidance requires --endpoint")
    if args.target:
        target = load_png(args.target)
        spec = GuidanceSpec(mode="image", prompt=args.prompt or "",
                            target_image=target, endpoint=args.endpoint)
        mode = "image"
    else:
        if not args.prompt:
            raise ValueError("bridge guidance requires --prompt or --target")
        spec = GuidanceSpec(mode="text", prompt=args.prompt, endpoint=args.endpoint)
        mode = "text"
    views = OrbitSampler(radius=cfg.view_radius, target=target_point,
                         elevation_deg=cfg.view_elevation_deg,
                         width=cfg.view_size, height=cfg.view_size)
    return spec, views, mode


def _default_iterations(mode: str) -> int:
    return {"mock": MOCK_DEFAULT_ITERS, "text": TEXT_DEFAULT_ITERS,
            "image": IMAGE_DEFAULT_ITERS}[mode]


def _load_pose(body, path: str) -> Pose:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return _pose_from_dict(body, data)


def _pose_from_dict(body, data: dict) -> Pose:
    theta = np.asarray(data.get("theta", np.zeros((body.num_joints, 3))), dtype=np.float64)
    return Pose(
        beta=np.asarray(data.get("beta", np.zeros(body.num_shape)), dtype=np.float64),
        theta=theta.reshape(body.num_joints, 3),
        psi=np.asarray(data.get("psi", np.zeros(body.num_expr)), dtype=np.float64),
    )


def _add_guidance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--guidance", choices=["mock", "bridge"], default="mock")
    p.add_argument("--target", help="target image (PNG) for mock or image guidance")
    p.add_argument("--prompt", help="text prompt for bridge guidance")
    p.add_argument("--endpoint", help="guidance bridge base URL")
    p.add_argument("--iterations", type=int)
    p.add_argument("--config", help="TOML or JSON file overriding optimizer defaults")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgw", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p_body = sub.add_parser("body", help="body-model utilities")
    body_sub = p_body.add_subparsers(dest="body_command", required=True)
    p_mt = body_sub.add_parser("make-test", help="write the procedural test humanoid")
    p_mt.add_argument("--out", required=True)
    p_mt.add_argument("--segments", type=int, default=4)
    p_mt.add_argument("--radial", type=int, default=8)

    p_gen = sub.add_parser("generate", help="initialize and optimize a garment")
    p_gen.add_argument("--body", required=True)
    p_gen.add_argument("--region", required=True, help="comma-separated label names")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--k-interp", type=int, default=2)
    p_gen.add_argument("--eta", type=float, default=DEFAULT_ETA)
    p_gen.add_argument("--offset-m", type=float, default=DEFAULT_OFFSET_M)
    p_gen.add_argument("--report-csv", help="write the per-iteration loss report (wall-clock column)")
    _add_guidance_flags(p_gen)

    p_edit = sub.add_parser("edit", help="edit an existing garment")
    edit_sub = p_edit.add_subparsers(dest="edit_command", required=True)

    p_tex = edit_sub.add_parser("texture", help="global texture re-optimization")
    p_tex.add_argument("--cloud", required=True)
    p_tex.add_argument("--body", required=True)
    p_tex.add_argument("--out", required=True)
    _add_guidance_flags(p_tex)

    p_shape = edit_sub.add_parser("shape", help="retarget to a new body shape")
    p_shape.add_argument("--cloud", required=True)
    p_shape.add_argument("--body", required=True)
    p_shape.add_argument("--beta-src", default="", help="comma-separated floats, default zeros")
    p_shape.add_argument("--beta-dst", required=True)
    p_shape.add_argument("--k-blend", type=int, default=1)
    p_shape.add_argument("--out", required=True)

    p_loc = edit_sub.add_parser("local", help="re-seed and re-optimize a label region")
    p_loc.add_argument("--cloud", required=True)
    p_loc.add_argument("--body", required=True)
    p_loc.add_argument("--region", required=True)
    p_loc.add_argument("--out", required=True)
    p_loc.add_argument("--k-interp", type=int, default=2)
    p_loc.add_argument("--offset-m", type=float, default=DEFAULT_OFFSET_M)
    _add_guidance_flags(p_loc)

    p_occ = sub.add_parser("occlusion-fix", help="self-occlusion repair pipeline")
    p_occ.add_argument("--cloud", required=True)
    p_occ.add_argument("--body", required=True)
    p_occ.add_argument("--pose", help="source pose JSON; default T-pose")
    p_occ.add_argument("--region", help="comma-separated labels; default occlusion set")
    p_occ.add_argument("--report", required=True, help="pipeline report JSON")
    p_occ.add_argument("--out", help="write the repaired cloud")
    p_occ.add_argument("--rho", type=float, default=None, help="region membership radius, meters")
    p_occ.add_argument("--prune-fraction", type=float, default=None)

    p_anim = sub.add_parser("animate", help="pose a garment over a pose sequence")
    p_anim.add_argument("--cloud", required=True)
    p_anim.add_argument("--body", required=True)
    p_anim.add_argument("--poses", required=True, help="JSON list of {frame, theta, beta}")
    p_anim.add_argument("--out-dir", required=True)

    p_rend = sub.add_parser("render", help="render a cloud to PNG")
    p_rend.add_argument("--cloud", required=True)
    p_rend.add_argument("--camera", required=True, help="camera JSON (full or orbit shorthand)")
    p_rend.add_argument("--out", required=True)
    p_rend.add_argument("--mask", help="also write the alpha mask PNG")
    p_rend.add_argument("--pfm", help="also write the linear-light PFM")
    p_rend.add_argument("--bg", default="0,0,0", help="background RGB, comma-separated")

    return ap


def _cmd_body_make_test(args) -> int:
    body = make_test_humanoid(args.segments, args.radial)
    save_body(body, args.out)
    print(f"wrote {args.out}: V={body.num_vertices} J={body.num_joints} "
          f"labels={len(body.label_names)}")
    return 0


def _cmd_generate(args) -> int:
    body = load_body(args.body)
    region = _parse_region(body, args.region)
    cloud = init_garment(body, region, k_interp=args.k_interp, offset=args.offset_m,
                         seed=args.seed, eta=args.eta)
    overrides = _load_config(args.config)
    cfg = _make_optim_config(args, overrides)
    guidance, views, mode = _build_guidance_and_views(args, cfg, _body_centroid(body))
    if args.iterations is None and "iterations" not in overrides:
        cfg = dataclasses.replace(cfg, iterations=_default_iterations(mode))
    cloud, report = optimize(cloud, guidance, views, cfg)
    save_ply(cloud, args.out)
    if args.report_csv:
        report.to_csv(args.report_csv)
    print(f"wrote {args.out}: P={len(cloud)} after {cfg.iterations} iterations ({mode})")
    return 0


def _cmd_edit_texture(args) -> int:
    body = load_body(args.body)
    cloud = load_ply(args.cloud)
    overrides = _load_config(args.config)
    cfg = _make_optim_config(args, overrides)
    guidance, views, mode = _build_guidance_and_views(args, cfg, _cloud_centroid(cloud))
    if args.iterations is None and "iterations" not in overrides:
        cfg = dataclasses.replace(cfg, iterations=_default_iterations(mode))
    cloud, _ = edit_texture_global(cloud, guidance, views, cfg)
    save_ply(cloud, args.out)
    print(f"wrote {args.out}: retextured {len(cloud)} points ({mode})")
    return 0


def _parse_floats(text: str, n: int, what: str) -> np.ndarray:
    if not text:
        return np.zeros(n)
    vals = np.array([float(v) for v in text.split(",")])
    if vals.shape != (n,):
        raise ValueError(f"{what} needs {n} comma-separated floats")
    return vals


def _cmd_edit_shape(args) -> int:
    body = load_body(args.body)
    cloud = load_ply(args.cloud)
    beta_src = _parse_floats(args.beta_src, body.num_shape, "--beta-src")
    beta_dst = _parse_floats(args.beta_dst, body.num_shape, "--beta-dst")
    out = edit_shape(cloud, body, beta_src, beta_dst, k_blend=args.k_blend)
    save_ply(out, args.out)
    print(f"wrote {args.out}: reshaped {len(out)} points")
    return 0


def _cmd_edit_local(args) -> int:
    body = load_body(args.body)
    cloud = load_ply(args.cloud)
    region = _parse_region(body, args.region)
    overrides = _load_config(args.config)
    cfg = _make_optim_config(args, overrides)
    guidance, views, mode = _build_guidance_and_views(args, cfg, _body_centroid(body))
    if args.iterations is None and "iterations" not in overrides:
        cfg = dataclasses.replace(cfg, iterations=_default_iterations(mode))
    out, _ = edit_local(cloud, body, region, guidance, views, cfg,
                        k_interp=args.k_interp, offset=args.offset_m, seed=args.seed)
    save_ply(out, args.out)
    print(f"wrote {args.out}: P={len(out)} ({mode})")
    return 0


def _cmd_occlusion_fix(args) -> int:
    body = load_body(args.body)
    cloud = load_ply(args.cloud)
    pose = _load_pose(body, args.pose) if args.pose else Pose.rest(body)
    names = ([p.strip() for p in args.region.split(",") if p.strip()]
             if args.region else DEFAULT_REGION_NAMES)
    region = RegionSpec.from_names(body, names)
    kwargs = {}
    if args.rho is not None:
        kwargs["radius_rho"] = args.rho
    if args.prune_fraction is not None:
        kwargs["prune_fraction"] = args.prune_fraction
    cfg = OcclusionConfig(**kwargs)
    out, report = run_pipeline(cloud, body, pose, region, cfg)
    with open(args.report, "w", encoding="utf-8") as f:
        json.dump(report.to_json_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    if args.out:
        save_ply(out, args.out)
    print(f"wrote {args.report}: pruned={report.pruned} iters={report.iters}")
    return 0


def _cmd_animate(args) -> int:
    body = load_body(args.body)
    cloud = load_ply(args.cloud)
    with open(args.poses, "r", encoding="utf-8") as f:
        seq = json.load(f)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    poses = [_pose_from_dict(body, entry) for entry in seq]
    frames = animate(cloud, body, poses)
    for entry, frame_cloud in zip(seq, frames):
        idx = int(entry.get("frame", 0))
        save_ply(frame_cloud, out_dir / f"frame_{idx:04d}.ply")
    print(f"wrote {len(frames)} frames to {out_dir}")
    return 0


def _cmd_render(args) -> int:
    from .render import render as render_cloud

    cloud = load_ply(args.cloud)
    camera = load_camera(args.camera)
    bg = _parse_floats(args.bg, 3, "--bg")
    out = render_cloud(cloud, camera, background=bg)
    save_png(out.rgb, args.out)
    if args.mask:
        save_mask_png(out.alpha, args.mask)
    if args.pfm:
        from .images import save_pfm

        save_pfm(out.rgb, args.pfm)
    print(f"wrote {args.out}: {camera.width}x{camera.height}")
    return 0


_DISPATCH = {
    ("body", "make-test"): _cmd_body_make_test,
    ("generate", None): _cmd_generate,
    ("edit", "texture"): _cmd_edit_texture,
    ("edit", "shape"): _cmd_edit_shape,
    ("edit", "local"): _cmd_edit_local,
    ("occlusion-fix", None): _cmd_occlusion_fix,
    ("animate", None): _cmd_animate,
    ("render", None): _cmd_render,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    sub = getattr(args, "body_command", None) or getattr(args, "edit_command", None)
    handler = _DISPATCH[(args.command, sub)]
    try:
        return handler(args)
    except (FormatError, OSError) as exc:
        print(f"sgw: error: io: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"sgw: error: numerical: {exc}", file=sys.stderr)
        return 4
    except GuidanceError as exc:
        print(f"sgw: error: guidance: {exc}", file=sys.stderr)
        return 5
    except (ValueError, KeyError) as exc:
        msg = exc.args[0] if exc.args else exc
        print(f"sgw: error: usage: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
