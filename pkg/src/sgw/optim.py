"""Optimization loop: per-attribute Adam, image loss, score-distillation
gradients through the renderer, and adaptive density control.

Loss reductions are sums over pixels (the lambda weights are calibrated
against unnormalized squared norms). The loop is single-writer over the
cloud; views within a batch are processed in a fixed order so gradient
reduction is deterministic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import Camera
from .cloud import GaussianCloud
from .errors import NumericalError
from .guidance import GuidanceSpec, MockGuidance, build_guidance
from .render import RenderGrads, RenderOutput, render, render_backward

SCALE_FLOOR = 1e-8
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_ATTR_BLOCKS = ("position", "scale", "color", "opacity")


@dataclass
class OptimConfig:
    """Defaults follow the reference hyperparameters; everything is overridable."""

    lr_position: float = 5e-5
    lr_scale: float = 5e-3
    lr_color: float = 1e-2
    lr_opacity: float = 1e-2
    lr_rotation: float = 1e-3  # carried for completeness; isotropic splats emit no rotation gradient
    iterations: int = 800
    batch_views: int = 4
    densify_grad_threshold: float = 2e-4
    split_scale_threshold: float = 0.01
    densify_interval: int = 100
    densify_enabled: bool = True
    opacity_prune_threshold: float = 0.01
    lambda_rgb: float = 1e5
    lambda_mask: float = 50.0
    background: tuple = (0.0, 0.0, 0.0)
    # view sampling (used when no fixed cameras are supplied)
    view_radius: float = 2.5
    view_elevation_deg: tuple = (-10.0, 30.0)
    view_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        for name in ("lr_position", "lr_scale", "lr_color", "lr_opacity", "lr_rotation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class LossRow:
    iteration: int
    loss_image: float
    grad_norm: float
    points: int
    ms: float


@dataclass
class LossReport:
    rows: list = field(default_factory=list)

    def add(self, row: LossRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError("iteration index must be monotone")
        self.rows.append(row)

    def to_csv(self, path) -> None:
        # ms is wall-clock and inherently non-reproducible; everything else is
        with open(path, "w", encoding="utf-8") as f:
            f.write("iter,loss_image,grad_norm,points,ms\n")
            for r in self.rows:
                f.write(f"{r.iteration},{r.loss_image!r},{r.grad_norm!r},{r.points},{r.ms:.3f}\n")


def image_loss(render_out: RenderOutput, target_rgb: np.ndarray, target_mask: np.ndarray,
               cfg: OptimConfig):
    """Weighted sum-of-squares image + mask loss and its exact gradients.

    Returns (loss, d_rgb, d_alpha).
    """
    if render_out.rgb.shape != target_rgb.shape:
        raise ValueError(f"target rgb shape {target_rgb.shape} != render {render_out.rgb.shape}")
    if render_out.alpha.shape != target_mask.shape:
        raise ValueError(f"target mask shape {target_mask.shape} != render {render_out.alpha.shape}")
    rgb_err = render_out.rgb - target_rgb
    mask_err = render_out.alpha - target_mask
    loss = cfg.lambda_rgb * float(np.sum(rgb_err ** 2)) + cfg.lambda_mask * float(np.sum(mask_err ** 2))
    return loss, 2.0 * cfg.lambda_rgb * rgb_err, 2.0 * cfg.lambda_mask * mask_err


def sds_pixel_grad(render_out: RenderOutput, guidance, rng: np.random.Generator,
                   camera: Camera | None = None, view_index: int = 0) -> np.ndarray:
    """Per-pixel gradient of the rendering from the guidance's noise residual.

    Samples a timestep from the guidance's range and delegates to the
    guidance implementation; the caller chains the result through
    render_backward. Accepts a GuidanceSpec or a built guidance object.
    """
    if isinstance(guidance, GuidanceSpec):
        guidance = build_guidance(guidance)
    t0, t1 = guidance.spec.t_range
    t = float(rng.uniform(t0, t1))
    return guidance.pixel_gradient(render_out.rgb, t, camera, view_index)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_cloud(cls, cloud: GaussianCloud) -> "AdamState":
        shapes = {"position": (len(cloud), 3), "scale": (len(cloud),),
                  "color": (len(cloud), 3), "opacity": (len(cloud),)}
        return cls(m={k: np.zeros(s) for k, s in shapes.items()},
                   v={k: np.zeros(s) for k, s in shapes.items()})

    def remap(self, src: np.ndarray, fresh: np.ndarray) -> "AdamState":
        """Carry moments through a density-control reshuffle; new rows start cold."""
        out = AdamState(m={}, v={}, t=self.t)
        for k in _ATTR_BLOCKS:
            m = self.m[k][src]
            v = self.v[k][src]
            m[fresh] = 0.0
            v[fresh] = 0.0
            out.m[k] = m
            out.v[k] = v
        return out


def step(cloud: GaussianCloud, grads: RenderGrads, state: AdamState, cfg: OptimConfig,
         update_mask: np.ndarray | None = None):
    """One Adam step with independent per-attribute learning rates.

    Attributes whose rate is zero (and rows outside update_mask) are left
    bit-identical. Colors and opacities are clamped to [0, 1], scales floored
    at a positive epsilon, and quaternions would be renormalized if a rotation
    gradient existed; isotropic splats never produce one.
    """
    blocks = {
        "position": (cloud.positions, grads.d_position, cfg.lr_position),
        "scale": (cloud.scales, grads.d_scale, cfg.lr_scale),
        "color": (cloud.colors, grads.d_color, cfg.lr_color),
        "opacity": (cloud.opacities, grads.d_opacity, cfg.lr_opacity),
    }
    n = len(cloud)
    for name, (arr, g, _) in blocks.items():
        if g.shape != arr.shape:
            raise ValueError(f"{name} gradient shape {g.shape} != attribute shape {arr.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {name} block")
    if update_mask is not None:
        update_mask = np.asarray(update_mask, dtype=bool)
        if update_mask.shape != (n,):
            raise ValueError("update_mask length must match the point count")

    out = cloud.copy()
    new_state = AdamState(m={k: v.copy() for k, v in state.m.items()},
                          v={k: v.copy() for k, v in state.v.items()}, t=state.t + 1)
    t = new_state.t
    bias1 = 1.0 - ADAM_BETA1 ** t
    bias2 = 1.0 - ADAM_BETA2 ** t

    out_arrays = {"position": out.positions, "scale": out.scales,
                  "color": out.colors, "opacity": out.opacities}
    for name, (_, g, lr) in blocks.items():
        if lr == 0.0:
            continue
        m = new_state.m[name]
        v = new_state.v[name]
        if update_mask is None:
            m[:] = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
            v[:] = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g ** 2
            delta = lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
            out_arrays[name][:] = out_arrays[name] - delta
        else:
            gm = g[update_mask]
            m[update_mask] = ADAM_BETA1 * m[update_mask] + (1.0 - ADAM_BETA1) * gm
            v[update_mask] = ADAM_BETA2 * v[update_mask] + (1.0 - ADAM_BETA2) * gm ** 2
            delta = lr * (m[update_mask] / bias1) / (np.sqrt(v[update_mask] / bias2) + ADAM_EPS)
            out_arrays[name][update_mask] = out_arrays[name][update_mask] - delta
        # clamp only what moved: even a no-op clip may rewrite frozen bits (-0.0)
        rows = slice(None) if update_mask is None else update_mask
        if name == "color" or name == "opacity":
            out_arrays[name][rows] = np.clip(out_arrays[name][rows], 0.0, 1.0)
        elif name == "scale":
            out_arrays[name][rows] = np.maximum(out_arrays[name][rows], SCALE_FLOOR)
    return out, new_state


def adaptive_density_control(cloud: GaussianCloud, grad_accum: np.ndarray, cfg: OptimConfig,
                             rng: np.random.Generator):
    """Clone/split high-gradient points, prune transparent ones.

    Points whose accumulated mean position-gradient magnitude exceeds the
    threshold are split into two children at +-0.5 s along a random direction
    (child scale s / 1.6) when larger than the split threshold, otherwise
    cloned in place. Points below the opacity prune threshold are removed.

    Returns (cloud, src, fresh): src maps output rows to their source row,
    fresh marks rows whose geometry is new (split children and clones).
    """
    grad_accum = np.asarray(grad_accum, dtype=np.float64)
    if grad_accum.shape != (len(cloud),):
        raise ValueError("grad accumulator length must match the point count")

    densify = grad_accum > cfg.densify_grad_threshold
    split = densify & (cloud.scales > cfg.split_scale_threshold)
    clone = densify & ~split

    src_rows = []
    fresh_rows = []
    pos_rows = []
    scale_rows = []
    for i in range(len(cloud)):
        if split[i]:
            direction = rng.standard_normal(3)
            direction /= max(np.linalg.norm(direction), 1e-12)
            offset = 0.5 * cloud.scales[i] * direction
            child_scale = cloud.scales[i] / 1.6
            for sign in (1.0, -1.0):
                src_rows.append(i)
                fresh_rows.append(True)
                pos_rows.append(cloud.positions[i] + sign * offset)
                scale_rows.append(child_scale)
        elif clone[i]:
            src_rows.append(i)
            fresh_rows.append(False)
            pos_rows.append(cloud.positions[i])
            scale_rows.append(cloud.scales[i])
            src_rows.append(i)
            fresh_rows.append(True)
            pos_rows.append(cloud.positions[i])
            scale_rows.append(cloud.scales[i])
        else:
            src_rows.append(i)
            fresh_rows.append(False)
            pos_rows.append(cloud.positions[i])
            scale_rows.append(cloud.scales[i])

    src = np.asarray(src_rows, dtype=np.int64)
    fresh = np.asarray(fresh_rows, dtype=bool)
    grown = GaussianCloud(
        positions=np.asarray(pos_rows).reshape(-1, 3),
        scales=np.asarray(scale_rows),
        rotations=cloud.rotations[src],
        colors=cloud.colors[src],
        opacities=cloud.opacities[src],
        labels=cloud.labels[src],
        bind_idx=cloud.bind_idx[src],
    )
    keep = grown.opacities >= cfg.opacity_prune_threshold
    from .cloud import prune as _prune
    return _prune(grown, keep), src[keep], fresh[keep]


@dataclass
class FixedViews:
    """A fixed camera list; every iteration sees all of them in order."""

    cameras: list

    def sample(self, batch: int, rng: np.random.Generator) -> list:
        return list(self.cameras)


@dataclass
class OrbitSampler:
    """Random orbit views: uniform azimuth, uniform elevation band."""

    radius: float
    target: tuple
    elevation_deg: tuple = (-10.0, 30.0)
    width: int = 512
    height: int = 512

    def sample(self, batch: int, rng: np.random.Generator) -> list:
        cams = []
        for _ in range(batch):
            az = float(rng.uniform(0.0, 360.0))
            el = float(rng.uniform(*self.elevation_deg))
            cams.append(Camera.orbit(az, el, self.radius, target=self.target,
                                     width=self.width, height=self.height))
        return cams


def optimize(cloud: GaussianCloud, guidance, views, cfg: OptimConfig,
             rng: np.random.Generator | None = None,
             update_mask: np.ndarray | None = None):
    """Run the full guided optimization; returns (cloud, LossReport).

    Each iteration renders the sampled views, turns guidance residuals (plus
    the image loss on the prompt view in image mode) into attribute
    gradients, takes one Adam step, and runs density control on schedule.
    In mock mode the reported image loss is measured against the mock targets.
    Rows outside update_mask stay bit-identical; masked runs require density
    control to be off, since splits and prunes would reshuffle the mask.
    """
    if len(cloud) == 0:
        raise ValueError("cannot optimize an empty cloud")
    if update_mask is not None and cfg.densify_enabled:
        raise ValueError("masked optimization requires densify_enabled=False")
    if isinstance(guidance, GuidanceSpec):
        guidance = build_guidance(guidance)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    cloud = cloud.copy()
    state = AdamState.for_cloud(cloud)
    accum_sum = np.zeros(len(cloud))
    accum_n = 0
    report = LossReport()
    is_mock = isinstance(guidance, MockGuidance)
    is_image_mode = guidance.spec.mode == "image"

    for it in range(1, cfg.iterations + 1):
        t_start = time.perf_counter()
        cams = views.sample(cfg.batch_views, rng)
        grads = RenderGrads.zeros(len(cloud))
        loss_img = 0.0
        for vi, cam in enumerate(cams):
            out = render(cloud, cam, background=cfg.background)
            d_rgb = sds_pixel_grad(out, guidance, rng, camera=cam, view_index=vi)
            d_alpha = np.zeros_like(out.alpha)
            if is_image_mode and vi == 0 and guidance.spec.target_image is not None:
                tgt = guidance.spec.target_image
                li, dr, da = image_loss(out, tgt, np.ones(out.alpha.shape), cfg)
                loss_img += li
                d_rgb = d_rgb + dr
                d_alpha = d_alpha + da
            elif is_mock:
                li, _, _ = image_loss(out, guidance.target_for(vi),
                                      guidance.mask_for(vi, out.alpha), cfg)
                loss_img += li
            grads += render_backward(cloud, cam, d_rgb, d_alpha, background=cfg.background)
        cloud, state = step(cloud, grads, state, cfg, update_mask=update_mask)

        pos_norms = np.linalg.norm(grads.d_position, axis=1)
        accum_sum += pos_norms
        accum_n += 1
        grad_norm = float(np.linalg.norm(grads.d_position))

        if cfg.densify_enabled and it % cfg.densify_interval == 0:
            mean_grad = accum_sum / max(accum_n, 1)
            cloud, src, fresh = adaptive_density_control(cloud, mean_grad, cfg, rng)
            state = state.remap(src, fresh)
            accum_sum = np.zeros(len(cloud))
            accum_n = 0
            if len(cloud) == 0:
                raise NumericalError("density control pruned every point")

        report.add(LossRow(
            iteration=it, loss_image=loss_img, grad_norm=grad_norm,
            points=len(cloud), ms=(time.perf_counter() - t_start) * 1e3,
        ))
    return cloud, report


def texture_only_config(cfg: OptimConfig) -> OptimConfig:
    """Freeze everything except color and disable density control."""
    return replace(cfg, lr_position=0.0, lr_scale=0.0, lr_opacity=0.0, lr_rotation=0.0,
                   densify_enabled=False)
