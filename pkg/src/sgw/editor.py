"""Semantic editing: global texture or shape changes, re-posing, and local
prune-reinit-optimize edits scoped to a label region.

Local edits freeze the surviving gaussians bitwise: the pruned region is
re-seeded (colors set to the survivors' mean rather than random), appended,
and only the new points receive gradient updates.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .body import Pose, RegionSpec, SkinnedBody, shape_transforms, vertex_transforms
from .cloud import GaussianCloud, append, deform_by_vertices, knn, prune
from .garment_init import init_garment
from .optim import OptimConfig, optimize, texture_only_config


def edit_texture_global(cloud: GaussianCloud, guidance, views, cfg: OptimConfig,
                        rng: np.random.Generator | None = None):
    """Re-optimize colors only; geometry, opacity, and rotations stay bitwise
    identical (their learning rates are zeroed and density control is off)."""
    return optimize(cloud, guidance, views, texture_only_config(cfg), rng=rng)


def edit_shape(cloud: GaussianCloud, body: SkinnedBody, beta_src: np.ndarray,
               beta_dst: np.ndarray, k_blend: int = 1) -> GaussianCloud:
    """Displace each gaussian by the shape-change translation of its bound
    vertex (k_blend=1) or a distance-weighted blend of the k nearest vertices.

    Colors and opacities are untouched; the cloud must be bound at the
    beta_src rest shape.
    """
    if len(cloud) == 0:
        return cloud.copy()
    if np.any(cloud.bind_idx < 0):
        raise ValueError("cloud contains unbound gaussians; bind_to_body first")
    translations = shape_transforms(body, beta_src, beta_dst)  # (V, 3)
    out = cloud.copy()
    if k_blend <= 1:
        out.positions = cloud.positions + translations[cloud.bind_idx]
        return out

    src_shape = body.vertices + body.shape_dirs @ np.asarray(beta_src, dtype=np.float64)
    res = knn(src_shape, cloud.positions, k=min(k_blend, src_shape.shape[0]))
    inv = 1.0 / np.maximum(res.distances, 1e-12)
    w = inv / inv.sum(axis=1, keepdims=True)
    out.positions = cloud.positions + np.einsum("pk,pkc->pc", w, translations[res.indices])
    return out


def repose(cloud: GaussianCloud, body: SkinnedBody, pose: Pose) -> GaussianCloud:
    """Deform a canonically-bound garment to a pose via its vertex transforms."""
    return deform_by_vertices(cloud, vertex_transforms(body, pose))


def animate(cloud: GaussianCloud, body: SkinnedBody, poses) -> list[GaussianCloud]:
    """One independently posed cloud per frame; no temporal smoothing."""
    return [repose(cloud, body, pose) for pose in poses]


def edit_local(cloud: GaussianCloud, body: SkinnedBody, region: RegionSpec,
               guidance, views, cfg: OptimConfig,
               rng: np.random.Generator | None = None,
               k_interp: int = 2, offset: float = 0.005, seed: int = 0):
    """Replace the gaussians of a label region and re-optimize only them.

    The region is pruned, re-seeded from the body (new colors set to the
    survivors' exact mean color), appended after the survivors, and optimized
    with the survivors' gradients masked out. Returns (cloud, LossReport).
    """
    region.validate_on(body)
    region_labels = sorted(region.labels)
    in_region = np.isin(cloud.labels, region_labels)
    survivors = prune(cloud, ~in_region)
    if len(survivors) == 0:
        raise ValueError("local edit would remove every gaussian; use generate instead")

    fresh = init_garment(body, region, k_interp=k_interp, offset=offset, seed=seed)
    fresh.colors = np.tile(survivors.colors.mean(axis=0), (len(fresh), 1))

    combined = append(survivors, fresh)
    update_mask = np.zeros(len(combined), dtype=bool)
    update_mask[len(survivors):] = True

    # density control must stay off: it would reshuffle the frozen survivors
    cfg = replace(cfg, densify_enabled=False)
    edited, report = optimize(combined, guidance, views, cfg, rng=rng,
                              update_mask=update_mask)
    return edited, report
