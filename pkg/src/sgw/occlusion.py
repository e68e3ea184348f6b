"""Self-occlusion repair: fit to T-pose, distance-prune, then pull, recolor,
and smooth the gaussians of the occluded body region.

The pipeline works on one region at a time. Distances are always nearest
distances from region gaussians to region body vertices, with the pairing
re-resolved each iteration (a moving point may pass its original vertex).
Position optimization halts at the first iteration where the distance sum
drops to half its starting value; smoothing halts when no point exceeds the
frozen average distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .body import Pose, RegionSpec, SkinnedBody, region_vertices, vertex_transforms
from .cloud import GaussianCloud, deform_by_vertices, knn, prune

DEFAULT_REGION_NAMES = ("armpit_l", "armpit_r", "torso_side_l", "torso_side_r")


@dataclass
class OcclusionConfig:
    radius_rho: float = 0.03  # gaussians within this of a region vertex belong to the region
    prune_policy: str = "fraction"  # "fraction" or "absolute"
    prune_fraction: float = 0.2
    prune_tau: float = 0.05
    max_iters: int = 1000
    lr_position: float = 1e-2
    lr_color: float = 1e-2
    lr_smooth: float = 1e-2
    eps_color: float = 1e-6
    eps_smooth: float = 1e-5  # meters

    def __post_init__(self):
        if self.prune_policy not in ("fraction", "absolute"):
            raise ValueError(f"unknown prune policy {self.prune_policy!r}")
        if not 0.0 <= self.prune_fraction <= 1.0:
            raise ValueError("prune_fraction must lie in [0, 1]")
        if self.prune_tau < 0:
            raise ValueError("prune_tau must be >= 0")


@dataclass
class OcclusionContext:
    region_vertex_ids: np.ndarray
    region_vertex_positions: np.ndarray  # T-pose positions of those vertices
    region_point_ids: np.ndarray
    d_total: float | None = None
    d_avg: float | None = None


@dataclass
class StageReport:
    pruned: int = 0
    d_total: float = 0.0
    d_avg: float = 0.0
    iters: dict = field(default_factory=dict)
    final_sums: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {"pruned": self.pruned, "d_total": self.d_total, "d_avg": self.d_avg,
                "iters": dict(self.iters), "final_sums": dict(self.final_sums)}


def fit_to_tpose(cloud: GaussianCloud, body: SkinnedBody, source_pose: Pose) -> GaussianCloud:
    """Carry each gaussian by the inverse of its bound vertex's source-pose
    transform, landing the garment in T-pose."""
    M = vertex_transforms(body, source_pose)
    return deform_by_vertices(cloud, np.linalg.inv(M))


def identify_region(cloud: GaussianCloud, body: SkinnedBody, region: RegionSpec,
                    cfg: OcclusionConfig) -> OcclusionContext:
    """Resolve the occlusion region: its body vertices and the gaussians whose
    nearest region vertex lies within the membership radius (in T-pose)."""
    vids = region_vertices(body, region)
    vpos = body.vertices[vids]
    if len(cloud) == 0:
        pids = np.zeros(0, dtype=np.int64)
    else:
        d = knn(vpos, cloud.positions, k=1).distances[:, 0]
        pids = np.flatnonzero(d <= cfg.radius_rho)
    return OcclusionContext(region_vertex_ids=vids, region_vertex_positions=vpos,
                            region_point_ids=pids)


def _region_distances(cloud: GaussianCloud, ctx: OcclusionContext):
    """Nearest region-vertex distance and pairing for each region point."""
    pts = cloud.positions[ctx.region_point_ids]
    res = knn(ctx.region_vertex_positions, pts, k=1)
    return res.distances[:, 0], ctx.region_vertex_positions[res.indices[:, 0]]


def distance_prune(cloud: GaussianCloud, ctx: OcclusionContext, cfg: OcclusionConfig):
    """Remove region gaussians clearly distant from the body, then record the
    starting distance sum over the survivors.

    Fraction policy prunes the top prune_fraction by distance (ties keep the
    lower index); absolute policy prunes distances above prune_tau.
    """
    pids = ctx.region_point_ids
    if len(pids) == 0:
        ctx.d_total = 0.0
        return cloud, ctx

    dist, _ = _region_distances(cloud, ctx)
    if cfg.prune_policy == "fraction":
        n_prune = int(np.floor(cfg.prune_fraction * len(pids) + 1e-9))
        order = np.lexsort((pids, dist))  # ascending distance, ties by lower id
        pruned_local = order[len(pids) - n_prune:] if n_prune else np.zeros(0, dtype=np.int64)
    else:
        pruned_local = np.flatnonzero(dist > cfg.prune_tau)

    keep_mask = np.ones(len(cloud), dtype=bool)
    keep_mask[pids[pruned_local]] = False
    out = prune(cloud, keep_mask)

    # remap surviving region ids into the pruned cloud's indexing
    new_index = np.cumsum(keep_mask) - 1
    survivors = pids[np.isin(pids, pids[pruned_local], invert=True)]
    ctx.region_point_ids = new_index[survivors]
    surv_dist = np.delete(dist, pruned_local)
    ctx.d_total = float(np.sum(surv_dist))
    return out, ctx


def position_optimize(cloud: GaussianCloud, ctx: OcclusionContext, cfg: OcclusionConfig):
    """Descend sum ||p_i - v_i||^2 over region points until the distance sum
    reaches half its recorded start, re-pairing every iteration.

    Returns (cloud, iterations_used). Mutates region positions only.
    """
    if ctx.d_total is None:
        raise ValueError("distance_prune must record d_total before position_optimize")
    if len(ctx.region_point_ids) == 0:
        return cloud.copy(), 0
    out = cloud.copy()
    half = 0.5 * ctx.d_total
    iters = 0
    for _ in range(cfg.max_iters):
        dist, nearest = _region_distances(out, ctx)
        if np.sum(dist) <= half:
            break
        pts = out.positions[ctx.region_point_ids]
        out.positions[ctx.region_point_ids] = pts - cfg.lr_position * 2.0 * (pts - nearest)
        iters += 1
    return out, iters


def position_loss_grad(positions: np.ndarray, nearest: np.ndarray):
    """Loss and gradient of sum ||p - v||^2 at a fixed pairing."""
    diff = positions - nearest
    return float(np.sum(diff ** 2)), 2.0 * diff


def color_loss_grad(colors: np.ndarray, target: np.ndarray):
    """Loss and gradient of sum ||C - C_target||^2 with the target held fixed."""
    diff = colors - target
    return float(np.sum(diff ** 2)), 2.0 * diff


def smooth_loss_grad(positions: np.ndarray, nearest: np.ndarray, d_avg: float):
    """Loss and position gradient of sum 1(D > D_avg) (D - D_avg)^2 at a fixed
    pairing, where D = ||p - v||. The gradient is radial toward the paired
    vertex; points at or below the average contribute nothing."""
    diff = positions - nearest
    dist = np.linalg.norm(diff, axis=1)
    excess = dist - d_avg
    offender = excess > 0.0
    loss = float(np.sum(np.where(offender, excess, 0.0) ** 2))
    direction = diff / np.maximum(dist, 1e-300)[:, None]
    grad = 2.0 * np.where(offender, excess, 0.0)[:, None] * direction
    return loss, grad


def color_optimize(cloud: GaussianCloud, ctx: OcclusionContext, cfg: OcclusionConfig):
    """Pull region colors toward their entry-time mean until the squared loss
    falls below eps_color. Returns (cloud, iterations_used)."""
    pids = ctx.region_point_ids
    if len(pids) == 0:
        return cloud.copy(), 0
    out = cloud.copy()
    target = out.colors[pids].mean(axis=0)  # frozen at entry
    iters = 0
    for _ in range(cfg.max_iters):
        loss, grad = color_loss_grad(out.colors[pids], target)
        if loss < cfg.eps_color:
            break
        out.colors[pids] = out.colors[pids] - cfg.lr_color * grad
        iters += 1
    return out, iters


def smooth_optimize(cloud: GaussianCloud, ctx: OcclusionContext, cfg: OcclusionConfig):
    """Flatten bulges: points whose nearest distance exceeds the entry-time
    region average move toward their nearest vertex along the distance
    gradient (tangential position untouched) until none exceeds the average
    by more than eps_smooth. Returns (cloud, iterations_used)."""
    pids = ctx.region_point_ids
    if len(pids) == 0:
        ctx.d_avg = 0.0
        return cloud.copy(), 0
    out = cloud.copy()
    dist, _ = _region_distances(out, ctx)
    ctx.d_avg = float(np.mean(dist))  # frozen at entry
    iters = 0
    for _ in range(cfg.max_iters):
        dist, nearest = _region_distances(out, ctx)
        if np.max(dist - ctx.d_avg) <= cfg.eps_smooth:
            break
        pts = out.positions[ctx.region_point_ids]
        _, grad = smooth_loss_grad(pts, nearest, ctx.d_avg)
        out.positions[ctx.region_point_ids] = pts - cfg.lr_smooth * grad
        iters += 1
    return out, iters


def run_pipeline(cloud: GaussianCloud, body: SkinnedBody, source_pose: Pose,
                 region: RegionSpec, cfg: OcclusionConfig | None = None):
    """Fit to T-pose, identify the region, prune, then run position, color,
    and smooth optimization in order. Returns (cloud, StageReport)."""
    cfg = cfg or OcclusionConfig()
    report = StageReport()

    fitted = fit_to_tpose(cloud, body, source_pose)
    ctx = identify_region(fitted, body, region, cfg)
    n_before = len(fitted)
    pruned_cloud, ctx = distance_prune(fitted, ctx, cfg)
    report.pruned = n_before - len(pruned_cloud)
    report.d_total = float(ctx.d_total)

    out, it_pos = position_optimize(pruned_cloud, ctx, cfg)
    out, it_col = color_optimize(out, ctx, cfg)
    out, it_smooth = smooth_optimize(out, ctx, cfg)
    report.d_avg = float(ctx.d_avg)
    report.iters = {"position": it_pos, "color": it_col, "smooth": it_smooth}

    if len(ctx.region_point_ids):
        dist, _ = _region_distances(out, ctx)
        target = out.colors[ctx.region_point_ids].mean(axis=0)
        color_loss = float(np.sum((out.colors[ctx.region_point_ids] - target) ** 2))
        report.final_sums = {
            "position_distance": float(np.sum(dist)),
            "color_loss": color_loss,
            "max_excess": float(np.max(dist) - ctx.d_avg),
        }
    else:
        report.final_sums = {"position_distance": 0.0, "color_loss": 0.0, "max_excess": 0.0}
    return out, report
