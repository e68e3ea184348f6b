"""Gaussian garment container and its geometric plumbing.

Points are isotropic 3D Gaussians: one scalar scale per point (the covariance
is structurally a sphere), a unit quaternion kept for bookkeeping, linear RGB
color, opacity, a semantic label, and an optional binding to a body vertex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import FormatError

UNBOUND = -1

_PLY_COMMENT = "sgw_version 1"
_PLY_PROPS = [
    ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
    ("scale", "<f4"),
    ("rot_w", "<f4"), ("rot_x", "<f4"), ("rot_y", "<f4"), ("rot_z", "<f4"),
    ("red", "<f4"), ("green", "<f4"), ("blue", "<f4"),
    ("opacity", "<f4"),
    ("label", "<u2"),
    ("bind_idx", "<i4"),
]
_PLY_TYPE_NAMES = {"<f4": "float", "<u2": "ushort", "<i4": "int"}
_PLY_TYPE_CODES = {"float": "<f4", "float32": "<f4", "ushort": "<u2", "uint16": "<u2",
                   "int": "<i4", "int32": "<i4", "uchar": "<u1", "uint8": "<u1",
                   "double": "<f8", "float64": "<f8"}


@dataclass
class GaussianCloud:
    """Per-point gaussian attributes; all arrays share the point count."""

    positions: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray
    labels: np.ndarray
    bind_idx: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float64).reshape(n)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64).reshape(n, 3)
        self.opacities = np.ascontiguousarray(self.opacities, dtype=np.float64).reshape(n)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint16).reshape(n)
        self.bind_idx = np.ascontiguousarray(self.bind_idx, dtype=np.int32).reshape(n)
        self.validate()

    def __len__(self) -> int:
        return self.positions.shape[0]

    def validate(self) -> None:
        n = len(self)
        if n == 0:
            return
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")
        if np.any(self.scales <= 0):
            raise ValueError("scales must be strictly positive")
        qn = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(qn - 1.0) > 1e-6):
            raise ValueError("rotation quaternions must be unit-norm within 1e-6")
        if np.any((self.colors < 0) | (self.colors > 1)):
            raise ValueError("colors must lie in [0, 1]")
        if np.any((self.opacities < 0) | (self.opacities > 1)):
            raise ValueError("opacities must lie in [0, 1]")

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            positions=self.positions.copy(),
            scales=self.scales.copy(),
            rotations=self.rotations.copy(),
            colors=self.colors.copy(),
            opacities=self.opacities.copy(),
            labels=self.labels.copy(),
            bind_idx=self.bind_idx.copy(),
        )

    @classmethod
    def empty(cls) -> "GaussianCloud":
        return cls(
            positions=np.zeros((0, 3)),
            scales=np.zeros(0),
            rotations=np.zeros((0, 4)),
            colors=np.zeros((0, 3)),
            opacities=np.zeros(0),
            labels=np.zeros(0, dtype=np.uint16),
            bind_idx=np.zeros(0, dtype=np.int32),
        )


@dataclass(frozen=True)
class KnnResult:
    indices: np.ndarray  # (Q, k)
    distances: np.ndarray  # (Q, k), ascending within each row


def knn(reference: np.ndarray, query: np.ndarray, k: int) -> KnnResult:
    """Exact Euclidean k-nearest neighbors, ties broken by lower index.

    A k-d tree bounds the search radius; the final selection recomputes
    distances so the result is identical to a brute-force scan.
    """
    reference = np.asarray(reference, dtype=np.float64).reshape(-1, 3)
    query = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    nr, nq = reference.shape[0], query.shape[0]
    if nr == 0:
        raise ValueError("reference set must be non-empty")
    if not 1 <= k <= nr:
        raise ValueError(f"k must be in [1, {nr}], got {k}")
    if not (np.all(np.isfinite(reference)) and np.all(np.isfinite(query))):
        raise ValueError("coordinates must be finite")
    if nq == 0:
        return KnnResult(np.zeros((0, k), dtype=np.int64), np.zeros((0, k)))

    tree = cKDTree(reference)
    d, _ = tree.query(query, k=k)
    d = np.atleast_2d(d.reshape(nq, k))
    # inflate the k-th distance a hair: the refinement below recomputes
    # distances in numpy, which may differ from the tree's by a few ulps
    radius = d[:, -1] * (1.0 + 1e-9) + 1e-12
    balls = tree.query_ball_point(query, radius)

    indices = np.empty((nq, k), dtype=np.int64)
    distances = np.empty((nq, k))
    for i in range(nq):
        cand = np.asarray(balls[i], dtype=np.int64)
        d2 = np.sum((reference[cand] - query[i]) ** 2, axis=1)
        order = np.lexsort((cand, d2))[:k]
        sel = cand[order]
        indices[i] = sel
        distances[i] = np.sqrt(d2[order])
    return KnnResult(indices, distances)


def interpolated_densify(points: np.ndarray, k_interp: int) -> np.ndarray:
    """Insert k_interp uniformly spaced points on each nearest-neighbor segment.

    Each point is paired with its single nearest neighbor (ties to the lower
    index); unordered pairs are deduplicated so coincident interpolants never
    appear twice. Output is the input points followed by the interpolants.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    if n < 2:
        raise ValueError("densification needs at least 2 points")
    if k_interp < 1:
        raise ValueError("k_interp must be >= 1")

    nn2 = knn(points, points, k=2).indices
    own = np.arange(n)
    nearest = np.where(nn2[:, 0] != own, nn2[:, 0], nn2[:, 1])

    pairs = np.stack([np.minimum(own, nearest), np.maximum(own, nearest)], axis=1)
    pairs = np.unique(pairs, axis=0)

    fracs = np.arange(1, k_interp + 1) / (k_interp + 1)
    a = points[pairs[:, 0]][:, None, :]  # (M, 1, 3)
    b = points[pairs[:, 1]][:, None, :]
    interp = a + fracs[None, :, None] * (b - a)  # (M, k_interp, 3)
    return np.vstack([points, interp.reshape(-1, 3)])


def prune(cloud: GaussianCloud, keep_mask: np.ndarray) -> GaussianCloud:
    """Filter every attribute array by a boolean mask, preserving order."""
    keep_mask = np.asarray(keep_mask, dtype=bool)
    if keep_mask.shape != (len(cloud),):
        raise ValueError(f"mask length {keep_mask.shape} does not match point count {len(cloud)}")
    return GaussianCloud(
        positions=cloud.positions[keep_mask],
        scales=cloud.scales[keep_mask],
        rotations=cloud.rotations[keep_mask],
        colors=cloud.colors[keep_mask],
        opacities=cloud.opacities[keep_mask],
        labels=cloud.labels[keep_mask],
        bind_idx=cloud.bind_idx[keep_mask],
    )


def append(cloud: GaussianCloud, other: GaussianCloud) -> GaussianCloud:
    """Concatenate two clouds; attributes are copied, never mutated."""
    return GaussianCloud(
        positions=np.vstack([cloud.positions, other.positions]),
        scales=np.concatenate([cloud.scales, other.scales]),
        rotations=np.vstack([cloud.rotations, other.rotations]),
        colors=np.vstack([cloud.colors, other.colors]),
        opacities=np.concatenate([cloud.opacities, other.opacities]),
        labels=np.concatenate([cloud.labels, other.labels]),
        bind_idx=np.concatenate([cloud.bind_idx, other.bind_idx]),
    )


def bind_to_body(cloud: GaussianCloud, body_vertices: np.ndarray) -> GaussianCloud:
    """Bind each gaussian to its nearest body vertex (ties to the lower index)."""
    body_vertices = np.asarray(body_vertices, dtype=np.float64).reshape(-1, 3)
    if body_vertices.shape[0] == 0:
        raise ValueError("cannot bind to an empty body")
    out = cloud.copy()
    if len(cloud):
        out.bind_idx = knn(body_vertices, cloud.positions, k=1).indices[:, 0].astype(np.int32)
    return out


def deform_by_vertices(cloud: GaussianCloud, transforms: np.ndarray) -> GaussianCloud:
    """Carry each gaussian by its bound vertex's 4x4 affine transform.

    Positions map through the full affine; quaternions compose with the
    rotation part (polar factor of the blended linear part). Isotropic scales
    are untouched: rotating a sphere is a no-op on its shape.
    """
    transforms = np.asarray(transforms, dtype=np.float64)
    if transforms.ndim != 3 or transforms.shape[1:] != (4, 4):
        raise ValueError("transforms must be (V, 4, 4)")
    if len(cloud) == 0:
        return cloud.copy()
    if np.any(cloud.bind_idx < 0):
        raise ValueError("cloud contains unbound gaussians; bind_to_body first")
    if np.any(cloud.bind_idx >= transforms.shape[0]):
        raise ValueError("bind index out of range for the given transforms")

    M = transforms[cloud.bind_idx]  # (P, 4, 4)
    out = cloud.copy()
    out.positions = np.einsum("pab,pb->pa", M[:, :3, :3], cloud.positions) + M[:, :3, 3]
    rot = _polar_rotation(M[:, :3, :3])
    q = quat_mul(quat_from_matrix(rot), cloud.rotations)
    out.rotations = q / np.linalg.norm(q, axis=1, keepdims=True)
    return out


def _polar_rotation(mats: np.ndarray) -> np.ndarray:
    """Closest rotation to each 3x3 matrix (orthogonal polar factor)."""
    u, _, vt = np.linalg.svd(mats)
    det = np.linalg.det(u @ vt)
    u = u.copy()
    u[det < 0, :, 2] *= -1.0
    return u @ vt


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of (N, 4) quaternion arrays in (w, x, y, z) order."""
    aw, ax, ay, az = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    bw, bx, by, bz = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=1)


def quat_from_matrix(mats: np.ndarray) -> np.ndarray:
    """Rotation matrices (N, 3, 3) to unit quaternions (N, 4), w >= 0."""
    m = mats
    n = m.shape[0]
    q = np.empty((n, 4))
    tr = m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2]
    # branch per element on the largest diagonal term for numerical stability
    for i in range(n):
        t = tr[i]
        a = m[i]
        if t > 0:
            s = np.sqrt(t + 1.0) * 2.0
            q[i] = [0.25 * s, (a[2, 1] - a[1, 2]) / s, (a[0, 2] - a[2, 0]) / s,
                    (a[1, 0] - a[0, 1]) / s]
        elif a[0, 0] >= a[1, 1] and a[0, 0] >= a[2, 2]:
            s = np.sqrt(1.0 + a[0, 0] - a[1, 1] - a[2, 2]) * 2.0
            q[i] = [(a[2, 1] - a[1, 2]) / s, 0.25 * s, (a[0, 1] + a[1, 0]) / s,
                    (a[0, 2] + a[2, 0]) / s]
        elif a[1, 1] >= a[2, 2]:
            s = np.sqrt(1.0 + a[1, 1] - a[0, 0] - a[2, 2]) * 2.0
            q[i] = [(a[0, 2] - a[2, 0]) / s, (a[0, 1] + a[1, 0]) / s, 0.25 * s,
                    (a[1, 2] + a[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + a[2, 2] - a[0, 0] - a[1, 1]) * 2.0
            q[i] = [(a[1, 0] - a[0, 1]) / s, (a[0, 2] + a[2, 0]) / s,
                    (a[1, 2] + a[2, 1]) / s, 0.25 * s]
    neg = q[:, 0] < 0
    q[neg] *= -1.0
    return q / np.linalg.norm(q, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# PLY persistence
# ---------------------------------------------------------------------------


def save_ply(cloud: GaussianCloud, path) -> None:
    """Binary little-endian PLY with one vertex element carrying all attributes."""
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0", f"comment {_PLY_COMMENT}",
              f"element vertex {n}"]
    for name, code in _PLY_PROPS:
        header.append(f"property {_PLY_TYPE_NAMES[code]} {name}")
    header.append("end_header")

    rows = np.empty(n, dtype=[(name, code) for name, code in _PLY_PROPS])
    rows["x"], rows["y"], rows["z"] = cloud.positions.T.astype(np.float32)
    rows["scale"] = cloud.scales.astype(np.float32)
    for i, name in enumerate(("rot_w", "rot_x", "rot_y", "rot_z")):
        rows[name] = cloud.rotations[:, i].astype(np.float32)
    for i, name in enumerate(("red", "green", "blue")):
        rows[name] = cloud.colors[:, i].astype(np.float32)
    rows["opacity"] = cloud.opacities.astype(np.float32)
    rows["label"] = cloud.labels
    rows["bind_idx"] = cloud.bind_idx

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rows.tobytes())


def load_ply(path) -> GaussianCloud:
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header_lines = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]

    fmt = next((ln for ln in header_lines if ln.startswith("format ")), "")
    if "binary_little_endian" not in fmt:
        raise FormatError(f"{path}: only binary_little_endian PLY is supported")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for ln in header_lines:
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "element":
            if len(parts) < 3:
                raise FormatError(f"{path}: malformed element line {ln!r}")
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                try:
                    count = int(parts[2])
                except ValueError as exc:
                    raise FormatError(f"{path}: bad vertex count {parts[2]!r}") from exc
        elif parts[0] == "property" and in_vertex:
            if len(parts) < 3:
                raise FormatError(f"{path}: malformed property line {ln!r}")
            if parts[1] == "list":
                raise FormatError(f"{path}: list properties are not supported")
            if parts[1] not in _PLY_TYPE_CODES:
                raise FormatError(f"{path}: unsupported property type {parts[1]}")
            props.append((parts[2], _PLY_TYPE_CODES[parts[1]]))
    if count is None:
        raise FormatError(f"{path}: missing vertex element")
    have = {name for name, _ in props}
    for name, _ in _PLY_PROPS:
        if name not in have:
            raise FormatError(f"{path}: missing required property {name!r}")

    dtype = np.dtype([(name, code) for name, code in props])
    expected = count * dtype.itemsize
    if len(body) < expected:
        raise FormatError(f"{path}: truncated vertex data")
    rows = np.frombuffer(body[:expected], dtype=dtype)

    return GaussianCloud(
        positions=np.stack([rows["x"], rows["y"], rows["z"]], axis=1).astype(np.float64),
        scales=rows["scale"].astype(np.float64),
        rotations=np.stack([rows["rot_w"], rows["rot_x"], rows["rot_y"], rows["rot_z"]],
                           axis=1).astype(np.float64),
        colors=np.stack([rows["red"], rows["green"], rows["blue"]], axis=1).astype(np.float64),
        opacities=rows["opacity"].astype(np.float64),
        labels=rows["label"].astype(np.uint16),
        bind_idx=rows["bind_idx"].astype(np.int32),
    )
