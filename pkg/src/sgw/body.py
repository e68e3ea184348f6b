"""Parametric skinned body with per-vertex semantic labels.

The body is a canonical T-pose template deformed by linear blend skinning:
shape and expression blend directions move the template, joints are regressed
from the shaped template, and per-joint rigid transforms are blended by
skinning weights. Every vertex carries exactly one semantic label; garment
regions are sets of labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

ROOT_SENTINEL = -1

_MAGIC = b"SGBM1\n"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SkinnedBody:
    """Immutable skinned body. Arrays are read-only after construction.

    vertices   (V, 3) canonical T-pose template, meters
    faces      (F, 3) vertex indices
    joints     (J, 3) canonical joint locations, meters
    parents    (J,)   parent joint index, ROOT_SENTINEL for the single root
    weights    (V, J) skinning weights, rows sum to 1
    shape_dirs (V, 3, B) displacement per unit shape coefficient
    expr_dirs  (V, 3, E) displacement per unit expression coefficient
    labels     (V,)   semantic label id per vertex
    label_names  label id -> name
    """

    vertices: np.ndarray
    faces: np.ndarray
    joints: np.ndarray
    parents: np.ndarray
    weights: np.ndarray
    shape_dirs: np.ndarray
    expr_dirs: np.ndarray
    labels: np.ndarray
    label_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("vertices", "faces", "joints", "parents", "weights",
                     "shape_dirs", "expr_dirs", "labels"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        _validate_body(self)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_joints(self) -> int:
        return self.joints.shape[0]

    @property
    def num_shape(self) -> int:
        return self.shape_dirs.shape[2]

    @property
    def num_expr(self) -> int:
        return self.expr_dirs.shape[2]

    def label_id(self, name: str) -> int:
        for lid, lname in self.label_names.items():
            if lname == name:
                return lid
        raise KeyError(f"unknown semantic label {name!r}")


@dataclass(frozen=True)
class Pose:
    """Shape, pose, and expression parameters.

    beta  (B,)   shape coefficients
    theta (J, 3) axis-angle per joint, radians, principal branch (norm < pi)
    psi   (E,)   expression coefficients
    """

    beta: np.ndarray
    theta: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        for name in ("beta", "theta", "psi"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
        if not (np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.theta))
                and np.all(np.isfinite(self.psi))):
            raise ValueError("pose parameters must be finite")
        norms = np.linalg.norm(self.theta, axis=-1)
        if np.any(norms >= np.pi):
            raise ValueError("per-joint axis-angle must stay on the principal branch (norm < pi)")

    @classmethod
    def rest(cls, body: SkinnedBody) -> "Pose":
        return cls(
            beta=np.zeros(body.num_shape),
            theta=np.zeros((body.num_joints, 3)),
            psi=np.zeros(body.num_expr),
        )


@dataclass(frozen=True)
class RegionSpec:
    """A garment region as a set of semantic label ids."""

    labels: frozenset

    def __post_init__(self):
        object.__setattr__(self, "labels", frozenset(int(x) for x in self.labels))
        if not self.labels:
            raise ValueError("region must contain at least one label")

    @classmethod
    def from_names(cls, body: SkinnedBody, names) -> "RegionSpec":
        return cls(frozenset(body.label_id(n) for n in names))

    def validate_on(self, body: SkinnedBody) -> None:
        unknown = self.labels - set(body.label_names)
        if unknown:
            raise KeyError(f"region labels not present on body: {sorted(unknown)}")


def _validate_body(body: SkinnedBody) -> None:
    v = body.vertices
    if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] == 0:
        raise FormatError("vertices must be a non-empty (V, 3) array")
    nv, nj = v.shape[0], body.joints.shape[0]
    if body.faces.size and body.faces.max() >= nv:
        raise FormatError("face index out of range")
    if body.faces.size and body.faces.min() < 0:
        raise FormatError("face index out of range")
    if body.weights.shape != (nv, nj):
        raise FormatError(f"weights must be (V, J) = ({nv}, {nj})")
    if np.any(body.weights < 0):
        raise FormatError("unnormalized skinning weights: negative entry")
    row_sums = body.weights.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise FormatError("unnormalized skinning weights: rows must sum to 1")
    p = body.parents
    if p.shape != (nj,):
        raise FormatError("parents must have one entry per joint")
    roots = np.flatnonzero(p == ROOT_SENTINEL)
    if len(roots) != 1:
        raise FormatError("joint hierarchy must have exactly one root")
    if np.any((p != ROOT_SENTINEL) & ((p < 0) | (p >= nj))):
        raise FormatError("parent joint index out of range")
    # forest check: walking up from every joint must terminate at the root
    for j in range(nj):
        seen = set()
        k = j
        while k != ROOT_SENTINEL:
            if k in seen:
                raise FormatError("joint hierarchy contains a cycle")
            seen.add(k)
            k = int(p[k])
    if body.labels.shape != (nv,):
        raise FormatError("labels must have one entry per vertex")
    missing = set(np.unique(body.labels).tolist()) - set(body.label_names)
    if missing:
        raise FormatError(f"labels without names in the label table: {sorted(missing)}")
    if body.shape_dirs.shape[:2] != (nv, 3):
        raise FormatError("shape_dirs must be (V, 3, B)")
    if body.expr_dirs.shape[:2] != (nv, 3):
        raise FormatError("expr_dirs must be (V, 3, E)")


def _check_pose(body: SkinnedBody, pose: Pose) -> None:
    if pose.beta.shape != (body.num_shape,):
        raise ValueError(f"beta must have {body.num_shape} entries, got {pose.beta.shape}")
    if pose.theta.shape != (body.num_joints, 3):
        raise ValueError(f"theta must be ({body.num_joints}, 3), got {pose.theta.shape}")
    if pose.psi.shape != (body.num_expr,):
        raise ValueError(f"psi must have {body.num_expr} entries, got {pose.psi.shape}")


def rodrigues(theta: np.ndarray) -> np.ndarray:
    """Axis-angle (..., 3) to rotation matrices (..., 3, 3).

    Exact identity for zero vectors (no epsilon leaks into the result).
    """
    theta = np.asarray(theta, dtype=np.float64)
    angle = np.linalg.norm(theta, axis=-1, keepdims=True)
    safe = np.maximum(angle, 1e-300)
    axis = theta / safe
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    K = np.stack([
        np.stack([zero, -z, y], axis=-1),
        np.stack([z, zero, -x], axis=-1),
        np.stack([-y, x, zero], axis=-1),
    ], axis=-2)
    s = np.sin(angle)[..., None]
    c = (1.0 - np.cos(angle))[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + s * K + c * (K @ K)


def _shaped_template(body: SkinnedBody, beta: np.ndarray, psi: np.ndarray) -> np.ndarray:
    offsets = body.shape_dirs @ beta + body.expr_dirs @ psi
    return body.vertices + offsets


def _shaped_joints(body: SkinnedBody, beta: np.ndarray) -> np.ndarray:
    """Joints of the beta-shaped template.

    Each joint translates by the skinning-weight-weighted average of the shape
    offsets of the vertices it drives (learned joint regressors are out of
    scope for this body format).
    """
    offsets = body.shape_dirs @ beta  # (V, 3)
    col_mass = body.weights.sum(axis=0)  # (J,)
    moved = body.weights.T @ offsets  # (J, 3)
    joint_off = np.where(col_mass[:, None] > 0, moved / np.maximum(col_mass, 1e-300)[:, None], 0.0)
    return body.joints + joint_off


def _joint_transforms(body: SkinnedBody, pose: Pose) -> np.ndarray:
    """Per-joint skinning transforms A_j as (J, 4, 4).

    A_j maps a point expressed in the shaped rest frame to its posed location.
    Built so the zero pose yields exact identity matrices: world rotations are
    chained down the kinematic tree and joint drift is accumulated as
    (R_parent - I) deltas, which vanish bit-exactly at rest.
    """
    joints = _shaped_joints(body, pose.beta)
    parents = body.parents
    local_rot = rodrigues(pose.theta)  # (J, 3, 3)

    nj = body.num_joints
    world_rot = np.empty((nj, 3, 3))
    drift = np.empty((nj, 3))
    order = _topo_order(parents)
    eye = np.eye(3)
    for j in order:
        p = int(parents[j])
        if p == ROOT_SENTINEL:
            world_rot[j] = local_rot[j]
            drift[j] = 0.0
        else:
            world_rot[j] = world_rot[p] @ local_rot[j]
            bone = joints[j] - joints[p]
            drift[j] = drift[p] + (world_rot[p] - eye) @ bone

    A = np.zeros((nj, 4, 4))
    A[:, :3, :3] = world_rot
    A[:, :3, 3] = joints + drift - np.einsum("jab,jb->ja", world_rot, joints)
    A[:, 3, 3] = 1.0
    return A


def _topo_order(parents: np.ndarray) -> list[int]:
    order: list[int] = []
    remaining = set(range(len(parents)))
    placed: set[int] = set()
    while remaining:
        progressed = False
        for j in sorted(remaining):
            p = int(parents[j])
            if p == ROOT_SENTINEL or p in placed:
                order.append(j)
                placed.add(j)
                remaining.discard(j)
                progressed = True
        if not progressed:  # unreachable after validation, guards infinite loop
            raise FormatError("joint hierarchy is not a tree")
    return order


def vertex_transforms(body: SkinnedBody, pose: Pose) -> np.ndarray:
    """Per-vertex 4x4 affine transforms mapping canonical vertices to their
    posed positions.

    The rotation/translation part is the skinning-weight blend of the joint
    transforms; the shape/expression offset of each vertex is folded into the
    translation so the map starts from the canonical (unshaped) template.
    """
    _check_pose(body, pose)
    A = _joint_transforms(body, pose)  # (J, 4, 4)
    M = np.einsum("vj,jab->vab", body.weights, A)
    offsets = body.shape_dirs @ pose.beta + body.expr_dirs @ pose.psi  # (V, 3)
    M[:, :3, 3] += np.einsum("vab,vb->va", M[:, :3, :3], offsets)
    return M


def posed_vertices(body: SkinnedBody, pose: Pose) -> np.ndarray:
    """Template deformed to the given shape, pose, and expression. (V, 3)."""
    _check_pose(body, pose)
    shaped = _shaped_template(body, pose.beta, pose.psi)
    A = _joint_transforms(body, pose)
    M = np.einsum("vj,jab->vab", body.weights, A)
    return np.einsum("vab,vb->va", M[:, :3, :3], shaped) + M[:, :3, 3]


def region_vertices(body: SkinnedBody, region: RegionSpec) -> np.ndarray:
    """Ascending indices of vertices whose label is in the region."""
    region.validate_on(body)
    mask = np.isin(body.labels, sorted(region.labels))
    return np.flatnonzero(mask)


def shape_transforms(body: SkinnedBody, beta_src: np.ndarray, beta_dst: np.ndarray) -> np.ndarray:
    """Per-vertex translation from the beta_src surface to the beta_dst surface
    with the pose held at rest. (V, 3)."""
    beta_src = np.asarray(beta_src, dtype=np.float64)
    beta_dst = np.asarray(beta_dst, dtype=np.float64)
    if beta_src.shape != (body.num_shape,) or beta_dst.shape != (body.num_shape,):
        raise ValueError(f"beta vectors must have {body.num_shape} entries")
    return body.shape_dirs @ (beta_dst - beta_src)


def vertex_normals(body: SkinnedBody) -> np.ndarray:
    """Area-weighted vertex normals of the canonical template, unit length.

    Vertices untouched by any face fall back to the direction away from the
    template centroid.
    """
    normals = np.zeros_like(body.vertices)
    if body.faces.size:
        tri = body.vertices[body.faces]  # (F, 3, 3)
        fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        for k in range(3):
            np.add.at(normals, body.faces[:, k], fn)
    norms = np.linalg.norm(normals, axis=1)
    degenerate = norms < 1e-12
    if np.any(degenerate):
        fallback = body.vertices - body.vertices.mean(axis=0)
        fb_norm = np.linalg.norm(fallback, axis=1)
        fallback = np.where(fb_norm[:, None] > 1e-12, fallback / np.maximum(fb_norm, 1e-300)[:, None],
                            np.array([0.0, 1.0, 0.0]))
        normals[degenerate] = fallback[degenerate]
        norms = np.linalg.norm(normals, axis=1)
    return normals / norms[:, None]


# ---------------------------------------------------------------------------
# SGBM1 container
# ---------------------------------------------------------------------------

_SECTION_ORDER = [
    ("VERTS", "<f8"),
    ("FACES", "<u4"),
    ("JOINTS", "<f8"),
    ("PARENTS", "<i4"),
    ("WEIGHTS_V", "<u4"),
    ("WEIGHTS_J", "<u4"),
    ("WEIGHTS_W", "<f8"),
    ("SHAPE_DIRS", "<f8"),
    ("EXPR_DIRS", "<f8"),
    ("LABELS", "<u2"),
]


def save_body(body: SkinnedBody, path) -> None:
    """Write the SGBM1 container: magic, length-prefixed JSON header, raw
    little-endian sections in a fixed order. Deterministic byte output."""
    wv, wj = np.nonzero(body.weights)  # row-major, canonical triplet order
    ww = body.weights[wv, wj]
    arrays = {
        "VERTS": body.vertices.astype("<f8"),
        "FACES": body.faces.astype("<u4"),
        "JOINTS": body.joints.astype("<f8"),
        "PARENTS": body.parents.astype("<i4"),
        "WEIGHTS_V": wv.astype("<u4"),
        "WEIGHTS_J": wj.astype("<u4"),
        "WEIGHTS_W": ww.astype("<f8"),
        "SHAPE_DIRS": body.shape_dirs.astype("<f8"),
        "EXPR_DIRS": body.expr_dirs.astype("<f8"),
        "LABELS": body.labels.astype("<u2"),
    }
    sections = []
    offset = 0
    for name, dtype in _SECTION_ORDER:
        arr = arrays[name]
        nbytes = arr.nbytes
        sections.append({
            "name": name,
            "dtype": dtype,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": nbytes,
        })
        offset += nbytes
    header = {
        "version": _FORMAT_VERSION,
        "label_names": {str(k): v for k, v in sorted(body.label_names.items())},
        "sections": sections,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(np.uint32(len(blob)).tobytes())
        f.write(blob)
        for name, _ in _SECTION_ORDER:
            f.write(arrays[name].tobytes())


def load_body(path) -> SkinnedBody:
    """Read an SGBM1 container and validate every body invariant.

    Rejects (rather than repairs) unnormalized weight rows and dangling
    indices.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise FormatError(f"{path}: not an SGBM1 body file")
    pos = len(_MAGIC)
    if len(raw) < pos + 4:
        raise FormatError(f"{path}: truncated header")
    hlen = int(np.frombuffer(raw[pos:pos + 4], dtype="<u4")[0])
    pos += 4
    try:
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header: {exc}") from exc
    pos += hlen
    if header.get("version") != _FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {header.get('version')}")

    data = raw[pos:]
    arrays = {}
    for sec in header.get("sections", []):
        try:
            start, nbytes = int(sec["offset"]), int(sec["nbytes"])
            if start < 0 or start + nbytes > len(data):
                raise FormatError(f"{path}: section {sec.get('name')} overruns the file")
            arr = np.frombuffer(data[start:start + nbytes], dtype=sec["dtype"])
            arrays[sec["name"]] = arr.reshape(sec["shape"])
        except FormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed section table: {exc}") from exc
    missing = {name for name, _ in _SECTION_ORDER} - set(arrays)
    if missing:
        raise FormatError(f"{path}: missing sections {sorted(missing)}")

    verts = arrays["VERTS"].astype(np.float64)
    joints = arrays["JOINTS"].astype(np.float64)
    nv, nj = verts.shape[0], joints.shape[0]
    wv, wj, ww = arrays["WEIGHTS_V"], arrays["WEIGHTS_J"], arrays["WEIGHTS_W"]
    if not (len(wv) == len(wj) == len(ww)):
        raise FormatError(f"{path}: weight triplet arrays disagree in length")
    if len(wv) and (wv.max() >= nv or wj.max() >= nj):
        raise FormatError(f"{path}: weight triplet index out of range")
    weights = np.zeros((nv, nj))
    np.add.at(weights, (wv.astype(np.int64), wj.astype(np.int64)), ww)

    label_names = {int(k): str(v) for k, v in header.get("label_names", {}).items()}
    return SkinnedBody(
        vertices=verts,
        faces=arrays["FACES"].astype(np.int64),
        joints=joints,
        parents=arrays["PARENTS"].astype(np.int64),
        weights=weights,
        shape_dirs=arrays["SHAPE_DIRS"].astype(np.float64),
        expr_dirs=arrays["EXPR_DIRS"].astype(np.float64),
        labels=arrays["LABELS"].astype(np.uint16),
        label_names=label_names,
    )


# ---------------------------------------------------------------------------
# Procedural test humanoid
# ---------------------------------------------------------------------------

REQUIRED_LABELS = (
    "head", "neck", "chest", "chest_pattern", "abdomen", "pelvis",
    "upper_arm_l", "upper_arm_r", "lower_arm_l", "lower_arm_r",
    "hand_l", "hand_r", "armpit_l", "armpit_r",
    "torso_side_l", "torso_side_r",
    "thigh_l", "thigh_r", "calf_l", "calf_r", "foot_l", "foot_r",
)

# joint index: (name, parent, position)
_JOINTS = [
    ("pelvis", ROOT_SENTINEL, (0.0, 1.00, 0.0)),
    ("spine", 0, (0.0, 1.15, 0.0)),
    ("chest", 1, (0.0, 1.30, 0.0)),
    ("neck", 2, (0.0, 1.50, 0.0)),
    ("head", 3, (0.0, 1.58, 0.0)),
    ("shoulder_l", 2, (0.20, 1.45, 0.0)),
    ("elbow_l", 5, (0.50, 1.45, 0.0)),
    ("wrist_l", 6, (0.75, 1.45, 0.0)),
    ("shoulder_r", 2, (-0.20, 1.45, 0.0)),
    ("elbow_r", 8, (-0.50, 1.45, 0.0)),
    ("wrist_r", 9, (-0.75, 1.45, 0.0)),
    ("hip_l", 0, (0.10, 0.95, 0.0)),
    ("knee_l", 11, (0.10, 0.55, 0.0)),
    ("ankle_l", 12, (0.10, 0.10, 0.0)),
    ("hip_r", 0, (-0.10, 0.95, 0.0)),
    ("knee_r", 14, (-0.10, 0.55, 0.0)),
    ("ankle_r", 15, (-0.10, 0.10, 0.0)),
]

JOINT_NAMES = tuple(name for name, _, _ in _JOINTS)

# label, tube start, tube end, radius, primary joint, blend joint at ring 0
_PARTS = [
    ("pelvis", (0.0, 0.90, 0.0), (0.0, 1.05, 0.0), 0.16, 0, None),
    ("abdomen", (0.0, 1.05, 0.0), (0.0, 1.30, 0.0), 0.15, 1, 0),
    ("chest", (0.0, 1.30, 0.0), (0.0, 1.50, 0.0), 0.16, 2, 1),
    ("neck", (0.0, 1.50, 0.0), (0.0, 1.58, 0.0), 0.055, 3, 2),
    ("head", (0.0, 1.58, 0.0), (0.0, 1.78, 0.0), 0.11, 4, 3),
    ("upper_arm_l", (0.20, 1.45, 0.0), (0.50, 1.45, 0.0), 0.050, 5, 2),
    ("lower_arm_l", (0.50, 1.45, 0.0), (0.75, 1.45, 0.0), 0.042, 6, 5),
    ("hand_l", (0.75, 1.45, 0.0), (0.88, 1.45, 0.0), 0.035, 7, 6),
    ("upper_arm_r", (-0.20, 1.45, 0.0), (-0.50, 1.45, 0.0), 0.050, 8, 2),
    ("lower_arm_r", (-0.50, 1.45, 0.0), (-0.75, 1.45, 0.0), 0.042, 9, 8),
    ("hand_r", (-0.75, 1.45, 0.0), (-0.88, 1.45, 0.0), 0.035, 10, 9),
    ("thigh_l", (0.10, 0.95, 0.0), (0.10, 0.55, 0.0), 0.080, 11, 0),
    ("calf_l", (0.10, 0.55, 0.0), (0.10, 0.10, 0.0), 0.060, 12, 11),
    ("foot_l", (0.10, 0.06, -0.03), (0.10, 0.06, 0.15), 0.045, 13, 12),
    ("thigh_r", (-0.10, 0.95, 0.0), (-0.10, 0.55, 0.0), 0.080, 14, 0),
    ("calf_r", (-0.10, 0.55, 0.0), (-0.10, 0.10, 0.0), 0.060, 15, 14),
    ("foot_r", (-0.10, 0.06, -0.03), (-0.10, 0.06, 0.15), 0.045, 16, 15),
]


def _tube_basis(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # radial basis perpendicular to the tube axis, deterministic choice
    axis = axis / np.linalg.norm(axis)
    ref = np.array([0.0, 1.0, 0.0]) if abs(axis[1]) < 0.9 else np.array([0.0, 0.0, 1.0])
    n1 = np.cross(ref, axis)
    n1 /= np.linalg.norm(n1)
    n2 = np.cross(axis, n1)
    return n1, n2


def make_test_humanoid(segments: int = 4, radial: int = 8) -> SkinnedBody:
    """Low-poly capsule-limb humanoid with the full semantic label set.

    Each body part is a tube of `segments` rings with `radial` vertices per
    ring. Deterministic for fixed arguments; no randomness involved.
    """
    if segments < 2:
        raise ValueError("segments must be >= 2")
    if radial < 3:
        raise ValueError("radial must be >= 3")

    joint_pos = np.array([p for _, _, p in _JOINTS])
    parents = np.array([par for _, par, _ in _JOINTS], dtype=np.int64)
    nj = len(_JOINTS)

    label_names = {i: name for i, name in enumerate(REQUIRED_LABELS)}
    name_to_id = {name: i for i, name in label_names.items()}

    verts: list[np.ndarray] = []
    faces: list[tuple[int, int, int]] = []
    labels: list[int] = []
    weights_rows: list[np.ndarray] = []
    part_slices: dict[str, slice] = {}

    for part_label, a, b, radius, joint, blend_joint in _PARTS:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        n1, n2 = _tube_basis(b - a)
        base = len(verts)
        for ring in range(segments):
            t = ring / (segments - 1)
            center = a + t * (b - a)
            for k in range(radial):
                phi = 2.0 * np.pi * k / radial
                verts.append(center + radius * (np.cos(phi) * n1 + np.sin(phi) * n2))
                labels.append(name_to_id[part_label])
                w = np.zeros(nj)
                if ring == 0 and blend_joint is not None:
                    w[joint] = 0.5
                    w[blend_joint] = 0.5
                else:
                    w[joint] = 1.0
                weights_rows.append(w)
        part_slices[part_label] = slice(base, len(verts))
        for ring in range(segments - 1):
            for k in range(radial):
                i0 = base + ring * radial + k
                i1 = base + ring * radial + (k + 1) % radial
                i2 = base + (ring + 1) * radial + (k + 1) % radial
                i3 = base + (ring + 1) * radial + k
                faces.append((i0, i1, i2))
                faces.append((i0, i2, i3))

    vertices = np.array(verts)
    labels_arr = np.array(labels, dtype=np.uint16)

    def carve(target: str, source: str, picked: np.ndarray) -> None:
        # relabel not-yet-carved `source` vertices; keeps every label non-empty
        still = picked[labels_arr[picked] == name_to_id[source]]
        labels_arr[still] = name_to_id[target]

    # chest_pattern: the most front-facing vertex of every chest ring
    chest = part_slices["chest"]
    for ring in range(segments):
        ring_idx = np.arange(chest.start + ring * radial, chest.start + (ring + 1) * radial)
        carve("chest_pattern", "chest", ring_idx[np.argmax(vertices[ring_idx, 2])][None])

    # torso sides: per-ring extreme-x vertices of chest and abdomen tubes;
    # 3-vertex rings skip the chest so its own label never empties out
    for side, pick in (("torso_side_l", np.argmax), ("torso_side_r", np.argmin)):
        parts = ("chest", "abdomen") if radial >= 4 else ("abdomen",)
        for part in parts:
            sl = part_slices[part]
            for ring in range(segments):
                ring_idx = np.arange(sl.start + ring * radial, sl.start + (ring + 1) * radial)
                free = ring_idx[labels_arr[ring_idx] == name_to_id[part]]
                if free.size:
                    carve(side, part, free[pick(vertices[free, 0])][None])

    # armpits: lowest vertices of the proximal upper-arm ring
    n_pit = max(1, radial // 4)
    for side in ("l", "r"):
        sl = part_slices[f"upper_arm_{side}"]
        ring_idx = np.arange(sl.start, sl.start + radial)
        lowest = ring_idx[np.argsort(vertices[ring_idx, 1], kind="stable")[:n_pit]]
        carve(f"armpit_{side}", f"upper_arm_{side}", lowest)

    # blend directions: girth pushes the torso out radially in xz,
    # height stretches everything along y; both linear in the coefficient
    nv = len(vertices)
    shape_dirs = np.zeros((nv, 3, 2))
    torso = np.isin(
        labels_arr,
        [name_to_id[n] for n in ("pelvis", "abdomen", "chest", "chest_pattern",
                                 "torso_side_l", "torso_side_r")],
    )
    radial_dir = vertices.copy()
    radial_dir[:, 1] = 0.0
    rn = np.linalg.norm(radial_dir, axis=1)
    radial_dir = np.where(rn[:, None] > 1e-12, radial_dir / np.maximum(rn, 1e-300)[:, None], 0.0)
    shape_dirs[torso, :, 0] = 0.05 * radial_dir[torso]
    y_span = vertices[:, 1].max() - vertices[:, 1].min()
    shape_dirs[:, 1, 1] = 0.10 * (vertices[:, 1] - vertices[:, 1].min()) / y_span

    expr_dirs = np.zeros((nv, 3, 1))
    face_verts = labels_arr == name_to_id["head"]
    expr_dirs[face_verts, 2, 0] = 0.01

    return SkinnedBody(
        vertices=vertices,
        faces=np.array(faces, dtype=np.int64),
        joints=joint_pos,
        parents=parents,
        weights=np.array(weights_rows),
        shape_dirs=shape_dirs,
        expr_dirs=expr_dirs,
        labels=labels_arr,
        label_names=label_names,
    )
