"""Simplified parametric skeleton.

A procedural 22-joint humanoid (pelvis root + 21 articulated joints) replaces a
licensed mesh body model. Shape acts affinely on bone lengths only, which makes
shape inverse kinematics an exact linear least-squares problem, and body
geometry is a set of spheres sampled along the posed bones so contact and
penetration queries have closed forms.

Conventions: Y is up, the horizontal plane is XZ, a body with zero pose faces
+Z with arms extended along +-X. Rotations are axis-angle vectors (radians),
lengths are meters. Joint positions are plain (22, 3) float64 arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

BETA_DIM = 10
NUM_JOINTS = 22
NUM_BODY_JOINTS = 21  # articulated joints, root excluded
BETA_CLAMP = 5.0

TREE_SCHEMA_VERSION = 1


# =============================================================================
# rotations
# =============================================================================


def wrap_axis_angle(v: np.ndarray) -> np.ndarray:
    """Wrap an axis-angle vector to magnitude <= pi (same rotation).

    Vectors already in range pass through bit-exactly so repeated wrapping
    (construction, file round trips) never drifts.
    """
    v = np.asarray(v, dtype=np.float64)
    theta = float(np.linalg.norm(v))
    if theta < 1e-12:
        return np.zeros(3)
    if theta <= np.pi:
        return v.copy()
    axis = v / theta
    k = np.fmod(theta, 2.0 * np.pi)
    if k > np.pi:
        return axis * (k - 2.0 * np.pi)  # flips direction via negative scale
    return axis * k


def axisangle_to_matrix(v: np.ndarray) -> np.ndarray:
    """Exact Rodrigues rotation matrix of an axis-angle vector."""
    v = np.asarray(v, dtype=np.float64)
    theta = float(np.linalg.norm(v))
    K = np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )
    if theta < 1e-8:
        # second-order expansion, exact to machine precision at this scale
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def matrix_to_axisangle(R: np.ndarray) -> np.ndarray:
    """Log map of a rotation matrix, magnitude in [0, pi].

    The angle comes from atan2(|antisymmetric part|, (trace - 1) / 2), which
    stays well conditioned at both ends of the range, unlike an arccos of the
    trace.
    """
    R = np.asarray(R, dtype=np.float64)
    vee = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = float(np.linalg.norm(vee))  # |sin(theta)|
    c = (np.trace(R) - 1.0) / 2.0
    theta = float(np.arctan2(s, c))
    if theta < 1e-8:
        return vee  # equals axis*theta to first order
    if np.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; recover axis from R + I
        A = 0.5 * (R + np.eye(3))
        i = int(np.argmax(np.diag(A)))
        axis = np.zeros(3)
        axis[i] = np.sqrt(max(A[i, i], 0.0))
        for j in range(3):
            if j != i:
                axis[j] = A[i, j] / axis[i]
        axis = axis / np.linalg.norm(axis)
        # sign convention from the antisymmetric part when it is not exactly zero
        if np.dot(axis, vee) < 0.0:
            axis = -axis
        return axis * theta
    return vee / s * theta


# =============================================================================
# domain types
# =============================================================================


@dataclass
class ShapeParams:
    """10 shape coefficients, clamped to [-5, 5] on construction."""

    beta: np.ndarray = field(default_factory=lambda: np.zeros(BETA_DIM))

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        if beta.shape != (BETA_DIM,):
            raise ValueError(f"beta must have {BETA_DIM} entries, got shape {beta.shape}")
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta entries must be finite")
        self.beta = np.clip(beta, -BETA_CLAMP, BETA_CLAMP)


@dataclass
class Pose:
    """One person's pose: global orientation, 21 joint rotations, translation.

    Axis-angle components are wrapped to magnitude < pi on construction.
    """

    global_orient: np.ndarray = field(default_factory=lambda: np.zeros(3))
    joint_rotations: np.ndarray = field(default_factory=lambda: np.zeros((NUM_BODY_JOINTS, 3)))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        go = np.asarray(self.global_orient, dtype=np.float64).reshape(-1)
        jr = np.asarray(self.joint_rotations, dtype=np.float64).reshape(-1, 3)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if go.shape != (3,):
            raise ValueError("global_orient must have 3 entries")
        if jr.shape != (NUM_BODY_JOINTS, 3):
            raise ValueError(f"joint_rotations must be ({NUM_BODY_JOINTS}, 3), got {jr.shape}")
        if tr.shape != (3,):
            raise ValueError("translation must have 3 entries")
        if not (np.all(np.isfinite(go)) and np.all(np.isfinite(jr)) and np.all(np.isfinite(tr))):
            raise ValueError("pose entries must be finite")
        self.global_orient = wrap_axis_angle(go)
        self.joint_rotations = np.stack([wrap_axis_angle(r) for r in jr])
        self.translation = tr


def zero_pose() -> Pose:
    return Pose()


@dataclass
class KinematicTree:
    """Skeleton topology plus the affine shape-to-bone-length map.

    base_offsets[i] is joint i's offset in its parent frame at beta = 0; bone i
    (the segment parent(i) -> i) is scaled by 1 + (shape_basis @ beta)[i]. Row 0
    of base_offsets/shape_basis and proxy_radii[0] belong to the root and are
    unused.
    """

    joint_names: list[str]
    parents: np.ndarray  # (22,), parents[0] = -1
    base_offsets: np.ndarray  # (22, 3)
    shape_basis: np.ndarray  # (22, 10)
    proxy_radii: np.ndarray  # (22,)
    samples_per_bone: int = 3

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64).reshape(-1)
        self.base_offsets = np.asarray(self.base_offsets, dtype=np.float64).reshape(-1, 3)
        self.shape_basis = np.asarray(self.shape_basis, dtype=np.float64).reshape(-1, BETA_DIM)
        self.proxy_radii = np.asarray(self.proxy_radii, dtype=np.float64).reshape(-1)
        self.validate()

    def validate(self):
        n = len(self.joint_names)
        if n != NUM_JOINTS:
            raise ValueError(f"expected {NUM_JOINTS} joints, got {n}")
        if self.parents.shape != (n,) or self.parents[0] != -1:
            raise ValueError("parents must be length 22 with parents[0] = -1")
        for i in range(1, n):
            # walk to the root; bounded steps rule out cycles
            j, steps = i, 0
            while j != 0:
                j = int(self.parents[j])
                steps += 1
                if j < 0 or j >= n or steps > n:
                    raise ValueError(f"parents do not form a rooted tree at joint {i}")
        if self.base_offsets.shape != (n, 3) or self.shape_basis.shape != (n, BETA_DIM):
            raise ValueError("base_offsets/shape_basis have wrong shape")
        if self.proxy_radii.shape != (n,):
            raise ValueError("proxy_radii must have one entry per joint")
        norms = np.linalg.norm(self.base_offsets[1:], axis=1)
        if np.any(norms <= 0.0):
            raise ValueError("every non-root base offset must be nonzero")
        # bone lengths stay positive for any |beta| <= clamp
        row_l1 = np.abs(self.shape_basis[1:]).sum(axis=1)
        if np.any(row_l1 * BETA_CLAMP >= 1.0):
            raise ValueError("shape basis rows too large, lengths could reach zero")
        if np.any(self.proxy_radii[1:] <= 0.0):
            raise ValueError("proxy radii must be positive")
        if self.samples_per_bone < 2:
            raise ValueError("need at least 2 proxy samples per bone")


@dataclass
class BodyProxy:
    """Sphere set sampled along posed bones: centers (M, 3), radii (M,)."""

    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        if len(self.centers) == 0:
            raise ValueError("proxy must contain at least one sphere")
        if self.centers.shape[0] != self.radii.shape[0]:
            raise ValueError("centers and radii disagree in length")


class IkResult(NamedTuple):
    shape: ShapeParams
    residual: float  # norm of the bone-length residual at the solution
    degenerate: bool  # True when the basis was rank-deficient


# =============================================================================
# default skeleton
# =============================================================================

_JOINT_NAMES = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
]

_PARENTS = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19]

_BASE_OFFSETS = [
    [0.00, 0.00, 0.00],   # pelvis (root, unused)
    [0.09, -0.06, 0.00],  # left_hip
    [-0.09, -0.06, 0.00], # right_hip
    [0.00, 0.12, 0.00],   # spine1
    [0.00, -0.38, 0.00],  # left_knee
    [0.00, -0.38, 0.00],  # right_knee
    [0.00, 0.13, 0.00],   # spine2
    [0.00, -0.40, 0.00],  # left_ankle
    [0.00, -0.40, 0.00],  # right_ankle
    [0.00, 0.05, 0.00],   # spine3
    [0.00, -0.06, 0.12],  # left_foot
    [0.00, -0.06, 0.12],  # right_foot
    [0.00, 0.21, 0.00],   # neck
    [0.08, 0.12, 0.00],   # left_collar
    [-0.08, 0.12, 0.00],  # right_collar
    [0.00, 0.12, 0.00],   # head
    [0.10, 0.00, 0.00],   # left_shoulder
    [-0.10, 0.00, 0.00],  # right_shoulder
    [0.26, 0.00, 0.00],   # left_elbow
    [-0.26, 0.00, 0.00],  # right_elbow
    [0.25, 0.00, 0.00],   # left_wrist
    [-0.25, 0.00, 0.00],  # right_wrist
]

# anatomical coefficient groups; per-coefficient weight 0.02 keeps every row's
# L1 norm at <= 0.06, so scales stay in [0.7, 1.3] over the beta clamp range
_BASIS_GROUPS = {
    0: list(range(1, 22)),                    # overall stature
    1: [1, 2, 4, 5, 7, 8, 10, 11],            # legs
    2: [13, 14, 16, 17, 18, 19, 20, 21],      # arms
    3: [3, 6, 9, 12],                         # torso
    4: [12, 15],                              # neck and head
    5: [20],                                  # left forearm alone
    6: [13, 14, 16, 17],                      # shoulder girdle
    7: [7, 8],                                # lower legs
    8: [10, 11],                              # feet
    9: [21],                                  # right forearm alone
}

_DEFAULT_PROXY_RADIUS = 0.06


def default_tree() -> KinematicTree:
    basis = np.zeros((NUM_JOINTS, BETA_DIM))
    for coeff, joints in _BASIS_GROUPS.items():
        for j in joints:
            basis[j, coeff] += 0.02
    radii = np.full(NUM_JOINTS, _DEFAULT_PROXY_RADIUS)
    radii[0] = 0.0
    return KinematicTree(
        joint_names=list(_JOINT_NAMES),
        parents=np.array(_PARENTS),
        base_offsets=np.array(_BASE_OFFSETS),
        shape_basis=basis,
        proxy_radii=radii,
        samples_per_bone=3,
    )


# =============================================================================
# tree serialization
# =============================================================================


def tree_to_json(tree: KinematicTree) -> dict:
    return {
        "version": TREE_SCHEMA_VERSION,
        "joint_names": list(tree.joint_names),
        "parents": tree.parents.tolist(),
        "base_offsets": tree.base_offsets.tolist(),
        "shape_basis": tree.shape_basis.tolist(),
        "proxy_radii": tree.proxy_radii.tolist(),
        "samples_per_bone": tree.samples_per_bone,
    }


def tree_from_json(doc: dict) -> KinematicTree:
    if doc.get("version") != TREE_SCHEMA_VERSION:
        raise ValueError(f"unsupported tree schema version {doc.get('version')!r}")
    return KinematicTree(
        joint_names=list(doc["joint_names"]),
        parents=np.array(doc["parents"]),
        base_offsets=np.array(doc["base_offsets"]),
        shape_basis=np.array(doc["shape_basis"]),
        proxy_radii=np.array(doc["proxy_radii"]),
        samples_per_bone=int(doc.get("samples_per_bone", 3)),
    )


def save_tree(tree: KinematicTree, path: str | Path):
    Path(path).write_text(json.dumps(tree_to_json(tree), indent=1))


def load_tree(path: str | Path) -> KinematicTree:
    return tree_from_json(json.loads(Path(path).read_text()))


# =============================================================================
# kinematics
# =============================================================================


def bone_scales(shape: ShapeParams, tree: KinematicTree) -> np.ndarray:
    """Per-joint bone length scale, (22,); entry 0 is 1 and unused."""
    return 1.0 + tree.shape_basis @ shape.beta


def _fk_with_rotations(pose: Pose, shape: ShapeParams, tree: KinematicTree):
    scales = bone_scales(shape, tree)
    pos = np.zeros((NUM_JOINTS, 3))
    rot = np.zeros((NUM_JOINTS, 3, 3))
    pos[0] = pose.translation
    rot[0] = axisangle_to_matrix(pose.global_orient)
    for i in range(1, NUM_JOINTS):
        p = int(tree.parents[i])
        pos[i] = pos[p] + rot[p] @ (scales[i] * tree.base_offsets[i])
        rot[i] = rot[p] @ axisangle_to_matrix(pose.joint_rotations[i - 1])
    return pos, rot


def forward_kinematics(pose: Pose, shape: ShapeParams, tree: KinematicTree) -> np.ndarray:
    """World joint positions, (22, 3). Root position equals the translation."""
    if not isinstance(pose, Pose) or not isinstance(shape, ShapeParams):
        raise ValueError("forward_kinematics expects Pose and ShapeParams inputs")
    pos, _ = _fk_with_rotations(pose, shape, tree)
    return pos


def rest_pose_joints(shape: ShapeParams, tree: KinematicTree) -> np.ndarray:
    """Joint positions at the zero pose with zero translation."""
    return forward_kinematics(zero_pose(), shape, tree)


def bone_lengths(joints: np.ndarray, tree: KinematicTree) -> np.ndarray:
    """Parent-child distances, (21,), ordered by child joint index."""
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape != (NUM_JOINTS, 3):
        raise ValueError(f"joints must be ({NUM_JOINTS}, 3)")
    if not np.all(np.isfinite(joints)):
        raise ValueError("joints must be finite")
    child = joints[1:]
    parent = joints[tree.parents[1:]]
    return np.linalg.norm(child - parent, axis=1)


def shaped_bone_lengths(shape: ShapeParams, tree: KinematicTree) -> np.ndarray:
    """Bone lengths implied directly by the affine shape map, (21,)."""
    base = np.linalg.norm(tree.base_offsets[1:], axis=1)
    return base * bone_scales(shape, tree)[1:]


def inverse_kinematics_shape(rest_joints: np.ndarray, tree: KinematicTree) -> IkResult:
    """Least-squares shape recovery from rest-pose joint positions.

    Bone lengths are affine in beta: L = L0 * (1 + S beta). The solve is the
    minimum-norm least-squares solution of diag(L0) S beta = L - L0.
    """
    lengths = bone_lengths(rest_joints, tree)
    base = np.linalg.norm(tree.base_offsets[1:], axis=1)
    A = base[:, None] * tree.shape_basis[1:]
    b = lengths - base
    beta, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    residual = float(np.linalg.norm(A @ beta - b))
    return IkResult(ShapeParams(beta), residual, bool(rank < BETA_DIM))


# =============================================================================
# proxy geometry
# =============================================================================


def body_proxy(pose: Pose, shape: ShapeParams, tree: KinematicTree) -> BodyProxy:
    """Spheres sampled uniformly along each posed bone segment."""
    joints = forward_kinematics(pose, shape, tree)
    ts = np.linspace(0.0, 1.0, tree.samples_per_bone)
    starts = joints[tree.parents[1:]]  # (21, 3)
    ends = joints[1:]
    centers = starts[:, None, :] * (1.0 - ts)[None, :, None] + ends[:, None, :] * ts[None, :, None]
    radii = np.repeat(tree.proxy_radii[1:], tree.samples_per_bone)
    return BodyProxy(centers.reshape(-1, 3), radii)


def min_body_distance(a: BodyProxy, b: BodyProxy) -> float:
    """Smallest signed sphere-surface distance; negative means overlap.

    Exactly symmetric in its arguments: the center distances are even in the
    difference and the radius sum commutes.
    """
    d = np.linalg.norm(a.centers[:, None, :] - b.centers[None, :, :], axis=2)
    return float((d - (a.radii[:, None] + b.radii[None, :])).min())
