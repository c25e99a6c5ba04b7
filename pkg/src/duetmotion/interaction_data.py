"""Two-person motion data: sequences, interactive-frame detection, clip
extraction, canonicalization, synthetic data, and motion file I/O.

Motion file schema v1 (JSON):

    {
      "version": 1,
      "fps": float,
      "text": str (optional),
      "shape_a": [10 floats], "shape_b": [10 floats],
      "frames": [{"a": {"orient": [3], "rots": [63], "trans": [3]},
                  "b": {...}}, ...],
      "anchor_index": int (optional, clip files),
      "canonicalized": bool (optional, clip files),
      "meta": {"config_hash": str, "seed": int, "version": str} (optional)
    }

Floats are serialized with their shortest round-trip representation, so a
write/read cycle reproduces values bit-exactly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .body_model import (
    NUM_BODY_JOINTS,
    KinematicTree,
    Pose,
    ShapeParams,
    axisangle_to_matrix,
    body_proxy,
    default_tree,
    forward_kinematics,
    matrix_to_axisangle,
    min_body_distance,
)

MOTION_SCHEMA_VERSION = 1


class MotionFileError(ValueError):
    """Raised for malformed motion files, message names the offending field."""


# =============================================================================
# domain types
# =============================================================================


@dataclass
class MotionSequence:
    """Equal-length pose tracks for two persons plus their shapes."""

    poses_a: list[Pose]
    poses_b: list[Pose]
    shape_a: ShapeParams
    shape_b: ShapeParams
    fps: float
    text: str | None = None

    def __post_init__(self):
        if len(self.poses_a) != len(self.poses_b):
            raise ValueError("pose tracks must have equal length")
        if len(self.poses_a) < 2:
            raise ValueError("a motion sequence needs at least 2 frames")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        for track in (self.poses_a, self.poses_b):
            for p in track:
                if not isinstance(p, Pose):
                    raise ValueError("tracks must contain Pose instances")

    def __len__(self) -> int:
        return len(self.poses_a)


@dataclass
class InteractionClip:
    """A fixed-length window around an interactive pose at anchor_index."""

    sequence: MotionSequence
    anchor_index: int
    canonicalized: bool = False
    facing_degenerate: bool = False

    def __post_init__(self):
        if not 0 <= self.anchor_index < len(self.sequence):
            raise ValueError("anchor_index out of range")

    def __len__(self) -> int:
        return len(self.sequence)


@dataclass
class ExtractionConfig:
    contact_threshold: float = 0.013  # meters
    window_seconds: float = 3.0
    fps: float = 10.0

    def __post_init__(self):
        if not self.contact_threshold > 0:
            raise ValueError("contact_threshold must be positive")
        n = self.window_seconds * self.fps
        if not (n > 0 and abs(n - round(n)) < 1e-9):
            raise ValueError("window_seconds * fps must be a positive integer")

    @property
    def frames(self) -> int:
        return int(round(self.window_seconds * self.fps))


# =============================================================================
# pose vector packing (numpy side)
# =============================================================================

POSE_VEC_DIM = 3 + NUM_BODY_JOINTS * 3 + 3  # 69


def pose_to_vec(pose: Pose) -> np.ndarray:
    return np.concatenate([pose.global_orient, pose.joint_rotations.ravel(), pose.translation])


def vec_to_pose(vec: np.ndarray) -> Pose:
    vec = np.asarray(vec, dtype=np.float64).reshape(-1)
    if vec.shape != (POSE_VEC_DIM,):
        raise ValueError(f"pose vector must have {POSE_VEC_DIM} entries")
    return Pose(
        global_orient=vec[:3],
        joint_rotations=vec[3 : 3 + NUM_BODY_JOINTS * 3].reshape(NUM_BODY_JOINTS, 3),
        translation=vec[-3:],
    )


def sequence_to_array(seq: MotionSequence) -> np.ndarray:
    """Both tracks as one (2, N, 69) array."""
    a = np.stack([pose_to_vec(p) for p in seq.poses_a])
    b = np.stack([pose_to_vec(p) for p in seq.poses_b])
    return np.stack([a, b])


# =============================================================================
# detection and extraction
# =============================================================================


def frame_distance(seq: MotionSequence, i: int, tree: KinematicTree) -> float:
    pa = body_proxy(seq.poses_a[i], seq.shape_a, tree)
    pb = body_proxy(seq.poses_b[i], seq.shape_b, tree)
    return min_body_distance(pa, pb)


def detect_interactive_frames(
    seq: MotionSequence, cfg: ExtractionConfig, tree: KinematicTree | None = None
) -> list[int]:
    """Indices of frames whose minimum inter-body distance is below threshold."""
    tree = tree or default_tree()
    return [i for i in range(len(seq)) if frame_distance(seq, i, tree) < cfg.contact_threshold]


def _contact_runs(frames: list[int]) -> list[list[int]]:
    runs: list[list[int]] = []
    for f in frames:
        if runs and f == runs[-1][-1] + 1:
            runs[-1].append(f)
        else:
            runs.append([f])
    return runs


def extract_clips(
    seq: MotionSequence, cfg: ExtractionConfig, tree: KinematicTree | None = None
) -> list[InteractionClip]:
    """One clip per contact run, anchored on the run's median frame.

    The window is centered on the anchor and clamped to the sequence bounds,
    shifting the in-clip anchor index instead of padding.
    """
    tree = tree or default_tree()
    n = cfg.frames
    if len(seq) < n:
        warnings.warn(f"sequence of {len(seq)} frames is shorter than the {n}-frame window")
        return []
    clips = []
    for run in _contact_runs(detect_interactive_frames(seq, cfg, tree)):
        anchor = run[(len(run) - 1) // 2]  # lower median
        start = min(max(anchor - n // 2, 0), len(seq) - n)
        window = MotionSequence(
            poses_a=list(seq.poses_a[start : start + n]),
            poses_b=list(seq.poses_b[start : start + n]),
            shape_a=seq.shape_a,
            shape_b=seq.shape_b,
            fps=seq.fps,
            text=seq.text,
        )
        clip = InteractionClip(window, anchor - start)
        # contact invariant re-checked on the emitted clip
        assert frame_distance(window, clip.anchor_index, tree) < cfg.contact_threshold
        clips.append(clip)
    return clips


# =============================================================================
# canonicalization
# =============================================================================


def _rot_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _apply_rigid(pose: Pose, R: np.ndarray, center: np.ndarray) -> Pose:
    return Pose(
        global_orient=matrix_to_axisangle(R @ axisangle_to_matrix(pose.global_orient)),
        joint_rotations=pose.joint_rotations,
        translation=R @ (pose.translation - center),
    )


def canonicalize(clip: InteractionClip) -> InteractionClip:
    """Rotate about the vertical axis and translate horizontally so person-a's
    anchor root sits at the horizontal origin facing +Z.

    Facing is the horizontal projection of the root orientation's local +Z
    axis. One rigid transform is applied to both persons and every frame, so
    all inter-joint distances are preserved. A vertical forward axis leaves no
    defined facing; the rotation falls back to identity and the clip is
    flagged.
    """
    seq = clip.sequence
    anchor_a = seq.poses_a[clip.anchor_index]
    forward = axisangle_to_matrix(anchor_a.global_orient) @ np.array([0.0, 0.0, 1.0])
    horiz = np.array([forward[0], 0.0, forward[2]])
    degenerate = bool(np.linalg.norm(horiz) < 1e-8)
    if degenerate:
        R = np.eye(3)
    else:
        R = _rot_y(-np.arctan2(horiz[0], horiz[2]))
    center = np.array([anchor_a.translation[0], 0.0, anchor_a.translation[2]])
    moved = MotionSequence(
        poses_a=[_apply_rigid(p, R, center) for p in seq.poses_a],
        poses_b=[_apply_rigid(p, R, center) for p in seq.poses_b],
        shape_a=seq.shape_a,
        shape_b=seq.shape_b,
        fps=seq.fps,
        text=seq.text,
    )
    return InteractionClip(moved, clip.anchor_index, canonicalized=True, facing_degenerate=degenerate)


# =============================================================================
# synthetic dataset
# =============================================================================

ARCHETYPES = ("approach-touch-depart", "circle-and-clasp", "push-like-impulse")

_ROOT_Y = 0.95
_SWAY_AMPLITUDE = 0.15  # rad, shoulder swing outside the contact window
_SWAY_PERIOD = 20  # frames


@dataclass
class SynthParams:
    count: int = 8
    archetypes: tuple[str, ...] = ARCHETYPES
    noise_std: float = 0.02
    length: int = 90  # frames per sequence
    fps: float = 10.0
    contact_gap: float = 0.005  # surface gap at closest approach, < threshold
    beta_std: float = 0.5
    anchor_jitter: int = 5  # contact moment drawn in length/2 +- jitter

    def __post_init__(self):
        if self.count < 1 or self.length < 20:
            raise ValueError("need count >= 1 and length >= 20 frames")
        for a in self.archetypes:
            if a not in ARCHETYPES:
                raise ValueError(f"unknown archetype {a!r}")


def _reach_rotations(sway: float) -> np.ndarray:
    """Both arms raised forward; sway swings the shoulders symmetrically.

    Rotation about +Y by -pi/2 maps the left arm's +X direction onto +Z.
    """
    rots = np.zeros((NUM_BODY_JOINTS, 3))
    rots[15] = [0.0, -np.pi / 2 + sway, 0.0]  # left_shoulder (joint 16)
    rots[16] = [0.0, np.pi / 2 - sway, 0.0]  # right_shoulder (joint 17)
    return rots


def _contact_separation(shape: ShapeParams, tree: KinematicTree, gap: float) -> float:
    """Root separation at which the facing wrist spheres sit `gap` apart.

    Measured off FK at the origin: d = z(wrist_a_left) - z(wrist_b_right under
    a half-turn) + 2 r_wrist + gap.
    """
    rots = _reach_rotations(0.0)
    at_origin = Pose(joint_rotations=rots, translation=[0.0, _ROOT_Y, 0.0])
    turned = Pose(
        global_orient=[0.0, np.pi, 0.0], joint_rotations=rots, translation=[0.0, _ROOT_Y, 0.0]
    )
    z_a = forward_kinematics(at_origin, shape, tree)[20][2]  # left wrist
    z_b = forward_kinematics(turned, shape, tree)[21][2]  # right wrist, facing -Z
    return float(z_a - z_b) + 2.0 * float(tree.proxy_radii[20]) + gap


def _separation_profile(archetype: str, dt: float, d_c: float) -> float:
    """Root separation (m) as a function of time offset dt (s) from contact.

    approach-touch-depart:  d_c + 0.045 |dt|
    circle-and-clasp:       d_c + 0.25 (1 - cos(2 pi dt / 6))
    push-like-impulse:      d_c + 0.03 |dt| before contact, d_c + 0.8 dt after
    """
    if archetype == "approach-touch-depart":
        return d_c + 0.045 * abs(dt)
    if archetype == "circle-and-clasp":
        return d_c + 0.25 * (1.0 - np.cos(2.0 * np.pi * dt / 6.0))
    if archetype == "push-like-impulse":
        return d_c + (0.03 * -dt if dt < 0 else 0.8 * dt)
    raise ValueError(f"unknown archetype {archetype!r}")


def _heading_profile(archetype: str, dt: float) -> float:
    """Pair-axis heading (rad): the pair rotates at 0.5 rad/s while circling."""
    return 0.5 * dt if archetype == "circle-and-clasp" else 0.0


def _noise_envelope(frame: int, t_c: int) -> float:
    """Zero within 3 frames of contact, ramps to 1 by 8 frames out."""
    return float(np.clip((abs(frame - t_c) - 3) / 5.0, 0.0, 1.0))


def synth_sequence(
    archetype: str,
    params: SynthParams,
    rng: np.random.Generator,
    tree: KinematicTree | None = None,
) -> MotionSequence:
    tree = tree or default_tree()
    beta = rng.normal(scale=params.beta_std, size=10)
    shape = ShapeParams(beta)  # both persons share the shape
    t_c = params.length // 2 + int(rng.integers(-params.anchor_jitter, params.anchor_jitter + 1))
    d_c = _contact_separation(shape, tree, params.contact_gap)

    poses_a, poses_b = [], []
    for t in range(params.length):
        dt = (t - t_c) / params.fps
        d = _separation_profile(archetype, dt, d_c)
        alpha = _heading_profile(archetype, dt)
        u = np.array([np.sin(alpha), 0.0, np.cos(alpha)])
        w = _noise_envelope(t, t_c)
        sway = _SWAY_AMPLITUDE * np.sin(2.0 * np.pi * (t - t_c) / _SWAY_PERIOD) * w

        rots = _reach_rotations(sway)
        scale_r = params.noise_std * w
        scale_t = 0.5 * params.noise_std * w
        noise_ra = rng.normal(scale=scale_r, size=(NUM_BODY_JOINTS, 3)) if w > 0 else 0.0
        noise_rb = rng.normal(scale=scale_r, size=(NUM_BODY_JOINTS, 3)) if w > 0 else 0.0
        noise_ta = rng.normal(scale=scale_t, size=3) if w > 0 else 0.0
        noise_tb = rng.normal(scale=scale_t, size=3) if w > 0 else 0.0
        base = np.array([0.0, _ROOT_Y, 0.0])
        poses_a.append(
            Pose(
                global_orient=[0.0, alpha, 0.0],
                joint_rotations=rots + noise_ra,
                translation=base - 0.5 * d * u + noise_ta,
            )
        )
        poses_b.append(
            Pose(
                global_orient=[0.0, alpha + np.pi, 0.0],
                joint_rotations=rots + noise_rb,
                translation=base + 0.5 * d * u + noise_tb,
            )
        )
    return MotionSequence(poses_a, poses_b, shape, ShapeParams(beta.copy()), params.fps, archetype)


def synth_dataset(
    params: SynthParams, seed: int, tree: KinematicTree | None = None
) -> list[MotionSequence]:
    """Deterministic synthetic two-person sequences, one archetype tag each."""
    tree = tree or default_tree()
    children = np.random.SeedSequence(seed).spawn(params.count)
    out = []
    for i in range(params.count):
        rng = np.random.default_rng(children[i])
        archetype = params.archetypes[i % len(params.archetypes)]
        out.append(synth_sequence(archetype, params, rng, tree))
    return out


# =============================================================================
# file I/O
# =============================================================================


def _pose_doc(pose: Pose) -> dict:
    return {
        "orient": pose.global_orient.tolist(),
        "rots": pose.joint_rotations.ravel().tolist(),
        "trans": pose.translation.tolist(),
    }


def _floats(doc, n: int, where: str) -> np.ndarray:
    if not isinstance(doc, list) or len(doc) != n:
        raise MotionFileError(f"{where}: expected {n} floats")
    try:
        arr = np.array([float(x) for x in doc], dtype=np.float64)
    except (TypeError, ValueError):
        raise MotionFileError(f"{where}: expected {n} floats") from None
    if not np.all(np.isfinite(arr)):
        raise MotionFileError(f"{where}: non-finite value")
    return arr


def _parse_pose(doc, where: str) -> Pose:
    if not isinstance(doc, dict):
        raise MotionFileError(f"{where}: expected an object")
    for key in ("orient", "rots", "trans"):
        if key not in doc:
            raise MotionFileError(f"{where}.{key}: missing")
    extra = set(doc) - {"orient", "rots", "trans"}
    if extra:
        raise MotionFileError(f"{where}.{sorted(extra)[0]}: unknown field")
    return Pose(
        global_orient=_floats(doc["orient"], 3, f"{where}.orient"),
        joint_rotations=_floats(doc["rots"], NUM_BODY_JOINTS * 3, f"{where}.rots").reshape(-1, 3),
        translation=_floats(doc["trans"], 3, f"{where}.trans"),
    )


_KNOWN_MOTION_FIELDS = {
    "version", "fps", "text", "shape_a", "shape_b", "frames",
    "anchor_index", "canonicalized", "meta",
}


def _parse_motion_doc(doc: dict):
    if not isinstance(doc, dict):
        raise MotionFileError("root: expected an object")
    unknown = set(doc) - _KNOWN_MOTION_FIELDS
    if unknown:
        raise MotionFileError(f"{sorted(unknown)[0]}: unknown field")
    if doc.get("version") != MOTION_SCHEMA_VERSION:
        raise MotionFileError(f"version: unsupported value {doc.get('version')!r}")
    fps = doc.get("fps")
    if not isinstance(fps, (int, float)) or not fps > 0:
        raise MotionFileError("fps: must be a positive number")
    text = doc.get("text")
    if text is not None and not isinstance(text, str):
        raise MotionFileError("text: must be a string")
    shape_a = ShapeParams(_floats(doc.get("shape_a"), 10, "shape_a"))
    shape_b = ShapeParams(_floats(doc.get("shape_b"), 10, "shape_b"))
    frames = doc.get("frames")
    if not isinstance(frames, list) or not frames:
        raise MotionFileError("frames: expected a non-empty list")
    poses_a, poses_b = [], []
    for i, frame in enumerate(frames):
        if not isinstance(frame, dict) or set(frame) != {"a", "b"}:
            raise MotionFileError(f"frames[{i}]: expected exactly the fields 'a' and 'b'")
        poses_a.append(_parse_pose(frame["a"], f"frames[{i}].a"))
        poses_b.append(_parse_pose(frame["b"], f"frames[{i}].b"))
    return poses_a, poses_b, shape_a, shape_b, float(fps), text


def _motion_doc(
    poses_a, poses_b, shape_a, shape_b, fps, text, anchor_index=None, canonicalized=None, meta=None
) -> dict:
    doc: dict = {"version": MOTION_SCHEMA_VERSION, "fps": fps}
    if text is not None:
        doc["text"] = text
    doc["shape_a"] = shape_a.beta.tolist()
    doc["shape_b"] = shape_b.beta.tolist()
    doc["frames"] = [{"a": _pose_doc(a), "b": _pose_doc(b)} for a, b in zip(poses_a, poses_b)]
    if anchor_index is not None:
        doc["anchor_index"] = int(anchor_index)
    if canonicalized is not None:
        doc["canonicalized"] = bool(canonicalized)
    if meta is not None:
        doc["meta"] = meta
    return doc


def write_motion(path: str | Path, seq: MotionSequence, meta: dict | None = None):
    doc = _motion_doc(seq.poses_a, seq.poses_b, seq.shape_a, seq.shape_b, seq.fps, seq.text, meta=meta)
    Path(path).write_text(json.dumps(doc))


def read_motion(path: str | Path) -> MotionSequence:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise MotionFileError(f"invalid JSON: {e}") from None
    poses_a, poses_b, shape_a, shape_b, fps, text = _parse_motion_doc(doc)
    if len(poses_a) < 2:
        raise MotionFileError("frames: a motion needs at least 2 frames")
    return MotionSequence(poses_a, poses_b, shape_a, shape_b, fps, text)


def write_clip(path: str | Path, clip: InteractionClip, meta: dict | None = None):
    seq = clip.sequence
    doc = _motion_doc(
        seq.poses_a, seq.poses_b, seq.shape_a, seq.shape_b, seq.fps, seq.text,
        anchor_index=clip.anchor_index, canonicalized=clip.canonicalized, meta=meta,
    )
    Path(path).write_text(json.dumps(doc))


def read_clip(path: str | Path) -> InteractionClip:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise MotionFileError(f"invalid JSON: {e}") from None
    poses_a, poses_b, shape_a, shape_b, fps, text = _parse_motion_doc(doc)
    if "anchor_index" not in doc:
        raise MotionFileError("anchor_index: missing (not a clip file)")
    seq = MotionSequence(poses_a, poses_b, shape_a, shape_b, fps, text)
    return InteractionClip(seq, int(doc["anchor_index"]), bool(doc.get("canonicalized", False)))


def write_pose_pair(
    path: str | Path,
    pose_a: Pose,
    pose_b: Pose,
    shape_a: ShapeParams,
    shape_b: ShapeParams,
    text: str | None = None,
    meta: dict | None = None,
):
    """Single interactive pose pair, stored as a 1-frame motion document."""
    doc = _motion_doc([pose_a], [pose_b], shape_a, shape_b, 10.0, text, meta=meta)
    Path(path).write_text(json.dumps(doc))


def read_pose_pair(path: str | Path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise MotionFileError(f"invalid JSON: {e}") from None
    poses_a, poses_b, shape_a, shape_b, _, text = _parse_motion_doc(doc)
    if len(poses_a) != 1:
        raise MotionFileError("frames: a pose pair file must contain exactly 1 frame")
    return poses_a[0], poses_b[0], shape_a, shape_b, text
