"""Interactive-pose animator.

Generates a two-person motion window around one interactive pose pair. The
diffusion target is the pose-parameter residual against that anchor, scaled
to roughly unit variance, so the anchor frame is exactly zero in latent space
and imputation reduces to zeroing the anchor frame of the iterate. The network
sees the imputed scaled residual plus the anchor, the one-hot timing mask as
an extra feature channel, and the anchor FK joints through the conditioning
embedding. The anchor index is free at inference: I = 0 predicts the future of
the interaction, I = N-1 the past, anything between both directions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import torch
from torch import nn

from .body_model import KinematicTree, Pose, ShapeParams, default_tree
from .denoiser_net import MotionDenoiser, NetConfig, build_denoiser
from .diffusion_core import DdimConfig, NoiseSchedule, cosine_schedule, ddim_sample, forward_noise
from .interaction_data import (
    InteractionClip,
    MotionSequence,
    pose_to_vec,
    sequence_to_array,
    vec_to_pose,
)
from .kinematics_torch import POSE_DIM, axisangle_to_matrix_torch, forward_kinematics_torch

CHECKPOINT_VERSION = 1

# raw residual std is around 0.2; a power of two keeps decode exact
RESIDUAL_SCALE = 4.0


@dataclass
class AnimatorLossWeights:
    lambda_diff: float = 1.0
    lambda_pose: float = 1.0
    lambda_inter: float = 0.5
    lambda_vel: float = 1.0
    contact_threshold: float = 0.10  # GT pair distance activating the hinge, meters

    def __post_init__(self):
        vals = (self.lambda_diff, self.lambda_pose, self.lambda_inter, self.lambda_vel)
        if any(v < 0 for v in vals) or self.contact_threshold <= 0:
            raise ValueError("loss weights must be non-negative, threshold positive")


@dataclass
class AnimatorConfig:
    num_frames: int = 30
    fps: float = 10.0
    diffusion_steps: int = 1000
    ddim_steps: int = 50
    latent_dim: int = 128
    num_layers: int = 4
    num_heads: int = 8
    lr: float = 1e-4
    weight_decay: float = 2e-5
    batch_size: int = 16
    train_steps: int = 500
    anchor_noise_std: float = 0.02
    reanchor: bool = True
    top_t_frac: float = 0.1
    divergence_factor: float = 1e3
    weights: AnimatorLossWeights = field(default_factory=AnimatorLossWeights)

    def __post_init__(self):
        if self.num_frames < 2:
            raise ValueError("num_frames must be at least 2")
        if not 0.0 <= self.top_t_frac <= 1.0:
            raise ValueError("top_t_frac must lie in [0, 1]")
        if isinstance(self.weights, dict):
            self.weights = AnimatorLossWeights(**self.weights)

    def net_config(self) -> NetConfig:
        # +1 token feature for the one-hot timing mask channel
        return NetConfig(
            token_dim=POSE_DIM + 1,
            out_dim=POSE_DIM,
            cond_dim=2 * 22 * 3,
            latent_dim=self.latent_dim,
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            temporal=True,
            cond_token=True,
        )


@dataclass
class AnimatorTarget:
    """One training clip in residual space: z0[:, I] == 0, mask one-hot at I."""

    residuals: torch.Tensor  # (2, N, 69)
    anchor: torch.Tensor  # (2, 69)
    shapes: torch.Tensor  # (2, 10)
    index: int
    mask: torch.Tensor  # (N,), one-hot

    def __post_init__(self):
        n = self.residuals.shape[1]
        if self.residuals.shape != (2, n, POSE_DIM):
            raise ValueError("residuals must be (2, N, 69)")
        if not (0 <= self.index < n):
            raise ValueError("anchor index out of range")
        if not torch.equal(self.residuals[:, self.index], torch.zeros(2, POSE_DIM, dtype=self.residuals.dtype)):
            raise ValueError("residual at the anchor frame must be exactly zero")
        _check_one_hot(self.mask, self.index)


def _check_one_hot(mask: torch.Tensor, index: int | None = None):
    if mask.ndim != 1 or not torch.equal(mask, (mask == 1.0).to(mask.dtype)) or float(mask.sum()) != 1.0:
        raise ValueError("mask must be one-hot over frames")
    if index is not None and float(mask[index]) != 1.0:
        raise ValueError("mask must be hot at the anchor index")


def encode_residual(clip: InteractionClip) -> AnimatorTarget:
    """Clip -> residual target. Subtraction makes frame I exactly zero.

    Residuals are scaled by RESIDUAL_SCALE so the diffusion target has
    roughly unit variance; raw pose deltas sit around 0.2 and would drown
    under the unit forward noise for most of the schedule.
    """
    arr = torch.from_numpy(sequence_to_array(clip.sequence))  # (2, N, 69) float64
    anchor = arr[:, clip.anchor_index].clone()
    residuals = RESIDUAL_SCALE * (arr - anchor[:, None])
    n = arr.shape[1]
    mask = torch.zeros(n, dtype=torch.float64)
    mask[clip.anchor_index] = 1.0
    shapes = torch.stack(
        [torch.from_numpy(clip.sequence.shape_a.beta), torch.from_numpy(clip.sequence.shape_b.beta)]
    )
    return AnimatorTarget(residuals, anchor, shapes, clip.anchor_index, mask)


def decode_residual(z0_hat: torch.Tensor, anchor: torch.Tensor) -> tuple[list[Pose], list[Pose]]:
    """Scaled residuals (2, N, 69) + anchor (2, 69) -> two pose tracks.

    Addition is componentwise; axis-angle entries are re-wrapped below pi by
    Pose construction, which leaves already-wrapped values untouched bit for
    bit, so the anchor frame survives a zero residual exactly. The scale is a
    power of two, so dividing it back out is exact and the encode round trip
    reproduces every frame bit for bit.
    """
    vecs = (z0_hat / RESIDUAL_SCALE + anchor[:, None]).detach().cpu().numpy().astype("float64")
    return (
        [vec_to_pose(v) for v in vecs[0]],
        [vec_to_pose(v) for v in vecs[1]],
    )


def impute(z_t: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Zero the anchor frame of the iterate: z~ = (1 - m) * z along frames.

    z_t is (..., 2, N, 69) with the mask over N. After adding the anchor the
    network sees exactly x_I at the imputed frame.
    """
    if mask.ndim == 1:
        _check_one_hot(mask)
        m = mask.reshape(*([1] * (z_t.ndim - 2)), -1, 1)
    else:  # (B, N) batched
        for row in mask:
            _check_one_hot(row)
        m = mask[:, None, :, None]
    return (1.0 - m.to(z_t.dtype)) * z_t


def encode_animator_condition(
    anchor: torch.Tensor, shapes: torch.Tensor, mask: torch.Tensor, tree: KinematicTree | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Anchor conditioning: per-frame mask feature plus flattened FK joints.

    anchor (B, 2, 69), shapes (B, 2, 10), mask (B, N). Returns the mask token
    channel (B, 2, N, 1) and j_I (B, 132); the single-layer map to the latent
    width is the denoiser's condition projection.
    """
    tree = tree or default_tree()
    b, n = mask.shape
    feat = mask[:, None, :, None].expand(b, 2, n, 1).to(anchor.dtype)
    joints = forward_kinematics_torch(anchor, shapes, tree)  # (B, 2, 22, 3)
    return feat, joints.reshape(b, -1)


class AnimatorModel(nn.Module):
    def __init__(self, cfg: AnimatorConfig, rng: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        self.tree = default_tree()
        if rng is None:
            self.denoiser = MotionDenoiser(cfg.net_config())
        else:
            self.denoiser = build_denoiser(cfg.net_config(), rng)
        # anchors from one dataset spread over a tiny sliver of pose space, so
        # the condition is standardized before it reaches the net; identity
        # stats keep untrained models and unit fixtures unaffected
        self.register_buffer("cond_mean", torch.zeros(2 * 22 * 3))
        self.register_buffer("cond_std", torch.ones(2 * 22 * 3))

    @torch.no_grad()
    def set_cond_stats(self, anchors: torch.Tensor, shapes: torch.Tensor) -> None:
        """Fit the condition whitening to candidate anchors (K, 2, 69), (K, 2, 10)."""
        mask = torch.zeros(anchors.shape[0], 1)
        mask[:, 0] = 1.0
        _, j_flat = encode_animator_condition(anchors, shapes, mask, self.tree)
        self.cond_mean.copy_(j_flat.mean(dim=0))
        self.cond_std.copy_(j_flat.std(dim=0).clamp_min(1e-4))

    def forward(
        self,
        z_t: torch.Tensor,  # (B, 2, N, 69)
        t: torch.Tensor,  # (B,)
        anchor: torch.Tensor,  # (B, 2, 69) conditioning anchor (maybe augmented)
        shapes: torch.Tensor,  # (B, 2, 10)
        mask: torch.Tensor,  # (B, N)
    ) -> torch.Tensor:
        z_tilde = impute(z_t, mask)
        x_in = z_tilde + anchor[:, :, None, :]
        feat, j_flat = encode_animator_condition(anchor, shapes, mask, self.tree)
        cond = (j_flat - self.cond_mean) / self.cond_std
        tokens = torch.cat([x_in, feat], dim=-1)
        return self.denoiser(tokens, t, cond)


@dataclass
class AnimatorBatch:
    residuals: torch.Tensor  # (B, 2, N, 69) clean targets
    anchor: torch.Tensor  # (B, 2, 69) clean anchors (supervision side)
    cond_anchor: torch.Tensor  # (B, 2, 69) network-side anchors (maybe augmented)
    shapes: torch.Tensor  # (B, 2, 10)
    mask: torch.Tensor  # (B, N)


def collate_targets(targets: Sequence[AnimatorTarget], dtype=torch.float32) -> AnimatorBatch:
    if not targets:
        raise ValueError("empty batch")
    res = torch.stack([t.residuals for t in targets]).to(dtype)
    anc = torch.stack([t.anchor for t in targets]).to(dtype)
    shp = torch.stack([t.shapes for t in targets]).to(dtype)
    msk = torch.stack([t.mask for t in targets]).to(dtype)
    return AnimatorBatch(res, anc, anc.clone(), shp, msk)


def reanchor_batch(batch: AnimatorBatch, new_index: torch.Tensor) -> AnimatorBatch:
    """Move each element's anchor to new_index, keeping the pose track fixed.

    Residual algebra: poses = z0 / s + a, so z0' = s (z0 / s + a - poses[new])
    and the anchor frame of z0' is exactly zero again.
    """
    b, _, n, _ = batch.residuals.shape
    if new_index.shape != (b,):
        raise ValueError("need one index per batch element")
    poses = batch.residuals / RESIDUAL_SCALE + batch.anchor[:, :, None, :]
    idx = new_index.long().reshape(b, 1, 1, 1).expand(b, 2, 1, POSE_DIM)
    new_anchor = poses.gather(2, idx).squeeze(2)  # (B, 2, 69)
    residuals = RESIDUAL_SCALE * (poses - new_anchor[:, :, None, :])
    residuals.scatter_(2, idx, 0.0)  # exact zero at the new anchor frame
    mask = torch.zeros(b, n, dtype=batch.mask.dtype)
    mask[torch.arange(b), new_index.long()] = 1.0
    return AnimatorBatch(residuals, new_anchor, new_anchor.clone(), batch.shapes, mask)


def augment_anchor(anchor: torch.Tensor, rng: torch.Generator, scale: float = 0.02) -> torch.Tensor:
    """Gaussian conditioning noise on the anchor parameters, supervision untouched."""
    noise = torch.randn(anchor.shape, generator=rng, dtype=anchor.dtype)
    return anchor + scale * noise


def _cross_person_distances(joints: torch.Tensor) -> torch.Tensor:
    # joints (B, 2, N, 22, 3) -> pairwise person-a x person-b distances (B, N, 22, 22)
    diff = joints[:, 0, :, :, None, :] - joints[:, 1, :, None, :, :]
    return torch.sqrt((diff**2).sum(-1).clamp_min(1e-12))


def _relative_root_rotation(poses: torch.Tensor) -> torch.Tensor:
    # poses (B, 2, N, 69) -> R(phi_a)^T R(phi_b) per frame, (B, N, 3, 3)
    rot = axisangle_to_matrix_torch(poses[..., :3])
    return rot[:, 0].transpose(-1, -2) @ rot[:, 1]


def animator_loss(
    batch: AnimatorBatch,
    model,
    schedule: NoiseSchedule,
    weights: AnimatorLossWeights,
    rng: torch.Generator,
    tree: KinematicTree | None = None,
    t: torch.Tensor | None = None,
) -> tuple[torch.Tensor, dict]:
    """Composite training objective, returns (total, per-component floats).

    diff: squared L2 on residuals. pose: squared L2 on the decoded sequence
    against the clean poses (decoded with the clean anchor even when the
    conditioning anchor is augmented). inter: hinge on predicted cross-person
    joint distances exceeding ground truth, averaged over GT pairs within the
    contact threshold, plus squared L2 on the relative root rotation. vel:
    squared L2 on first finite differences. t defaults to a uniform draw.
    """
    z0 = batch.residuals
    b, _, n, _ = z0.shape
    if t is None:
        t = torch.randint(0, schedule.T + 1, (b,), generator=rng)
    eps = torch.randn(z0.shape, generator=rng, dtype=z0.dtype)
    z_t = forward_noise(z0, t, eps, schedule)
    z0_hat = model(z_t, t, batch.cond_anchor, batch.shapes, batch.mask)
    if not torch.isfinite(z0_hat).all():
        raise FloatingPointError("denoiser produced non-finite residuals")

    l_diff = ((z0 - z0_hat) ** 2).mean()

    poses_gt = z0 / RESIDUAL_SCALE + batch.anchor[:, :, None, :]
    poses_hat = z0_hat / RESIDUAL_SCALE + batch.anchor[:, :, None, :]
    l_pose = ((poses_hat - poses_gt) ** 2).mean()

    l_vel = (
        ((poses_hat[:, :, 1:] - poses_hat[:, :, :-1]) - (poses_gt[:, :, 1:] - poses_gt[:, :, :-1])) ** 2
    ).mean() if n > 1 else torch.zeros(())

    tree = tree or default_tree()
    beta = batch.shapes[:, :, None, :].expand(b, 2, n, 10)
    joints_gt = forward_kinematics_torch(poses_gt, beta, tree)
    joints_hat = forward_kinematics_torch(poses_hat, beta, tree)
    d_gt = _cross_person_distances(joints_gt)
    d_hat = _cross_person_distances(joints_hat)
    active = (d_gt < weights.contact_threshold).to(z0.dtype)
    n_active = active.sum()
    hinge = torch.relu(d_hat - d_gt) * active
    l_contact = (hinge**2).sum() / n_active.clamp_min(1.0)

    r_gt = _relative_root_rotation(poses_gt)
    r_hat = _relative_root_rotation(poses_hat)
    l_orient = ((r_hat - r_gt) ** 2).mean()
    l_inter = l_contact + l_orient

    total = (
        weights.lambda_diff * l_diff
        + weights.lambda_pose * l_pose
        + weights.lambda_inter * l_inter
        + weights.lambda_vel * l_vel
    )
    if not torch.isfinite(total):
        raise FloatingPointError("non-finite training loss")
    components = {
        "diff": float(l_diff.detach()),
        "pose": float(l_pose.detach()),
        "inter": float(l_inter.detach()),
        "contact": float(l_contact.detach()),
        "orient": float(l_orient.detach()),
        "vel": float(l_vel.detach()),
        "total": float(total.detach()),
    }
    return total, components


def train_animator(
    clips: Sequence[InteractionClip],
    cfg: AnimatorConfig,
    rng: torch.Generator,
    log_every: int = 0,
) -> dict:
    """Fit the animator on a clip set; returns a self-describing checkpoint.

    With reanchor set, every step resamples the anchor index uniformly per
    element so timing control stays in-distribution; off, each clip keeps its
    native anchor, which concentrates the budget for small overfit runs. The
    conditioning anchor is noised while supervision stays on the clean track.
    top_t_frac of each batch trains at exactly t = T, the only level the
    sampler is guaranteed to visit and one a uniform draw almost never hits.
    The learning rate follows cosine annealing to lr/100. Aborts when the
    loss exceeds divergence_factor times the initial value.
    """
    if not clips:
        raise ValueError("empty training dataset")
    targets = [encode_residual(c) for c in clips]
    if any(t.residuals.shape[1] != cfg.num_frames for t in targets):
        raise ValueError("all clips must have num_frames frames")
    base = collate_targets(targets)
    schedule = cosine_schedule(cfg.diffusion_steps)
    model = AnimatorModel(cfg, rng)
    poses = base.residuals / RESIDUAL_SCALE + base.anchor[:, :, None, :]
    model.set_cond_stats(
        poses.permute(0, 2, 1, 3).reshape(-1, 2, POSE_DIM),
        base.shapes[:, None].expand(-1, cfg.num_frames, 2, 10).reshape(-1, 2, 10),
    )
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    lr_sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=cfg.train_steps, eta_min=cfg.lr * 0.01
    )

    m = base.residuals.shape[0]
    curve: list[dict] = []
    initial = None
    for step in range(cfg.train_steps):
        idx = torch.randint(0, m, (min(cfg.batch_size, m),), generator=rng)
        sub = AnimatorBatch(
            base.residuals[idx], base.anchor[idx], base.anchor[idx].clone(),
            base.shapes[idx], base.mask[idx],
        )
        if cfg.reanchor:
            new_i = torch.randint(0, cfg.num_frames, (idx.shape[0],), generator=rng)
            sub = reanchor_batch(sub, new_i)
        sub.cond_anchor = augment_anchor(sub.anchor, rng, cfg.anchor_noise_std)
        t = torch.randint(0, schedule.T + 1, (idx.shape[0],), generator=rng)
        top = torch.rand(idx.shape[0], generator=rng) < cfg.top_t_frac
        t = torch.where(top, torch.full_like(t, schedule.T), t)
        total, comps = animator_loss(sub, model, schedule, cfg.weights, rng, t=t)
        if initial is None:
            initial = comps["total"]
        # the floor keeps a perfect (all-zero-loss) start from hair-triggering
        if comps["total"] > cfg.divergence_factor * max(initial, 1e-8):
            raise RuntimeError(
                f"training diverged at step {step}: loss {comps['total']:.4g} vs "
                f"initial {initial:.4g} (components {comps})"
            )
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()
        lr_sched.step()
        curve.append({"step": step, **comps})
        if log_every and step % log_every == 0:
            print(f"step {step:6d}  total {comps['total']:.5f}  diff {comps['diff']:.5f}")

    return {
        "kind": "animator",
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "state_dict": model.state_dict(),
        "loss_curve": curve,
        "initial_loss": initial,
        "final_loss": curve[-1]["total"] if curve else None,
    }


def load_animator(checkpoint: dict) -> AnimatorModel:
    if checkpoint.get("kind") != "animator":
        raise ValueError(f"not an animator checkpoint: kind={checkpoint.get('kind')!r}")
    if checkpoint.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {checkpoint.get('version')!r}")
    cfg = AnimatorConfig(**checkpoint["config"])
    model = AnimatorModel(cfg)
    model.load_state_dict(checkpoint["state_dict"])
    model.eval()
    return model


def save_checkpoint(path, checkpoint: dict):
    torch.save(checkpoint, path)


def load_checkpoint(path) -> dict:
    return torch.load(path, weights_only=False)


@torch.no_grad()
def animate(
    anchor_poses: tuple[Pose, Pose],
    shapes: tuple[ShapeParams, ShapeParams],
    index: int,
    num_frames: int,
    model: AnimatorModel,
    rng: torch.Generator,
    eta: float = 0.0,
) -> MotionSequence:
    """Sample a motion window holding the anchor pair at the given frame.

    The imputer zeroes the anchor frame of the residual iterate at every DDIM
    step and once at the end, so that frame decodes to the anchor up to the
    float32 cast. The output pastes the caller's anchor poses there outright:
    the decode path would re-quantize them and, for orientations sitting on
    the pi boundary, flip to the equivalent negative-axis chart.
    """
    if not (0 <= index < num_frames):
        raise ValueError(f"anchor index {index} outside [0, {num_frames})")
    if num_frames < 2:
        raise ValueError("num_frames must be at least 2")
    cfg = model.cfg
    anchor = torch.stack(
        [torch.from_numpy(pose_to_vec(p)) for p in anchor_poses]
    ).to(torch.float32)[None]  # (1, 2, 69)
    shp = torch.stack(
        [torch.from_numpy(s.beta) for s in shapes]
    ).to(torch.float32)[None]
    mask = torch.zeros(1, num_frames)
    mask[0, index] = 1.0

    def imputer(z, t):
        z = z.clone()
        z[:, :, index, :] = 0.0
        return z

    schedule = cosine_schedule(cfg.diffusion_steps)
    z = ddim_sample(
        lambda z_t, t, c: model(z_t, t, anchor, shp, mask),
        None,
        (1, 2, num_frames, POSE_DIM),
        schedule,
        DdimConfig(cfg.ddim_steps, eta),
        rng,
        imputer=imputer,
    )
    track_a, track_b = decode_residual(z[0], anchor[0])
    track_a[index], track_b[index] = anchor_poses
    return MotionSequence(track_a, track_b, shapes[0], shapes[1], cfg.fps)


@torch.no_grad()
def chain_long_motion(
    anchor_poses: tuple[Pose, Pose],
    shapes: tuple[ShapeParams, ShapeParams],
    segments: int,
    model: AnimatorModel,
    rng: torch.Generator,
) -> MotionSequence:
    """Sliding-window synthesis: each segment restarts from the previous end.

    Every segment runs with I = 0, so its first frame equals its anchor and
    duplicates the previous segment's last frame; duplicates are dropped,
    giving segments*N - (segments - 1) frames total.
    """
    if segments < 1:
        raise ValueError("segments must be at least 1")
    n = model.cfg.num_frames
    seq = animate(anchor_poses, shapes, 0, n, model, rng)
    track_a, track_b = list(seq.poses_a), list(seq.poses_b)
    for _ in range(segments - 1):
        nxt = animate((track_a[-1], track_b[-1]), shapes, 0, n, model, rng)
        track_a.extend(nxt.poses_a[1:])
        track_b.extend(nxt.poses_b[1:])
    return MotionSequence(track_a, track_b, shapes[0], shapes[1], model.cfg.fps)
