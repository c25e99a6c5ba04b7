"""Interactive-pose generator.

Samples a close-proximity pose pair with both body shapes in one shot. The
diffusion target per person is the pose vector concatenated with the rest-pose
joint positions, on a single-frame token grid, so the denoiser runs without
temporal attention. Conditioning is a pair of independent scalar gates: m_a
swaps person a's noisy tokens for the given clean ones before every denoiser
call, m_c gates a text embedding. One checkpoint therefore serves text-to-pair,
pose-to-partner, both, and unconstrained generation. Shapes come back out of
the sampled rest joints via least-squares IK.

The text pathway is a deterministic hashed bag-of-tokens base vector (any
pretrained sentence encoder can be swapped in through the same call) followed
by two trainable attention layers.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .body_model import (
    IkResult,
    KinematicTree,
    Pose,
    ShapeParams,
    default_tree,
    inverse_kinematics_shape,
    rest_pose_joints,
)
from .denoiser_net import MotionDenoiser, NetConfig, init_params_
from .diffusion_core import DdimConfig, NoiseSchedule, cosine_schedule, ddim_sample, forward_noise
from .interaction_data import InteractionClip, pose_to_vec, vec_to_pose
from .kinematics_torch import POSE_DIM, bone_lengths_torch

TEXT_DIM = 512
REST_DIM = 22 * 3
TOKEN_DIM = POSE_DIM + REST_DIM  # 135
CHECKPOINT_VERSION = 1


@dataclass
class GeneratorLossWeights:
    lambda_diff: float = 1.0
    lambda_pose: float = 1.0
    lambda_bone: float = 1.0

    def __post_init__(self):
        if min(self.lambda_diff, self.lambda_pose, self.lambda_bone) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class GeneratorConfig:
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
    p_text: float = 0.8  # probability the text condition is kept
    p_pose: float = 0.2  # probability the pose condition is kept
    divergence_factor: float = 1e3
    weights: GeneratorLossWeights = field(default_factory=GeneratorLossWeights)

    def __post_init__(self):
        if not (0 <= self.p_text <= 1 and 0 <= self.p_pose <= 1):
            raise ValueError("mask probabilities must be in [0, 1]")
        if isinstance(self.weights, dict):
            self.weights = GeneratorLossWeights(**self.weights)

    def net_config(self) -> NetConfig:
        return NetConfig(
            token_dim=TOKEN_DIM,
            out_dim=TOKEN_DIM,
            cond_dim=TEXT_DIM,
            latent_dim=self.latent_dim,
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            temporal=False,
        )


@dataclass
class GeneratorTarget:
    """One pose pair: per-person [pose params | flattened rest joints]."""

    z0: torch.Tensor  # (2, 1, 135)
    text: str | None = None

    def __post_init__(self):
        if self.z0.shape != (2, 1, TOKEN_DIM):
            raise ValueError(f"z0 must be (2, 1, {TOKEN_DIM})")

    @property
    def pose_slice(self) -> torch.Tensor:
        return self.z0[..., :POSE_DIM]

    @property
    def rest_slice(self) -> torch.Tensor:
        return self.z0[..., POSE_DIM:]


def person_token(pose: Pose, shape: ShapeParams, tree: KinematicTree | None = None) -> torch.Tensor:
    tree = tree or default_tree()
    vec = np.concatenate([pose_to_vec(pose), rest_pose_joints(shape, tree).ravel()])
    return torch.from_numpy(vec)


def encode_generator_target(
    pose_a: Pose, pose_b: Pose, shape_a: ShapeParams, shape_b: ShapeParams,
    text: str | None = None, tree: KinematicTree | None = None,
) -> GeneratorTarget:
    z0 = torch.stack([person_token(pose_a, shape_a, tree), person_token(pose_b, shape_b, tree)])
    return GeneratorTarget(z0[:, None, :], text)


def targets_from_clips(clips: Sequence[InteractionClip]) -> list[GeneratorTarget]:
    """Anchor pose pairs of clips as generator training targets."""
    out = []
    for clip in clips:
        seq = clip.sequence
        i = clip.anchor_index
        out.append(encode_generator_target(
            seq.poses_a[i], seq.poses_b[i], seq.shape_a, seq.shape_b, seq.text
        ))
    return out


def compose_generator_input(z_t: torch.Tensor, z0_a: torch.Tensor, m_a: torch.Tensor) -> torch.Tensor:
    """Swap person a's tokens for the clean condition where the gate is on.

    z_t (B, 2, 1, D), z0_a (B, 1, D), m_a (B,) in {0, 1}. Replacement is exact:
    gated elements carry the condition bit for bit.
    """
    if z0_a.shape != (z_t.shape[0], z_t.shape[2], z_t.shape[3]):
        raise ValueError("condition tokens must match person-a token shape")
    keep = m_a.reshape(-1, 1, 1) > 0.5
    person_a = torch.where(keep, z0_a, z_t[:, 0])
    return torch.stack([person_a, z_t[:, 1]], dim=1)


# =============================================================================
# text pathway
# =============================================================================


def tokenize(prompt: str) -> list[str]:
    out, word = [], []
    for ch in prompt.lower():
        if ch.isalnum():
            word.append(ch)
        elif word:
            out.append("".join(word))
            word = []
    if word:
        out.append("".join(word))
    return out


def hashed_bag_embedding(prompt: str, dim: int = TEXT_DIM) -> torch.Tensor:
    """Deterministic order-invariant base embedding: mean of per-token hashes.

    Each token seeds a Gaussian vector through its blake2b digest, and the
    accumulation runs in sorted token order, so equal bags of words give
    bit-equal embeddings regardless of word order. Empty prompts map to the
    zero vector.
    """
    tokens = tokenize(prompt)
    if not tokens:
        return torch.zeros(dim, dtype=torch.float64)
    acc = np.zeros(dim)
    for tok in sorted(tokens):
        seed = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8).digest(), "big")
        acc += np.random.default_rng(np.random.SeedSequence(seed)).standard_normal(dim)
    return torch.from_numpy(acc / len(tokens))


class TextEncoder(nn.Module):
    """Two trainable attention layers over the hashed base embedding."""

    def __init__(self, dim: int = TEXT_DIM, heads: int = 8):
        super().__init__()
        layer = lambda: nn.TransformerEncoderLayer(
            d_model=dim, nhead=heads, dim_feedforward=2 * dim,
            dropout=0.0, batch_first=True,
        )
        self.layers = nn.ModuleList([layer(), layer()])

    def forward(self, base: torch.Tensor) -> torch.Tensor:  # (B, dim) -> (B, dim)
        h = base[:, None, :]
        for layer in self.layers:
            h = layer(h)
        return h[:, 0]


# =============================================================================
# model
# =============================================================================


class GeneratorModel(nn.Module):
    def __init__(self, cfg: GeneratorConfig, rng: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        self.tree = default_tree()
        self.denoiser = MotionDenoiser(cfg.net_config())
        self.text_encoder = TextEncoder(TEXT_DIM, cfg.num_heads)
        if rng is not None:
            init_params_(self, rng)

    def encode_text(self, prompts: Sequence[str | None]) -> torch.Tensor:
        """Prompt batch -> condition vectors; empty or missing text is zero."""
        dtype = self.denoiser.in_proj.weight.dtype
        bases = [hashed_bag_embedding(p or "") for p in prompts]
        base = torch.stack(bases).to(dtype)
        nonempty = torch.tensor([bool(tokenize(p or "")) for p in prompts])
        enc = self.text_encoder(base)
        return torch.where(nonempty[:, None], enc, torch.zeros_like(enc))

    def forward(
        self,
        z_t: torch.Tensor,  # (B, 2, 1, 135)
        t: torch.Tensor,
        z0_a: torch.Tensor,  # (B, 1, 135) clean person-a tokens
        m_a: torch.Tensor,  # (B,)
        cond: torch.Tensor,  # (B, 512) already gated text condition
    ) -> torch.Tensor:
        composed = compose_generator_input(z_t, z0_a, m_a)
        return self.denoiser(composed, t, cond)


# =============================================================================
# loss and training
# =============================================================================


@dataclass
class GeneratorBatch:
    z0: torch.Tensor  # (B, 2, 1, 135)
    texts: list[str | None]


def collate_generator_targets(targets: Sequence[GeneratorTarget], dtype=torch.float32) -> GeneratorBatch:
    if not targets:
        raise ValueError("empty batch")
    return GeneratorBatch(torch.stack([t.z0 for t in targets]).to(dtype), [t.text for t in targets])


def sample_condition_masks(
    b: int, p_text: float, p_pose: float, rng: torch.Generator
) -> tuple[torch.Tensor, torch.Tensor]:
    """Independent Bernoulli gates; value 1 keeps the condition."""
    m_text = (torch.rand(b, generator=rng) < p_text).float()
    m_pose = (torch.rand(b, generator=rng) < p_pose).float()
    return m_text, m_pose


def generator_loss(
    batch: GeneratorBatch,
    model: GeneratorModel,
    schedule: NoiseSchedule,
    weights: GeneratorLossWeights,
    rng: torch.Generator,
    tree: KinematicTree | None = None,
) -> tuple[torch.Tensor, dict]:
    """Composite objective with freshly sampled condition gates.

    diff: squared L2 on the full target. pose: squared L2 on the pose slice.
    bone: squared L2 between bone lengths of the predicted and true rest
    joints. Text gates are forced off for elements without a prompt.
    """
    z0 = batch.z0
    b = z0.shape[0]
    cfg = model.cfg
    m_text, m_pose = sample_condition_masks(b, cfg.p_text, cfg.p_pose, rng)
    has_text = torch.tensor([bool(tokenize(t or "")) for t in batch.texts])
    m_text = m_text * has_text.to(m_text.dtype)

    t = torch.randint(0, schedule.T + 1, (b,), generator=rng)
    eps = torch.randn(z0.shape, generator=rng, dtype=z0.dtype)
    z_t = forward_noise(z0, t, eps, schedule)
    cond = model.encode_text(batch.texts) * m_text[:, None]
    z0_hat = model(z_t, t, z0[:, 0], m_pose, cond)
    if not torch.isfinite(z0_hat).all():
        raise FloatingPointError("denoiser produced non-finite tokens")

    tree = tree or default_tree()
    l_diff = ((z0 - z0_hat) ** 2).mean()
    l_pose = ((z0[..., :POSE_DIM] - z0_hat[..., :POSE_DIM]) ** 2).mean()
    rest_gt = z0[..., POSE_DIM:].reshape(b, 2, 22, 3)
    rest_hat = z0_hat[..., POSE_DIM:].reshape(b, 2, 22, 3)
    l_bone = ((bone_lengths_torch(rest_hat, tree) - bone_lengths_torch(rest_gt, tree)) ** 2).mean()

    total = weights.lambda_diff * l_diff + weights.lambda_pose * l_pose + weights.lambda_bone * l_bone
    if not torch.isfinite(total):
        raise FloatingPointError("non-finite training loss")
    components = {
        "diff": float(l_diff.detach()),
        "pose": float(l_pose.detach()),
        "bone": float(l_bone.detach()),
        "total": float(total.detach()),
    }
    return total, components


def train_generator(
    targets: Sequence[GeneratorTarget],
    cfg: GeneratorConfig,
    rng: torch.Generator,
    log_every: int = 0,
) -> dict:
    """Fit the generator on pose pairs; returns a self-describing checkpoint."""
    if not targets:
        raise ValueError("empty training dataset")
    base = collate_generator_targets(targets)
    schedule = cosine_schedule(cfg.diffusion_steps)
    model = GeneratorModel(cfg, rng)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)

    m = base.z0.shape[0]
    curve: list[dict] = []
    initial = None
    for step in range(cfg.train_steps):
        idx = torch.randint(0, m, (min(cfg.batch_size, m),), generator=rng)
        sub = GeneratorBatch(base.z0[idx], [base.texts[int(i)] for i in idx])
        total, comps = generator_loss(sub, model, schedule, cfg.weights, rng)
        if initial is None:
            initial = comps["total"]
        if comps["total"] > cfg.divergence_factor * max(initial, 1e-8):
            raise RuntimeError(
                f"training diverged at step {step}: loss {comps['total']:.4g} vs "
                f"initial {initial:.4g} (components {comps})"
            )
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()
        curve.append({"step": step, **comps})
        if log_every and step % log_every == 0:
            print(f"step {step:6d}  total {comps['total']:.5f}  diff {comps['diff']:.5f}")

    return {
        "kind": "generator",
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "state_dict": model.state_dict(),
        "loss_curve": curve,
        "initial_loss": initial,
        "final_loss": curve[-1]["total"] if curve else None,
    }


def load_generator(checkpoint: dict) -> GeneratorModel:
    if checkpoint.get("kind") != "generator":
        raise ValueError(f"not a generator checkpoint: kind={checkpoint.get('kind')!r}")
    if checkpoint.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {checkpoint.get('version')!r}")
    cfg = GeneratorConfig(**checkpoint["config"])
    model = GeneratorModel(cfg)
    model.load_state_dict(checkpoint["state_dict"])
    model.eval()
    return model


# =============================================================================
# sampling
# =============================================================================


@dataclass
class GeneratedPair:
    pose_a: Pose
    pose_b: Pose
    shape_a: ShapeParams
    shape_b: ShapeParams
    ik_a: IkResult
    ik_b: IkResult


@torch.no_grad()
def generate_interactive_pose(
    model: GeneratorModel,
    rng: torch.Generator,
    pose_a: Pose | None = None,
    shape_a: ShapeParams | None = None,
    text: str | None = None,
    eta: float = 0.0,
) -> GeneratedPair:
    """Sample a pose pair under any condition subset.

    A given (pose_a, shape_a) is imputed into person a's tokens at every DDIM
    step and survives to the output verbatim (at working precision); its shape
    is passed through unchanged. Free persons get their shape back from the
    sampled rest joints via IK. The caller provides pose_a already in the
    canonical interaction frame.
    """
    if (pose_a is None) != (shape_a is None):
        raise ValueError("pose_a and shape_a must be given together")
    cfg = model.cfg
    m_a = pose_a is not None
    cond = model.encode_text([text])

    imputer = None
    if m_a:
        z0_a = person_token(pose_a, shape_a, model.tree).to(torch.float32)

        def imputer(z, t):
            z = z.clone()
            z[:, 0, 0, :] = z0_a
            return z

    schedule = cosine_schedule(cfg.diffusion_steps)
    z = ddim_sample(
        lambda z_t, t, c: model.denoiser(z_t, t, cond.expand(z_t.shape[0], -1)),
        None,
        (1, 2, 1, TOKEN_DIM),
        schedule,
        DdimConfig(cfg.ddim_steps, eta),
        rng,
        imputer=imputer,
    )
    vecs = z[0, :, 0, :].double().numpy()
    out_a = vec_to_pose(vecs[0, :POSE_DIM])
    out_b = vec_to_pose(vecs[1, :POSE_DIM])
    ik_a = inverse_kinematics_shape(vecs[0, POSE_DIM:].reshape(22, 3), model.tree)
    ik_b = inverse_kinematics_shape(vecs[1, POSE_DIM:].reshape(22, 3), model.tree)
    out_shape_a = shape_a if m_a else ik_a.shape
    return GeneratedPair(out_a, out_b, out_shape_a, ik_b.shape, ik_a, ik_b)
