"""Transformer denoiser over two-person motion tokens.

Tokens live on a (person, frame) grid: input (B, P, N, D_in) -> (B, P, N, D_out)
with P = 2. Each block runs attention across persons within a frame, optionally
attention across frames within a person, and a pointwise FFN. All sublayers are
conditioned through adaLN-zero: a zero-initialized linear maps the combined
timestep/condition embedding to (shift, scale, gate) so an untrained network is
the identity trunk, and the zero-initialized output head then predicts exactly
zero. The conditioning wrappers rely on that to make untrained sampling
collapse onto the imputed anchor.

Modulation alone turned out too weak a channel when the condition has to pick
the content of the output rather than restyle it: at the highest noise level
the tokens carry nothing, and a modulation-only net happily predicts the data
mean no matter what the condition says. With cond_token set, the condition is
additionally projected to a prefix frame shared by both persons, so temporal
attention can read it as content the same way it reads real frames.

Weights are drawn from an explicit torch.Generator in build_denoiser, so a
checkpoint-free model is reproducible from (config, seed) alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch
from torch import nn


@dataclass
class NetConfig:
    token_dim: int
    out_dim: int
    cond_dim: int
    latent_dim: int = 128
    num_layers: int = 4
    num_heads: int = 8
    temporal: bool = True
    num_persons: int = 2
    cond_token: bool = False

    def __post_init__(self):
        if min(self.token_dim, self.out_dim, self.cond_dim, self.latent_dim) < 1:
            raise ValueError("dimensions must be positive")
        if self.num_layers < 1 or self.num_persons < 1:
            raise ValueError("num_layers and num_persons must be positive")
        if self.latent_dim % self.num_heads != 0:
            raise ValueError("latent_dim must be divisible by num_heads")
        if self.cond_token and not self.temporal:
            raise ValueError("cond_token needs temporal attention to be readable")


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float64) / half
    ).to(t.device)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2 == 1:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


def frame_positional_encoding(n: int, dim: int, dtype: torch.dtype) -> torch.Tensor:
    pe = timestep_embedding(torch.arange(n), dim)
    return pe.to(dtype)


def _modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    # emb is per batch element; tokens broadcast over (P, N)
    return x * (1.0 + scale[:, None, None, :]) + shift[:, None, None, :]


class DenoiserBlock(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        d = cfg.latent_dim
        self.temporal = cfg.temporal
        self.norm_s = nn.LayerNorm(d, elementwise_affine=False)
        self.attn_s = nn.MultiheadAttention(d, cfg.num_heads, batch_first=True)
        if cfg.temporal:
            self.norm_t = nn.LayerNorm(d, elementwise_affine=False)
            self.attn_t = nn.MultiheadAttention(d, cfg.num_heads, batch_first=True)
        self.norm_f = nn.LayerNorm(d, elementwise_affine=False)
        self.ffn = nn.Sequential(nn.Linear(d, 4 * d), nn.GELU(), nn.Linear(4 * d, d))
        n_sub = 3 if cfg.temporal else 2
        self.mod = nn.Linear(d, 3 * n_sub * d)
        self.mod._zero_init = True

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        b, p, n, d = x.shape
        chunks = self.mod(emb).chunk(3 * (3 if self.temporal else 2), dim=-1)
        i = 0

        def take():
            nonlocal i
            out = chunks[i], chunks[i + 1], chunks[i + 2]
            i += 3
            return out

        shift, scale, gate = take()
        h = _modulate(self.norm_s(x), shift, scale)
        # persons attend to each other within their own frame only
        h = h.permute(0, 2, 1, 3).reshape(b * n, p, d)
        h, _ = self.attn_s(h, h, h, need_weights=False)
        h = h.reshape(b, n, p, d).permute(0, 2, 1, 3)
        x = x + gate[:, None, None, :] * h

        if self.temporal:
            shift, scale, gate = take()
            h = _modulate(self.norm_t(x), shift, scale)
            h = h.reshape(b * p, n, d)
            h, _ = self.attn_t(h, h, h, need_weights=False)
            h = h.reshape(b, p, n, d)
            x = x + gate[:, None, None, :] * h

        shift, scale, gate = take()
        x = x + gate[:, None, None, :] * self.ffn(_modulate(self.norm_f(x), shift, scale))
        return x


class MotionDenoiser(nn.Module):
    """x0-prediction denoiser, forward(tokens, t, cond) -> predicted tokens."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.latent_dim
        self.in_proj = nn.Linear(cfg.token_dim, d)
        self.t_mlp = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, d))
        self.cond_proj = nn.Linear(cfg.cond_dim, d)
        if cfg.cond_token:
            self.cond_tok = nn.Linear(cfg.cond_dim, d)
        self.person_embed = nn.Parameter(torch.zeros(cfg.num_persons, d))
        self.blocks = nn.ModuleList(DenoiserBlock(cfg) for _ in range(cfg.num_layers))
        self.norm_out = nn.LayerNorm(d, elementwise_affine=False)
        self.head = nn.Linear(d, cfg.out_dim)
        self.head._zero_init = True

    def forward(self, tokens: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if tokens.ndim != 4 or tokens.shape[1] != self.cfg.num_persons:
            raise ValueError("tokens must be (batch, persons, frames, features)")
        if tokens.shape[-1] != self.cfg.token_dim:
            raise ValueError(
                f"token feature dim {tokens.shape[-1]} != configured {self.cfg.token_dim}"
            )
        b, p, n, _ = tokens.shape
        dtype = self.in_proj.weight.dtype
        x = self.in_proj(tokens.to(dtype))
        if self.cfg.cond_token:
            c = self.cond_tok(cond.to(dtype))
            x = torch.cat([c[:, None, None, :].expand(b, p, 1, c.shape[-1]), x], dim=2)
        x = x + frame_positional_encoding(x.shape[2], self.cfg.latent_dim, dtype)[None, None]
        x = x + self.person_embed[None, :, None, :]
        emb = self.t_mlp(timestep_embedding(t, self.cfg.latent_dim).to(dtype))
        emb = emb + self.cond_proj(cond.to(dtype))
        for block in self.blocks:
            x = block(x, emb)
        out = self.head(self.norm_out(x))
        return out[:, :, 1:, :] if self.cfg.cond_token else out


def init_params_(module: nn.Module, rng: torch.Generator) -> nn.Module:
    """Deterministic in-place init of any module from one generator.

    Zero-init-marked modules (adaLN modulations, output heads) stay zero;
    person embeddings are N(0, 0.02); other matrices are xavier-uniform;
    1-d weights (affine norms) become ones; biases and the rest become zero.
    Draw order follows named_parameters, which is fixed by construction order,
    so equal (architecture, seed) means equal weights.
    """
    zero_ids = {
        id(p)
        for m in module.modules()
        if getattr(m, "_zero_init", False)
        for p in m.parameters(recurse=False)
    }
    with torch.no_grad():
        for name, p in module.named_parameters():
            if id(p) in zero_ids:
                p.zero_()
            elif name.endswith("person_embed"):
                p.normal_(0.0, 0.02, generator=rng)
            elif p.ndim >= 2:
                fan_in, fan_out = p.shape[-1], p.numel() // p.shape[-1]
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                p.uniform_(-bound, bound, generator=rng)
            elif name.endswith(".weight"):
                p.fill_(1.0)
            else:
                p.zero_()
    return module


def build_denoiser(cfg: NetConfig, rng: torch.Generator) -> MotionDenoiser:
    return init_params_(MotionDenoiser(cfg), rng)


def gradient_check(
    make_loss: Callable[[], torch.Tensor],
    module: nn.Module,
    rng: torch.Generator,
    num_coords: int = 24,
    step: float = 1e-5,
    floor: float = 1e-6,
    threshold: float = 1e-3,
) -> dict:
    """Compare autograd against central differences on sampled weight coords.

    make_loss must be a deterministic closure over the module (freeze any
    sampling inside it); the module must be float64 so the finite differences
    resolve. Coordinates are spread round-robin over all parameters that
    require grad. Returns per-coordinate records (with parameter paths), the
    max relative deviation |fd - analytic| / max(|analytic|, floor), and the
    coordinates exceeding the pass threshold.
    """
    params = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    if any(p.dtype != torch.float64 for _, p in params):
        raise ValueError("gradient_check requires a float64 module")
    if num_coords > sum(p.numel() for _, p in params):
        raise ValueError("num_coords exceeds the parameter count")
    module.zero_grad(set_to_none=True)
    loss = make_loss()
    loss.backward()
    grads = {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
             for n, p in params}

    coords: list[tuple[str, int]] = []
    k = 0
    while len(coords) < num_coords:
        name, p = params[k % len(params)]
        idx = int(torch.randint(p.numel(), (1,), generator=rng))
        if (name, idx) not in coords:
            coords.append((name, idx))
        k += 1

    records = []
    by_name = dict(params)
    with torch.no_grad():
        for name, idx in coords:
            flat = by_name[name].view(-1)
            orig = flat[idx].item()
            flat[idx] = orig + step
            hi = float(make_loss())
            flat[idx] = orig - step
            lo = float(make_loss())
            flat[idx] = orig
            fd = (hi - lo) / (2.0 * step)
            an = float(grads[name].view(-1)[idx])
            rel = abs(fd - an) / max(abs(an), floor)
            records.append({"param": name, "index": idx, "analytic": an,
                            "numeric": fd, "rel_dev": rel})
    failures = [r for r in records if r["rel_dev"] > threshold]
    return {
        "records": records,
        "max_rel_dev": max(r["rel_dev"] for r in records),
        "failures": failures,
        "passed": not failures,
    }
