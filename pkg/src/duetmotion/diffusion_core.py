"""Diffusion machinery, independent of any particular network.

Everything operates on x0 prediction: the denoiser G(z_t, t, c) estimates the
clean signal directly, the training objective regresses it with squared L2,
and DDIM steps reconstruct the next iterate from the current x0 estimate.

An optional imputer hook rewrites the iterate before every denoiser call and
once more on the final output; the conditioning models use it to hold known
coordinates (anchor frame, conditioned person) at their clean values through
the whole reverse process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import torch

DenoiserFn = Callable[[torch.Tensor, torch.Tensor, object], torch.Tensor]
ImputerFn = Callable[[torch.Tensor, int], torch.Tensor]


@dataclass
class NoiseSchedule:
    """Cumulative signal levels alpha_bar[0..T], strictly decreasing from 1."""

    T: int
    alpha_bar: torch.Tensor  # (T+1,), float64

    def __post_init__(self):
        self.alpha_bar = torch.as_tensor(self.alpha_bar, dtype=torch.float64)
        if self.alpha_bar.shape != (self.T + 1,):
            raise ValueError("alpha_bar must have T+1 entries")
        if not bool((self.alpha_bar[1:] < self.alpha_bar[:-1]).all()):
            raise ValueError("alpha_bar must be strictly decreasing")
        if not self.alpha_bar[0] >= 1.0 - 1e-6:
            raise ValueError("alpha_bar[0] must be 1 up to 1e-6")
        if not self.alpha_bar[-1] <= 1e-3:
            raise ValueError("alpha_bar[T] must not exceed 1e-3")


@dataclass
class DdimConfig:
    num_steps: int = 50
    eta: float = 0.0

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("num_steps must be at least 1")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")


def cosine_schedule(T: int = 1000, s: float = 0.008, floor: float = 1e-12) -> NoiseSchedule:
    """alpha_bar(t) = cos^2(((t/T + s)/(1+s)) * pi/2), normalized to 1 at t=0.

    The floor only clips the exact-zero endpoint at t=T; anything larger would
    flatten the last few steps and break strict monotonicity.
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    t = torch.arange(T + 1, dtype=torch.float64)
    f = torch.cos(((t / T + s) / (1.0 + s)) * math.pi / 2.0) ** 2
    alpha_bar = (f / f[0]).clamp_min(floor)
    return NoiseSchedule(T, alpha_bar)


def forward_noise(
    z0: torch.Tensor, t: int | torch.Tensor, eps: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps."""
    if eps.shape != z0.shape:
        raise ValueError(f"noise shape {tuple(eps.shape)} != signal shape {tuple(z0.shape)}")
    ab = schedule.alpha_bar
    if torch.is_tensor(t) and t.ndim > 0:
        if t.shape[0] != z0.shape[0]:
            raise ValueError("per-element t must match the batch dimension")
        a = ab[t].reshape(-1, *([1] * (z0.ndim - 1))).to(z0.dtype)
    else:
        a = ab[int(t)].to(z0.dtype)
    return torch.sqrt(a) * z0 + torch.sqrt(1.0 - a) * eps


def diffusion_loss(
    z0: torch.Tensor,
    condition,
    denoiser: DenoiserFn,
    schedule: NoiseSchedule,
    rng: torch.Generator,
) -> torch.Tensor:
    """Squared-L2 x0 regression at a uniformly drawn timestep per element.

    z0 is batched on dim 0. Returns the mean over all elements of
    ||z0 - G(z_t, t, c)||^2.
    """
    b = z0.shape[0]
    t = torch.randint(0, schedule.T + 1, (b,), generator=rng)
    eps = torch.randn(z0.shape, generator=rng, dtype=z0.dtype)
    z_t = forward_noise(z0, t, eps, schedule)
    pred = denoiser(z_t, t, condition)
    if not torch.isfinite(pred).all():
        bad = torch.nonzero(~torch.isfinite(pred).reshape(b, -1).all(dim=1)).flatten()
        raise FloatingPointError(
            "denoiser produced non-finite output for batch elements "
            f"{bad.tolist()} at timesteps {t[bad].tolist()}"
        )
    return ((z0 - pred) ** 2).mean()


def ddim_timesteps(T: int, num_steps: int) -> list[int]:
    """Evenly spaced descent T = tau_0 > ... > tau_num_steps = 0."""
    return [int(round(v)) for v in torch.linspace(T, 0, num_steps + 1).tolist()]


@torch.no_grad()
def ddim_sample(
    denoiser: DenoiserFn,
    condition,
    shape: tuple[int, ...],
    schedule: NoiseSchedule,
    cfg: DdimConfig,
    rng: torch.Generator,
    imputer: Optional[ImputerFn] = None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """DDIM over an evenly spaced step subset, returning the final x0 estimate.

    With eta = 0 the trajectory is deterministic given the initial noise. The
    imputer, when given, is applied to the iterate before every denoiser call
    and to the returned tensor, so imputed coordinates are exactly their clean
    values at every step and in the output.
    """
    if cfg.num_steps > schedule.T:
        raise ValueError("num_steps cannot exceed the schedule length")
    taus = ddim_timesteps(schedule.T, cfg.num_steps)
    ab = schedule.alpha_bar
    z = torch.randn(shape, generator=rng, dtype=dtype)
    b = shape[0]
    for t_now, t_next in zip(taus[:-1], taus[1:]):
        if imputer is not None:
            z = imputer(z, t_now)
        t_batch = torch.full((b,), t_now, dtype=torch.long)
        z0_hat = denoiser(z, t_batch, condition)
        a_now = ab[t_now].to(dtype)
        a_next = ab[t_next].to(dtype)
        eps_hat = (z - torch.sqrt(a_now) * z0_hat) / torch.sqrt(1.0 - a_now)
        sigma = 0.0
        if cfg.eta > 0 and t_next > 0:
            sigma = (
                cfg.eta
                * torch.sqrt((1.0 - a_next) / (1.0 - a_now))
                * torch.sqrt(1.0 - a_now / a_next)
            )
        dir_coeff = torch.sqrt(torch.clamp(1.0 - a_next - sigma**2, min=0.0))
        z = torch.sqrt(a_next) * z0_hat + dir_coeff * eps_hat
        if cfg.eta > 0 and t_next > 0:
            z = z + sigma * torch.randn(shape, generator=rng, dtype=dtype)
    if imputer is not None:
        z = imputer(z, 0)
    return z
