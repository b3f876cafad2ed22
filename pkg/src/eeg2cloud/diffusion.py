"""Conditional denoising diffusion over point clouds.

Forward process: Gaussian Markov corruption with a linear variance schedule.
Reverse process: ancestral sampling driven by a permutation-equivariant
per-point network that predicts the injected noise, conditioned on a timestep
embedding and a projected geometry feature via adaptive scale-shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn


@dataclass(frozen=True)
class DiffusionSchedule:
    """Variance schedule tables; index t-1 holds the step-t entry (t in 1..T).

    ``sigmas[t-1]`` is the posterior standard deviation
    sqrt(beta_t * (1 - abar_{t-1}) / (1 - abar_t)); it is 0 at t = 1.
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.betas)

    def validate(self) -> None:
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ValueError("betas must lie strictly in (0, 1)")
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if np.any(self.sigmas < 0):
            raise ValueError("sigmas must be non-negative")
        for arr in (self.betas, self.alphas, self.alpha_bars, self.sigmas):
            if not np.all(np.isfinite(arr)):
                raise ValueError("schedule entries must be finite")


def schedule_from_betas(betas: np.ndarray) -> DiffusionSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    prev = np.concatenate([[1.0], alpha_bars[:-1]])
    sigmas = np.sqrt(betas * (1.0 - prev) / (1.0 - alpha_bars))
    sched = DiffusionSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars, sigmas=sigmas)
    sched.validate()
    return sched


def make_schedule(
    n_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02
) -> DiffusionSchedule:
    """Linear beta schedule over ``n_steps`` forward steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError("require 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, n_steps)
    return schedule_from_betas(betas)


def q_sample(x0, t, eps, sched: DiffusionSchedule):
    """Closed-form forward marginal: sqrt(abar_t) x0 + sqrt(1-abar_t) eps.

    Works on numpy arrays and torch tensors alike; ``t`` may be a single step
    or one step per leading batch element.
    """
    if x0.shape != eps.shape:
        raise ValueError("noise must match the point array shape")
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if t_arr.min() < 1 or t_arr.max() > sched.n_steps:
        raise ValueError(f"t must be in [1, {sched.n_steps}]")
    if t_arr.size == 1:
        ab = sched.alpha_bars[int(t_arr[0]) - 1]
        return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
    if t_arr.shape[0] != x0.shape[0]:
        raise ValueError("per-element t must match the batch dimension")
    ab = sched.alpha_bars[t_arr - 1].reshape((-1,) + (1,) * (x0.ndim - 1))
    if torch.is_tensor(x0):
        ab = torch.as_tensor(ab, dtype=x0.dtype, device=x0.device)
        return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


class TimestepEmbedding(nn.Module):
    """Sinusoidal timestep features pushed through a small MLP."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        dtype = self.mlp[0].weight.dtype
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, device=t.device, dtype=dtype) / half
        )
        ang = t.to(freqs.dtype).unsqueeze(-1) * freqs
        emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)
        if self.dim % 2:
            emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
        return self.mlp(emb)


class FiLMBlock(nn.Module):
    """Per-point linear layer modulated by an adaptive scale-shift from the
    conditioning context."""

    def __init__(self, in_dim: int, out_dim: int, ctx_dim: int):
        super().__init__()
        self.lin = nn.Linear(in_dim, out_dim)
        self.film = nn.Linear(ctx_dim, 2 * out_dim)
        self.act = nn.SiLU()

    def forward(self, h: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        scale, shift = self.film(ctx).unsqueeze(1).chunk(2, dim=-1)
        return self.act(self.lin(h) * (1.0 + scale) + shift)


class PointDenoiser(nn.Module):
    """Noise predictor over point clouds.

    Per-point MLP blocks with one global max-pool context concatenation; all
    point interactions are symmetric, so permuting input points permutes the
    output rows identically.
    """

    def __init__(
        self,
        cond_dim: int = 1024,
        widths: tuple[int, int, int] = (128, 256, 256),
        ctx_dim: int = 128,
    ):
        super().__init__()
        self.cond_dim = cond_dim
        self.time_embed = TimestepEmbedding(ctx_dim)
        self.cond_proj = nn.Linear(cond_dim, ctx_dim)
        w0, w1, w2 = widths
        self.block1 = FiLMBlock(3, w0, ctx_dim)
        self.block2 = FiLMBlock(w0, w1, ctx_dim)
        self.block3 = FiLMBlock(2 * w1, w2, ctx_dim)  # input: features || pooled
        self.head = nn.Linear(w2, 3)

    def forward(self, x_t: torch.Tensor, t, cond: torch.Tensor) -> torch.Tensor:
        squeeze = x_t.ndim == 2
        if squeeze:
            x_t = x_t.unsqueeze(0)
        if cond.ndim == 1:
            cond = cond.unsqueeze(0)
        b = x_t.shape[0]
        if not torch.is_tensor(t):
            t = torch.full((b,), int(t), device=x_t.device)
        ctx = self.time_embed(t) + self.cond_proj(cond)
        h = self.block1(x_t, ctx)
        h = self.block2(h, ctx)
        pooled = h.max(dim=1, keepdim=True).values.expand_as(h)
        h = self.block3(torch.cat([h, pooled], dim=-1), ctx)
        out = self.head(h)
        if not torch.isfinite(out).all():
            raise FloatingPointError("non-finite denoiser output")
        return out.squeeze(0) if squeeze else out


def diffusion_loss(
    x0: torch.Tensor,
    t: int,
    cond: torch.Tensor,
    model: nn.Module,
    sched: DiffusionSchedule,
    eps: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Noise-prediction MSE at one timestep."""
    if eps is None:
        eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype, device=x0.device)
    x_t = q_sample(x0, t, eps, sched)
    pred = model(x_t, t, cond)
    return ((pred - eps) ** 2).mean()


def p_sample_step(
    x_t: torch.Tensor,
    t: int,
    cond: torch.Tensor,
    model: nn.Module,
    sched: DiffusionSchedule,
    noise: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """One reverse transition x_t -> x_{t-1}; the t = 1 step adds no noise."""
    if not 1 <= t <= sched.n_steps:
        raise ValueError(f"t must be in [1, {sched.n_steps}]")
    eps_hat = model(x_t, t, cond)
    mean = _reverse_mean(x_t, eps_hat, t, sched)
    if t == 1:
        return mean
    if noise is None:
        noise = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype, device=x_t.device)
    return mean + sched.sigmas[t - 1] * noise


def _reverse_mean(x_t, eps_hat, t: int, sched: DiffusionSchedule):
    beta = sched.betas[t - 1]
    ab = sched.alpha_bars[t - 1]
    return (x_t - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(sched.alphas[t - 1])


def sampling_timesteps(n_steps: int, n_sample_steps: int | None) -> list[int]:
    """Descending timestep subsequence for (optionally strided) sampling."""
    if n_sample_steps is None or n_sample_steps >= n_steps:
        return list(range(n_steps, 0, -1))
    if n_sample_steps < 1:
        raise ValueError("need at least one sampling step")
    ts = np.unique(np.linspace(1, n_steps, n_sample_steps).round().astype(int))
    return [int(t) for t in ts[::-1]]


@torch.no_grad()
def sample(
    model: nn.Module,
    cond: torch.Tensor,
    sched: DiffusionSchedule,
    n_points: int,
    seed: int,
    steps: int | None = None,
) -> torch.Tensor:
    """Ancestral sampling from Gaussian noise down to a point cloud.

    With ``steps`` smaller than the training schedule, sampling runs on a
    strided timestep subsequence with a re-derived schedule; the model is
    still queried at the original timestep values. Deterministic per seed.
    """
    generator = torch.Generator().manual_seed(seed)
    dtype = next(model.parameters()).dtype
    x = torch.randn(n_points, 3, generator=generator, dtype=dtype)
    ts = sampling_timesteps(sched.n_steps, steps)
    # re-derive per-transition betas for the chosen subsequence
    abar = sched.alpha_bars
    prev = list(ts[1:]) + [0]
    for t, t_prev in zip(ts, prev):
        ab_t = abar[t - 1]
        ab_prev = 1.0 if t_prev == 0 else abar[t_prev - 1]
        beta = 1.0 - ab_t / ab_prev
        sigma = math.sqrt(beta * (1.0 - ab_prev) / (1.0 - ab_t)) if t_prev > 0 else 0.0
        eps_hat = model(x, t, cond)
        mean = (x - beta / math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t / ab_prev)
        if t_prev == 0:
            x = mean
        else:
            noise = torch.randn(x.shape, generator=generator, dtype=dtype)
            x = mean + sigma * noise
    if not torch.isfinite(x).all():
        raise FloatingPointError("non-finite sample")
    return x
