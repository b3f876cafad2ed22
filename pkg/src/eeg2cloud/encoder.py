"""Dynamic-static EEG fusion encoder.

Each stream (static / dynamic) is patch-tokenized along time, embedded by a
stack of pre-norm temporal self-attention blocks, and the two token sequences
are fused by a cross-attention aggregator that queries the static stream
against dynamic keys/values. Mean pooling over fused tokens yields one
embedding vector per trial.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def sinusoidal_positions(
    n: int, dim: int, device=None, dtype=torch.float32
) -> torch.Tensor:
    """Fixed sin/cos positional encoding, shape (n, dim)."""
    position = torch.arange(n, device=device, dtype=dtype).unsqueeze(1)
    half = torch.arange(0, dim, 2, device=device, dtype=dtype)
    div = torch.exp(-half * math.log(10000.0) / dim)
    pe = torch.zeros(n, dim, device=device, dtype=dtype)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div)[:, : dim // 2]
    return pe


class PatchTokenizer(nn.Module):
    """Project non-overlapping temporal patches of a trial to model tokens.

    A (channels x T) trial becomes floor(T / patch) tokens; each patch's
    channels * patch values are linearly mapped to d_model and a sinusoidal
    positional code is added (unless ``positional=False``).
    """

    def __init__(self, n_channels: int, patch: int, d_model: int, positional: bool = True):
        super().__init__()
        self.n_channels = n_channels
        self.patch = patch
        self.d_model = d_model
        self.positional = positional
        self.proj = nn.Linear(n_channels * patch, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3 or x.shape[1] != self.n_channels:
            raise ValueError("expected trials as (batch, channels, time)")
        b, c, t = x.shape
        if t < self.patch:
            raise ValueError(f"trial length {t} shorter than patch size {self.patch}")
        s = t // self.patch
        x = x[:, :, : s * self.patch].reshape(b, c, s, self.patch)
        x = x.permute(0, 2, 1, 3).reshape(b, s, c * self.patch)
        tokens = self.proj(x)
        if self.positional:
            tokens = tokens + sinusoidal_positions(
                s, self.d_model, device=tokens.device, dtype=tokens.dtype
            )
        return tokens


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(
        self, x: torch.Tensor, return_weights: bool = False
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        b, s, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.reshape(b, s, self.n_heads, self.d_head).transpose(1, 2)
        k = k.reshape(b, s, self.n_heads, self.d_head).transpose(1, 2)
        v = v.reshape(b, s, self.n_heads, self.d_head).transpose(1, 2)
        attn = F.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.d_head), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, s, d)
        return self.proj(out), (attn if return_weights else None)


class TransformerBlock(nn.Module):
    """Pre-norm self-attention block with a GELU feed-forward."""

    def __init__(self, d_model: int, n_heads: int, ff_mult: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadSelfAttention(d_model, n_heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, ff_mult * d_model),
            nn.GELU(),
            nn.Linear(ff_mult * d_model, d_model),
        )

    def forward(
        self, x: torch.Tensor, return_weights: bool = False
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        h, w = self.attn(self.norm1(x), return_weights=return_weights)
        x = x + h
        x = x + self.ff(self.norm2(x))
        return x, w


class TemporalEmbedder(nn.Module):
    """Stack of temporal self-attention blocks plus an output MLP."""

    def __init__(self, d_model: int, n_heads: int = 4, n_layers: int = 4):
        super().__init__()
        self.blocks = nn.ModuleList(
            TransformerBlock(d_model, n_heads) for _ in range(n_layers)
        )
        self.out_norm = nn.LayerNorm(d_model)
        self.out_mlp = nn.Sequential(
            nn.Linear(d_model, d_model), nn.GELU(), nn.Linear(d_model, d_model)
        )

    def forward(
        self, tokens: torch.Tensor, return_weights: bool = False
    ) -> torch.Tensor | tuple[torch.Tensor, list[torch.Tensor]]:
        x = tokens
        weights = []
        for block in self.blocks:
            x, w = block(x, return_weights=return_weights)
            if return_weights:
                weights.append(w)
        x = self.out_mlp(self.out_norm(x))
        if not torch.isfinite(x).all():
            raise FloatingPointError("non-finite activations in embedder (divergence)")
        return (x, weights) if return_weights else x


class NeuralAggregator(nn.Module):
    """Cross-attention fusion: queries from the static stream, keys/values
    from the dynamic stream. Output keeps the query token count."""

    def __init__(self, d_model: int, n_heads: int = 1):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.w_q = nn.Linear(d_model, d_model, bias=False)
        self.w_k = nn.Linear(d_model, d_model, bias=False)
        self.w_v = nn.Linear(d_model, d_model, bias=False)

    def forward(
        self, z_s: torch.Tensor, z_d: torch.Tensor, return_weights: bool = False
    ) -> torch.Tensor | tuple[torch.Tensor, torch.Tensor]:
        b, s_q, d = z_s.shape
        s_k = z_d.shape[1]
        q = self.w_q(z_s).reshape(b, s_q, self.n_heads, self.d_head).transpose(1, 2)
        k = self.w_k(z_d).reshape(b, s_k, self.n_heads, self.d_head).transpose(1, 2)
        v = self.w_v(z_d).reshape(b, s_k, self.n_heads, self.d_head).transpose(1, 2)
        attn = F.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.d_head), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, s_q, d)
        return (out, attn) if return_weights else out


MODES = ("fused", "static", "dynamic")


class FusionEncoder(nn.Module):
    """Full encoding path: tokenize and embed each stream, aggregate, pool.

    ``mode`` selects the signal condition: "fused" queries static against
    dynamic; "static" substitutes the static tokens for the dynamic ones;
    "dynamic" substitutes dynamic for static. The substitution modes reuse
    the fused code path exactly.
    """

    def __init__(
        self,
        n_channels: int = 64,
        d_model: int = 256,
        n_heads: int = 4,
        n_layers: int = 4,
        patch: int = 25,
        agg_heads: int = 1,
        positional: bool = True,
    ):
        super().__init__()
        self.d_model = d_model
        self.tokenize_static = PatchTokenizer(n_channels, patch, d_model, positional)
        self.tokenize_dynamic = PatchTokenizer(n_channels, patch, d_model, positional)
        self.embed_static = TemporalEmbedder(d_model, n_heads, n_layers)
        self.embed_dynamic = TemporalEmbedder(d_model, n_heads, n_layers)
        self.aggregator = NeuralAggregator(d_model, agg_heads)

    def token_streams(
        self, e_s: torch.Tensor, e_d: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        z_s = self.embed_static(self.tokenize_static(e_s))
        z_d = self.embed_dynamic(self.tokenize_dynamic(e_d))
        return z_s, z_d

    def fuse(self, z_s: torch.Tensor, z_d: torch.Tensor, mode: str = "fused") -> torch.Tensor:
        if mode == "fused":
            return self.aggregator(z_s, z_d)
        if mode == "static":
            return self.aggregator(z_s, z_s)
        if mode == "dynamic":
            return self.aggregator(z_d, z_d)
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")

    def forward(
        self, e_s: torch.Tensor, e_d: torch.Tensor, mode: str = "fused"
    ) -> torch.Tensor:
        z_s, z_d = self.token_streams(e_s, e_d)
        fused = self.fuse(z_s, z_d, mode)
        pooled = fused.mean(dim=1)
        if not torch.isfinite(pooled).all():
            raise FloatingPointError("non-finite activations in encoder (divergence)")
        return pooled
