"""Patchwise spatio-temporal transformer over discrete visual tokens.

Each layer runs a channel-wise 3D convolution, splits the token grid into
interleaved spatial patches (position (r, c) lands in patch (r mod s, c mod s)),
applies self-attention within each patch across all frames, then per-frame
cross-attention against the prompt rows, and a feed-forward block. Everything
is pre-norm with residual connections. The head maps back to codebook logits.

Image mode makes frames mutually independent: the convolution keeps only its
temporal center tap and patch self-attention is restricted to a per-frame
block-diagonal pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; the desk-scale defaults train on a laptop CPU."""

    vocab: int = 512
    frames: int = 8
    grid_h: int = 8
    grid_w: int = 8
    channels: int = 128
    layers: int = 4
    heads: int = 4
    patch_stride: int = 2
    conv_kernel: tuple[int, int, int] = (3, 3, 3)
    text_vocab: int = 4096
    text_channels: int = 64
    text_len: int = 8
    mode: str = "video"

    def __post_init__(self):
        if self.vocab < 2:
            raise ValueError("vocab must be at least 2")
        if self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.heads}")
        s = self.patch_stride
        if s < 1 or self.grid_h % s or self.grid_w % s:
            raise ValueError(f"patch stride {s} must divide grid {self.grid_h}x{self.grid_w}")
        if any(k < 1 or k % 2 == 0 for k in self.conv_kernel):
            raise ValueError(f"conv kernel taps must be odd, got {self.conv_kernel}")
        if self.layers < 0:
            raise ValueError("layers must be non-negative")
        if self.mode not in ("video", "image"):
            raise ValueError(f"mode must be video or image, got {self.mode!r}")

    @property
    def mask_id(self) -> int:
        return self.vocab

    @property
    def prompt_rows(self) -> int:
        return self.text_len + 1


def partition_patches(x: torch.Tensor, stride: int) -> torch.Tensor:
    """(B, N, h, w, C) -> (B, s*s, N, h/s, w/s, C) interleaved patch blocks."""
    if x.shape[2] % stride or x.shape[3] % stride:
        raise ValueError(f"stride {stride} does not divide grid {x.shape[2]}x{x.shape[3]}")
    return rearrange(x, "b n (hp sh) (wp sw) c -> b (sh sw) n hp wp c", sh=stride, sw=stride)


def merge_patches(x: torch.Tensor, stride: int) -> torch.Tensor:
    """Exact inverse of partition_patches."""
    return rearrange(x, "b (sh sw) n hp wp c -> b n (hp sh) (wp sw) c", sh=stride, sw=stride)


class MultiheadAttention(nn.Module):
    """Plain softmax attention with separate query/key/value/output projections."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = channels // heads
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(channels, channels)
        self.v = nn.Linear(channels, channels)
        self.out = nn.Linear(channels, channels)
        self.out._residual_out = True

    def forward(
        self,
        query: torch.Tensor,
        keyval: torch.Tensor,
        attn_mask: torch.Tensor | None = None,
        need_weights: bool = False,
    ):
        b, tq, c = query.shape
        tk = keyval.shape[1]
        q = self.q(query).view(b, tq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k(keyval).view(b, tk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v(keyval).view(b, tk, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if attn_mask is not None:
            scores = scores.masked_fill(attn_mask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, tq, c)
        return self.out(out), (weights if need_weights else None)


class FeedForward(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.fc1 = nn.Linear(channels, 4 * channels)
        self.fc2 = nn.Linear(4 * channels, channels)
        self.fc2._residual_out = True

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """conv3d -> patchwise self-attention -> per-frame cross-attention -> feed-forward."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        kt, kh, kw = cfg.conv_kernel
        self.conv = nn.Conv3d(c, c, (kt, kh, kw), padding=(kt // 2, kh // 2, kw // 2),
                              groups=c, bias=False)
        self.norm_self = nn.LayerNorm(c)
        self.self_attn = MultiheadAttention(c, cfg.heads)
        self.norm_cross = nn.LayerNorm(c)
        self.cross_attn = MultiheadAttention(c, cfg.heads)
        self.norm_ff = nn.LayerNorm(c)
        self.ff = FeedForward(c)

    def convolve(self, x: torch.Tensor, image_mode: bool) -> torch.Tensor:
        """Channel-wise conv over (frames, rows, cols); image mode keeps only the
        temporal center tap so frames stay independent."""
        y = x.permute(0, 4, 1, 2, 3)
        weight = self.conv.weight
        kt, kh, kw = self.cfg.conv_kernel
        if image_mode and kt > 1:
            weight = weight[:, :, kt // 2:kt // 2 + 1]
            y = F.conv3d(y, weight, padding=(0, kh // 2, kw // 2), groups=self.cfg.channels)
        else:
            y = self.conv(y)
        return y.permute(0, 2, 3, 4, 1)

    def patch_self_attention(
        self, patches: torch.Tensor, image_mode: bool, need_weights: bool = False
    ):
        """Self-attention inside each patch block, spanning all frames.

        ``patches`` is (B, P, N, hp, wp, C); every patch is flattened to a
        (N*hp*wp, C) sequence. Image mode masks attention to a per-frame
        block diagonal.
        """
        b, p, n, hp, wp, c = patches.shape
        flat = patches.reshape(b * p, n * hp * wp, c)
        mask = None
        if image_mode:
            frame = torch.arange(n, device=flat.device).repeat_interleave(hp * wp)
            mask = frame[None, :] != frame[:, None]
        normed = self.norm_self(flat)
        attn, weights = self.self_attn(normed, normed, attn_mask=mask, need_weights=need_weights)
        out = (flat + attn).view(b, p, n, hp, wp, c)
        return out, weights

    def cross_attention(self, x: torch.Tensor, prompt: torch.Tensor, need_weights: bool = False):
        """Per-frame cross-attention; the frame axis acts as the batch axis."""
        b, n, h, w, c = x.shape
        if prompt.shape[:2] != (b, n):
            raise ValueError(
                f"prompt frames {tuple(prompt.shape[:2])} do not match visual frames {(b, n)}"
            )
        queries = x.reshape(b * n, h * w, c)
        rows = prompt.reshape(b * n, prompt.shape[2], c)
        attn, weights = self.cross_attn(self.norm_cross(queries), rows, need_weights=need_weights)
        out = (queries + attn).view(b, n, h, w, c)
        return out, weights

    def forward(self, x: torch.Tensor, prompt: torch.Tensor, image_mode: bool) -> torch.Tensor:
        x = self.convolve(x, image_mode)
        patches = partition_patches(x, self.cfg.patch_stride)
        patches, _ = self.patch_self_attention(patches, image_mode)
        x = merge_patches(patches, self.cfg.patch_stride)
        x, _ = self.cross_attention(x, prompt)
        return x + self.ff(self.norm_ff(x))


class SpatioTemporalTransformer(nn.Module):
    """Token grid plus prompt rows in, per-position codebook logits out."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        # one extra embedding row for the mask id
        self.token_embedding = nn.Embedding(cfg.vocab + 1, c)
        self.pos_temporal = nn.Parameter(torch.zeros(cfg.frames, c))
        self.pos_spatial = nn.Parameter(torch.zeros(cfg.grid_h * cfg.grid_w, c))
        self.blocks = nn.ModuleList(TransformerBlock(cfg) for _ in range(cfg.layers))
        self.final_norm = nn.LayerNorm(c)
        self.head = nn.Linear(c, cfg.vocab)

    def embed_tokens(self, tokens: torch.Tensor, image_mode: bool = False) -> torch.Tensor:
        """Codebook-row lookup plus factorized temporal and spatial position rows.

        Image mode gives every frame the same temporal row, keeping independent
        frames exchangeable."""
        if tokens.ndim != 4:
            raise ValueError(f"tokens must be (B, N, h, w), got {tuple(tokens.shape)}")
        b, n, h, w = tokens.shape
        cfg = self.cfg
        if h != cfg.grid_h or w != cfg.grid_w:
            raise ValueError(f"grid {h}x{w} does not match configured {cfg.grid_h}x{cfg.grid_w}")
        if n > cfg.frames:
            raise ValueError(f"{n} frames exceed configured maximum {cfg.frames}")
        if int(tokens.max()) > cfg.vocab or int(tokens.min()) < 0:
            raise ValueError(f"token id out of range [0, {cfg.vocab}]")
        emb = self.token_embedding(tokens)
        if image_mode:
            emb = emb + self.pos_temporal[0].view(1, 1, 1, 1, -1)
        else:
            emb = emb + self.pos_temporal[:n].view(1, n, 1, 1, -1)
        emb = emb + self.pos_spatial.view(1, 1, h, w, -1)
        return emb

    def forward_embedded(
        self, x: torch.Tensor, prompt: torch.Tensor, image_mode: bool = False
    ) -> torch.Tensor:
        for block in self.blocks:
            x = block(x, prompt, image_mode)
        return self.head(self.final_norm(x))

    def forward(
        self, tokens: torch.Tensor, prompt: torch.Tensor, image_mode: bool = False
    ) -> torch.Tensor:
        """(B, N, h, w) tokens + (B, N, K+1, C) prompt -> (B, N, h, w, vocab) logits."""
        return self.forward_embedded(self.embed_tokens(tokens, image_mode), prompt, image_mode)


def masked_ce_loss(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over masked positions only.

    ``mask`` is a bool tensor broadcastable to ``targets``; unmasked positions
    contribute neither loss nor gradient.
    """
    mask = mask.expand_as(targets)
    if not bool(mask.any()):
        raise ValueError("mask selects no positions")
    vocab = logits.shape[-1]
    picked = logits[mask].view(-1, vocab)
    return F.cross_entropy(picked, targets[mask].view(-1))
