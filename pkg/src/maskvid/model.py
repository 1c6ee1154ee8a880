"""The full trainable model: prompt encoder plus token transformer."""

from __future__ import annotations

import torch
from torch import nn
from torch.nn.init import trunc_normal_

from .prompt import PromptEncoder
from .transformer import ModelConfig, SpatioTemporalTransformer

INIT_STD = 0.02


class VideoTokenModel(nn.Module):
    """Predicts masked visual tokens conditioned on visible tokens and multimodal prompts."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.prompt_encoder = PromptEncoder(
            cfg.text_vocab, cfg.text_channels, cfg.text_len, cfg.channels
        )
        self.transformer = SpatioTemporalTransformer(cfg)

    def build_prompt(
        self,
        batch: int,
        frames: int,
        text_ids: torch.Tensor | None = None,
        actions: torch.Tensor | None = None,
        drop: torch.Tensor | None = None,
    ) -> torch.Tensor:
        return self.prompt_encoder(batch, frames, text_ids, actions, drop)

    def forward(
        self,
        tokens: torch.Tensor,
        text_ids: torch.Tensor | None = None,
        actions: torch.Tensor | None = None,
        drop: torch.Tensor | None = None,
        image_mode: bool = False,
    ) -> torch.Tensor:
        """(B, N, h, w) tokens -> (B, N, h, w, vocab) logits."""
        b, n = tokens.shape[:2]
        prompt = self.build_prompt(b, n, text_ids, actions, drop)
        return self.transformer(tokens, prompt, image_mode)


def init_parameters(model: VideoTokenModel, seed: int) -> VideoTokenModel:
    """Deterministic initialization: truncated normal (std 0.02) for weights and
    embeddings, zero biases, identity-plus-noise conv kernels, and residual
    output projections scaled down by 1/sqrt(2L)."""
    gen = torch.Generator().manual_seed(seed)
    layers = max(model.cfg.layers, 1)
    out_std = INIT_STD / (2 * layers) ** 0.5
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Linear):
                std = out_std if getattr(module, "_residual_out", False) else INIT_STD
                trunc_normal_(module.weight, std=std, a=-2 * std, b=2 * std, generator=gen)
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.Embedding):
                trunc_normal_(module.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD,
                              generator=gen)
            elif isinstance(module, nn.Conv3d):
                kt, kh, kw = module.weight.shape[2:]
                trunc_normal_(module.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD,
                              generator=gen)
                module.weight[:, :, kt // 2, kh // 2, kw // 2] += 1.0
            elif isinstance(module, nn.LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
        for param in (
            model.transformer.pos_temporal,
            model.transformer.pos_spatial,
            model.prompt_encoder.null_text,
            model.prompt_encoder.null_action,
        ):
            trunc_normal_(param, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD, generator=gen)
    return model


def build_model(cfg: ModelConfig, seed: int = 0) -> VideoTokenModel:
    return init_parameters(VideoTokenModel(cfg), seed)
