"""Multimodal prompt construction from text and per-frame action inputs.

Text is tokenized by lowercased whitespace words and a fixed 64-bit FNV-1a
hash into a jointly trained embedding table (no pretrained language encoder).
Actions (yaw_rate, speed) go through a small MLP. The prompt is one block of
K projected text rows plus one action row per frame; a learned null row stands
in for any absent modality, and dropping the prompt for classifier-free
guidance swaps in all null rows.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(word: str) -> int:
    """Fixed 64-bit FNV-1a hash of a UTF-8 string; stable across runs and platforms."""
    h = _FNV_OFFSET
    for byte in word.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def text_to_ids(text: str, vocab: int, length: int) -> torch.Tensor:
    """Hash the first ``length`` lowercase words into table ids; pad id is ``vocab``."""
    ids = [fnv1a_64(w) % vocab for w in text.lower().split()[:length]]
    ids.extend([vocab] * (length - len(ids)))
    return torch.tensor(ids, dtype=torch.long)


class PromptEncoder(nn.Module):
    """Builds (B, N, K+1, C) prompt embeddings from hashed text ids and action tracks."""

    def __init__(self, text_vocab: int, text_channels: int, text_len: int, channels: int):
        super().__init__()
        self.text_vocab = text_vocab
        self.text_len = text_len
        self.channels = channels
        # row text_vocab is the reserved pad row
        self.table = nn.Embedding(text_vocab + 1, text_channels)
        self.text_proj = nn.Linear(text_channels, channels)
        self.action_in = nn.Linear(2, channels)
        self.action_out = nn.Linear(channels, channels)
        self.null_text = nn.Parameter(torch.zeros(text_len, channels))
        self.null_action = nn.Parameter(torch.zeros(channels))

    def embed_text(self, ids: torch.Tensor) -> torch.Tensor:
        """(B, K) hashed ids -> (B, K, C) projected text rows."""
        if ids.ndim != 2 or ids.shape[1] != self.text_len:
            raise ValueError(f"text ids must be (B, {self.text_len}), got {tuple(ids.shape)}")
        return self.text_proj(self.table(ids))

    def embed_action(self, actions: torch.Tensor, frames: int) -> torch.Tensor:
        """(B, N, 2) yaw/speed pairs -> (B, N, C) per-frame action rows."""
        if actions.ndim != 3 or actions.shape[2] != 2:
            raise ValueError(f"actions must be (B, N, 2), got {tuple(actions.shape)}")
        if actions.shape[1] != frames:
            raise ValueError(
                f"action track length {actions.shape[1]} does not match frame count {frames}"
            )
        return self.action_out(F.gelu(self.action_in(actions)))

    def null_prompt(self, batch: int, frames: int) -> torch.Tensor:
        """The learned fully-unconditional prompt, (B, N, K+1, C)."""
        rows = torch.cat([self.null_text, self.null_action.unsqueeze(0)], dim=0)
        return rows.unsqueeze(0).unsqueeze(0).expand(batch, frames, -1, -1)

    def forward(
        self,
        batch: int,
        frames: int,
        text_ids: torch.Tensor | None = None,
        actions: torch.Tensor | None = None,
        drop: torch.Tensor | None = None,
        action_present: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Assemble the prompt block.

        Absent text or actions fall back to the learned null rows;
        ``action_present`` (bool, shape (B,)) marks which samples carry a real
        action track when the batch mixes both kinds. Samples flagged in
        ``drop`` get the full null prompt regardless of their inputs.
        """
        if text_ids is not None:
            text = self.embed_text(text_ids).unsqueeze(1).expand(-1, frames, -1, -1)
        else:
            text = self.null_text.unsqueeze(0).unsqueeze(0).expand(batch, frames, -1, -1)
        null_act = self.null_action.view(1, 1, 1, -1).expand(batch, frames, 1, -1)
        if actions is not None:
            act = self.embed_action(actions, frames).unsqueeze(2)
            if action_present is not None:
                act = torch.where(action_present.view(-1, 1, 1, 1), act, null_act)
        else:
            act = null_act
        prompt = torch.cat([text, act], dim=2)
        if drop is not None:
            null = self.null_prompt(batch, frames)
            prompt = torch.where(drop.view(-1, 1, 1, 1), null, prompt)
        return prompt


def actions_to_tensor(actions: np.ndarray) -> torch.Tensor:
    """(N, 2) float array -> (1, N, 2) float tensor for a single-sample prompt."""
    arr = np.asarray(actions, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"action track must be (N, 2), got {arr.shape}")
    return torch.from_numpy(arr.copy()).unsqueeze(0)
