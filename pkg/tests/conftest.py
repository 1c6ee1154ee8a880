import numpy as np
import pytest
import torch

from maskvid import ModelConfig, build_model
from maskvid.data import Dataset, DatasetEntry
from maskvid.tokenizer import Codebook, TokenGrid


@pytest.fixture
def small_cfg():
    return ModelConfig(vocab=17, frames=3, grid_h=4, grid_w=4, channels=32, layers=2,
                       heads=2, text_vocab=64, text_channels=16)


@pytest.fixture
def small_model(small_cfg):
    return build_model(small_cfg, seed=0)


def random_video(rng: np.random.Generator, frames=2, size=16):
    return rng.integers(0, 256, size=(frames, size, size, 3), dtype=np.uint8)


def toy_dataset(cfg: ModelConfig, episodes: int = 3, seed: int = 0,
                with_actions: bool = False) -> Dataset:
    """In-memory dataset of random token grids, for training tests."""
    rng = np.random.default_rng(seed)
    f = 4
    vectors = rng.random((cfg.vocab, 3 * f * f), dtype=np.float32)
    codebook = Codebook(vectors, f)
    captions = ["a red square moving east", "a blue square moving north",
                "a green square moving southwest", "a cyan square moving nowhere"]
    entries = []
    for i in range(episodes):
        tokens = rng.integers(0, cfg.vocab, size=(cfg.frames, cfg.grid_h, cfg.grid_w),
                              dtype=np.int32)
        actions = rng.random((cfg.frames, 2), dtype=np.float32) if with_actions else None
        entries.append(DatasetEntry(
            episode_id=f"ep{i:04d}",
            tokens=TokenGrid(tokens, cfg.vocab),
            caption=captions[i % len(captions)],
            actions=actions,
            meta={},
        ))
    return Dataset(entries, codebook, "test")


@pytest.fixture
def fixed_batch(small_cfg):
    from maskvid.training import Batch

    gen = torch.Generator().manual_seed(5)
    c = small_cfg
    tokens = torch.randint(0, c.vocab, (2, c.frames, c.grid_h, c.grid_w), generator=gen)
    mask = torch.rand((2, 1, c.grid_h, c.grid_w), generator=gen) < 0.4
    mask[..., 0, 0] = True
    mask = mask.expand_as(tokens).contiguous()
    text_ids = torch.randint(0, c.text_vocab, (2, c.text_len), generator=gen)
    actions = torch.rand((2, c.frames, 2), generator=gen)
    return [Batch(tokens, mask, text_ids, actions, torch.tensor([True, True]),
                  torch.tensor([False, False]), False)]
