import numpy as np
import pytest

from maskvid.tokenizer import (Codebook, TokenGrid, Video, bytes_from_unit, decode_tokens,
                               encode_video, extract_patches, fit_codebook, unit_from_bytes)
from tests.conftest import random_video


def brute_force_kmeans(points: np.ndarray, centers: np.ndarray, iters: int = 50) -> np.ndarray:
    """Reference Lloyd iteration with exhaustive nearest-center search."""
    centers = centers.astype(np.float64).copy()
    for _ in range(iters):
        dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = dist.argmin(axis=1)
        for k in range(len(centers)):
            members = points[assign == k]
            if len(members):
                centers[k] = members.mean(axis=0)
    return centers


def two_color_patches(f=2):
    a = np.zeros((1, f, f, 3), dtype=np.uint8)
    b = np.full((1, f, f, 3), 200, dtype=np.uint8)
    video = Video(np.concatenate([np.repeat(a, 3, axis=0), np.repeat(b, 5, axis=0)]))
    return extract_patches(video, f)


def test_two_color_fit_matches_brute_force():
    patches = two_color_patches()
    cb = fit_codebook(patches, 2, seed=0)
    expected = brute_force_kmeans(patches.astype(np.float64),
                                  np.unique(patches, axis=0))
    got = np.sort(cb.vectors, axis=0)
    want = np.sort(expected.astype(np.float32), axis=0)
    assert np.array_equal(got, want)  # centroids equal the two colors exactly


def test_vocab_below_two_rejected():
    with pytest.raises(ValueError, match="at least 2"):
        fit_codebook(two_color_patches(), 1, seed=0)


def test_fit_deterministic():
    rng = np.random.default_rng(3)
    video = Video(random_video(rng, frames=3, size=16))
    patches = extract_patches(video, 4)
    a = fit_codebook(patches, 8, seed=42)
    b = fit_codebook(patches, 8, seed=42)
    assert np.array_equal(a.vectors, b.vectors)


def test_insufficient_distinct_patches():
    patches = two_color_patches()  # exactly two distinct vectors
    with pytest.raises(ValueError, match="insufficient distinct patches"):
        fit_codebook(patches, 3, seed=0)


def test_constant_video_hits_exact_entry():
    rng = np.random.default_rng(4)
    vectors = unit_from_bytes(rng.integers(0, 256, size=(8, 12), dtype=np.uint8))
    cb = Codebook(vectors, 2)
    color = bytes_from_unit(vectors[3]).reshape(2, 2, 3)
    video = Video(np.broadcast_to(color, (2, 6, 4, 3)).copy())
    grid = encode_video(video, cb)
    assert (grid.tokens == 3).all()


def test_encode_shape_arithmetic():
    rng = np.random.default_rng(5)
    video = Video(random_video(rng, frames=2, size=8))
    patches = extract_patches(video, 4)
    cb = fit_codebook(patches, 4, seed=0)
    grid = encode_video(video, cb)
    assert grid.tokens.shape == (2, 2, 2)


def test_patch_misalignment_rejected():
    video = Video(np.zeros((1, 6, 6, 3), dtype=np.uint8))
    rng = np.random.default_rng(6)
    cb = Codebook(rng.random((4, 48), dtype=np.float32), 4)
    with pytest.raises(ValueError, match="patch misalignment"):
        encode_video(video, cb)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_encode_decode_idempotent(seed):
    rng = np.random.default_rng(seed)
    video = Video(random_video(rng, frames=2, size=16))
    cb = fit_codebook(extract_patches(video, 4), 12, seed=seed)
    grid = encode_video(video, cb)
    again = encode_video(decode_tokens(grid, cb), cb)
    assert np.array_equal(grid.tokens, again.tokens)


def test_decode_then_encode_round_trip():
    rng = np.random.default_rng(7)
    vectors = unit_from_bytes(rng.integers(0, 256, size=(10, 27), dtype=np.uint8))
    cb = Codebook(vectors, 3)
    tokens = rng.integers(0, 10, size=(2, 3, 3), dtype=np.int32)
    grid = TokenGrid(tokens, 10)
    assert np.array_equal(encode_video(decode_tokens(grid, cb), cb).tokens, tokens)


def test_decode_constant_grid():
    vectors = unit_from_bytes(np.stack([
        np.full(12, 30, dtype=np.uint8), np.full(12, 200, dtype=np.uint8)]))
    cb = Codebook(vectors, 2)
    grid = TokenGrid(np.zeros((1, 2, 2), dtype=np.int32), 2)
    video = decode_tokens(grid, cb)
    assert (video.pixels == 30).all()


def test_decode_rejects_mask_id():
    rng = np.random.default_rng(8)
    cb = Codebook(rng.random((4, 12), dtype=np.float32), 2)
    grid = TokenGrid(np.full((1, 1, 1), 4, dtype=np.int32), 4)
    with pytest.raises(ValueError, match="unresolved mask token"):
        decode_tokens(grid, cb)


def test_nearest_neighbor_optimality():
    rng = np.random.default_rng(9)
    video = Video(random_video(rng, frames=2, size=12))
    patches = extract_patches(video, 4)
    cb = fit_codebook(patches, 6, seed=1)
    grid = encode_video(video, cb)
    assign = grid.tokens.reshape(-1)
    dist = ((patches[:, None, :].astype(np.float64)
             - cb.vectors[None, :, :].astype(np.float64)) ** 2).sum(axis=2)
    chosen = dist[np.arange(len(patches)), assign]
    assert (chosen <= dist.min(axis=1) + 1e-12).all()


def test_tie_breaks_to_lowest_index():
    one = unit_from_bytes(np.full(12, 1, dtype=np.uint8))
    vectors = np.stack([np.zeros(12, dtype=np.float32), 2 * one])
    cb = Codebook(vectors, 2)
    pixels = np.full((1, 2, 2, 3), 1, dtype=np.uint8)  # exactly between the two entries
    grid = encode_video(Video(pixels), cb)
    assert (grid.tokens == 0).all()


def test_round_half_up_decode():
    # value 0.5/255 rounds up to 1, value 0.49/255 rounds down to 0
    vec = np.array([0.5 / 255, 0.49 / 255], dtype=np.float32)
    assert bytes_from_unit(vec).tolist() == [1, 0]


def test_codebook_file_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    video = Video(random_video(rng, frames=1, size=8))
    cb = fit_codebook(extract_patches(video, 4), 3, seed=0)
    cb.save(tmp_path / "cb.dcbk")
    back = Codebook.load(tmp_path / "cb.dcbk")
    assert back.patch_size == cb.patch_size
    assert np.array_equal(back.vectors, cb.vectors)
