"""Discrete visual tokenizer: a k-means patch codebook mapping videos to token grids.

A video is cut into non-overlapping square patches; each patch becomes the index
of its nearest codebook vector. The reserved id ``vocab`` (one past the last
codebook entry) marks masked positions in intermediate grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import formats

KMEANS_MAX_ITERS = 50
KMEANS_TOL = 1e-6


def unit_from_bytes(pixels: np.ndarray) -> np.ndarray:
    """Map uint8 pixel values to float32 in [0, 1].

    Single conversion point shared by fitting, encoding and centroid snapping,
    so equal byte patterns always produce bit-identical float vectors.
    """
    return pixels.astype(np.float32) / np.float32(255)


def bytes_from_unit(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to uint8 with round-half-up."""
    return np.clip(np.floor(values * np.float32(255) + np.float32(0.5)), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class Video:
    """An (N, H, W, 3) uint8 RGB clip. H and W must be multiples of the patch size in use."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 4 or p.shape[3] != 3 or p.dtype != np.uint8:
            raise ValueError(f"video pixels must be (N, H, W, 3) uint8, got {p.shape} {p.dtype}")
        if p.shape[0] < 1:
            raise ValueError("video needs at least one frame")

    @property
    def frames(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    def save(self, path) -> None:
        formats.write_video(path, self.pixels)

    @classmethod
    def load(cls, path) -> "Video":
        return cls(formats.read_video(path))


@dataclass(frozen=True)
class TokenGrid:
    """An (N, h, w) grid of token ids in [0, vocab]; id ``vocab`` is the mask id."""

    tokens: np.ndarray
    vocab: int

    def __post_init__(self):
        t = self.tokens
        if t.ndim != 3 or not np.issubdtype(t.dtype, np.integer):
            raise ValueError(f"tokens must be an (N, h, w) integer array, got {t.shape} {t.dtype}")
        if t.size and (t.min() < 0 or t.max() > self.vocab):
            raise ValueError(f"token ids must lie in [0, {self.vocab}]")

    @property
    def frames(self) -> int:
        return self.tokens.shape[0]

    @property
    def th(self) -> int:
        return self.tokens.shape[1]

    @property
    def tw(self) -> int:
        return self.tokens.shape[2]

    @property
    def mask_id(self) -> int:
        return self.vocab

    def masked(self) -> np.ndarray:
        return self.tokens == self.vocab

    def save(self, path) -> None:
        formats.write_tokens(path, self.tokens, self.vocab)

    @classmethod
    def load(cls, path) -> "TokenGrid":
        tokens, vocab = formats.read_tokens(path)
        return cls(tokens, vocab)


@dataclass(frozen=True)
class Codebook:
    """Per-patch color vectors. ``vectors`` is (vocab, 3*patch*patch) float32 in [0, 1]."""

    vectors: np.ndarray
    patch_size: int

    def __post_init__(self):
        v = self.vectors
        if v.ndim != 2 or v.shape[1] != 3 * self.patch_size * self.patch_size:
            raise ValueError(f"codebook vectors have wrong shape {v.shape} for patch {self.patch_size}")
        if v.shape[0] < 2:
            raise ValueError("codebook needs at least 2 entries")

    @property
    def vocab(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def save(self, path) -> None:
        formats.write_codebook(path, self.vectors, self.patch_size)

    @classmethod
    def load(cls, path) -> "Codebook":
        vectors, patch = formats.read_codebook(path)
        return cls(vectors, patch)


def extract_patches(video: Video, patch_size: int) -> np.ndarray:
    """Cut a video into flattened (f, f, 3) patch vectors, shape (N*h*w, 3*f*f)."""
    f = patch_size
    if video.height % f or video.width % f:
        raise ValueError(
            f"patch misalignment: frame {video.height}x{video.width} not divisible by patch size {f}"
        )
    n, hh, ww = video.frames, video.height // f, video.width // f
    cut = video.pixels.reshape(n, hh, f, ww, f, 3).transpose(0, 1, 3, 2, 4, 5)
    return unit_from_bytes(cut.reshape(n * hh * ww, 3 * f * f))


def _nearest(patches: np.ndarray, vectors: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Index of the nearest vector per patch (squared L2, ties to the lowest index).

    Distances are formed from explicit differences rather than the matmul
    expansion so exactly equal inputs give exactly equal distances and the
    tie-break is reliable.
    """
    out = np.empty(len(patches), dtype=np.int32)
    for start in range(0, len(patches), chunk):
        block = patches[start:start + chunk]
        diff = block[:, None, :] - vectors[None, :, :]
        dist = np.einsum("pkd,pkd->pk", diff, diff)
        out[start:start + chunk] = np.argmin(dist, axis=1)
    return out


def _sq_dist_to(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    diff = points - center[None, :]
    return np.einsum("pd,pd->p", diff, diff)


def _kmeans_pp_seed(patches: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first center uniform, then proportional to squared distance."""
    n = len(patches)
    centers = np.empty((k, patches.shape[1]), dtype=np.float64)
    centers[0] = patches[rng.integers(n)]
    d2 = _sq_dist_to(patches, centers[0])
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining mass on already-chosen points; pick uniformly
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total))
            idx = min(idx, n - 1)
        centers[i] = patches[idx]
        d2 = np.minimum(d2, _sq_dist_to(patches, centers[i]))
    return centers


def fit_codebook(patches: np.ndarray, vocab: int, seed: int) -> Codebook:
    """Fit a k-means codebook on patch vectors.

    Runs k-means++ seeding then Lloyd iterations, capped at 50 or stopping when
    the largest centroid movement drops below 1e-6. Empty clusters are reseeded
    to the point farthest from the cluster's previous centroid. Deterministic
    given the seed. Centroids are snapped to the uint8 color lattice so that
    decode followed by encode is exact.

    Args:
        patches: (P, 3*f*f) float32 vectors in [0, 1], as from extract_patches.
        vocab: number of codebook entries, at least 2.
        seed: RNG seed for seeding and tie resolution.
    """
    patches = np.asarray(patches, dtype=np.float32)
    if vocab < 2:
        raise ValueError("codebook vocab must be at least 2")
    distinct = np.unique(patches, axis=0)
    if len(distinct) < vocab:
        raise ValueError(
            f"insufficient distinct patches: {len(distinct)} distinct, need {vocab}"
        )
    dim = patches.shape[1]
    patch_size = int(round((dim / 3) ** 0.5))

    rng = np.random.Generator(np.random.PCG64(seed))
    pts = patches.astype(np.float64)
    centers = _kmeans_pp_seed(pts, vocab, rng)

    for _ in range(KMEANS_MAX_ITERS):
        assign = _nearest(pts, centers)
        new_centers = np.zeros_like(centers)
        counts = np.bincount(assign, minlength=vocab).astype(np.float64)
        for d in range(dim):
            new_centers[:, d] = np.bincount(assign, weights=pts[:, d], minlength=vocab)
        nonempty = counts > 0
        new_centers[nonempty] /= counts[nonempty, None]
        for k in np.flatnonzero(~nonempty):
            far = int(np.argmax(_sq_dist_to(pts, centers[k])))
            new_centers[k] = pts[far]
        movement = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if movement < KMEANS_TOL:
            break

    # Snap to the uint8 lattice; repair any collisions with unused distinct patches.
    snapped = bytes_from_unit(centers.astype(np.float32))
    if len(np.unique(snapped, axis=0)) < vocab:
        pool = bytes_from_unit(distinct)
        pool_keys = [tuple(row) for row in pool]
        claimed: set[tuple] = set()
        for i in range(vocab):
            key = tuple(snapped[i])
            if key not in claimed:
                claimed.add(key)
                continue
            # farthest unclaimed lattice point keeps the repair deterministic
            order = np.argsort(
                -_sq_dist_to(pool.astype(np.float64), snapped[i].astype(np.float64)), kind="stable"
            )
            for j in order:
                if pool_keys[j] not in claimed:
                    snapped[i] = pool[j]
                    claimed.add(pool_keys[j])
                    break
            else:
                raise ValueError("insufficient distinct patches: could not repair centroid collision")

    return Codebook(unit_from_bytes(snapped), patch_size)


def encode_video(video: Video, codebook: Codebook) -> TokenGrid:
    """Quantize a video to its nearest-codebook token grid, shape (N, H/f, W/f)."""
    f = codebook.patch_size
    patches = extract_patches(video, f)
    tokens = _nearest(patches, codebook.vectors)
    n, hh, ww = video.frames, video.height // f, video.width // f
    return TokenGrid(tokens.reshape(n, hh, ww), codebook.vocab)


def decode_tokens(grid: TokenGrid, codebook: Codebook) -> Video:
    """Expand each token back to its codebook patch. Mask ids must be resolved first."""
    if grid.vocab != codebook.vocab:
        raise ValueError(f"grid vocab {grid.vocab} does not match codebook vocab {codebook.vocab}")
    if grid.masked().any():
        raise ValueError("unresolved mask token in grid")
    f = codebook.patch_size
    flat = bytes_from_unit(codebook.vectors[grid.tokens.reshape(-1)])
    n, hh, ww = grid.frames, grid.th, grid.tw
    pixels = (
        flat.reshape(n, hh, ww, f, f, 3)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, hh * f, ww * f, 3)
    )
    return Video(np.ascontiguousarray(pixels))
