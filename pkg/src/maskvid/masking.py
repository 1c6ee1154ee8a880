"""Cosine mask-rate sampling for training and the cosine unmasking schedule for inference.

Training draws a mask rate r with density (2/pi) / sqrt(1 - r^2) via its
inverse CDF r = sin(pi*u/2), then masks ceil(r * h * w) positions shared by
every frame of the sample. Inference unmasks so that the remaining masked
count follows round(M * cos(pi*t / (2T))).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FrameMask:
    """A set of masked (row, col) positions, applied identically to every frame."""

    th: int
    tw: int
    positions: frozenset[tuple[int, int]]

    def __post_init__(self):
        if not 1 <= len(self.positions) <= self.th * self.tw:
            raise ValueError(f"mask must cover between 1 and {self.th * self.tw} positions")
        for r, c in self.positions:
            if not (0 <= r < self.th and 0 <= c < self.tw):
                raise ValueError(f"mask position ({r}, {c}) outside {self.th}x{self.tw} grid")

    @property
    def count(self) -> int:
        return len(self.positions)

    def as_array(self) -> np.ndarray:
        arr = np.zeros((self.th, self.tw), dtype=bool)
        for r, c in self.positions:
            arr[r, c] = True
        return arr


@dataclass(frozen=True)
class UnmaskSchedule:
    """Per-step unmask counts for one decoding run; counts sum to the initial masked total."""

    steps: int
    counts: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.counts) != self.steps:
            raise ValueError("schedule length must equal step count")
        if any(c < 1 for c in self.counts):
            raise ValueError("every schedule step must unmask at least one token")

    @property
    def total(self) -> int:
        return sum(self.counts)


def sample_mask_rate(u: float) -> float:
    """Map a uniform draw to a mask rate via the inverse CDF of the cosine-schedule density."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"uniform draw must lie in [0, 1], got {u}")
    return math.sin(math.pi * u / 2.0)


def sample_train_mask(th: int, tw: int, rng: random.Random, rate: float | None = None) -> FrameMask:
    """Draw a training mask over a th x tw grid.

    The rate comes from sample_mask_rate unless forced via ``rate``; the masked
    count is ceil(rate * th * tw), clamped to [1, th * tw]. Positions are chosen
    uniformly without replacement. Callers replicate the mask across frames.
    """
    total = th * tw
    if total < 1:
        raise ValueError("grid must contain at least one position")
    if rate is None:
        rate = sample_mask_rate(rng.random())
    count = min(max(math.ceil(rate * total), 1), total)
    chosen = rng.sample(range(total), count)
    return FrameMask(th, tw, frozenset((i // tw, i % tw) for i in chosen))


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def inference_unmask_counts(masked: int, steps: int) -> UnmaskSchedule:
    """Split ``masked`` tokens over ``steps`` decoding steps along the cosine curve.

    remaining(t) = round(M * cos(pi*t / (2T))) with remaining(T) = 0; the raw
    per-step differences are repaired to be at least 1 each, removing the
    surplus from the final steps, so the counts still sum to M.
    """
    if masked < 1:
        raise ValueError("need at least one masked token")
    if steps < 1:
        raise ValueError("need at least one step")
    if steps > masked:
        raise ValueError(f"more steps than masked tokens: {steps} > {masked}")

    remaining = [masked]
    for t in range(1, steps):
        value = _round_half_up(masked * math.cos(math.pi * t / (2 * steps)))
        remaining.append(min(value, remaining[-1]))
    remaining.append(0)

    counts = [max(1, remaining[t] - remaining[t + 1]) for t in range(steps)]
    surplus = sum(counts) - masked
    idx = steps - 1
    while surplus > 0:
        take = min(surplus, counts[idx] - 1)
        counts[idx] -= take
        surplus -= take
        idx -= 1
    return UnmaskSchedule(steps, tuple(counts))
