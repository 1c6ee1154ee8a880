import math
import random

import numpy as np
import pytest

from maskvid.masking import (FrameMask, UnmaskSchedule, inference_unmask_counts,
                             sample_mask_rate, sample_train_mask)


def test_rate_endpoints():
    assert sample_mask_rate(0.0) == 0.0
    assert sample_mask_rate(1.0) == 1.0


def test_rate_closed_form():
    # inverse CDF at u = 1/3 is sin(pi/6) = 0.5
    assert math.isclose(sample_mask_rate(1 / 3), 0.5, rel_tol=0, abs_tol=1e-12)


def test_rate_rejects_out_of_range():
    with pytest.raises(ValueError):
        sample_mask_rate(-0.01)
    with pytest.raises(ValueError):
        sample_mask_rate(1.01)


def test_rate_mean_matches_analytic():
    rng = random.Random(0)
    n = 100_000
    mean = sum(sample_mask_rate(rng.random()) for _ in range(n)) / n
    assert abs(mean - 2 / math.pi) < 0.01


def test_forced_full_rate_masks_everything():
    mask = sample_train_mask(4, 4, random.Random(0), rate=1.0)
    assert mask.count == 16


def test_forced_quarter_rate_masks_four():
    # ceil(0.25 * 16) = 4
    mask = sample_train_mask(4, 4, random.Random(0), rate=0.25)
    assert mask.count == 4


def test_minimum_one_masked():
    mask = sample_train_mask(4, 4, random.Random(0), rate=0.0)
    assert mask.count == 1


def test_mask_shared_across_frames():
    mask = sample_train_mask(4, 4, random.Random(7))
    per_frame = [mask.as_array() for _ in range(3)]
    assert all(np.array_equal(per_frame[0], arr) for arr in per_frame[1:])


def test_mask_positions_in_bounds_and_unique():
    for seed in range(20):
        mask = sample_train_mask(3, 5, random.Random(seed))
        assert 1 <= mask.count <= 15
        assert len(mask.positions) == mask.count  # frozenset, so unique by type


def test_frame_mask_validation():
    with pytest.raises(ValueError):
        FrameMask(2, 2, frozenset())
    with pytest.raises(ValueError):
        FrameMask(2, 2, frozenset({(2, 0)}))


def test_schedule_single_step():
    assert inference_unmask_counts(100, 1).counts == (100,)


def test_schedule_two_steps_closed_form():
    # remaining(1) = round(100 * cos(pi/4)) = 71
    assert inference_unmask_counts(100, 2).counts == (29, 71)


def test_schedule_default_ten_steps():
    schedule = inference_unmask_counts(512, 10)
    assert schedule.steps == 10
    assert schedule.total == 512


def test_schedule_rejects_more_steps_than_tokens():
    with pytest.raises(ValueError, match="more steps than masked tokens"):
        inference_unmask_counts(5, 6)


@pytest.mark.parametrize("masked,steps", [(10, 10), (17, 5), (64, 10), (512, 10), (3, 2),
                                          (1000, 37), (2, 2)])
def test_schedule_properties(masked, steps):
    schedule = inference_unmask_counts(masked, steps)
    assert schedule.total == masked
    assert all(c >= 1 for c in schedule.counts)
    remaining = masked
    seen = []
    for c in schedule.counts:
        remaining -= c
        seen.append(remaining)
    assert seen[-1] == 0
    assert all(a > b for a, b in zip([masked] + seen, seen))  # strictly decreasing


def test_schedule_validation():
    with pytest.raises(ValueError):
        UnmaskSchedule(2, (1,))
    with pytest.raises(ValueError):
        UnmaskSchedule(2, (0, 2))
