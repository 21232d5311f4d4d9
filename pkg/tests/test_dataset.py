from __future__ import annotations

import numpy as np
import pytest

from rlvrlab.dataset import DifficultyProfile, StratifiedSample, estimate_solve16, filter_and_sample
from rlvrlab.errors import InputError, ShortfallError
from rlvrlab.grpo import evaluate
from rlvrlab.policy import Policy
from rlvrlab.task_env import generate_pool


def _stocked_profile(per_bin: int = 3) -> DifficultyProfile:
    counts, q = {}, 0
    for c in range(17):
        for _ in range(per_bin):
            counts[q] = c
            q += 1
    return DifficultyProfile(counts, seed=0)


def test_first_pass_takes_one_per_bin_in_order():
    prof = _stocked_profile()
    for seed in range(20):
        s = filter_and_sample(prof, 8, seed)
        assert [s.bins[q] for q in s.ids] == list(range(1, 9))
        assert all(prof.counts[q] == s.bins[q] for q in s.ids)


def test_round_robin_second_pass():
    prof = _stocked_profile(per_bin=2)
    s = filter_and_sample(prof, 20, 3)
    assert [s.bins[q] for q in s.ids] == list(range(1, 16)) + [1, 2, 3, 4, 5]


def test_empty_bins_are_skipped():
    prof = DifficultyProfile({0: 0, 1: 3, 2: 3, 3: 16, 4: 9, 5: 15}, seed=0)
    s = filter_and_sample(prof, 4, 0)
    assert sorted(s.bins[q] for q in s.ids) == [3, 3, 9, 15]
    assert [s.bins[q] for q in s.ids][:3] == [3, 9, 15]


def test_shortfall_is_reported():
    prof = DifficultyProfile({0: 0, 1: 5, 2: 16}, seed=0)
    with pytest.raises(ShortfallError) as info:
        filter_and_sample(prof, 3, 0)
    assert (info.value.requested, info.value.available, info.value.shortfall) == (3, 1, 2)


def test_profile_matches_evaluate_counts():
    pool = generate_pool("parity", 12, 3, 0)
    pol = Policy.init("shared", pool.vocab, 5, pool.n_features, init_scale=0.8, seed=2)
    prof = estimate_solve16(pol, pool, seed=4)
    assert set(prof.counts) == set(pool.ids)
    assert all(0 <= c <= 16 for c in prof.counts.values())
    flags = evaluate(pol, pool, 4, 16, stream=301)
    assert [prof.counts[q] for q in pool.ids] == flags.sum(axis=1).tolist()


def test_profile_and_sample_round_trip(tmp_path):
    prof = _stocked_profile()
    assert DifficultyProfile.load(prof.save(tmp_path / "p.jsonl")) == prof
    s = filter_and_sample(prof, 10, 1)
    assert StratifiedSample.load(s.save(tmp_path / "s.jsonl")) == s


def test_invariants():
    with pytest.raises(InputError):
        DifficultyProfile({0: 17}, seed=0)
    with pytest.raises(InputError):
        StratifiedSample((1, 1), {1: 2})
    with pytest.raises(InputError):
        filter_and_sample(_stocked_profile(), 0, 0)
