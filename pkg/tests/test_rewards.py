from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import random_policy, tiny_pool
from rlvrlab.errors import ConfigurationError, InputError
from rlvrlab.policy import GroupBatch, Policy, Rollout
from rlvrlab.rewards import (
    LabelSet,
    RewardSource,
    assign_rewards,
    corrupt_labels,
    majority_label,
    majority_vote_rewards,
    most_frequent_incorrect,
    round_half_up,
    self_certainty,
    self_certainty_arrays,
)
from rlvrlab.task_env import TaskInstance, TaskPool, Vocab


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 2.4999, 0.0)] == [1, 2, 3, 2, 0]


@pytest.mark.parametrize(
    "answers,expected", [([1, 2, 2, 1], (1, True)), ([2, 2, 1], (2, False)), ([None, None], (None, False))]
)
def test_majority_label(answers, expected):
    assert majority_label(answers) == expected


def test_most_frequent_incorrect():
    assert most_frequent_incorrect([1, 1, 2, 3, 3, None], truth=1) == 3
    assert most_frequent_incorrect([1, 2, 3], truth=1) == 2
    assert most_frequent_incorrect([1, None], truth=1) is None


def _answer_policy(pool: TaskPool, probs: dict[int, float]) -> Policy:
    """One-token tabular policy emitting answer tokens with fixed probabilities."""
    V = pool.vocab.size
    row = np.full(V, -60.0)
    for tok, p in probs.items():
        row[tok] = math.log(p)
    params = np.tile(row, (len(pool), 1, 1))
    return Policy("tabular", pool.vocab, 1, pool.n_features, params)


def _pool(n, vocab, truth=1):
    insts = tuple(TaskInstance(i, (0.0,), truth, 1) for i in range(n))
    return TaskPool(insts, 0, "parity", 1, vocab, 0)


def test_corrupted_label_matches_multinomial_oracle():
    vocab = Vocab(4, (1, 2, 3), 0)
    pool = _pool(25, vocab)
    pol = _answer_policy(pool, {1: 0.5, 2: 0.3, 3: 0.2})
    K = 96
    # exact P(label == 2): count of 2 >= count of 3 among the K probes (ties go to
    # the smaller id), or neither appears and the random fallback picks 2
    p2 = 0.0
    for c2 in range(K + 1):
        for c3 in range(K - c2 + 1):
            c1 = K - c2 - c3
            pm = math.exp(
                math.lgamma(K + 1) - math.lgamma(c1 + 1) - math.lgamma(c2 + 1) - math.lgamma(c3 + 1)
                + c1 * math.log(0.5) + c2 * math.log(0.3) + c3 * math.log(0.2)
            )
            if c2 == c3 == 0:
                p2 += 0.5 * pm
            elif c2 >= c3:
                p2 += pm
    hits = trials = 0
    for seed in range(16):
        ls = corrupt_labels(pool, pol, gamma=1.0, probe_samples=K, seed=seed)
        for q in ls.flagged:
            assert ls.labels[q] in (2, 3)
            hits += ls.labels[q] == 2
            trials += 1
    assert trials == 16 * 25
    se = math.sqrt(p2 * (1 - p2) / trials)
    assert abs(hits / trials - p2) < 4 * se + 1e-3


def test_corruption_count_and_determinism():
    pool = tiny_pool(n=8)
    pol = random_policy("tabular", pool, max_len=2)
    for gamma, expected in [(0.0, 0), (0.0625, 1), (0.25, 2), (0.5, 4), (1.0, 8)]:
        ls = corrupt_labels(pool, pol, gamma, probe_samples=12, seed=4)
        assert len(ls.flagged) == expected
        for q in ls.flagged:
            assert ls.labels[q] != pool.by_id(q).truth
        for q in set(ls.labels) - set(ls.flagged):
            assert ls.labels[q] == pool.by_id(q).truth
    a = corrupt_labels(pool, pol, 0.5, 12, seed=4)
    b = corrupt_labels(pool, pol, 0.5, 12, seed=4)
    assert a == b


def test_corruption_fallback_when_probes_always_correct():
    vocab = Vocab(4, (1, 2, 3), 0)
    pool = _pool(4, vocab)
    pol = _answer_policy(pool, {1: 1.0})
    ls = corrupt_labels(pool, pol, 1.0, probe_samples=10, seed=0)
    assert set(ls.fallbacks) == {0, 1, 2, 3}
    assert all(ls.labels[q] in (2, 3) for q in range(4))


def test_label_set_round_trip(tmp_path):
    pool = tiny_pool(n=6)
    pol = random_policy("tabular", pool)
    ls = corrupt_labels(pool, pol, 0.5, 8, seed=1)
    back = LabelSet.load(ls.save(tmp_path / "labels.jsonl"))
    assert back == ls


def test_corrupt_rejects_bad_input():
    pool = tiny_pool()
    pol = random_policy("tabular", pool)
    with pytest.raises(InputError):
        corrupt_labels(pool, pol, 1.5)
    single = TaskPool(pool.instances[:1], 0, "parity", 1, Vocab(4, (1,), 0), 0)
    with pytest.raises(ConfigurationError):
        corrupt_labels(single, pol, 0.5)


def test_majority_vote_uses_first_subset():
    vocab = Vocab(4, (1, 2, 3), 0)
    pool = _pool(1, vocab)
    pol = _answer_policy(pool, {1: 0.5, 2: 0.3, 3: 0.2})
    label, sub = majority_vote_rewards(pol, pool.instances[0], 16, 8, seed=3)
    assert sub.G == 8
    from rlvrlab.policy import sample_group

    full = sample_group(pol, pool.instances[0], 16, seed=3)
    answers = [r.tokens[-1] for r in full.rollouts]
    assert label == majority_label(answers)[0]
    assert [r.tokens for r in sub.rollouts] == [r.tokens for r in full.rollouts[:8]]
    assert np.array_equal(sub.rewards, [float(a == label) for a in answers[:8]])


def test_self_certainty_against_direct_kl():
    rng = np.random.default_rng(0)
    d = rng.dirichlet(np.ones(5), size=3)
    r = Rollout(0, (1, 2, 0), np.zeros(3), d)
    direct = np.mean([(0.2 * np.log(0.2 / row)).sum() for row in d])
    assert self_certainty(r, 5) == pytest.approx(direct, abs=1e-12)
    uniform = Rollout(0, (1,), np.zeros(1), np.full((1, 5), 0.2))
    assert self_certainty(uniform, 5) == pytest.approx(0.0, abs=1e-15)
    padded = np.concatenate([d[None], np.zeros((1, 3, 5))])
    padded[1, 0] = d[0]
    got = self_certainty_arrays(padded, np.array([3, 1]))
    assert got[0] == pytest.approx(direct)
    assert got[1] == pytest.approx((0.2 * np.log(0.2 / d[0])).sum())


def test_self_certainty_needs_distributions():
    with pytest.raises(InputError):
        self_certainty(Rollout(0, (1,), np.zeros(1)), 4)


def test_assign_rewards_dispatch():
    vocab = Vocab(4, (1, 2), 0)
    rolls = [Rollout(0, t, np.zeros(len(t)), np.full((len(t), 4), 0.25)) for t in [(1, 0), (2, 0), (3, 3)]]
    batch = GroupBatch(0, rolls)
    labels = LabelSet({0: 2}, {0: True})
    assert list(assign_rewards(batch, RewardSource("corrupted", 0.5), labels, vocab).rewards) == [0, 1, 0]
    assert list(assign_rewards(batch, RewardSource("majority_vote", 0, 3, 2), None, vocab).rewards) == [1, 0, 0]
    assert np.allclose(assign_rewards(batch, RewardSource("self_certainty"), None, vocab).rewards, 0.0)
    with pytest.raises(ConfigurationError):
        assign_rewards(batch, RewardSource("verifier"), None, vocab)
    with pytest.raises(ConfigurationError):
        RewardSource("bogus")
    with pytest.raises(ConfigurationError):
        RewardSource("majority_vote", 0, 4, 8)
