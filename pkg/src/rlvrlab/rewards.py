"""Reward vectors under clean, corrupted and self-supervised supervision."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import records
from .errors import ConfigurationError, InputError
from .policy import GroupBatch, Policy, Rollout, sample_group, sample_instances
from .task_env import TaskInstance, TaskPool, Vocab, extract_answer, extract_answers_array

logger = logging.getLogger(__name__)

LABELS_SCHEMA = "label_set"
LABELS_VERSION = 1

REWARD_KINDS = ("verifier", "corrupted", "majority_vote", "self_certainty")

# stream tags keep probe draws independent of training draws under the same seed
_STREAM_SELECT = 101
_STREAM_PROBE = 102
_STREAM_FALLBACK = 103


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class LabelSet:
    labels: dict[int, int]
    corrupted: dict[int, bool]
    gamma: float = 0.0
    seed: int | None = None
    fallbacks: tuple[int, ...] = ()

    @classmethod
    def clean(cls, pool: TaskPool) -> "LabelSet":
        return cls({i.id: i.truth for i in pool}, {i.id: False for i in pool}, 0.0, None)

    def label(self, qid: int) -> int:
        try:
            return self.labels[qid]
        except KeyError:
            raise ConfigurationError(f"no label for question id {qid}") from None

    @property
    def flagged(self) -> list[int]:
        return [q for q, f in self.corrupted.items() if f]

    def save(self, path: str | Path) -> Path:
        head = records.header(LABELS_SCHEMA, LABELS_VERSION, gamma=self.gamma, seed=self.seed)
        recs = (
            {
                "id": q,
                "label": self.labels[q],
                "corrupted": bool(self.corrupted.get(q, False)),
                "gamma": self.gamma,
                "seed": self.seed,
                "fallback": q in self.fallbacks,
            }
            for q in self.labels
        )
        return records.write_records(path, head, recs)

    @classmethod
    def load(cls, path: str | Path) -> "LabelSet":
        head, recs = records.read_records(path, LABELS_SCHEMA, LABELS_VERSION)
        labels, flags, fallbacks = {}, {}, []
        for lineno, rec in enumerate(recs, start=2):
            records.require_fields(rec, ("id", "label", "corrupted"), path=path, line=lineno)
            labels[int(rec["id"])] = int(rec["label"])
            flags[int(rec["id"])] = bool(rec["corrupted"])
            if rec.get("fallback"):
                fallbacks.append(int(rec["id"]))
        return cls(labels, flags, float(head["gamma"]), head.get("seed"), tuple(fallbacks))


@dataclass(frozen=True)
class RewardSource:
    kind: str = "verifier"
    gamma: float = 0.0
    vote_samples: int = 16
    advantage_subset: int = 8

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise ConfigurationError(f"unknown reward kind {self.kind!r}; expected one of {REWARD_KINDS}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [0, 1]")
        if self.kind == "majority_vote":
            if not 2 <= self.advantage_subset <= self.vote_samples:
                raise ConfigurationError("need 2 <= advantage_subset <= vote_samples")


# -- corrupted labels ---------------------------------------------------------


def most_frequent_incorrect(answers: Sequence[int | None], truth: int) -> int | None:
    """Most common answer other than ``truth``; ties go to the smallest token id."""
    counts = Counter(a for a in answers if a is not None and a != truth)
    if not counts:
        return None
    top = max(counts.values())
    return min(a for a, c in counts.items() if c == top)


def corrupt_labels(
    pool: TaskPool,
    policy: Policy,
    gamma: float,
    probe_samples: int = 96,
    seed: int = 0,
    *,
    temperature: float = 1.0,
) -> LabelSet:
    """Replace the labels of ``round(gamma * N)`` uniformly chosen prompts.

    Each chosen prompt gets the most frequent verifier-incorrect answer among
    ``probe_samples`` rollouts of ``policy``; if no incorrect answer shows up
    a random incorrect answer token is used instead.
    """
    if not 0.0 <= gamma <= 1.0:
        raise InputError("gamma must lie in [0, 1]")
    if probe_samples < 1:
        raise InputError("probe_samples must be >= 1")
    vocab = pool.vocab
    if len(vocab.answer_tokens) < 2:
        raise ConfigurationError("cannot corrupt labels with a single answer token")
    N = len(pool)
    n_flag = round_half_up(gamma * N)
    chosen_idx = np.random.default_rng([seed, _STREAM_SELECT]).choice(N, size=n_flag, replace=False)
    chosen = [pool[int(i)] for i in sorted(chosen_idx)]

    labels = {i.id: i.truth for i in pool}
    flags = {i.id: False for i in pool}
    fallbacks = []
    if chosen:
        arr = sample_instances(
            policy, chosen, probe_samples, (seed, _STREAM_PROBE), temperature, store_dist=False
        )
        answers = extract_answers_array(arr.tokens, arr.lengths, vocab).reshape(len(chosen), probe_samples)
        for k, inst in enumerate(chosen):
            row = answers[k]
            wrong = row[(row >= 0) & (row != inst.truth)]
            if wrong.size:
                vals, counts = np.unique(wrong, return_counts=True)
                new = int(vals[np.argmax(counts)])  # np.unique sorts, argmax takes the first max
            else:
                candidates = [t for t in vocab.answer_tokens if t != inst.truth]
                rng = np.random.default_rng([seed, _STREAM_FALLBACK, inst.id])
                new = int(candidates[rng.integers(len(candidates))])
                fallbacks.append(inst.id)
                logger.info("question %d: no incorrect answer in %d probes; using random token %d",
                            inst.id, probe_samples, new)
            labels[inst.id] = new
            flags[inst.id] = True
    return LabelSet(labels, flags, float(gamma), seed, tuple(fallbacks))


# -- majority vote ------------------------------------------------------------


def majority_label(answers: Sequence[int | None]) -> tuple[int | None, bool]:
    """Plurality answer and whether a tie had to be broken (smallest id wins)."""
    counts = Counter(a for a in answers if a is not None)
    if not counts:
        return None, False
    top = max(counts.values())
    winners = sorted(a for a, c in counts.items() if c == top)
    return winners[0], len(winners) > 1


def majority_rewards_from_answers(
    answers: Sequence[int | None], advantage_subset: int
) -> tuple[int | None, np.ndarray, bool]:
    label, tie = majority_label(answers)
    subset = answers[:advantage_subset]
    rewards = np.array([float(label is not None and a == label) for a in subset])
    return label, rewards, tie


def majority_vote_rewards(
    policy: Policy,
    instance: TaskInstance,
    vote_samples: int = 16,
    advantage_subset: int = 8,
    seed: int = 0,
    *,
    temperature: float = 1.0,
) -> tuple[int | None, GroupBatch]:
    """Pseudo-label by plurality vote over ``vote_samples`` rollouts.

    Returns the pseudo-label and the first ``advantage_subset`` rollouts with
    agreement rewards.
    """
    if advantage_subset > vote_samples:
        raise InputError("advantage_subset must not exceed vote_samples")
    batch = sample_group(policy, instance, vote_samples, temperature, None, seed)
    answers = [extract_answer(r, policy.vocab) for r in batch.rollouts]
    label, rewards, tie = majority_rewards_from_answers(answers, advantage_subset)
    if label is None:
        logger.info("question %d: no extractable answer among %d votes", instance.id, vote_samples)
    elif tie:
        logger.info("question %d: majority tie broken toward token %d", instance.id, label)
    sub = GroupBatch(batch.question_id, batch.rollouts[:advantage_subset], rewards, batch.sampled_by)
    return label, sub


# -- self-certainty -----------------------------------------------------------


def self_certainty_from_dists(dists: np.ndarray, V: int) -> float:
    """Mean over positions of KL(U || p) for a (positions, V) array."""
    dists = np.asarray(dists, dtype=float)
    logp = np.log(np.maximum(dists, np.finfo(float).tiny))
    kl = -math.log(V) - logp.mean(axis=-1)
    return float(kl.mean())


def self_certainty(rollout: Rollout, V: int) -> float:
    """Average KL divergence from the uniform distribution to the stored next-token distributions."""
    if rollout.dist_old is None:
        raise InputError("self-certainty needs the rollout's stored per-token distributions")
    if rollout.dist_old.shape[-1] != V:
        raise InputError(f"stored distributions have {rollout.dist_old.shape[-1]} entries, expected {V}")
    return self_certainty_from_dists(rollout.dist_old, V)


def self_certainty_arrays(dist: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Vectorised self-certainty for padded (n, L, V) distributions."""
    n, L, V = dist.shape
    valid = np.arange(L)[None, :] < lengths[:, None]
    logp = np.log(np.maximum(np.where(valid[..., None], dist, 1.0 / V), np.finfo(float).tiny))
    kl = -math.log(V) - logp.mean(axis=-1)
    return (kl * valid).sum(axis=1) / lengths


# -- dispatch -----------------------------------------------------------------


def assign_rewards(
    batch: GroupBatch,
    source: RewardSource,
    labels: LabelSet | None,
    vocab: Vocab,
) -> GroupBatch:
    """Fill ``batch.rewards`` according to ``source``.

    For ``majority_vote`` the batch itself is the vote set and every rollout is
    rewarded; the training loop uses :func:`majority_vote_rewards` to vote over
    a larger sample.
    """
    if source.kind in ("verifier", "corrupted"):
        if labels is None:
            raise ConfigurationError(f"reward kind {source.kind!r} needs a label set")
        target = labels.label(batch.question_id)
        rewards = [float(extract_answer(r, vocab) == target) for r in batch.rollouts]
    elif source.kind == "majority_vote":
        answers = [extract_answer(r, vocab) for r in batch.rollouts]
        _, rewards, _ = majority_rewards_from_answers(answers, len(answers))
    else:
        rewards = [self_certainty(r, vocab.size) for r in batch.rollouts]
    return batch.with_rewards(rewards)
