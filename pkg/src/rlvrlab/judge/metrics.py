"""Clustering by pairwise judgments, Shannon diversity and faithfulness rates."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import InputError, JudgePartialResult
from ..policy import Policy, sample_instances
from ..task_env import TaskPool
from .backends import JudgeBackend
from .prompts import JudgePrompt, Response, make_response, render_prompt

logger = logging.getLogger(__name__)

LABELS = (0.0, 0.5, 1.0)
SUBSETS = ("all", "correct", "incorrect")
_STREAM_JUDGE = 401


@dataclass(frozen=True)
class SimilarityJudgment:
    pair: tuple[int, int]
    verdict: bool | None  # True = same strategy; None = unparseable
    raw: str = ""


@dataclass(frozen=True)
class Clustering:
    clusters: tuple[tuple[int, ...], ...]
    judgments: tuple[SimilarityJudgment, ...] = ()

    def __post_init__(self):
        members = [r for c in self.clusters for r in c]
        if len(set(members)) != len(members):
            raise InputError("a response appears in more than one cluster")
        if any(not c for c in self.clusters):
            raise InputError("empty cluster")

    @property
    def representatives(self) -> tuple[int, ...]:
        return tuple(c[0] for c in self.clusters)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.clusters)

    @property
    def N(self) -> int:
        return sum(self.sizes)

    @property
    def K(self) -> int:
        return len(self.clusters)


def _judge(backend, items, pairs, done: list[SimilarityJudgment]) -> list[SimilarityJudgment]:
    try:
        results = backend.similarity(items)
    except JudgePartialResult as exc:
        partial = [SimilarityJudgment(pairs[i], v, raw) for i, (v, raw) in exc.completed]
        raise JudgePartialResult(str(exc), done + partial) from exc
    out = [SimilarityJudgment(p, v, raw) for p, (v, raw) in zip(pairs, results)]
    for j in out:
        if j.verdict is None:
            logger.warning("unparseable similarity verdict for pair %s; treated as different", j.pair)
    return out


def cluster_responses(
    prompt: JudgePrompt,
    responses: Sequence[Response],
    backend: JudgeBackend,
    *,
    full_pairwise: bool = False,
) -> Clustering:
    """Greedy single-pass clustering in input order.

    Each response is compared with the representative (first member) of every
    existing cluster and joins the first one judged to share its strategy,
    otherwise it opens a new cluster. ``full_pairwise=True`` instead judges
    every pair and returns the connected components of the "same" relation,
    which matches the greedy result whenever that relation is transitive.
    An unparseable verdict counts as "different".
    """
    if len(responses) < 1:
        raise InputError("need at least one response to cluster")
    if full_pairwise:
        return _cluster_pairwise(prompt, responses, backend)
    clusters: list[list[int]] = []
    judgments: list[SimilarityJudgment] = []
    for k, r in enumerate(responses):
        if clusters:
            reps = [c[0] for c in clusters]
            pairs = [(responses[i].id, r.id) for i in reps]
            items = [(prompt, responses[i], r) for i in reps]
            batch = _judge(backend, items, pairs, judgments)
            judgments.extend(batch)
            hit = next((ci for ci, j in enumerate(batch) if j.verdict), None)
            if hit is not None:
                clusters[hit].append(k)
                continue
        clusters.append([k])
    ids = tuple(tuple(responses[i].id for i in c) for c in clusters)
    return Clustering(ids, tuple(judgments))


def _cluster_pairwise(prompt, responses, backend) -> Clustering:
    n = len(responses)
    index = [(i, j) for i in range(n) for j in range(i + 1, n)]
    pairs = [(responses[i].id, responses[j].id) for i, j in index]
    items = [(prompt, responses[i], responses[j]) for i, j in index]
    judgments = _judge(backend, items, pairs, []) if items else []
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for (i, j), jd in zip(index, judgments):
        if jd.verdict:
            a, b = find(i), find(j)
            parent[max(a, b)] = min(a, b)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    ordered = sorted(groups.values(), key=lambda g: g[0])
    return Clustering(tuple(tuple(responses[i].id for i in g) for g in ordered), tuple(judgments))


def shannon_entropy(sizes: Sequence[int]) -> float:
    n = np.asarray(sizes, dtype=float)
    p = n[n > 0] / n.sum()
    return float(-(p * np.log(p)).sum())


def diversity_score(clustering: Clustering | Sequence[int]) -> float:
    """(exp(H) - 1) / (K - 1) over cluster proportions; 0 for a single cluster."""
    sizes = clustering.sizes if isinstance(clustering, Clustering) else tuple(clustering)
    if not sizes or any(s < 1 for s in sizes):
        raise InputError("cluster sizes must be positive")
    K = len(sizes)
    if K == 1:
        return 0.0
    n_eff = math.exp(shannon_entropy(sizes))
    return (n_eff - 1.0) / (K - 1.0)


# -- policy-level estimators --------------------------------------------------


@dataclass
class PromptGroup:
    prompt: JudgePrompt
    responses: list[Response]
    correct: list[bool]


def sample_groups(
    policy: Policy,
    pool: TaskPool,
    n_prompts: int = 8,
    samples: int = 16,
    seed: int = 0,
    temperature: float = 1.0,
) -> list[PromptGroup]:
    """Roll out ``samples`` responses for the first ``n_prompts`` questions of ``pool``."""
    if n_prompts < 1 or samples < 1:
        raise InputError("need at least one prompt and one sample")
    if len(pool) < n_prompts:
        raise InputError(f"pool has {len(pool)} questions; {n_prompts} requested")
    instances = [pool[i] for i in range(n_prompts)]
    arr = sample_instances(policy, instances, samples, (seed, _STREAM_JUDGE), temperature, store_dist=False)
    groups = []
    for k, inst in enumerate(instances):
        resp = [
            make_response(j, arr.tokens[k * samples + j, : arr.lengths[k * samples + j]], pool.vocab)
            for j in range(samples)
        ]
        groups.append(PromptGroup(render_prompt(inst, pool.vocab), resp, [r.answer == inst.truth for r in resp]))
    return groups


def groups_diversity(groups: Sequence[PromptGroup], backend: JudgeBackend, *, full_pairwise: bool = False) -> list[float]:
    return [diversity_score(cluster_responses(g.prompt, g.responses, backend, full_pairwise=full_pairwise)) for g in groups]


def dataset_diversity(
    policy: Policy,
    pool: TaskPool,
    backend: JudgeBackend,
    *,
    n_prompts: int = 8,
    samples: int = 16,
    seed: int = 0,
    temperature: float = 1.0,
    full_pairwise: bool = False,
) -> float:
    """Mean per-prompt diversity score."""
    groups = sample_groups(policy, pool, n_prompts, samples, seed, temperature)
    return float(np.mean(groups_diversity(groups, backend, full_pairwise=full_pairwise)))


@dataclass(frozen=True)
class FaithfulnessLabel:
    response_id: int
    question_id: int
    label: float | None  # None = invalid judge output
    correct: bool
    raw: str = ""


@dataclass
class FaithfulnessReport:
    rates: dict[float, float] | None  # None when no valid label exists
    invalid: int
    labels: list[FaithfulnessLabel] = field(default_factory=list)
    subset: str = "correct"


def _select(group: PromptGroup, subset: str) -> list[int]:
    if subset not in SUBSETS:
        raise InputError(f"subset must be one of {SUBSETS}")
    if subset == "all":
        return list(range(len(group.responses)))
    want = subset == "correct"
    return [i for i, c in enumerate(group.correct) if c == want]


def label_groups(groups: Sequence[PromptGroup], backend: JudgeBackend, subset: str = "all") -> list[FaithfulnessLabel]:
    items, meta = [], []
    for g in groups:
        for i in _select(g, subset):
            items.append((g.prompt, g.responses[i]))
            meta.append((g.responses[i].id, g.prompt.question_id, g.correct[i]))
    out = backend.faithfulness(items) if items else []
    return [FaithfulnessLabel(rid, qid, v, c, raw) for (rid, qid, c), (v, raw) in zip(meta, out)]


def rates_from_labels(labels: Sequence[FaithfulnessLabel | float | None]) -> tuple[dict[float, float] | None, int]:
    """Fraction of valid labels at each level, plus the count of invalid ones."""
    vals = [x.label if isinstance(x, FaithfulnessLabel) else x for x in labels]
    valid = [v for v in vals if v is not None]
    invalid = len(vals) - len(valid)
    if any(v not in LABELS for v in valid):
        raise InputError(f"faithfulness labels must be in {LABELS}")
    if not valid:
        return None, invalid
    return {l: sum(v == l for v in valid) / len(valid) for l in LABELS}, invalid


def faithfulness_rates(
    policy: Policy,
    pool: TaskPool,
    backend: JudgeBackend,
    *,
    n_prompts: int = 8,
    samples: int = 16,
    seed: int = 0,
    temperature: float = 1.0,
    subset: str = "correct",
) -> FaithfulnessReport:
    groups = sample_groups(policy, pool, n_prompts, samples, seed, temperature)
    labels = label_groups(groups, backend, subset)
    rates, invalid = rates_from_labels(labels)
    return FaithfulnessReport(rates, invalid, labels, subset)


def groups_faithful_diversity(
    groups: Sequence[PromptGroup],
    labels: Sequence[FaithfulnessLabel],
    backend: JudgeBackend,
    *,
    full_pairwise: bool = False,
) -> list[float]:
    """Per-prompt diversity over responses labelled 1; fewer than two such responses score 0."""
    faithful = {(l.question_id, l.response_id) for l in labels if l.label == 1.0}
    scores = []
    for g in groups:
        keep = [r for r in g.responses if (g.prompt.question_id, r.id) in faithful]
        if len(keep) < 2:
            scores.append(0.0)
            continue
        scores.append(diversity_score(cluster_responses(g.prompt, keep, backend, full_pairwise=full_pairwise)))
    return scores


def faithful_diversity(
    policy: Policy,
    pool: TaskPool,
    backend: JudgeBackend,
    *,
    n_prompts: int = 8,
    samples: int = 16,
    seed: int = 0,
    temperature: float = 1.0,
    subset: str = "all",
    full_pairwise: bool = False,
) -> float:
    groups = sample_groups(policy, pool, n_prompts, samples, seed, temperature)
    labels = label_groups(groups, backend, subset)
    return float(np.mean(groups_faithful_diversity(groups, labels, backend, full_pairwise=full_pairwise)))
