"""Model-aware difficulty estimation and stratified round-robin sampling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import records
from .errors import InputError, ShortfallError
from .grpo import evaluate
from .policy import Policy
from .task_env import TaskPool

PROFILE_SCHEMA = "difficulty_profile"
SAMPLE_SCHEMA = "stratified_sample"
VERSION = 1

PROBE_SAMPLES = 16
N_PRESETS = (8, 32, 64, 512, 2048)

_STREAM_PROBE = 301
_STREAM_SAMPLE = 302


@dataclass(frozen=True)
class DifficultyProfile:
    counts: dict[int, int]
    seed: int
    n_samples: int = PROBE_SAMPLES

    def __post_init__(self):
        for q, c in self.counts.items():
            if not 0 <= c <= self.n_samples:
                raise InputError(f"solve count {c} for question {q} outside [0, {self.n_samples}]")

    def retained(self) -> list[int]:
        return [q for q, c in self.counts.items() if 1 <= c <= self.n_samples - 1]

    def save(self, path: str | Path) -> Path:
        head = records.header(PROFILE_SCHEMA, VERSION, seed=self.seed, n_samples=self.n_samples)
        return records.write_records(path, head, ({"id": q, "solved": c} for q, c in self.counts.items()))

    @classmethod
    def load(cls, path: str | Path) -> "DifficultyProfile":
        head, recs = records.read_records(path, PROFILE_SCHEMA, VERSION)
        counts = {}
        for lineno, rec in enumerate(recs, start=2):
            records.require_fields(rec, ("id", "solved"), path=path, line=lineno)
            counts[int(rec["id"])] = int(rec["solved"])
        return cls(counts, int(head["seed"]), int(head.get("n_samples", PROBE_SAMPLES)))


@dataclass(frozen=True)
class StratifiedSample:
    ids: tuple[int, ...]
    bins: dict[int, int]

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise InputError("stratified sample contains duplicate ids")

    def __len__(self) -> int:
        return len(self.ids)

    def save(self, path: str | Path) -> Path:
        head = records.header(SAMPLE_SCHEMA, VERSION, n=len(self.ids))
        return records.write_records(path, head, ({"id": q, "bin": self.bins[q]} for q in self.ids))

    @classmethod
    def load(cls, path: str | Path) -> "StratifiedSample":
        _, recs = records.read_records(path, SAMPLE_SCHEMA, VERSION)
        ids, bins = [], {}
        for lineno, rec in enumerate(recs, start=2):
            records.require_fields(rec, ("id", "bin"), path=path, line=lineno)
            ids.append(int(rec["id"]))
            bins[int(rec["id"])] = int(rec["bin"])
        return cls(tuple(ids), bins)


def estimate_solve16(
    policy: Policy, pool: TaskPool, seed: int, *, n_samples: int = PROBE_SAMPLES, temperature: float = 1.0
) -> DifficultyProfile:
    """Count verifier-correct answers among ``n_samples`` rollouts per question."""
    flags = evaluate(policy, pool, seed, n_samples, temperature, stream=_STREAM_PROBE)
    counts = {q: int(c) for q, c in zip(pool.ids, flags.sum(axis=1))}
    return DifficultyProfile(counts, int(seed), n_samples)


def filter_and_sample(profile: DifficultyProfile, N: int, seed: int) -> StratifiedSample:
    """Round-robin over solve-count bins 1..n-1, one random draw per nonempty bin per pass.

    Stops as soon as ``N`` questions are selected.
    """
    if N < 1:
        raise InputError("N must be >= 1")
    top = profile.n_samples - 1
    bins = {i: sorted(q for q, c in profile.counts.items() if c == i) for i in range(1, top + 1)}
    available = sum(len(b) for b in bins.values())
    if available < N:
        raise ShortfallError(N, available)
    rng = np.random.default_rng([seed, _STREAM_SAMPLE])
    chosen: list[int] = []
    assigned: dict[int, int] = {}
    while len(chosen) < N:
        for i in range(1, top + 1):
            stock = bins[i]
            if not stock:
                continue
            q = stock.pop(int(rng.integers(len(stock))))
            chosen.append(q)
            assigned[q] = i
            if len(chosen) == N:
                break
    return StratifiedSample(tuple(chosen), assigned)
