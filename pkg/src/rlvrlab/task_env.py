"""Synthetic verifiable tasks: generation, serialization and answer checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import records
from .errors import ConfigurationError, InputError, SchemaError

POOL_SCHEMA = "task_pool"
POOL_VERSION = 1

FAMILIES = ("parity", "majority")
_ALIASES = {"parity-chain": "parity"}


@dataclass(frozen=True)
class Vocab:
    size: int
    answer_tokens: tuple[int, ...]
    eos: int

    def __post_init__(self):
        object.__setattr__(self, "answer_tokens", tuple(int(t) for t in self.answer_tokens))
        if self.size < 4:
            raise InputError(f"vocabulary size must be >= 4, got {self.size}")
        if not self.answer_tokens:
            raise InputError("answer_tokens must be nonempty")
        if len(set(self.answer_tokens)) != len(self.answer_tokens):
            raise InputError("answer_tokens contains duplicates")
        if self.eos in self.answer_tokens:
            raise InputError("eos cannot be an answer token")
        for t in (*self.answer_tokens, self.eos):
            if not 0 <= t < self.size:
                raise InputError(f"token id {t} outside vocabulary of size {self.size}")

    @cached_property
    def answer_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[list(self.answer_tokens)] = True
        return mask

    def to_dict(self) -> dict:
        return {"size": self.size, "answer_tokens": list(self.answer_tokens), "eos": self.eos}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(int(d["size"]), tuple(d["answer_tokens"]), int(d["eos"]))


DEFAULT_VOCAB = Vocab(size=8, answer_tokens=(1, 2), eos=0)


@dataclass(frozen=True)
class TaskInstance:
    id: int
    features: tuple[float, ...]
    truth: int
    level: int


@dataclass(frozen=True)
class TaskPool:
    instances: tuple[TaskInstance, ...]
    generator_seed: int
    family: str
    levels: int
    vocab: Vocab = DEFAULT_VOCAB
    start_id: int = 0

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __getitem__(self, i):
        return self.instances[i]

    @property
    def ids(self) -> list[int]:
        return [inst.id for inst in self.instances]

    @property
    def n_features(self) -> int:
        return len(self.instances[0].features) if self.instances else feature_dim(self.family, self.levels)

    @cached_property
    def _by_id(self) -> dict[int, TaskInstance]:
        return {inst.id: inst for inst in self.instances}

    def by_id(self, qid: int) -> TaskInstance:
        try:
            return self._by_id[qid]
        except KeyError:
            raise ConfigurationError(f"question id {qid} is not in the pool") from None

    def subset(self, ids: Iterable[int]) -> "TaskPool":
        """Pool restricted to ``ids``, in the given order."""
        chosen = tuple(self.by_id(int(q)) for q in ids)
        return TaskPool(chosen, self.generator_seed, self.family, self.levels, self.vocab, self.start_id)

    def bits(self, inst: TaskInstance) -> list[int]:
        """Recover the bit string a question was generated from."""
        n = inst.level if self.family == "parity" else 2 * inst.level - 1
        return [0 if x > 0 else 1 for x in inst.features[:n]]


def canonical_family(family: str) -> str:
    fam = _ALIASES.get(family, family)
    if fam not in FAMILIES:
        raise ConfigurationError(f"unknown task family {family!r}; expected one of {FAMILIES + tuple(_ALIASES)}")
    return fam


def feature_dim(family: str, levels: int) -> int:
    fam = canonical_family(family)
    return 2 * levels if fam == "parity" else 2 * levels - 1


def _parity_instance(qid, level, levels, rng, vocab):
    bits = rng.integers(0, 2, size=level)
    spins = 1.0 - 2.0 * bits
    chain = np.cumprod(spins)
    feats = np.zeros(2 * levels)
    feats[:level] = spins
    feats[levels : levels + level] = chain
    truth = vocab.answer_tokens[int(bits.sum()) % 2]
    return TaskInstance(qid, tuple(float(x) for x in feats), truth, level)


def _majority_instance(qid, level, levels, rng, vocab):
    n = 2 * level - 1
    bits = rng.integers(0, 2, size=n)
    feats = np.zeros(2 * levels - 1)
    feats[:n] = 1.0 - 2.0 * bits
    truth = vocab.answer_tokens[int(2 * bits.sum() > n)]
    return TaskInstance(qid, tuple(float(x) for x in feats), truth, level)


_BUILDERS = {"parity": _parity_instance, "majority": _majority_instance}


def generate_pool(
    family: str,
    count: int,
    levels: int,
    seed: int,
    *,
    vocab: Vocab = DEFAULT_VOCAB,
    start_id: int = 0,
) -> TaskPool:
    """Generate ``count`` questions whose difficulty levels cycle 1..levels.

    ``parity``: features are the +-1 spins of a bit string of length ``level``
    followed by its running-parity chain; the answer is the parity.
    ``majority``: spins of ``2*level - 1`` bits; the answer is the majority bit.
    """
    fam = canonical_family(family)
    if count < 1:
        raise InputError("count must be >= 1")
    if levels < 1:
        raise InputError("levels must be >= 1")
    if len(vocab.answer_tokens) < 2:
        raise ConfigurationError("binary task families need at least two answer tokens")
    rng = np.random.default_rng(seed)
    build = _BUILDERS[fam]
    instances = tuple(
        build(start_id + i, (i % levels) + 1, levels, rng, vocab) for i in range(count)
    )
    return TaskPool(instances, int(seed), fam, int(levels), vocab, int(start_id))


def _tokens_of(response) -> Sequence[int]:
    return response.tokens if hasattr(response, "tokens") else response


def extract_answer(response, vocab: Vocab) -> int | None:
    """Last token of the response that is an answer token, or ``None``."""
    tokens = _tokens_of(response)
    for tok in reversed(tokens):
        if int(tok) in vocab.answer_tokens:
            return int(tok)
    return None


def answer_position(tokens: Sequence[int], vocab: Vocab) -> int | None:
    for i in range(len(tokens) - 1, -1, -1):
        if int(tokens[i]) in vocab.answer_tokens:
            return i
    return None


def verify(instance: TaskInstance, response, vocab: Vocab) -> int:
    """Binary reward: 1 iff the extracted final answer equals the ground truth."""
    return int(extract_answer(response, vocab) == instance.truth)


def extract_answers_array(tokens: np.ndarray, lengths: np.ndarray, vocab: Vocab) -> np.ndarray:
    """Vectorised :func:`extract_answer` over a padded (n, L) token array; -1 means none."""
    n, L = tokens.shape
    valid = np.arange(L)[None, :] < lengths[:, None]
    safe = np.where(valid, tokens, vocab.eos)
    is_ans = vocab.answer_mask[safe] & valid
    # index of the last answer token in each row
    rev_first = np.argmax(is_ans[:, ::-1], axis=1)
    last = L - 1 - rev_first
    has = is_ans.any(axis=1)
    out = np.full(n, -1, dtype=np.int64)
    out[has] = safe[np.arange(n)[has], last[has]]
    return out


def save_pool(pool: TaskPool, path: str | Path) -> Path:
    head = records.header(
        POOL_SCHEMA,
        POOL_VERSION,
        family=pool.family,
        levels=pool.levels,
        seed=pool.generator_seed,
        start_id=pool.start_id,
        vocab=pool.vocab.to_dict(),
    )
    recs = (
        {"id": inst.id, "features": list(inst.features), "truth": inst.truth, "level": inst.level}
        for inst in pool.instances
    )
    return records.write_records(path, head, recs)


def load_pool(path: str | Path) -> TaskPool:
    head, recs = records.read_records(path, POOL_SCHEMA, POOL_VERSION)
    vocab = Vocab.from_dict(head["vocab"])
    insts = []
    seen = set()
    for lineno, rec in enumerate(recs, start=2):
        records.require_fields(rec, ("id", "features", "truth", "level"), path=path, line=lineno)
        if rec["id"] in seen:
            raise SchemaError(f"duplicate id {rec['id']}", path=path, line=lineno)
        seen.add(rec["id"])
        if rec["truth"] not in vocab.answer_tokens:
            raise SchemaError("truth is not an answer token", path=path, line=lineno)
        feats = tuple(records.finite_number(x, path=path, line=lineno, field="features") for x in rec["features"])
        insts.append(TaskInstance(int(rec["id"]), feats, int(rec["truth"]), int(rec["level"])))
    return TaskPool(
        tuple(insts), int(head["seed"]), head["family"], int(head["levels"]), vocab, int(head.get("start_id", 0))
    )
