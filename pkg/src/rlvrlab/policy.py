"""Explicit autoregressive categorical policies over a small vocabulary.

Two parameterizations share one interface:

* ``shared``: a single weight matrix maps the concatenation of the question
  features, a one-hot of the position, a one-hot of the previous token (with
  an extra begin-of-sequence slot) and a bias unit to ``V`` logits.
* ``tabular``: an independent logit table per (question id, position).

Logits are always turned into probabilities with a softmax, so every token
keeps strictly positive probability. Gradients are computed analytically.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, InputError, SchemaError
from .task_env import TaskInstance, Vocab

MODES = ("shared", "tabular")
CHECKPOINT_SCHEMA = "rlvrlab/policy"
CHECKPOINT_VERSION = 1

_uid = itertools.count()


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Contexts:
    """A flat batch of next-token contexts."""

    qids: np.ndarray  # (n,) int
    feats: np.ndarray  # (n, F) float
    pos: np.ndarray  # (n,) int
    prev: np.ndarray  # (n,) int; V means begin-of-sequence

    def __len__(self) -> int:
        return len(self.qids)


@dataclass
class Rollout:
    question_id: int
    tokens: tuple[int, ...]
    logprob_old: np.ndarray
    dist_old: np.ndarray | None = None

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise InputError("a rollout has at least one token")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class GroupBatch:
    """G rollouts for one question, sampled by the policy identified by ``sampled_by``."""

    question_id: int
    rollouts: list[Rollout]
    rewards: np.ndarray | None = None
    sampled_by: tuple | None = None

    @property
    def G(self) -> int:
        return len(self.rollouts)

    def with_rewards(self, rewards) -> "GroupBatch":
        rewards = np.asarray(rewards, dtype=float)
        if rewards.shape != (self.G,):
            raise InputError(f"expected {self.G} rewards, got shape {rewards.shape}")
        return GroupBatch(self.question_id, self.rollouts, rewards, self.sampled_by)


@dataclass
class Policy:
    mode: str
    vocab: Vocab
    max_len: int
    n_features: int
    params: np.ndarray
    lineage: tuple = ()
    frozen: bool = False
    uid: int = field(default_factory=lambda: next(_uid))
    version: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"unknown policy mode {self.mode!r}")
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape[-1] != self.n_outputs and self.mode == "tabular":
            raise InputError("tabular table's last axis must equal the vocabulary size")
        if self.mode == "shared" and self.params.shape != (self.vocab.size, self.input_dim):
            raise InputError(f"shared weights must have shape {(self.vocab.size, self.input_dim)}")
        if not np.all(np.isfinite(self.params)):
            raise InputError("policy parameters must be finite")

    # construction -----------------------------------------------------------

    @classmethod
    def init(
        cls,
        mode: str,
        vocab: Vocab,
        max_len: int,
        n_features: int,
        *,
        n_questions: int = 0,
        init_scale: float = 0.0,
        seed: int | None = None,
    ) -> "Policy":
        """Fresh policy; ``init_scale == 0`` gives the uniform policy."""
        if mode == "shared":
            shape = (vocab.size, n_features + max_len + vocab.size + 2)
        elif mode == "tabular":
            if n_questions < 1:
                raise InputError("tabular mode needs n_questions >= 1")
            shape = (n_questions, max_len, vocab.size)
        else:
            raise InputError(f"unknown policy mode {mode!r}")
        params = np.zeros(shape)
        if init_scale:
            params = init_scale * np.random.default_rng(seed).standard_normal(shape)
        lineage = (f"init:{mode}:seed={seed}:scale={init_scale}",)
        return cls(mode, vocab, max_len, n_features, params, lineage)

    @property
    def n_outputs(self) -> int:
        return self.vocab.size

    @property
    def input_dim(self) -> int:
        return self.n_features + self.max_len + self.vocab.size + 2

    @property
    def tag(self) -> tuple:
        return (self.uid, self.version)

    def snapshot(self) -> "Policy":
        """Deep, read-only copy carrying this policy's tag."""
        params = self.params.copy()
        params.flags.writeable = False
        return Policy(
            self.mode, self.vocab, self.max_len, self.n_features, params,
            self.lineage, frozen=True, uid=self.uid, version=self.version,
        )

    def clone(self) -> "Policy":
        """Writable copy with a fresh identity."""
        return Policy(self.mode, self.vocab, self.max_len, self.n_features, self.params.copy(), self.lineage)

    def apply_update(self, delta: np.ndarray) -> None:
        if self.frozen:
            raise ContractError("cannot update a frozen snapshot")
        self.params = self.params + delta
        self.version += 1

    # forward / backward -----------------------------------------------------

    def logits(self, ctx: Contexts) -> np.ndarray:
        if self.mode == "tabular":
            return self.params[ctx.qids, ctx.pos]
        F, L, V = self.n_features, self.max_len, self.vocab.size
        W = self.params
        out = ctx.feats @ W[:, :F].T
        out += W[:, F + ctx.pos].T
        out += W[:, F + L + ctx.prev].T
        out += W[:, -1]
        return out

    def backward(self, ctx: Contexts, grad_logits: np.ndarray) -> np.ndarray:
        """Pull a gradient w.r.t. logits back to the parameters."""
        grad = np.zeros_like(self.params)
        if self.mode == "tabular":
            np.add.at(grad, (ctx.qids, ctx.pos), grad_logits)
            return grad
        F, L, V = self.n_features, self.max_len, self.vocab.size
        grad[:, :F] = grad_logits.T @ ctx.feats
        pos_hot = np.zeros((len(ctx), L))
        pos_hot[np.arange(len(ctx)), ctx.pos] = 1.0
        grad[:, F : F + L] = grad_logits.T @ pos_hot
        prev_hot = np.zeros((len(ctx), V + 1))
        prev_hot[np.arange(len(ctx)), ctx.prev] = 1.0
        grad[:, F + L : F + L + V + 1] = grad_logits.T @ prev_hot
        grad[:, -1] = grad_logits.sum(axis=0)
        return grad

    def log_probs(self, ctx: Contexts) -> np.ndarray:
        return log_softmax(self.logits(ctx))

    def probs(self, ctx: Contexts) -> np.ndarray:
        return softmax(self.logits(ctx))

    # checkpoint -------------------------------------------------------------

    def to_record(self) -> dict:
        return {
            "schema": CHECKPOINT_SCHEMA,
            "version": CHECKPOINT_VERSION,
            "mode": self.mode,
            "shape": list(self.params.shape),
            "vocab": self.vocab.to_dict(),
            "max_len": self.max_len,
            "n_features": self.n_features,
            "params": self.params.ravel().tolist(),
            "lineage": list(self.lineage),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Policy":
        if rec.get("schema") != CHECKPOINT_SCHEMA:
            raise SchemaError(f"not a policy checkpoint: {rec.get('schema')!r}")
        if rec.get("version") != CHECKPOINT_VERSION:
            raise SchemaError(f"unsupported checkpoint version {rec.get('version')!r}")
        params = np.asarray(rec["params"], dtype=float).reshape(rec["shape"])
        return cls(
            rec["mode"], Vocab.from_dict(rec["vocab"]), int(rec["max_len"]),
            int(rec["n_features"]), params, tuple(rec.get("lineage", ())),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_record(), separators=(",", ":")) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Policy":
        return cls.from_record(json.loads(Path(path).read_text(encoding="utf-8")))


def snapshot(policy: Policy) -> Policy:
    return policy.snapshot()


# sequence helpers -----------------------------------------------------------


def pad_tokens(seqs: Sequence[Sequence[int]], fill: int = 0) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    L = int(lengths.max()) if len(seqs) else 0
    out = np.full((len(seqs), L), fill, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


def token_contexts(
    policy: Policy,
    qids: np.ndarray,
    feats: np.ndarray,
    tokens: np.ndarray,
    lengths: np.ndarray,
) -> tuple[Contexts, np.ndarray, np.ndarray]:
    """Flatten padded sequences into contexts.

    Returns ``(ctx, targets, row)`` where ``row[k]`` is the sequence index of
    context ``k``; contexts are ordered row-major.
    """
    n, L = tokens.shape
    if L > policy.max_len:
        raise InputError(f"sequence length {L} exceeds policy max_len {policy.max_len}")
    valid = np.arange(L)[None, :] < lengths[:, None]
    row, pos = np.nonzero(valid)
    targets = tokens[row, pos]
    if targets.size and (targets.min() < 0 or targets.max() >= policy.vocab.size):
        raise InputError(f"token ids must lie in [0, {policy.vocab.size})")
    prev = np.where(pos > 0, tokens[row, np.maximum(pos - 1, 0)], policy.vocab.size)
    ctx = Contexts(np.asarray(qids)[row], np.asarray(feats, dtype=float)[row], pos, prev)
    return ctx, targets, row


def _instance_arrays(instances: Sequence[TaskInstance]) -> tuple[np.ndarray, np.ndarray]:
    qids = np.array([inst.id for inst in instances], dtype=np.int64)
    feats = np.array([inst.features for inst in instances], dtype=float)
    return qids, feats


def logprob(policy: Policy, question: TaskInstance, tokens: Sequence[int]) -> np.ndarray:
    """Exact per-token log-probabilities of ``tokens`` under ``policy`` (temperature 1)."""
    tokens = [int(t) for t in tokens]
    if any(t < 0 or t >= policy.vocab.size for t in tokens):
        raise InputError(f"token ids must lie in [0, {policy.vocab.size})")
    qids, feats = _instance_arrays([question])
    padded, lengths = pad_tokens([tokens])
    ctx, targets, _ = token_contexts(policy, qids, feats, padded, lengths)
    lp = policy.log_probs(ctx)
    return lp[np.arange(len(targets)), targets]


def grad_logprob(policy: Policy, question: TaskInstance, tokens: Sequence[int]) -> np.ndarray:
    """Gradient of the summed log-probability of ``tokens`` w.r.t. the parameters."""
    qids, feats = _instance_arrays([question])
    padded, lengths = pad_tokens([list(tokens)])
    ctx, targets, _ = token_contexts(policy, qids, feats, padded, lengths)
    g = -policy.probs(ctx)
    g[np.arange(len(targets)), targets] += 1.0
    return policy.backward(ctx, g)


def categorical_kl(p_logits: np.ndarray, q_logits: np.ndarray) -> np.ndarray:
    """Exact KL(p || q) per row for categorical distributions given by logits."""
    lp = log_softmax(p_logits)
    lq = log_softmax(q_logits)
    return (np.exp(lp) * (lp - lq)).sum(axis=-1)


def context_kl(policy: Policy, ref: Policy, ctx: Contexts) -> np.ndarray:
    return categorical_kl(policy.logits(ctx), ref.logits(ctx))


# sampling -------------------------------------------------------------------


def stream_uniforms(key: Sequence[int], n: int, length: int) -> np.ndarray:
    """Uniform draws for ``n`` rollouts from the stream identified by ``key``.

    Row ``i`` depends only on ``key``, ``i`` and ``length``.
    """
    return np.random.default_rng([int(k) for k in key]).random((n, length))


@dataclass
class SampledArrays:
    qids: np.ndarray
    tokens: np.ndarray  # (n, L_max), padded with eos
    lengths: np.ndarray
    logprob: np.ndarray  # (n, L_max), 0 beyond length
    dist: np.ndarray  # (n, L_max, V)

    def rollout(self, i: int, keep_dist: bool = True) -> Rollout:
        n = int(self.lengths[i])
        return Rollout(
            int(self.qids[i]),
            tuple(int(t) for t in self.tokens[i, :n]),
            self.logprob[i, :n].copy(),
            self.dist[i, :n].copy() if keep_dist else None,
        )


def sample_arrays(
    policy: Policy,
    qids: np.ndarray,
    feats: np.ndarray,
    uniforms: np.ndarray,
    temperature: float = 1.0,
    max_len: int | None = None,
    store_dist: bool = True,
) -> SampledArrays:
    """Ancestral sampling for many sequences at once.

    Each row stops after emitting ``eos`` or after ``max_len`` tokens. Stored
    distributions and log-probabilities are those of the sampling distribution.
    """
    if temperature <= 0:
        raise InputError("temperature must be positive")
    L = policy.max_len if max_len is None else int(max_len)
    if L < 1 or L > policy.max_len:
        raise InputError(f"max_len must lie in [1, {policy.max_len}]")
    n = len(qids)
    V = policy.vocab.size
    eos = policy.vocab.eos
    tokens = np.full((n, L), eos, dtype=np.int64)
    logp = np.zeros((n, L))
    dist = np.zeros((n, L, V) if store_dist else (n, L, 0))
    lengths = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    prev = np.full(n, V, dtype=np.int64)
    qids = np.asarray(qids, dtype=np.int64)
    feats = np.asarray(feats, dtype=float)
    for t in range(L):
        rows = np.nonzero(alive)[0]
        if rows.size == 0:
            break
        ctx = Contexts(qids[rows], feats[rows], np.full(rows.size, t), prev[rows])
        z = policy.logits(ctx) / temperature
        lp = log_softmax(z)
        p = np.exp(lp)
        cdf = np.cumsum(p, axis=1)
        tok = (cdf < uniforms[rows, t][:, None]).sum(axis=1)
        tok = np.minimum(tok, V - 1)
        tokens[rows, t] = tok
        logp[rows, t] = lp[np.arange(rows.size), tok]
        if store_dist:
            dist[rows, t] = p
        lengths[rows] = t + 1
        prev[rows] = tok
        alive[rows[tok == eos]] = False
    return SampledArrays(qids, tokens, lengths, logp, dist)


def sample_group(
    policy: Policy,
    instance: TaskInstance,
    G: int,
    temperature: float = 1.0,
    L_max: int | None = None,
    seed: int = 0,
) -> GroupBatch:
    """Draw ``G`` independent rollouts for one question.

    Sample ``i`` is a function of ``(seed, instance.id, i)`` only.
    """
    if G < 2:
        raise InputError("group size must be >= 2")
    L = policy.max_len if L_max is None else L_max
    u = stream_uniforms((seed, instance.id), G, L)
    qids = np.full(G, instance.id)
    feats = np.repeat(np.asarray(instance.features, dtype=float)[None, :], G, axis=0)
    arr = sample_arrays(policy, qids, feats, u, temperature, L)
    return GroupBatch(instance.id, [arr.rollout(i) for i in range(G)], None, policy.tag)


def sample_instances(
    policy: Policy,
    instances: Sequence[TaskInstance],
    n: int,
    key: Sequence[int],
    temperature: float = 1.0,
    max_len: int | None = None,
    store_dist: bool = True,
) -> SampledArrays:
    """``n`` rollouts per instance; rows ``k*n .. k*n+n-1`` belong to ``instances[k]``.

    Each instance draws from its own stream ``(*key, instance.id)``.
    """
    L = policy.max_len if max_len is None else int(max_len)
    qids, feats = _instance_arrays(instances)
    if len(instances) == 0:
        feats = np.zeros((0, policy.n_features))
    u = np.concatenate([stream_uniforms((*key, q), n, L) for q in qids]) if len(qids) else np.zeros((0, L))
    return sample_arrays(
        policy, np.repeat(qids, n), np.repeat(feats, n, axis=0), u, temperature, L, store_dist
    )
