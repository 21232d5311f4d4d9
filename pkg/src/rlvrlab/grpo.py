"""GRPO: group-normalized advantages, the clipped surrogate with exact KL, and the training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .analytics import eval_metrics
from .errors import ConfigurationError, ContractError, InputError, TrainingAborted
from .policy import (
    GroupBatch,
    Policy,
    categorical_kl,
    log_softmax,
    pad_tokens,
    sample_arrays,
    stream_uniforms,
    token_contexts,
)
from .rewards import LabelSet, RewardSource, majority_rewards_from_answers, self_certainty_arrays
from .runlog import RunLog
from .task_env import TaskInstance, TaskPool, extract_answers_array

logger = logging.getLogger(__name__)

BASELINE_MODES = ("group_mean", "const_0", "const_1")
LLM_LEARNING_RATE = 1e-6
# Plain gradient ascent on the toy policies needs far larger steps than LLM
# fine-tuning. Each mode uses the grid value (powers of 4, 1..1024) with the
# fewest median steps to 0.99 train reward over tuning seeds 100-105 on the
# default parity config; see ``rlvrlab.toy.tune_learning_rate``. Independent
# tables never interfere, so the tabular optimum sits at the top of the grid;
# the shared policy turns unstable above 16.
TOY_LEARNING_RATES = {"shared": 16.0, "tabular": 1024.0}

_STREAM_TRAIN = 201
_STREAM_SCHEDULE = 202
_STREAM_EVAL = 203
_ADV_GRID = 2.0**36


@dataclass(frozen=True)
class UpdateConfig:
    clip_eps: float = 0.2
    kl_beta: float = 0.001
    learning_rate: float | None = None  # None: tuned toy value for the policy mode
    group_size: int = 8
    baseline_mode: str = "group_mean"
    length_norm: bool = True
    batch_prompts: int = 64
    total_steps: int = 496
    std_floor: float = 1e-8
    temperature: float = 1.0
    max_len: int | None = None
    optimizer: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.clip_eps <= 0:
            raise ConfigurationError("clip_eps must be positive")
        if self.learning_rate is not None and self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be nonnegative")
        if self.kl_beta < 0:
            raise ConfigurationError("kl_beta must be nonnegative")
        if self.group_size < 2:
            raise ConfigurationError("group_size must be >= 2")
        if self.baseline_mode not in BASELINE_MODES:
            raise ConfigurationError(f"baseline_mode must be one of {BASELINE_MODES}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError("optimizer must be 'sgd' or 'adam'")
        if self.batch_prompts < 1 or self.total_steps < 1:
            raise ConfigurationError("batch_prompts and total_steps must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def resolved_learning_rate(self, mode: str) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return TOY_LEARNING_RATES[mode]


# -- advantages ---------------------------------------------------------------


def compute_advantages(rewards, mode: str = "group_mean", std_floor: float = 1e-8) -> np.ndarray:
    """Per-rollout advantages for one group.

    ``group_mean``: ``(r - mean) / max(std, std_floor)`` with the population
    std; a group whose rewards are all equal gets zero advantages.
    ``const_0`` / ``const_1``: ``r - b`` without any std division.
    """
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise InputError("need a 1-d group of at least two rewards")
    if mode == "const_0":
        return r - 0.0
    if mode == "const_1":
        return r - 1.0
    if mode != "group_mean":
        raise InputError(f"unknown baseline mode {mode!r}")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    # Work on r / max|r|, snapped to a 2**-36 grid: c*r and c*max|r| each carry
    # at most one rounding, so the ratios agree to a few ulp and the snap makes
    # rescaled rewards give bit-identical advantages.
    scale = np.max(np.abs(r))
    u = np.round((r / scale) * _ADV_GRID) / _ADV_GRID
    d = u - u.mean()
    sigma = np.sqrt(np.mean(d * d))
    if sigma * scale > std_floor:
        return d / sigma
    return d * scale / std_floor


# -- surrogate ----------------------------------------------------------------


@dataclass
class FlatBatch:
    """All rollouts of a step, padded, with their advantages."""

    qids: np.ndarray
    feats: np.ndarray
    tokens: np.ndarray
    lengths: np.ndarray
    advantages: np.ndarray
    n_groups: int
    group_size: int
    sampled_by: tuple | None = None


def flatten_batches(
    batches: Sequence[GroupBatch],
    advantages: Sequence[np.ndarray],
    questions: Mapping[int, TaskInstance] | TaskPool,
    eos: int = 0,
) -> FlatBatch:
    if len(batches) != len(advantages):
        raise InputError("one advantage vector per group is required")
    if not batches:
        raise InputError("no groups")
    G = batches[0].G
    tags = {b.sampled_by for b in batches}
    if len(tags) != 1 or None in tags:
        raise ContractError("every group must be tagged with the same sampling snapshot")
    lookup = questions.by_id if isinstance(questions, TaskPool) else questions.__getitem__
    seqs, qids, feats, adv = [], [], [], []
    for b, a in zip(batches, advantages):
        if b.G != G:
            raise InputError("all groups must share one group size")
        a = np.asarray(a, dtype=float)
        if a.shape != (G,):
            raise InputError("advantage vector length must equal the group size")
        inst = lookup(b.question_id)
        for r, ai in zip(b.rollouts, a):
            seqs.append(r.tokens)
            qids.append(b.question_id)
            feats.append(inst.features)
            adv.append(ai)
    tokens, lengths = pad_tokens(seqs, fill=eos)
    return FlatBatch(
        np.array(qids), np.array(feats, dtype=float), tokens, lengths, np.array(adv),
        len(batches), G, tags.pop(),
    )


@dataclass
class SurrogateResult:
    objective: float
    grad: np.ndarray
    clip_fraction: float
    mean_kl: float


def surrogate_from_flat(
    policy: Policy, old: Policy, ref: Policy, flat: FlatBatch, config: UpdateConfig
) -> SurrogateResult:
    """Clipped surrogate minus ``beta * KL(policy || ref)`` and its exact gradient.

    Averaging: ``1/n_groups`` over groups, ``1/G`` over rollouts, ``1/|o_i|``
    over tokens when ``length_norm`` (token sum otherwise). The KL is the exact
    categorical KL at every visited context, weighted like the surrogate.
    """
    if flat.sampled_by != old.tag:
        raise ContractError("batch was not sampled by the supplied old policy snapshot")
    ctx, targets, row = token_contexts(policy, flat.qids, flat.feats, flat.tokens, flat.lengths)
    m = len(targets)
    idx = np.arange(m)
    z = policy.logits(ctx)
    lp = log_softmax(z)
    p = np.exp(lp)
    lp_old = log_softmax(old.logits(ctx))[idx, targets]
    ratio = np.exp(lp[idx, targets] - lp_old)
    A = flat.advantages[row]
    eps = config.clip_eps
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    surr = np.minimum(ratio * A, clipped * A)
    # the unclipped branch carries gradient unless the clip bound is the active minimum
    passes = np.where(A > 0, ratio <= 1.0 + eps, np.where(A < 0, ratio >= 1.0 - eps, False))

    w = np.full(len(flat.lengths), 1.0 / (flat.n_groups * flat.group_size))
    if config.length_norm:
        w = w / flat.lengths
    c = w[row]

    g = np.zeros_like(z)
    coef = np.where(passes, ratio * A, 0.0) * c
    g -= coef[:, None] * p
    g[idx, targets] += coef

    beta = config.kl_beta
    kl = np.zeros(m)
    if beta:
        lq = log_softmax(ref.logits(ctx))
        kl = (p * (lp - lq)).sum(axis=1)
        g -= (beta * c)[:, None] * p * (lp - lq - kl[:, None])

    objective = float(np.sum(c * (surr - beta * kl)))
    grad = policy.backward(ctx, g)
    return SurrogateResult(
        objective,
        grad,
        float(np.mean(~passes & (A != 0))) if m else 0.0,
        float(np.sum(c * kl) / np.sum(c)) if m else 0.0,
    )


def surrogate_loss(
    policy: Policy,
    old: Policy,
    ref: Policy,
    batches: Sequence[GroupBatch],
    advantages: Sequence[np.ndarray],
    config: UpdateConfig,
    questions: Mapping[int, TaskInstance] | TaskPool,
) -> tuple[float, np.ndarray]:
    """GRPO objective (to be maximized) and its gradient w.r.t. ``policy.params``."""
    flat = flatten_batches(batches, advantages, questions, policy.vocab.eos)
    res = surrogate_from_flat(policy, old, ref, flat, config)
    return res.objective, res.grad


def kl_to_reference(policy: Policy, ref: Policy, flat: FlatBatch) -> np.ndarray:
    """Exact KL(policy || ref) at every visited context of ``flat``."""
    ctx, _, _ = token_contexts(policy, flat.qids, flat.feats, flat.tokens, flat.lengths)
    return categorical_kl(policy.logits(ctx), ref.logits(ctx))


# -- training loop ------------------------------------------------------------


def batch_schedule(ids: Sequence[int], batch_prompts: int, steps: int, seed: int) -> list[np.ndarray]:
    """Prompt ids for every step.

    With ``N <= batch_prompts`` every prompt appears ``batch_prompts // N``
    times per step, plus a random distinct subset filling the remainder. With
    more prompts, steps walk through shuffled epochs.
    """
    ids = np.asarray(ids, dtype=np.int64)
    N = len(ids)
    if N == 0:
        raise InputError("empty training pool")
    rng = np.random.default_rng([seed, _STREAM_SCHEDULE])
    out = []
    if N <= batch_prompts:
        reps, rem = divmod(batch_prompts, N)
        base = np.tile(ids, reps)
        for _ in range(steps):
            extra = rng.choice(ids, size=rem, replace=False) if rem else ids[:0]
            out.append(np.concatenate([base, extra]))
        return out
    queue = np.empty(0, dtype=np.int64)
    for _ in range(steps):
        while len(queue) < batch_prompts:
            queue = np.concatenate([queue, rng.permutation(ids)])
        out.append(queue[:batch_prompts])
        queue = queue[batch_prompts:]
    return out


def evaluate(
    policy: Policy,
    pool: TaskPool,
    seed: int,
    n_samples: int = 16,
    temperature: float = 1.0,
    max_len: int | None = None,
    *,
    stream: int = _STREAM_EVAL,
) -> np.ndarray:
    """Verifier correctness flags of shape (len(pool), n_samples).

    Draws come from the stream ``(seed, stream, question id)``, so repeated
    evaluations of an unchanged policy see identical samples.
    """
    qids = np.repeat(np.array(pool.ids, dtype=np.int64), n_samples)
    feats = np.repeat(np.array([i.features for i in pool], dtype=float), n_samples, axis=0)
    L = policy.max_len if max_len is None else max_len
    u = np.concatenate([stream_uniforms((seed, stream, q), n_samples, L) for q in pool.ids])
    arr = sample_arrays(policy, qids, feats, u, temperature, L, store_dist=False)
    answers = extract_answers_array(arr.tokens, arr.lengths, pool.vocab)
    truths = np.repeat(np.array([i.truth for i in pool]), n_samples)
    return (answers == truths).reshape(len(pool), n_samples)


class _Adam:
    def __init__(self, shape, cfg: UpdateConfig, lr: float):
        self.lr = lr
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.cfg = cfg

    def step(self, grad: np.ndarray) -> np.ndarray:
        c = self.cfg
        self.t += 1
        self.m = c.adam_beta1 * self.m + (1 - c.adam_beta1) * grad
        self.v = c.adam_beta2 * self.v + (1 - c.adam_beta2) * grad * grad
        mhat = self.m / (1 - c.adam_beta1**self.t)
        vhat = self.v / (1 - c.adam_beta2**self.t)
        return self.lr * mhat / (np.sqrt(vhat) + c.adam_eps)


def _eval_steps(total: int, interval: int) -> set[int]:
    steps = set(range(0, total + 1, max(1, interval)))
    steps.add(total)
    return steps


def train(
    pool: TaskPool,
    reward_source: RewardSource,
    config: UpdateConfig,
    seed: int,
    *,
    policy: Policy,
    labels: LabelSet | None = None,
    eval_pool: TaskPool | None = None,
    eval_interval: int = 16,
    eval_samples: int = 16,
    eval_train_set: bool = True,
    run_id: str = "run",
    meta: dict | None = None,
    ref: Policy | None = None,
) -> RunLog:
    """Run GRPO for ``config.total_steps`` updates, mutating ``policy`` in place.

    Every step samples one batch from a fresh snapshot of the policy, assigns
    rewards, and applies exactly one gradient-ascent update.
    """
    if len(pool) == 0:
        raise InputError("training pool is empty")
    if policy.frozen:
        raise ContractError("cannot train a frozen snapshot")
    vocab = pool.vocab
    kind = reward_source.kind
    if kind == "verifier":
        labels = LabelSet.clean(pool)
    elif kind == "corrupted" and labels is None:
        raise ConfigurationError("corrupted rewards need a label set")
    if kind == "majority_vote":
        G, n_draw = reward_source.advantage_subset, reward_source.vote_samples
    else:
        G = n_draw = config.group_size
    L = policy.max_len if config.max_len is None else config.max_len
    ref = policy.snapshot() if ref is None else ref
    T = config.total_steps

    log = RunLog(
        run_id,
        n=len(pool),
        meta={
            "seed": seed,
            "reward": {"kind": kind, "gamma": reward_source.gamma},
            "policy_mode": policy.mode,
            "config": {**config.to_dict(), "learning_rate": config.resolved_learning_rate(policy.mode)},
            **(meta or {}),
        },
    )
    schedule = batch_schedule(pool.ids, config.batch_prompts, T, seed)
    eval_at = _eval_steps(T, eval_interval)
    lr = config.resolved_learning_rate(policy.mode)
    adam = _Adam(policy.params.shape, config, lr) if config.optimizer == "adam" else None
    truth_of = {i.id: i.truth for i in pool}
    feat_of = {i.id: np.asarray(i.features, dtype=float) for i in pool}

    def run_eval(step: int):
        targets = [("heldout", eval_pool)] if eval_pool is not None else []
        if eval_train_set:
            targets.append(("trainset", pool))
        for name, ev in targets:
            flags = evaluate(policy, ev, seed, eval_samples, config.temperature, L)
            if eval_samples == 16:
                summary = eval_metrics(flags)
                for key, val in summary["mean"].items():
                    log.log_eval(step, f"{name}/{key}", val)
            else:
                log.log_eval(step, f"{name}/avg@{eval_samples}", float(flags.mean()))

    if 0 in eval_at:
        run_eval(0)

    for t in range(1, T + 1):
        slots = schedule[t - 1]
        old = policy.snapshot()
        qids = np.repeat(slots, n_draw)
        feats = np.stack([feat_of[q] for q in slots])
        feats = np.repeat(feats, n_draw, axis=0)
        u = np.concatenate(
            [stream_uniforms((seed, _STREAM_TRAIN, t, s), n_draw, L) for s in range(len(slots))]
        )
        arr = sample_arrays(old, qids, feats, u, config.temperature, L, store_dist=(kind == "self_certainty"))
        answers = extract_answers_array(arr.tokens, arr.lengths, vocab).reshape(len(slots), n_draw)

        if kind in ("verifier", "corrupted"):
            target = np.array([labels.label(int(q)) for q in slots])
            rewards = (answers == target[:, None]).astype(float)
        elif kind == "majority_vote":
            rewards = np.zeros((len(slots), G))
            for k in range(len(slots)):
                row = [int(a) if a >= 0 else None for a in answers[k]]
                _, rewards[k], _ = majority_rewards_from_answers(row, G)
        else:
            rewards = self_certainty_arrays(arr.dist, arr.lengths).reshape(len(slots), n_draw)

        keep = (np.arange(len(qids)) % n_draw) < G
        tokens, lengths = arr.tokens[keep], arr.lengths[keep]
        adv = np.concatenate([compute_advantages(r, config.baseline_mode, config.std_floor) for r in rewards])
        flat = FlatBatch(
            qids[keep], feats[keep], tokens, lengths, adv, len(slots), G, old.tag
        )

        per_prompt: dict[int, list[float]] = {}
        for q, r in zip(slots, rewards):
            per_prompt.setdefault(int(q), []).extend(r.tolist())
        log.log_step(t, float(rewards.mean()), {q: float(np.mean(v)) for q, v in per_prompt.items()})
        if kind != "verifier":
            truths = np.array([truth_of[int(q)] for q in slots])
            log.log_eval(t, "train/true_accuracy", float((answers[:, :G] == truths[:, None]).mean()))

        res = surrogate_from_flat(policy, old, ref, flat, config)
        if not np.all(np.isfinite(res.grad)):
            rec = log.log_error(t, "non-finite gradient")
            raise TrainingAborted(f"non-finite gradient at step {t}", rec, log)
        delta = adam.step(res.grad) if adam is not None else lr * res.grad
        policy.apply_update(delta)
        if not np.all(np.isfinite(policy.params)):
            rec = log.log_error(t, "non-finite parameters after update")
            raise TrainingAborted(f"non-finite parameters at step {t}", rec, log)

        if t in eval_at:
            run_eval(t)
    return log
