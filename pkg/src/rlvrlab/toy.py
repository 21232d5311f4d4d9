"""The default toy configuration and the memorize-vs-generalize contrast.

A tabular policy can fit any training prompt on its own table, but learns
nothing about unseen question ids. A shared-feature policy has to fit one
weight matrix across prompts, which is slower to saturate, and in exchange
transfers to held-out questions with the same structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .analytics import efficiency_metrics, saturation_step
from .dataset import estimate_solve16, filter_and_sample
from .grpo import UpdateConfig, train
from .policy import Policy
from .rewards import RewardSource
from .runlog import RunLog
from .task_env import TaskPool, generate_pool

HELDOUT_METRIC = "heldout/avg@16"
LR_GRID = (1.0, 4.0, 16.0, 64.0, 256.0, 1024.0)
TUNING_SEEDS = tuple(range(100, 106))


@dataclass(frozen=True)
class ToyConfig:
    family: str = "parity"
    levels: int = 5
    pool_size: int = 512
    heldout_size: int = 64
    max_len: int = 8
    n_train: int = 8
    threshold: float = 0.99
    eval_interval: int = 1
    update: UpdateConfig = field(default_factory=lambda: UpdateConfig(total_steps=100))


def make_pools(seed: int, cfg: ToyConfig = ToyConfig()) -> tuple[TaskPool, TaskPool]:
    """Candidate pool (ids from 0) and a held-out pool with disjoint ids."""
    pool = generate_pool(cfg.family, cfg.pool_size, cfg.levels, seed)
    held = generate_pool(cfg.family, cfg.heldout_size, cfg.levels, seed + 1_000_003, start_id=cfg.pool_size)
    return pool, held


def steps_to_threshold(log: RunLog, threshold: float) -> int | None:
    """First step whose mean reward reaches ``threshold``."""
    for step, r in log.reward_curve():
        if r >= threshold:
            return step
    return None


@dataclass
class ModeResult:
    mode: str
    steps_to_threshold: int | None
    t_sat: int | None
    heldout_delta_sat: float | None
    log: RunLog = field(repr=False)


def run_mode(
    mode: str, seed: int, cfg: ToyConfig = ToyConfig(), *, learning_rate: float | None = None, heldout: bool = True
) -> ModeResult:
    """Probe, filter to ``n_train`` prompts, train with clean rewards and measure."""
    pool, held = make_pools(seed, cfg)
    policy = Policy.init(
        mode, pool.vocab, cfg.max_len, pool.n_features, n_questions=cfg.pool_size + cfg.heldout_size
    )
    sample = filter_and_sample(estimate_solve16(policy, pool, seed), cfg.n_train, seed)
    update = cfg.update if learning_rate is None else replace(cfg.update, learning_rate=learning_rate)
    log = train(
        pool.subset(sample.ids),
        RewardSource("verifier"),
        update,
        seed,
        policy=policy,
        eval_pool=held if heldout else None,
        eval_interval=cfg.eval_interval,
        eval_train_set=False,
        run_id=f"{mode}-seed{seed}",
    )
    t_sat = saturation_step(log.reward_curve())
    delta = None
    if heldout:
        delta = efficiency_metrics(log.metric_curve(HELDOUT_METRIC), t_sat).delta_sat
    return ModeResult(mode, steps_to_threshold(log, cfg.threshold), t_sat, delta, log)


@dataclass
class ContrastResult:
    seed: int
    tabular: ModeResult
    shared: ModeResult

    @property
    def tabular_faster(self) -> bool:
        # a run that never reaches the threshold counts as infinitely slow
        inf = float("inf")
        t = self.tabular.steps_to_threshold
        s = self.shared.steps_to_threshold
        return (t if t is not None else inf) < (s if s is not None else inf)

    @property
    def shared_transfers_more(self) -> bool:
        s, t = self.shared.heldout_delta_sat, self.tabular.heldout_delta_sat
        return s is not None and t is not None and s > t

    @property
    def holds(self) -> bool:
        return self.tabular_faster and self.shared_transfers_more


def run_contrast(seed: int, cfg: ToyConfig = ToyConfig()) -> ContrastResult:
    return ContrastResult(seed, run_mode("tabular", seed, cfg), run_mode("shared", seed, cfg))


def tune_learning_rate(
    mode: str,
    grid: Sequence[float] = LR_GRID,
    seeds: Sequence[int] = TUNING_SEEDS,
    cfg: ToyConfig = ToyConfig(),
) -> tuple[float, dict[float, float]]:
    """Grid value with the fewest median steps to the reward threshold.

    Runs that never reach it count as infinitely slow. Returns the winner and
    the median for every grid value.
    """
    medians = {}
    for lr in grid:
        hits = []
        for seed in seeds:
            r = run_mode(mode, seed, cfg, learning_rate=lr, heldout=False)
            hits.append(r.steps_to_threshold if r.steps_to_threshold is not None else np.inf)
        medians[lr] = float(np.median(hits))
    best = min(grid, key=lambda lr: (medians[lr], lr))
    return best, medians
