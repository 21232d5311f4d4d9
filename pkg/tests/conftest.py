from __future__ import annotations

import numpy as np
import pytest

from rlvrlab.policy import Policy
from rlvrlab.task_env import TaskInstance, TaskPool, Vocab

V4 = Vocab(4, (1, 2), 0)


def tiny_pool(n: int = 3, n_features: int = 3, vocab: Vocab = V4, seed: int = 0) -> TaskPool:
    rng = np.random.default_rng(seed)
    insts = tuple(
        TaskInstance(i, tuple(float(x) for x in rng.standard_normal(n_features)), vocab.answer_tokens[i % 2], 1)
        for i in range(n)
    )
    return TaskPool(insts, seed, "parity", 1, vocab, 0)


def random_policy(mode: str, pool: TaskPool, max_len: int = 3, scale: float = 0.7, seed: int = 0) -> Policy:
    return Policy.init(
        mode, pool.vocab, max_len, pool.n_features, n_questions=len(pool), init_scale=scale, seed=seed
    )


@pytest.fixture
def pool4():
    return tiny_pool()
