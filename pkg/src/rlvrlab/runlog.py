"""Step-indexed training logs.

A run log is a record file (see :mod:`rlvrlab.records`) whose header carries
``run_id``, the training-set size ``n`` and free-form metadata, followed by
three record types::

    {"type": "step", "step": 1, "mean_reward": 0.41, "per_prompt_mean_rewards": {"17": 0.5, ...}}
    {"type": "eval", "step": 0, "metric": "heldout/avg@16", "value": 0.37}
    {"type": "error", "step": 12, "reason": "non-finite gradient", ...}

Logs produced outside rlvrlab (e.g. by a real LLM training job) can be fed to
the analytics as long as they follow this layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import records

RUNLOG_SCHEMA = "runlog"
RUNLOG_VERSION = 1
REWARD_METRIC = "train/mean_reward"


@dataclass
class RunLog:
    run_id: str
    n: int | None = None
    meta: dict = field(default_factory=dict)
    records: list[dict] = field(default_factory=list)

    def log_step(self, step: int, mean_reward: float, per_prompt: dict[int, float]) -> None:
        self.records.append(
            {
                "type": "step",
                "step": int(step),
                "mean_reward": float(mean_reward),
                "per_prompt_mean_rewards": {str(q): float(v) for q, v in sorted(per_prompt.items())},
            }
        )

    def log_eval(self, step: int, metric: str, value: float) -> None:
        self.records.append({"type": "eval", "step": int(step), "metric": metric, "value": float(value)})

    def log_error(self, step: int, reason: str, **detail) -> dict:
        rec = {"type": "error", "step": int(step), "reason": reason, **detail}
        self.records.append(rec)
        return rec

    @property
    def errors(self) -> list[dict]:
        return [r for r in self.records if r["type"] == "error"]

    def reward_curve(self) -> list[tuple[int, float]]:
        return [(r["step"], r["mean_reward"]) for r in self.records if r["type"] == "step"]

    def metric_curve(self, metric: str) -> list[tuple[int, float]]:
        return [(r["step"], r["value"]) for r in self.records if r["type"] == "eval" and r["metric"] == metric]

    def metric_names(self) -> list[str]:
        seen = {}
        for r in self.records:
            if r["type"] == "eval":
                seen.setdefault(r["metric"], None)
        return list(seen)

    def header(self) -> dict:
        return records.header(RUNLOG_SCHEMA, RUNLOG_VERSION, run_id=self.run_id, n=self.n, meta=self.meta)

    def to_text(self) -> str:
        lines = [records.dumps(self.header())] + [records.dumps(r) for r in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> Path:
        return records.write_records(path, self.header(), self.records)
