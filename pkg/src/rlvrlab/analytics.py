"""Training-curve analytics: saturation step, data-efficiency metrics,
avg@k / pass@k estimators, inter-rater agreement and run-log ingestion."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import records
from .errors import InputError, SchemaError
from .runlog import REWARD_METRIC, RUNLOG_SCHEMA, RUNLOG_VERSION, RunLog

EVAL_SAMPLES = 16
DEFAULT_KS = (1, 4, 8, 16)


@dataclass(frozen=True)
class Curve:
    steps: tuple[int, ...]
    values: tuple[float, ...]
    metric: str = ""
    run_id: str = ""
    n: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.steps) != len(self.values):
            raise InputError("steps and values must have equal length")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise InputError(f"curve {self.run_id}/{self.metric}: steps must be strictly increasing")
        if not all(math.isfinite(v) for v in self.values):
            raise InputError(f"curve {self.run_id}/{self.metric}: values must be finite")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], **kw) -> "Curve":
        pairs = list(pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs), **kw)

    def __len__(self) -> int:
        return len(self.steps)

    def pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.steps, self.values))

    def nearest_step(self, t: int) -> int:
        """Logged step closest to ``t``; ties resolve to the earlier step."""
        if not self.steps:
            raise InputError("empty curve")
        return min(self.steps, key=lambda s: (abs(s - t), s))

    def at(self, t: int) -> float:
        return self.values[self.steps.index(self.nearest_step(t))]


def _as_curve(curve) -> Curve:
    if isinstance(curve, Curve):
        return curve
    items = list(curve)
    if items and isinstance(items[0], (tuple, list)):
        return Curve.from_pairs(items)
    # bare values are update steps 1..T
    return Curve(tuple(range(1, len(items) + 1)), tuple(items))


# -- saturation ---------------------------------------------------------------


def saturation_step(reward_curve, eps_max: float = 0.99, guard: int = 50) -> int | None:
    """Earliest step whose reward reaches ``eps_max`` times the run maximum.

    The maximum is taken over the whole run; the search stops ``guard`` steps
    before the final step. Returns ``None`` when no step qualifies.
    """
    curve = _as_curve(reward_curve)
    if len(curve) <= guard:
        raise InputError(f"curve has {len(curve)} points; need more than guard={guard}")
    T = curve.steps[-1]
    r_max = max(curve.values)
    threshold = eps_max * r_max
    for s, v in curve.pairs():
        if s > T - guard:
            break
        if v >= threshold:
            return s
    return None


@dataclass(frozen=True)
class EfficiencyMetrics:
    delta_sat: float | None
    delta_post: float | None
    g_sat: float | None = None
    t_eval: int | None = None  # logged step that stands in for t_sat

    @property
    def defined(self) -> bool:
        return self.delta_sat is not None


def efficiency_metrics(metric_curve, t_sat: int | None, companion=None) -> EfficiencyMetrics:
    """Pre-saturation gain, post-saturation residual and large-small gap.

    ``t_sat`` is mapped to the nearest logged step of each curve. With
    ``t_sat is None`` every metric is undefined (``None``), never zero.
    """
    if t_sat is None:
        return EfficiencyMetrics(None, None, None, None)
    m = _as_curve(metric_curve)
    t_eval = m.nearest_step(t_sat)
    at_sat = m.at(t_eval)
    delta_sat = at_sat - m.at(0)
    after = [v for s, v in m.pairs() if s >= t_eval]
    delta_post = max(after) - at_sat
    g_sat = None
    if companion is not None:
        g_sat = _as_curve(companion).at(t_sat) - at_sat
    return EfficiencyMetrics(delta_sat, delta_post, g_sat, t_eval)


@dataclass
class SaturationReport:
    run_id: str
    n: int | None
    t_sat: int | None
    r_max: float
    eps_max: float
    guard: int
    metrics: dict[str, EfficiencyMetrics] = field(default_factory=dict)
    g_sat: list[tuple] = field(default_factory=list)  # (n_large, n, metric, value)


def saturation_report(
    reward_curve,
    metric_curves: Mapping[str, Curve],
    *,
    companions: Mapping[str, Curve] | None = None,
    companion_n: int | None = None,
    eps_max: float = 0.99,
    guard: int = 50,
    run_id: str = "",
    n: int | None = None,
) -> SaturationReport:
    rc = _as_curve(reward_curve)
    t_sat = saturation_step(rc, eps_max, guard)
    rep = SaturationReport(run_id or rc.run_id, n if n is not None else rc.n, t_sat, max(rc.values), eps_max, guard)
    for name, curve in metric_curves.items():
        comp = (companions or {}).get(name)
        em = efficiency_metrics(curve, t_sat, comp)
        rep.metrics[name] = em
        if comp is not None and em.g_sat is not None:
            rep.g_sat.append((companion_n, rep.n, name, em.g_sat))
    return rep


def mean_gap(report: SaturationReport, metrics: Sequence[str]) -> float | None:
    """Arithmetic mean of the large-small gap over a benchmark group."""
    vals = [report.metrics[m].g_sat for m in metrics if m in report.metrics]
    if not vals or any(v is None for v in vals):
        return None
    return float(np.mean(vals))


# -- evaluation estimators ----------------------------------------------------


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k from ``c`` correct out of ``n`` samples: 1 - C(n-c, k) / C(n, k)."""
    if not 0 <= c <= n or not 1 <= k <= n:
        raise InputError(f"need 0 <= c <= n and 1 <= k <= n (n={n}, c={c}, k={k})")
    if n - c < k:
        return 1.0
    return 1.0 - math.comb(n - c, k) / math.comb(n, k)


def eval_metrics(correct_flags, ks: Sequence[int] = DEFAULT_KS, estimator: str = "unbiased") -> dict:
    """avg@16 and pass@k per problem and averaged over problems.

    ``correct_flags`` has shape (problems, 16). ``estimator="first_k"`` scores
    pass@k as "any of the first k samples is correct" instead of the unbiased
    combinatorial estimator.
    """
    flags = np.asarray(correct_flags, dtype=bool)
    if flags.ndim == 1:
        flags = flags[None, :]
    if flags.ndim != 2 or flags.shape[1] != EVAL_SAMPLES:
        raise InputError(f"expected {EVAL_SAMPLES} samples per problem, got shape {flags.shape}")
    counts = flags.sum(axis=1)
    per = {"avg@16": counts / EVAL_SAMPLES}
    for k in ks:
        if estimator == "unbiased":
            per[f"pass@{k}"] = np.array([pass_at_k(EVAL_SAMPLES, int(c), k) for c in counts])
        elif estimator == "first_k":
            per[f"pass@{k}"] = flags[:, :k].any(axis=1).astype(float)
        else:
            raise InputError(f"unknown pass@k estimator {estimator!r}")
    return {"per_problem": per, "mean": {key: float(v.mean()) for key, v in per.items()}}


# -- agreement ----------------------------------------------------------------


def cohen_kappa(labels_a: Sequence, labels_b: Sequence) -> float:
    """Cohen's kappa between two raters.

    When chance agreement is 1 (both raters constant on the same label) the
    value is defined as 1.
    """
    if len(labels_a) != len(labels_b):
        raise InputError("raters must label the same number of items")
    n = len(labels_a)
    if n < 1:
        raise InputError("need at least one item")
    cats = sorted(set(labels_a) | set(labels_b), key=repr)
    index = {c: i for i, c in enumerate(cats)}
    conf = np.zeros((len(cats), len(cats)))
    for a, b in zip(labels_a, labels_b):
        conf[index[a], index[b]] += 1
    conf /= n
    p_o = float(np.trace(conf))
    p_e = float(conf.sum(axis=1) @ conf.sum(axis=0))
    if p_e >= 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


# -- ingestion ----------------------------------------------------------------

_STEP_FIELDS = ("step", "mean_reward", "per_prompt_mean_rewards")
_EVAL_FIELDS = ("step", "metric", "value")


def _check_step(rec, path, lineno) -> int:
    step = rec["step"]
    if isinstance(step, bool) or not isinstance(step, int) or step < 0:
        raise SchemaError("step must be a nonnegative integer", path=path, line=lineno)
    return step


def load_runlog(path: str | Path) -> RunLog:
    """Parse and validate one run-log file; errors name the offending line."""
    path = Path(path)
    text = path.read_text(encoding="utf-8").splitlines()
    if not text:
        raise SchemaError("empty file", path=path)
    head = records.parse_header(text[0], RUNLOG_SCHEMA, RUNLOG_VERSION, path)
    if not isinstance(head.get("run_id"), str) or not head["run_id"]:
        raise SchemaError("header needs a nonempty run_id", path=path, line=1)
    log = RunLog(head["run_id"], head.get("n"), head.get("meta") or {})
    last: dict[str, int] = {}
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed record: {exc.msg}", path=path, line=lineno) from exc
        if not isinstance(rec, dict) or rec.get("type") not in ("step", "eval", "error"):
            raise SchemaError("record type must be 'step', 'eval' or 'error'", path=path, line=lineno)
        kind = rec["type"]
        if kind == "step":
            records.require_fields(rec, _STEP_FIELDS, path=path, line=lineno)
            step = _check_step(rec, path, lineno)
            records.finite_number(rec["mean_reward"], path=path, line=lineno, field="mean_reward")
            ppm = rec["per_prompt_mean_rewards"]
            if not isinstance(ppm, dict):
                raise SchemaError("per_prompt_mean_rewards must be an object", path=path, line=lineno)
            for v in ppm.values():
                records.finite_number(v, path=path, line=lineno, field="per_prompt_mean_rewards")
            key = REWARD_METRIC
        elif kind == "eval":
            records.require_fields(rec, _EVAL_FIELDS, path=path, line=lineno)
            step = _check_step(rec, path, lineno)
            if not isinstance(rec["metric"], str):
                raise SchemaError("metric must be a string", path=path, line=lineno)
            records.finite_number(rec["value"], path=path, line=lineno)
            key = rec["metric"]
        else:
            records.require_fields(rec, ("step", "reason"), path=path, line=lineno)
            log.records.append(rec)
            continue
        if key in last and step <= last[key]:
            raise SchemaError(f"steps of {key!r} must be strictly increasing", path=path, line=lineno)
        last[key] = step
        log.records.append(rec)
    return log


def runlog_curves(log: RunLog) -> dict[tuple[str, str], Curve]:
    out = {}
    rc = log.reward_curve()
    if rc:
        out[(log.run_id, REWARD_METRIC)] = Curve.from_pairs(rc, metric=REWARD_METRIC, run_id=log.run_id, n=log.n)
    for name in log.metric_names():
        out[(log.run_id, name)] = Curve.from_pairs(log.metric_curve(name), metric=name, run_id=log.run_id, n=log.n)
    return out


def ingest(paths: Iterable[str | Path]) -> dict[tuple[str, str], Curve]:
    """Curves keyed by ``(run_id, metric)`` from one or more run-log files."""
    curves: dict[tuple[str, str], Curve] = {}
    for p in paths:
        log = load_runlog(p)
        if any(k[0] == log.run_id for k in curves):
            raise SchemaError(f"run id {log.run_id!r} appears in more than one file", path=p)
        curves.update(runlog_curves(log))
    return curves


# -- reports ------------------------------------------------------------------

TABLE_COLUMNS = ("run_id", "n", "metric", "t_sat", "delta_sat", "delta_post", "g_sat", "companion")
UNDEFINED = "undefined"


def _fmt(v) -> str:
    if v is None:
        return UNDEFINED
    if isinstance(v, float):
        return repr(round(v, 10))
    return str(v)


def report_rows(report: SaturationReport, companion_id: str = "") -> list[dict]:
    """One row for the reward curve (t_sat only), then one per evaluation metric."""
    rows = [
        {
            "run_id": report.run_id,
            "n": _fmt(report.n),
            "metric": REWARD_METRIC,
            "t_sat": _fmt(report.t_sat),
            "delta_sat": "",
            "delta_post": "",
            "g_sat": "",
            "companion": "",
        }
    ]
    for name, em in report.metrics.items():
        rows.append(
            {
                "run_id": report.run_id,
                "n": _fmt(report.n),
                "metric": name,
                "t_sat": _fmt(report.t_sat),
                "delta_sat": _fmt(em.delta_sat),
                "delta_post": _fmt(em.delta_post),
                "g_sat": _fmt(em.g_sat) if companion_id else "",
                "companion": companion_id,
            }
        )
    return rows


def write_table(rows: Sequence[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_table(path: str | Path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def plot_curves(
    panels: Mapping[str, Mapping[str, Curve]],
    t_sats: Mapping[str, int | None],
    path: str | Path,
) -> Path:
    """Static SVG: one panel per metric, one line per run, dashed verticals at t_sat."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "rlvrlab"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = max(1, len(panels))
    fig, axes = plt.subplots(1, n, figsize=(4.2 * n, 3.2), squeeze=False)
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    run_ids = sorted({rid for curves in panels.values() for rid in curves})
    color_of = {rid: colors[i % len(colors)] for i, rid in enumerate(run_ids)}
    for ax, (metric, curves) in zip(axes[0], panels.items()):
        for rid in sorted(curves):
            c = curves[rid]
            ax.plot(c.steps, c.values, color=color_of[rid], lw=1.2, label=rid)
            ts = t_sats.get(rid)
            if ts is not None:
                ax.axvline(ts, color=color_of[rid], ls="--", lw=0.9)
        ax.set_title(metric, fontsize=9)
        ax.set_xlabel("step")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path
