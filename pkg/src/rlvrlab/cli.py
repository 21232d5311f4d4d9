"""``rlvrlab`` command line: one subcommand per pipeline stage.

Stages communicate only through files in the output directory::

    gen-tasks  -> tasks.jsonl, heldout.jsonl
    probe      -> base_policy.json, profile.jsonl
    filter     -> sample_n{N}.jsonl
    corrupt    -> labels_n{N}_g{gamma}.jsonl
    train      -> runlog_{run}.jsonl, policy_{run}.json
    eval       -> eval_{run}.jsonl
    diversity  -> diversity_{run}.jsonl
    faithfulness -> faithfulness_{run}.jsonl
    analyze    -> analysis.csv
    report     -> table.csv, curves.svg

The exit status is nonzero exactly when the command emitted an error record,
either on stderr or inside a run log.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import records
from .analytics import (
    eval_metrics,
    ingest,
    load_runlog,
    plot_curves,
    report_rows,
    runlog_curves,
    saturation_report,
    write_table,
)
from .config import ExperimentConfig, load_config
from .dataset import DifficultyProfile, StratifiedSample, estimate_solve16, filter_and_sample
from .errors import MissingArtifactError, RLVRLabError, TrainingAborted
from .grpo import evaluate, train
from .judge import (
    groups_diversity,
    groups_faithful_diversity,
    label_groups,
    load_template,
    rates_from_labels,
    sample_groups,
)
from .judge.backends import MockJudge, RemoteConfig, RemoteJudge
from .policy import Policy
from .rewards import LabelSet, corrupt_labels
from .runlog import REWARD_METRIC
from .task_env import generate_pool, load_pool, save_pool

logger = logging.getLogger("rlvrlab")

REWARD_FLAGS = {"verifier": "verifier", "corrupted": "corrupted", "majority": "majority_vote", "certainty": "self_certainty"}
BASELINE_FLAGS = {"mean": "group_mean", "pos": "const_0", "neg": "const_1"}
HELDOUT_OFFSET = 1_000_003


# -- artifact paths -----------------------------------------------------------


class Workspace:
    def __init__(self, out: Path, cfg: ExperimentConfig):
        self.out = out
        self.cfg = cfg

    def path(self, name: str) -> Path:
        return self.out / name

    def need(self, name: str, producer: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifactError(p, producer)
        return p

    @property
    def gamma_tag(self) -> str:
        return f"{self.cfg.reward.gamma:g}"

    @property
    def sample_name(self) -> str:
        return f"sample_n{self.cfg.data.n}.jsonl"

    @property
    def labels_name(self) -> str:
        return f"labels_n{self.cfg.data.n}_g{self.gamma_tag}.jsonl"

    @property
    def run_id(self) -> str:
        c = self.cfg
        base = {v: k for k, v in BASELINE_FLAGS.items()}[c.update.baseline_mode]
        reward = {v: k for k, v in REWARD_FLAGS.items()}[c.reward.kind]
        if c.reward.kind == "corrupted":
            reward += f"{self.gamma_tag}"
        return f"{c.policy.mode}-{reward}-{base}-n{c.data.n}-s{c.seed}"

    @property
    def run_group(self) -> str:
        """Run id without the dataset size, used to pair runs for the large-small gap."""
        return self.run_id.replace(f"-n{self.cfg.data.n}-", "-")

    def pools(self):
        tasks = load_pool(self.need("tasks.jsonl", "gen-tasks"))
        held = load_pool(self.need("heldout.jsonl", "gen-tasks"))
        return tasks, held

    def base_policy(self) -> Policy:
        return Policy.load(self.need("base_policy.json", "probe"))

    def train_pool(self):
        tasks, _ = self.pools()
        sample = StratifiedSample.load(self.need(self.sample_name, "filter"))
        return tasks.subset(sample.ids)

    def trained_policy(self) -> Policy:
        return Policy.load(self.need(f"policy_{self.run_id}.json", "train"))


# -- commands -----------------------------------------------------------------


def cmd_gen_tasks(ws: Workspace) -> int:
    c = ws.cfg
    seed = c.generator_seed
    pool = generate_pool(c.task.family, c.task.pool_size, c.task.levels, seed)
    held = generate_pool(c.task.family, c.task.heldout_size, c.task.levels, seed + HELDOUT_OFFSET, start_id=c.task.pool_size)
    save_pool(pool, ws.path("tasks.jsonl"))
    save_pool(held, ws.path("heldout.jsonl"))
    print(f"wrote {len(pool)} tasks and {len(held)} held-out tasks to {ws.out}")
    return 0


def cmd_probe(ws: Workspace) -> int:
    c = ws.cfg
    tasks, held = ws.pools()
    policy = Policy.init(
        c.policy.mode,
        tasks.vocab,
        c.policy.max_len,
        tasks.n_features,
        n_questions=c.task.pool_size + c.task.heldout_size,
        init_scale=c.policy.init_scale,
        seed=c.seed,
    )
    policy.save(ws.path("base_policy.json"))
    profile = estimate_solve16(policy, tasks, c.seed, n_samples=c.data.probe_samples, temperature=c.update.temperature)
    profile.save(ws.path("profile.jsonl"))
    print(f"probed {len(tasks)} tasks; {len(profile.retained())} have 1 <= solve@{c.data.probe_samples} <= {c.data.probe_samples - 1}")
    return 0


def cmd_filter(ws: Workspace) -> int:
    profile = DifficultyProfile.load(ws.need("profile.jsonl", "probe"))
    sample = filter_and_sample(profile, ws.cfg.data.n, ws.cfg.seed)
    sample.save(ws.path(ws.sample_name))
    print(f"selected {len(sample)} tasks -> {ws.path(ws.sample_name)}")
    return 0


def cmd_corrupt(ws: Workspace) -> int:
    c = ws.cfg
    pool = ws.train_pool()
    labels = corrupt_labels(
        pool, ws.base_policy(), c.reward.gamma, c.reward.probe_samples, c.seed, temperature=c.update.temperature
    )
    labels.save(ws.path(ws.labels_name))
    print(f"flagged {len(labels.flagged)} of {len(pool)} labels ({len(labels.fallbacks)} random fallbacks)")
    return 0


def cmd_train(ws: Workspace) -> int:
    c = ws.cfg
    pool = ws.train_pool()
    _, held = ws.pools()
    policy = ws.base_policy()
    labels = None
    if c.reward.kind == "corrupted":
        labels = LabelSet.load(ws.need(ws.labels_name, "corrupt"))
    run_id = ws.run_id
    log_path = ws.path(f"runlog_{run_id}.jsonl")
    try:
        log = train(
            pool,
            c.reward.source(),
            c.update,
            c.seed,
            policy=policy,
            labels=labels,
            eval_pool=held,
            eval_interval=c.eval.interval,
            eval_samples=c.eval.samples,
            eval_train_set=c.eval.trainset,
            run_id=run_id,
            meta={"run_group": ws.run_group},
        )
    except TrainingAborted as exc:
        # the partial log carries the error record
        if exc.log is not None:
            exc.log.save(log_path)
        print(f"{run_id}: aborted ({exc}); partial log -> {log_path}", file=sys.stderr)
        return 1
    log.save(log_path)
    policy.save(ws.path(f"policy_{run_id}.json"))
    curve = log.reward_curve()
    print(f"{run_id}: {len(curve)} steps, final mean reward {curve[-1][1]:.4f} -> {log_path}")
    return 1 if log.errors else 0


def cmd_eval(ws: Workspace) -> int:
    c = ws.cfg
    policy = ws.trained_policy()
    _, held = ws.pools()
    targets = [("heldout", held), ("trainset", ws.train_pool())]
    recs = []
    for name, pool in targets:
        flags = evaluate(policy, pool, c.seed, c.eval.samples, c.update.temperature)
        for metric, value in eval_metrics(flags)["mean"].items():
            recs.append({"benchmark": name, "metric": metric, "value": value})
    path = ws.path(f"eval_{ws.run_id}.jsonl")
    records.write_records(path, records.header("eval_report", 1, run_id=ws.run_id, seed=c.seed), recs)
    for r in recs:
        print(f"{r['benchmark']}/{r['metric']}: {r['value']:.4f}")
    return 0


def _backend(ws: Workspace, vocab):
    j = ws.cfg.judge
    if j.backend == "mock":
        return MockJudge(vocab.answer_tokens)
    if j.backend != "remote":
        raise RLVRLabError(f"unknown judge backend {j.backend!r}")
    kw = {}
    if j.similarity_template:
        kw["similarity_template"] = load_template(j.similarity_template, "similarity")
    if j.faithfulness_template:
        kw["faithfulness_template"] = load_template(j.faithfulness_template, "faithfulness")
    audit = j.audit_log or ws.path("judge_audit.jsonl")
    return RemoteJudge(RemoteConfig.from_env(), audit_log=audit, **kw)


def _judge_inputs(ws: Workspace, policy_arg: str | None):
    policy = Policy.load(policy_arg) if policy_arg else ws.trained_policy()
    pool = ws.train_pool()
    j = ws.cfg.judge
    groups = sample_groups(policy, pool, min(j.prompts, len(pool)), j.samples, ws.cfg.seed, ws.cfg.update.temperature)
    return groups, _backend(ws, pool.vocab)


def cmd_diversity(ws: Workspace, policy_arg: str | None = None) -> int:
    groups, backend = _judge_inputs(ws, policy_arg)
    scores = groups_diversity(groups, backend, full_pairwise=ws.cfg.judge.full_pairwise)
    recs = [{"question_id": g.prompt.question_id, "diversity": s} for g, s in zip(groups, scores)]
    mean = sum(scores) / len(scores)
    path = ws.path(f"diversity_{ws.run_id}.jsonl")
    head = records.header("diversity_report", 1, run_id=ws.run_id, backend=backend.kind, mean=mean)
    records.write_records(path, head, recs)
    print(f"dataset diversity {mean:.5f} over {len(groups)} prompts -> {path}")
    return 0


def cmd_faithfulness(ws: Workspace, policy_arg: str | None = None) -> int:
    j = ws.cfg.judge
    groups, backend = _judge_inputs(ws, policy_arg)
    labels = label_groups(groups, backend, "all")
    wanted = {
        "correct": [l for l in labels if l.correct],
        "incorrect": [l for l in labels if not l.correct],
        "all": labels,
    }[j.faithfulness_subset]
    rates, invalid = rates_from_labels(wanted)
    fd_labels = {"correct": wanted, "incorrect": wanted, "all": labels}[j.faithful_diversity_subset]
    fdiv = groups_faithful_diversity(groups, fd_labels, backend, full_pairwise=j.full_pairwise)
    fd_mean = sum(fdiv) / len(fdiv)
    recs = [
        {"question_id": l.question_id, "response_id": l.response_id, "label": l.label, "correct": l.correct}
        for l in labels
    ]
    head = records.header(
        "faithfulness_report",
        1,
        run_id=ws.run_id,
        backend=backend.kind,
        subset=j.faithfulness_subset,
        rates=None if rates is None else {str(k): v for k, v in rates.items()},
        invalid=invalid,
        faithful_diversity=fd_mean,
    )
    path = ws.path(f"faithfulness_{ws.run_id}.jsonl")
    records.write_records(path, head, recs)
    shown = "undefined" if rates is None else ", ".join(f"F({k:g})={v:.4f}" for k, v in rates.items())
    print(f"{shown}; invalid {invalid}; faithful diversity {fd_mean:.5f} -> {path}")
    return 0


def _runlog_paths(ws: Workspace, paths: Sequence[str]) -> list[Path]:
    if paths:
        out = [Path(p) for p in paths]
        for p in out:
            if not p.exists():
                raise MissingArtifactError(p, "train")
        return out
    found = sorted(ws.out.glob("runlog_*.jsonl"))
    if not found:
        raise MissingArtifactError(ws.out / "runlog_*.jsonl", "train")
    return found


def _reports(paths: Sequence[Path], companion: Path | None = None, eps_max: float = 0.99, guard: int = 50):
    logs = [load_runlog(p) for p in paths]
    ingest(paths)  # rejects duplicate run ids across files
    comp_log = load_runlog(companion) if companion else None
    rows, panels, t_sats = [], {}, {}
    for log in logs:
        curves = runlog_curves(log)
        reward = curves.get((log.run_id, REWARD_METRIC))
        if reward is None:
            continue
        metrics = {m: c for (_, m), c in curves.items() if m != REWARD_METRIC}
        comp, comp_id = None, ""
        partner = comp_log
        if partner is None:
            group = log.meta.get("run_group")
            bigger = [
                l for l in logs
                if group is not None and l.meta.get("run_group") == group and (l.n or 0) > (log.n or 0)
            ]
            partner = max(bigger, key=lambda l: l.n) if bigger else None
        if partner is not None and partner.run_id != log.run_id:
            pc = runlog_curves(partner)
            comp = {m: c for (_, m), c in pc.items() if m in metrics}
            comp_id = partner.run_id
        rep = saturation_report(
            reward, metrics, companions=comp, companion_n=partner.n if partner else None,
            eps_max=eps_max, guard=guard, run_id=log.run_id, n=log.n,
        )
        rows.extend(report_rows(rep, comp_id))
        t_sats[log.run_id] = rep.t_sat
        panels.setdefault(REWARD_METRIC, {})[log.run_id] = reward
        for m, c in metrics.items():
            panels.setdefault(m, {})[log.run_id] = c
    return rows, panels, t_sats


def cmd_analyze(ws: Workspace, paths: Sequence[str], companion: str | None, eps_max: float, guard: int, csv: str | None) -> int:
    rows, _, _ = _reports(_runlog_paths(ws, paths), Path(companion) if companion else None, eps_max, guard)
    out = Path(csv) if csv else ws.path("analysis.csv")
    write_table(rows, out)
    for r in rows:
        print(f"{r['run_id']} {r['metric']}: t_sat={r['t_sat']} delta_sat={r['delta_sat']} delta_post={r['delta_post']}")
    print(f"-> {out}")
    return 0


def cmd_report(ws: Workspace, paths: Sequence[str]) -> int:
    rows, panels, t_sats = _reports(_runlog_paths(ws, paths))
    write_table(rows, ws.path("table.csv"))
    shown = {m: panels[m] for m in panels if m == REWARD_METRIC or m.endswith("avg@16")}
    plot_curves(shown, t_sats, ws.path("curves.svg"))
    print(f"wrote {ws.path('table.csv')} and {ws.path('curves.svg')}")
    return 0


# -- argument parsing ---------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment config (defaults apply when omitted)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default=None, help="artifact directory (default: runs/default)")
    common.add_argument("--backend", choices=("mock", "remote"))
    common.add_argument("--gamma", type=float)
    common.add_argument("--reward", choices=tuple(REWARD_FLAGS))
    common.add_argument("--baseline", choices=tuple(BASELINE_FLAGS))
    common.add_argument("--n", type=int)
    common.add_argument("--mode", choices=("shared", "tabular"))
    common.add_argument("--steps", type=int, help="override update.total_steps")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rlvrlab", description="GRPO training-dynamics toolkit on toy verifiable tasks.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("gen-tasks", "generate the task and held-out pools"),
        ("probe", "initialise the base policy and estimate solve@16"),
        ("filter", "stratified round-robin sample of N tasks"),
        ("corrupt", "corrupt a gamma fraction of training labels"),
        ("train", "run GRPO and write the run log"),
        ("eval", "avg@16 and pass@k of the trained policy"),
    ]:
        sub.add_parser(name, parents=[common], help=help_)
    for name, help_ in [("diversity", "judge-based response diversity"), ("faithfulness", "judge-based faithfulness rates")]:
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("--policy", help="policy checkpoint to score (default: the trained policy of this config)")
    an = sub.add_parser("analyze", parents=[common], help="saturation metrics from run logs")
    an.add_argument("runlogs", nargs="*", help="run-log files (default: all in --out)")
    an.add_argument("--companion", help="larger-N run log for the large-small gap")
    an.add_argument("--eps-max", type=float, default=0.99)
    an.add_argument("--guard", type=int, default=50)
    an.add_argument("--csv", help="output CSV (default: <out>/analysis.csv)")
    rp = sub.add_parser("report", parents=[common], help="table CSV and SVG curves with saturation markers")
    rp.add_argument("runlogs", nargs="*")
    return p


def _resolve(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(
        seed=args.seed,
        judge__backend=args.backend,
        reward__gamma=args.gamma,
        reward__kind=REWARD_FLAGS.get(args.reward) if args.reward else None,
        update__baseline_mode=BASELINE_FLAGS.get(args.baseline) if args.baseline else None,
        data__n=args.n,
        policy__mode=args.mode,
        update__total_steps=args.steps,
    )
    if args.baseline in ("pos", "neg"):
        # constant-baseline runs drop the 1/|o| length normalization
        cfg = cfg.with_overrides(update__length_norm=False)
    if args.gamma is not None and args.reward is None and cfg.reward.kind == "verifier" and args.gamma > 0:
        cfg = cfg.with_overrides(reward__kind="corrupted")
    out = Path(args.out) if args.out else Path("runs") / "default"
    return cfg, out


def _emit_error(command: str, reason: str) -> None:
    print(json.dumps({"type": "error", "command": command, "reason": reason}), file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, out = _resolve(args)
        out.mkdir(parents=True, exist_ok=True)
        ws = Workspace(out, cfg)
        cmd = args.command
        if cmd == "gen-tasks":
            return cmd_gen_tasks(ws)
        if cmd == "probe":
            return cmd_probe(ws)
        if cmd == "filter":
            return cmd_filter(ws)
        if cmd == "corrupt":
            return cmd_corrupt(ws)
        if cmd == "train":
            return cmd_train(ws)
        if cmd == "eval":
            return cmd_eval(ws)
        if cmd == "diversity":
            return cmd_diversity(ws, args.policy)
        if cmd == "faithfulness":
            return cmd_faithfulness(ws, args.policy)
        if cmd == "analyze":
            return cmd_analyze(ws, args.runlogs, args.companion, args.eps_max, args.guard, args.csv)
        return cmd_report(ws, args.runlogs)
    except (RLVRLabError, ValueError, OSError) as exc:
        _emit_error(args.command, str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
