from __future__ import annotations

import itertools
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rlvrlab.analytics import (
    Curve,
    cohen_kappa,
    efficiency_metrics,
    eval_metrics,
    ingest,
    load_runlog,
    mean_gap,
    pass_at_k,
    read_table,
    report_rows,
    saturation_report,
    saturation_step,
    write_table,
)
from rlvrlab.errors import InputError, SchemaError
from rlvrlab.runlog import REWARD_METRIC

FIXTURES = Path(__file__).parent / "fixtures"


# -- saturation -----------------------------------------------------------------


def test_ramp_saturates_at_99():
    assert saturation_step([min(1.0, t / 100) for t in range(1, 201)]) == 99


def test_guard_excludes_late_saturation():
    curve = [0.1] * 160 + [1.0] * 40
    assert saturation_step(curve, guard=50) is None
    assert saturation_step(curve, guard=30) == 161


def test_saturation_needs_enough_points():
    with pytest.raises(InputError):
        saturation_step([0.5] * 50, guard=50)


def test_flat_curve_saturates_immediately():
    assert saturation_step([0.4] * 120) == 1


def test_none_case_leaves_metrics_undefined():
    em = efficiency_metrics([(0, 0.1), (8, 0.2)], None)
    assert em.delta_sat is None and em.delta_post is None and not em.defined


def test_nearest_step_prefers_earlier_on_tie():
    c = Curve((0, 8, 16), (0.0, 1.0, 2.0))
    assert c.nearest_step(4) == 0
    assert c.nearest_step(5) == 8
    assert c.nearest_step(12) == 8


def test_efficiency_metrics_on_handmade_curve():
    m = [(0, 10.0), (10, 30.0), (20, 35.0), (30, 33.0)]
    em = efficiency_metrics(m, 11, companion=[(0, 10.0), (10, 28.0), (20, 40.0)])
    assert em.t_eval == 10
    assert em.delta_sat == pytest.approx(20.0)
    assert em.delta_post == pytest.approx(5.0)
    assert em.g_sat == pytest.approx(-2.0)


def test_curve_invariants():
    with pytest.raises(InputError):
        Curve((0, 0), (1.0, 2.0))
    with pytest.raises(InputError):
        Curve((0, 1), (1.0, math.nan))


def test_reference_fixture_row():
    curves = ingest([FIXTURES / "small_n8.jsonl", FIXTURES / "large_n2048.jsonl"])
    small, large = "qwen2.5-math-1.5b-math-n8", "qwen2.5-math-1.5b-math-n2048"
    metrics = {m: c for (r, m), c in curves.items() if r == small and m != REWARD_METRIC}
    comps = {m: c for (r, m), c in curves.items() if r == large and m != REWARD_METRIC}
    rep = saturation_report(curves[(small, REWARD_METRIC)], metrics, companions=comps, companion_n=2048)
    assert rep.t_sat == 302
    math500 = rep.metrics["math500/avg@16"]
    assert math500.t_eval == 304
    assert round(math500.delta_sat, 1) == 29.7
    assert round(math500.delta_post, 1) == 1.5
    assert round(rep.metrics["amc/avg@16"].delta_sat, 1) == 18.7
    assert round(mean_gap(rep, ["math500/avg@16", "amc/avg@16"]), 1) == -1.1
    assert round(rep.metrics["scp-hard/avg@16"].g_sat, 1) == 2.4


def test_report_table_round_trip(tmp_path):
    rep = saturation_report([min(1.0, t / 100) for t in range(1, 201)], {"acc": Curve((0, 100, 200), (0.1, 0.5, 0.6))})
    rows = report_rows(rep)
    back = read_table(write_table(rows, tmp_path / "t.csv"))
    assert [r["metric"] for r in back] == [REWARD_METRIC, "acc"]
    assert back[0]["t_sat"] == back[1]["t_sat"] == "99"
    assert float(back[1]["delta_sat"]) == pytest.approx(0.4)
    none_rep = saturation_report([0.1] * 100 + [1.0] * 20, {"acc": Curve((0, 100), (0.1, 0.5))})
    assert report_rows(none_rep)[1]["delta_sat"] == "undefined"


# -- estimators -----------------------------------------------------------------


def _brute_pass_at_k(flags, k):
    subsets = list(itertools.combinations(range(len(flags)), k))
    return sum(any(flags[i] for i in s) for s in subsets) / len(subsets)


def test_pass_at_4_closed_form():
    assert pass_at_k(16, 4, 4) == pytest.approx(1 - math.comb(12, 4) / math.comb(16, 4), abs=1e-12)


@pytest.mark.parametrize("k", [1, 4])
def test_pass_at_k_brute_force(k):
    for c in range(17):
        flags = [True] * c + [False] * (16 - c)
        assert pass_at_k(16, c, k) == pytest.approx(_brute_pass_at_k(flags, k), abs=1e-12)


@given(st.integers(0, 16))
def test_pass_at_k_monotone(c):
    vals = [pass_at_k(16, c, k) for k in range(1, 17)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_eval_metrics():
    flags = np.zeros((2, 16), dtype=bool)
    flags[0, :4] = True
    out = eval_metrics(flags)
    assert out["mean"]["avg@16"] == pytest.approx(0.125)
    assert out["per_problem"]["pass@16"].tolist() == [1.0, 0.0]
    first = eval_metrics(flags, estimator="first_k")
    assert first["per_problem"]["pass@1"].tolist() == [1.0, 0.0]
    with pytest.raises(InputError):
        eval_metrics(np.zeros((2, 8)))


def test_kappa_cases():
    a = [0, 1, 1, 0, 1]
    assert cohen_kappa(a, a) == 1.0
    assert cohen_kappa([0, 1] * 50, [1, 0] * 50) == -1.0
    assert cohen_kappa([1, 1, 1], [1, 1, 1]) == 1.0
    # textbook example: p_o = 0.7, p_e = 0.5
    x = [1] * 20 + [1] * 5 + [0] * 10 + [0] * 15
    y = [1] * 20 + [0] * 5 + [1] * 10 + [0] * 15
    assert cohen_kappa(x, y) == pytest.approx(0.4)


# -- ingestion ------------------------------------------------------------------


def _write(tmp_path, lines):
    p = tmp_path / "log.jsonl"
    p.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
    return p


HEAD = {"schema": "rlvrlab/runlog", "version": 1, "run_id": "x", "n": 8}


def test_ingest_rejects_non_monotone_steps(tmp_path):
    p = _write(tmp_path, [HEAD, {"type": "eval", "step": 8, "metric": "a", "value": 1},
                          {"type": "eval", "step": 8, "metric": "a", "value": 1}])
    with pytest.raises(SchemaError, match=":3"):
        load_runlog(p)


def test_ingest_rejects_missing_field_and_bad_schema(tmp_path):
    p = _write(tmp_path, [HEAD, {"type": "step", "step": 1}])
    with pytest.raises(SchemaError, match="mean_reward"):
        load_runlog(p)
    p = _write(tmp_path, [{**HEAD, "version": 9}])
    with pytest.raises(SchemaError):
        load_runlog(p)


def test_ingest_rejects_non_finite_values(tmp_path):
    p = tmp_path / "log.jsonl"
    p.write_text(json.dumps(HEAD) + '\n{"type":"eval","step":0,"metric":"a","value":NaN}\n')
    with pytest.raises(SchemaError):
        load_runlog(p)


def test_ingest_keys_by_run_and_metric():
    curves = ingest([FIXTURES / "ramp.jsonl"])
    assert list(curves) == [("ramp", REWARD_METRIC)]
    assert len(curves[("ramp", REWARD_METRIC)]) == 200
