import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmbeam.errors import ShapeError
from mmbeam.evalkit import (
    SweepTimingParams,
    curves_csv,
    evaluate_predictions,
    exhaustive_sweep_time,
    oracle_sets,
    overhead_report,
    power_ratio,
    power_ratio_detail,
    predicted_sweep_time,
    report_json,
    sweep_table,
    topm_accuracy,
    topm_literal,
)


# --- timing ----------------------------------------------------------------

def test_slot_duration_is_burst_over_32():
    assert SweepTimingParams().t_ssb == 0.15625


@pytest.mark.parametrize("n,expected", [(64, 25.0), (32, 5.0), (1, 5.0), (33, 25.0), (65, 45.0)])
def test_exhaustive_sweep_time(n, expected):
    assert exhaustive_sweep_time(n) == expected


@pytest.mark.parametrize("m,expected", [(1, 0.15625), (5, 0.78125), (9, 1.40625), (13, 2.03125), (33, 20.15625)])
def test_predicted_sweep_time(m, expected):
    assert predicted_sweep_time(m) == expected


def test_published_rounded_timings():
    assert abs(predicted_sweep_time(13) - 2.03) <= 0.01
    assert abs(predicted_sweep_time(1) - 0.156) <= 0.001


def test_timing_params_reject_short_period():
    with pytest.raises(ValueError):
        SweepTimingParams(t_burst=5.0, T_ssb=4.0)


def test_sweep_times_monotone_and_bounded():
    ex = [exhaustive_sweep_time(n) for n in range(1, 200)]
    pr = [predicted_sweep_time(m) for m in range(1, 200)]
    assert all(a <= b for a, b in zip(ex, ex[1:]))
    assert all(a <= b for a, b in zip(pr, pr[1:]))
    assert all(predicted_sweep_time(m) <= exhaustive_sweep_time(64) for m in range(1, 65))


# --- metrics ---------------------------------------------------------------

def test_topm_accuracy_examples():
    assert topm_accuracy([5, 7], [{5, 1, 2}, {9, 7, 3}]) == 1.0
    assert topm_accuracy([5, 7], [{1, 2, 3}, {9, 7, 3}]) == 0.5


def test_topm_literal_examples():
    assert topm_literal([5, 7], [{5, 1, 2}, {9, 7, 3}]) == pytest.approx(1 / 3)
    assert topm_literal([1, 2, 3], [[1], [2], [3]]) == 1.0


def test_metric_length_mismatch():
    with pytest.raises(ShapeError):
        topm_accuracy([1, 2], [[1]])
    with pytest.raises(ShapeError):
        topm_literal([1], [[1], [2]])
    with pytest.raises(ShapeError):
        power_ratio([[1.0, 2.0]], [[1], [2]])


def test_power_ratio_examples():
    assert power_ratio([[10.0, 8.0, 1.0]], [[2, 3]]) == pytest.approx(0.8)
    assert power_ratio([[10.0, 8.0, 1.0]], [[1]]) == 1.0


def test_power_ratio_skips_zero_ground_truth():
    d = power_ratio_detail([[0.0, 0.0], [4.0, 2.0]], [[1], [2]])
    assert d.n_skipped == 1 and d.n_used == 1
    assert d.value == 0.5


profiles_st = st.integers(1, 40).flatmap(
    lambda q: st.lists(st.lists(st.floats(0.0, 1e3), min_size=q, max_size=q), min_size=1, max_size=20)
)


@settings(max_examples=60, deadline=None)
@given(profiles_st, st.data())
def test_oracle_sets_are_perfect(profiles, data):
    q = len(profiles[0])
    m = data.draw(st.integers(1, q))
    truths = [int(np.argmax(p)) + 1 for p in profiles]
    sets = oracle_sets(profiles, m)
    assert topm_accuracy(truths, sets) == 1.0
    pr = power_ratio(profiles, sets)
    assert math.isnan(pr) or pr == 1.0


@settings(max_examples=60, deadline=None)
@given(profiles_st, st.data())
def test_metric_bounds_and_nesting(profiles, data):
    q = len(profiles[0])
    rng = np.random.default_rng(data.draw(st.integers(0, 2**16)))
    ranked = [list(rng.permutation(q) + 1) for _ in profiles]
    truths = [int(rng.integers(1, q + 1)) for _ in profiles]
    prev = -1.0
    for m in range(1, q + 1):
        sets = [r[:m] for r in ranked]
        acc = topm_accuracy(truths, sets)
        assert acc >= prev
        prev = acc
        assert topm_literal(truths, sets) <= 1.0 / m + 1e-15
        pr = power_ratio(profiles, sets)
        assert math.isnan(pr) or 0.0 <= pr <= 1.0


# --- reports ---------------------------------------------------------------

def _random_eval(n=30, q=64, seed=0):
    rng = np.random.default_rng(seed)
    profiles = rng.random((n, q))
    truths = profiles.argmax(axis=1) + 1
    ranked = [list(rng.permutation(q) + 1) for _ in range(n)]
    return truths, profiles, ranked


def test_overhead_rows_match_closed_forms():
    truths, profiles, ranked = _random_eval()
    rep = evaluate_predictions(truths, profiles, ranked)
    rows = {r["M"]: r for r in overhead_report(rep, 64)}
    assert rows[13]["time_saving_pct"] == 91.875
    assert rows[13]["search_fraction_pct"] == 20.3125
    assert rows[13]["search_saving_pct"] == 79.6875
    assert rep.exhaustive_ms == 25.0


def test_full_codebook_saves_nothing():
    truths, profiles, ranked = _random_eval()
    rep = evaluate_predictions(truths, profiles, ranked, topm=(64,))
    row = overhead_report(rep, 64)[0]
    assert row["search_fraction_pct"] == 100.0
    assert row["time_saving_pct"] == 0.0
    assert rep.accuracy[64] == 1.0


def test_report_serializations_are_stable():
    truths, profiles, ranked = _random_eval()
    rep = evaluate_predictions(truths, profiles, ranked)
    text = report_json(rep)
    assert text == report_json(evaluate_predictions(truths, profiles, ranked))
    parsed = json.loads(text)
    assert parsed["exhaustive_ms"] == 25.0
    assert set(parsed["accuracy"]) == {"1", "5", "9", "13"}
    rows = list(csv.DictReader(io.StringIO(curves_csv(rep))))
    assert [int(r["M"]) for r in rows] == [1, 5, 9, 13]
    assert float(rows[3]["sweep_ms"]) == 2.03125


def test_sweep_table_rows():
    rows = sweep_table((1, 5, 9, 13), 64)
    assert [r["sweep_ms"] for r in rows[:-1]] == [0.15625, 0.78125, 1.40625, 2.03125]
    assert rows[-1]["kind"] == "exhaustive" and rows[-1]["sweep_ms"] == 25.0
