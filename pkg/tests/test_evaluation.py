import csv
import json
import math

import pytest

from joinscout.evaluation import (RankedResult, median_ms, ndcg_at_k,
                                  recall_at_k, spearman_shift,
                                  write_metric_report, write_timing_csv)


def _result(qid, pairs):
    return RankedResult(query_id=qid, items=tuple(pairs))


def test_ranked_result_validation():
    _result("q", [("a", 0.9), ("b", 0.9), ("c", 0.1)])
    with pytest.raises(ValueError, match="duplicate"):
        _result("q", [("a", 0.9), ("a", 0.8)])
    with pytest.raises(ValueError, match="non-increasing"):
        _result("q", [("a", 0.5), ("b", 0.8)])


def test_top_ids():
    res = _result("q", [("a", 0.9), ("b", 0.8), ("c", 0.7)])
    assert res.top_ids(2) == ["a", "b"]
    assert res.top_ids(10) == ["a", "b", "c"]


def test_recall_at_k():
    approx = _result("q", [("a", 0.9), ("b", 0.8), ("x", 0.7)])
    truth = _result("q", [("b", 1.0), ("a", 0.9), ("c", 0.5)])
    assert recall_at_k(approx, truth, 3) == pytest.approx(2 / 3)
    assert recall_at_k(approx, truth, 2) == 1.0
    assert recall_at_k(truth, truth, 3) == 1.0
    with pytest.raises(ValueError):
        recall_at_k(approx, truth, 0)


def test_ndcg_perfect_and_swapped():
    gains = {"a": 1.0, "b": 0.5, "c": 0.2}
    truth = _result("q", [("a", 1.0), ("b", 0.5), ("c", 0.2)])
    assert ndcg_at_k(truth, truth, gains, 3) == pytest.approx(1.0)
    swapped = _result("q", [("b", 0.9), ("a", 0.8), ("c", 0.2)])
    ideal = 1.0 + 0.5 / math.log2(3) + 0.2 / 2.0
    got = 0.5 + 1.0 / math.log2(3) + 0.2 / 2.0
    assert ndcg_at_k(swapped, truth, gains, 3) == pytest.approx(got / ideal)


def test_ndcg_zero_ideal_pins():
    gains = {"a": 0.0, "b": 0.0, "c": 1.0}
    truth = _result("q", [("a", 0.0), ("b", 0.0)])
    empty = _result("q", [("b", 0.0), ("a", 0.0)])
    assert ndcg_at_k(empty, truth, gains, 2) == 1.0
    found = _result("q", [("c", 0.9), ("a", 0.0)])
    assert ndcg_at_k(found, truth, gains, 2) == 0.0


def test_ndcg_missing_gain_raises():
    truth = _result("q", [("a", 1.0)])
    with pytest.raises(ValueError, match="missing joinability"):
        ndcg_at_k(truth, truth, {}, 1)


def test_spearman_shift_extremes():
    ids = ["a", "b", "c", "d"]
    assert spearman_shift(ids, list(ids)) == 0.0
    assert spearman_shift(ids, ids[::-1]) == pytest.approx(2.0)
    one_swap = ["b", "a", "c", "d"]
    assert 0.0 < spearman_shift(ids, one_swap) < 2.0


def test_spearman_shift_errors():
    with pytest.raises(ValueError, match="at least 2"):
        spearman_shift(["a"], ["a"])
    with pytest.raises(ValueError, match="duplicate"):
        spearman_shift(["a", "a"], ["a", "a"])
    with pytest.raises(ValueError, match="same id set"):
        spearman_shift(["a", "b"], ["a", "c"])


def test_write_metric_report(tmp_path):
    rows = [("q1", 10, 0.8, 0.9), ("q2", 10, 0.6, 0.7),
            ("q1", 25, 0.5, 0.6)]
    csv_path = tmp_path / "metrics.csv"
    json_path = tmp_path / "summary.json"
    summary = write_metric_report(rows, csv_path, json_path)
    assert summary["per_k"]["10"]["mean_recall"] == pytest.approx(0.7)
    assert summary["per_k"]["10"]["mean_ndcg"] == pytest.approx(0.8)
    assert summary["per_k"]["10"]["n_queries"] == 2
    assert summary["per_k"]["25"]["n_queries"] == 1
    with open(csv_path, newline="") as handle:
        parsed = list(csv.reader(handle))
    assert parsed[0] == ["query_id", "k", "recall", "ndcg"]
    assert len(parsed) == 4
    assert json.loads(json_path.read_text()) == summary


def test_median_ms():
    assert median_ms(lambda: None, runs=5) >= 0.0
    with pytest.raises(ValueError):
        median_ms(lambda: None, runs=0)


def test_write_timing_csv(tmp_path):
    path = tmp_path / "timing.csv"
    write_timing_csv([(100, 1.5, 0.25), (200, 3.0, 0.5)], path)
    with open(path, newline="") as handle:
        parsed = list(csv.reader(handle))
    assert parsed[0] == ["size", "encode_ms", "search_ms"]
    assert parsed[1] == ["100", "1.5", "0.25"]
    assert len(parsed) == 3
