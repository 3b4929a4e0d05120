import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpi.errors import NumericError
from dpi.evalreport import (
    ScoreRow,
    Scoreboard,
    TaskMetric,
    Timeline,
    build_scoreboard,
    evaluate,
    forgetting,
    merge_scoreboards,
    normalize_score,
    read_report_json,
    read_scoreboard_csv,
    write_report_json,
    write_scoreboard_csv,
)
from dpi.models import Batch, ModelSpec
from dpi.scheduler import RunConfig, run_method
from dpi.tasks import TaskSpec, generate_task, generating_params, make_benchmark_suite
from dpi.trainer import TrainingConfig


def acc(x, tid="T"):
    return TaskMetric(tid, x, "accuracy")


def mse(x, tid="T"):
    return TaskMetric(tid, x, "loss")


def test_evaluate_generating_model():
    model = ModelSpec("linear", 8, 3)
    for family in ("block_regression", "block_classification"):
        spec = TaskSpec("T", family, (0, 4), seed=1, noise_std=0.0)
        _, held = generate_task(spec, 8, 3)
        m = evaluate(generating_params(spec, model), model, held, 2)
        assert m.raw == (0.0 if m.kind == "loss" else 1.0) and m.measured_at == 2


def test_random_classifier_is_at_chance():
    rng = np.random.default_rng(0)
    n = 4000
    model = ModelSpec("linear", 5, 2)
    batch = Batch(rng.normal(size=(n, 5)), np.tile([0, 1], n // 2))
    m = evaluate(rng.normal(size=12), model, batch)
    assert abs(m.raw - 0.5) < 6 * math.sqrt(0.25 / n)  # binomial band
    theta = rng.normal(size=12)
    assert evaluate(theta, model, batch) == evaluate(theta, model, batch)


def test_evaluate_rejects_non_finite():
    model = ModelSpec("linear", 2, 1)
    with pytest.raises(NumericError):
        evaluate(np.array([np.nan, 0.0, 0.0]), model, Batch(np.ones((2, 2)), np.zeros((2, 1))))


def test_metric_ranges():
    with pytest.raises(ValueError):
        acc(1.2)
    with pytest.raises(ValueError):
        mse(-0.1)


def test_normalize_examples():
    assert normalize_score(acc(0.553), acc(0.1)) == pytest.approx(5.53)
    assert normalize_score(mse(2.0), mse(2.0)) == 0.0
    assert normalize_score(mse(0.0), mse(2.0)) == 10.0
    assert normalize_score(mse(5.0), mse(2.0)) == 0.0
    assert normalize_score(mse(0.0), mse(0.0)) == 10.0
    assert normalize_score(mse(0.1), mse(0.0)) == 0.0
    with pytest.raises(ValueError):
        normalize_score(mse(1.0, "A"), mse(1.0, "B"))


@given(st.floats(0, 1e6), st.floats(0, 1e6), st.floats(1e-6, 1e6))
def test_normalize_is_monotone_and_bounded(a, b, ref):
    sa, sb = normalize_score(mse(a), mse(ref)), normalize_score(mse(b), mse(ref))
    assert 0.0 <= sa <= 10.0
    if a <= b:
        assert sa >= sb


def timeline(scores_by_boundary, trained_in=1):
    # a second task "U" trains in the last stage, which fixes the number of boundaries
    tl = Timeline(["T"], {"T": trained_in, "U": len(scores_by_boundary) - 1})
    for b, s in enumerate(scores_by_boundary):
        tl.record(TaskMetric("T", s / 10.0, "accuracy", b))
    return tl


def test_forgetting_examples():
    assert forgetting(timeline([1.0, 8.0, 8.0]), "T") == 0.0
    assert forgetting(timeline([1.0, 8.0, 5.0]), "T") == pytest.approx(3.0)
    # the window starts at the task's own stage, earlier peaks do not count
    assert forgetting(timeline([1.0, 9.0, 4.0, 4.0], trained_in=2), "T") == 0.0
    tl = Timeline(["T", "U"], {"T": 1})
    with pytest.raises(ValueError):
        forgetting(tl, "U")


@given(st.lists(st.floats(0, 1), min_size=2, max_size=8), st.data())
def test_forgetting_non_negative(raws, data):
    own = data.draw(st.integers(1, len(raws) - 1))
    tl = Timeline(["T"], {"T": own, "U": len(raws) - 1})
    for b, r in enumerate(raws):
        tl.record(TaskMetric("T", r, "accuracy", b))
    assert forgetting(tl, "T") >= 0.0


def test_one_by_one_table(tmp_path):
    row = ScoreRow("dpi", {"A": 7.25}, {"A": 0.0}, p=1.0, tau=0.1, seed=0)
    board = Scoreboard(["A"], [row], "fp")
    assert row.avg_norm == 7.25
    back = read_scoreboard_csv(write_scoreboard_csv(board, tmp_path / "s.csv"))
    assert back == {"dpi": {"A": 7.25, "avg_norm": 7.25}}


def test_round_trips_within_tolerance(tmp_path):
    rng = np.random.default_rng(0)
    rows = [ScoreRow(m, {t: float(rng.random() * 10) for t in "ABC"}, {t: float(rng.random()) for t in "ABC"}, seed=1)
            for m in ("heuristic_stages", "dpi")]
    board = Scoreboard(list("ABC"), rows, "fp")
    back = read_report_json(write_report_json(board, tmp_path / "r.json"))
    for r in board.rows:
        b = back.row(r.method)
        for t in "ABC":
            assert abs(b.scores[t] - r.scores[t]) <= 1e-12
            assert abs(b.forgetting[t] - r.forgetting[t]) <= 1e-12
    csv_back = read_scoreboard_csv(write_scoreboard_csv(board, tmp_path / "s.csv"))
    for r in board.rows:
        assert abs(csv_back[r.method]["avg_norm"] - r.avg_norm) <= 1e-12


def test_four_methods_ordered():
    s = make_benchmark_suite("mixed", 4, 12, n_train=64, n_eval=32)
    tr = TrainingConfig(lr=1e-2, epochs_probe=2, epochs_stage=2)
    results = [run_method(RunConfig(s, tr, method=m, K=2 if m == "random_stages" else None))
               for m in ("heuristic_stages", "random_stages", "full_multitask", "dpi")]
    board = build_scoreboard(results)
    assert [r.method for r in board.ordered()] == ["dpi", "full_multitask", "random_stages", "heuristic_stages"]
    assert board.row("dpi").p == 1.0 and board.row("full_multitask").p is None
    assert board.suite == s.fingerprint()


def test_merge_rejects_different_suites():
    a = Scoreboard(["A"], [ScoreRow("dpi", {"A": 1.0}, {"A": 0.0})], "x")
    b = Scoreboard(["A"], [ScoreRow("full_multitask", {"A": 2.0}, {"A": 0.0})], "y")
    with pytest.raises(ValueError):
        merge_scoreboards([a, b])
    merged = merge_scoreboards([a, Scoreboard(["A"], b.rows, "x")])
    assert len(merged.rows) == 2
