"""Metrics, 0-10 normalised scores, forgetting and Table-1-shaped reports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .models import Batch, ModelSpec, predict

REPORT_SCHEMA_VERSION = 1
METHOD_ORDER = ("dpi", "full_multitask", "random_stages", "heuristic_stages")


@dataclass(frozen=True)
class TaskMetric:
    task_id: str
    raw: float
    kind: str  # "loss" (regression MSE) or "accuracy"
    measured_at: int = 0

    def __post_init__(self):
        if self.kind == "accuracy" and not 0.0 <= self.raw <= 1.0:
            raise ValueError(f"accuracy {self.raw} outside [0, 1]")
        if self.kind == "loss" and not self.raw >= 0.0:
            raise ValueError(f"loss {self.raw} must be >= 0")


def evaluate(params, spec: ModelSpec, batch: Batch, measured_at: int = 0) -> TaskMetric:
    y = predict(spec, params, batch.inputs)
    if batch.is_classification:
        acc = float(np.mean(np.argmax(y, axis=1) == batch.targets))
        return TaskMetric(batch.task_id, acc, "accuracy", measured_at)
    r = y - batch.targets
    return TaskMetric(batch.task_id, float(np.mean(r * r)), "loss", measured_at)


def normalize_score(metric: TaskMetric, reference: TaskMetric) -> float:
    """Map a metric to [0, 10].

    Accuracy scales linearly. Loss is scored against the untrained model's
    loss: ``10 * max(0, 1 - loss / loss_ref)``, so no improvement is 0 and a
    perfect fit is 10.
    """
    if metric.task_id != reference.task_id or metric.kind != reference.kind:
        raise ValueError("reference metric must come from the same task")
    if metric.kind == "accuracy":
        return float(np.clip(10.0 * metric.raw, 0.0, 10.0))
    if reference.raw == 0.0:
        return 10.0 if metric.raw == 0.0 else 0.0
    return float(np.clip(10.0 * (1.0 - metric.raw / reference.raw), 0.0, 10.0))


@dataclass
class Timeline:
    """Metrics of every task at every stage boundary.

    Boundary 0 is the untrained model, boundary ``k`` is the state after
    stage ``k``. ``trained_in`` maps a task to the stage that trained it.
    """

    task_ids: list[str]
    trained_in: dict[str, int]
    metrics: dict[tuple[str, int], TaskMetric] = field(default_factory=dict)

    @property
    def n_boundaries(self) -> int:
        return 1 + max(self.trained_in.values(), default=0)

    def record(self, metric: TaskMetric) -> None:
        self.metrics[(metric.task_id, metric.measured_at)] = metric

    def reference(self, task_id: str) -> TaskMetric:
        return self.metrics[(task_id, 0)]

    def score(self, task_id: str, boundary: int) -> float:
        return normalize_score(self.metrics[(task_id, boundary)], self.reference(task_id))

    def final_scores(self) -> dict[str, float]:
        last = self.n_boundaries - 1
        return {t: self.score(t, last) for t in self.task_ids}

    def is_complete(self) -> bool:
        return all((t, b) in self.metrics for t in self.task_ids for b in range(self.n_boundaries))

    def rows(self):
        for b in range(self.n_boundaries):
            for t in self.task_ids:
                m = self.metrics[(t, b)]
                yield b, t, m.kind, m.raw, self.score(t, b)


def forgetting(timeline: Timeline, task_id: str) -> float:
    """Best score from the task's own stage onwards minus the final score."""
    own = timeline.trained_in.get(task_id)
    if own is None or own < 1:
        raise ValueError(f"task {task_id!r} was never trained")
    last = timeline.n_boundaries - 1
    scores = [timeline.score(task_id, b) for b in range(own, last + 1)]
    return max(scores) - scores[-1]


# -- scoreboard --------------------------------------------------------------


@dataclass
class ScoreRow:
    method: str
    scores: dict[str, float]
    forgetting: dict[str, float]
    p: float | None = None
    tau: float | None = None
    seed: int | None = None
    label: str = ""

    @property
    def avg_norm(self) -> float:
        return float(np.mean(list(self.scores.values())))

    @property
    def mean_forgetting(self) -> float:
        return float(np.mean(list(self.forgetting.values())))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "label": self.label or self.method,
            "p": self.p,
            "tau": self.tau,
            "seed": self.seed,
            "scores": self.scores,
            "avg_norm": self.avg_norm,
            "forgetting": self.forgetting,
            "mean_forgetting": self.mean_forgetting,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreRow":
        return cls(d["method"], dict(d["scores"]), dict(d["forgetting"]), d.get("p"), d.get("tau"), d.get("seed"), d.get("label", ""))


def _method_rank(method: str) -> int:
    return METHOD_ORDER.index(method) if method in METHOD_ORDER else len(METHOD_ORDER)


@dataclass
class Scoreboard:
    task_ids: list[str]
    rows: list[ScoreRow]
    suite: str = ""
    ablation: list[ScoreRow] = field(default_factory=list)

    def ordered(self) -> list[ScoreRow]:
        # sorted() is stable, so rows of one method keep their insertion order
        return sorted(self.rows, key=lambda r: _method_rank(r.method))

    def row(self, method: str) -> ScoreRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "suite": self.suite,
            "task_ids": self.task_ids,
            "rows": [r.to_dict() for r in self.ordered()],
            "ablation": [r.to_dict() for r in self.ablation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scoreboard":
        if d.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema_version {d.get('schema_version')!r}")
        return cls(
            list(d["task_ids"]),
            [ScoreRow.from_dict(r) for r in d["rows"]],
            d.get("suite", ""),
            [ScoreRow.from_dict(r) for r in d.get("ablation", [])],
        )


def score_row(result) -> ScoreRow:
    """Summarise a finished run (anything with ``method``, ``timeline``, ``config``)."""
    tl = result.timeline
    cfg = result.config
    return ScoreRow(
        result.method,
        tl.final_scores(),
        {t: forgetting(tl, t) for t in tl.task_ids},
        p=cfg.p if result.method == "dpi" else None,
        tau=cfg.tau if result.method == "dpi" else None,
        seed=cfg.seed,
        label=result.label,
    )


def build_scoreboard(results: Sequence, ablation: Sequence = ()) -> Scoreboard:
    if not results and not ablation:
        raise ValueError("emit_report needs at least one result")
    first = (list(results) or list(ablation))[0]
    suite = first.config.suite
    return Scoreboard(
        list(suite.task_ids),
        [score_row(r) for r in results],
        suite.fingerprint(),
        [score_row(r) for r in ablation],
    )


def _f(x) -> str:
    return "" if x is None else repr(float(x))


def write_scoreboard_csv(board: Scoreboard, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "label", *board.task_ids, "avg_norm"])
        for r in board.ordered():
            w.writerow([r.method, r.label or r.method, *(_f(r.scores[t]) for t in board.task_ids), _f(r.avg_norm)])
    return path


def read_scoreboard_csv(path) -> dict[str, dict[str, float]]:
    """Parse a scoreboard CSV back into ``{label: {task or 'avg_norm': value}}``."""
    out = {}
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            label = rec.pop("label")
            rec.pop("method")
            out[label] = {k: float(v) for k, v in rec.items()}
    return out


def write_forgetting_csv(board: Scoreboard, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "label", *board.task_ids, "mean_forgetting"])
        for r in board.ordered():
            w.writerow([r.method, r.label or r.method, *(_f(r.forgetting[t]) for t in board.task_ids), _f(r.mean_forgetting)])
    return path


def write_ablation_csv(rows: Iterable[ScoreRow], task_ids: Sequence[str], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "task_id", "score", "avg_norm"])
        for r in rows:
            for t in task_ids:
                w.writerow([_f(r.p), t, _f(r.scores[t]), _f(r.avg_norm)])
    return path


def write_report_json(board: Scoreboard, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(board.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def read_report_json(path) -> Scoreboard:
    return Scoreboard.from_dict(json.loads(Path(path).read_text()))


def emit_report(results: Sequence, out_dir, ablation: Sequence = ()) -> Scoreboard:
    """Write ``report.json``, ``scoreboard.csv``, ``forgetting.csv`` and, for
    sweeps, ``ablation_p.csv`` into ``out_dir``."""
    board = build_scoreboard(results, ablation)
    write_board(board, out_dir)
    return board


def write_board(board: Scoreboard, out_dir) -> Scoreboard:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(board, out / "report.json")
    if board.rows:
        write_scoreboard_csv(board, out / "scoreboard.csv")
        write_forgetting_csv(board, out / "forgetting.csv")
    if board.ablation:
        write_ablation_csv(board.ablation, board.task_ids, out / "ablation_p.csv")
    return board


def merge_scoreboards(boards: Sequence[Scoreboard]) -> Scoreboard:
    """Concatenate rows of reports made on the same suite."""
    if not boards:
        raise ValueError("nothing to merge")
    suites = {b.suite for b in boards}
    if len(suites) != 1:
        raise ValueError(f"reports come from different suites: {sorted(suites)}")
    return Scoreboard(
        list(boards[0].task_ids),
        [r for b in boards for r in b.rows],
        boards[0].suite,
        [r for b in boards for r in b.ablation],
    )
