"""Mask-aware SGD/Adam and the probe / stage training loops.

This is the only module that produces new parameter values. Every update
goes through a :class:`~dpi.param_core.FreezeMask`; frozen coordinates keep
their parameter value and their Adam moments bit-for-bit.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError, NumericError
from .models import Batch, ModelSpec, loss_and_grad, param_count
from .param_core import FreezeMask
from .tasks import TaskSpec, generate_task


@dataclass(frozen=True)
class TrainingConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs_probe: int = 3
    epochs_stage: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", field="optimizer")
        if not self.lr > 0:
            raise ConfigError("lr must be positive", field="lr")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)", field=name)
        if not self.eps > 0:
            raise ConfigError("eps must be positive", field="eps")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive", field="batch_size")
        if self.epochs_probe < 0:
            raise ConfigError("epochs_probe must be >= 0", field="epochs_probe")
        if self.epochs_stage < 0:
            raise ConfigError("epochs_stage must be >= 0", field="epochs_stage")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    step_count: int
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> "OptimizerState":
        return cls(0, np.zeros(dim), np.zeros(dim))

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.step_count, self.m.copy(), self.v.copy())


def optimizer_step(
    state: OptimizerState,
    params: np.ndarray,
    grad_vec: np.ndarray,
    mask: FreezeMask,
    cfg: TrainingConfig,
) -> tuple[OptimizerState, np.ndarray]:
    """One masked SGD or Adam step; returns new state and parameters.

    Gradients of frozen coordinates are zeroed before the moment updates and
    the moments themselves are carried over unchanged there, so a coordinate
    that is later unfrozen does not inherit stale momentum.
    """
    if not (params.shape == grad_vec.shape == (mask.dim,)):
        raise DimensionError("params, gradient and mask lengths differ")
    bad = np.flatnonzero(~np.isfinite(grad_vec))
    if bad.size:
        raise NumericError(f"non-finite gradient at coordinate {bad[0]}", coordinate=int(bad[0]))
    live = mask.trainable
    g = np.where(live, grad_vec, 0.0)
    t = state.step_count + 1
    if cfg.optimizer == "sgd":
        new_params = np.where(live, params - cfg.lr * g, params)
        return OptimizerState(t, state.m, state.v), new_params
    m = np.where(live, cfg.beta1 * state.m + (1.0 - cfg.beta1) * g, state.m)
    v = np.where(live, cfg.beta2 * state.v + (1.0 - cfg.beta2) * (g * g), state.v)
    mhat = m / (1.0 - cfg.beta1**t)
    vhat = v / (1.0 - cfg.beta2**t)
    update = -cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)
    new_params = np.where(live, params + update, params)
    return OptimizerState(t, m, v), new_params


@dataclass
class TrainingLog:
    """Per-step records ``(step, stage, task_id, loss)``."""

    rows: list[tuple[int, int, str, float]] = field(default_factory=list)

    def add(self, step, stage, task_id, value):
        self.rows.append((step, stage, task_id, value))

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "stage", "task_id", "loss"])
            for step, stage, tid, value in self.rows:
                w.writerow([step, stage, tid, repr(value)])
        return path


def stage_rng(seed: int, task_ids: Iterable[str]) -> np.random.Generator:
    """Generator for batch order, keyed by the seed and the stage's task set.

    Keying on the task set (not the stage number) makes a one-task stage
    replay exactly the probe run of that task.
    """
    key = zlib.crc32("\x1f".join(task_ids).encode())
    return np.random.default_rng([seed, key])


def mixture_schedule(
    sizes: Sequence[int], batch_size: int, rng: np.random.Generator
) -> list[tuple[int, np.ndarray]]:
    """One epoch of ``(task_position, row_indices)`` minibatches.

    Each task's rows are shuffled into minibatches; at every step a task is
    drawn uniformly among those with batches left this epoch.
    """
    queues = []
    for n in sizes:
        perm = rng.permutation(n)
        queues.append([perm[i:i + batch_size] for i in range(0, n, batch_size)])
    cursor = [0] * len(sizes)
    out = []
    live = [i for i, q in enumerate(queues) if q]
    while live:
        pick = live[int(rng.integers(len(live)))]
        out.append((pick, queues[pick][cursor[pick]]))
        cursor[pick] += 1
        if cursor[pick] == len(queues[pick]):
            live.remove(pick)
    return out


def _train(
    theta: np.ndarray,
    model: ModelSpec,
    data: Sequence[Batch],
    mask: FreezeMask,
    cfg: TrainingConfig,
    epochs: int,
    rng: np.random.Generator,
    state: OptimizerState,
    log: TrainingLog | None,
    stage: int,
) -> np.ndarray:
    params = np.array(theta, dtype=np.float64)
    if params.size != param_count(model):
        raise DimensionError(f"theta has {params.size} entries, model needs {param_count(model)}")
    if mask.dim != params.size:
        raise DimensionError(f"mask has dim {mask.dim}, parameters have {params.size}")
    sizes = [len(b) for b in data]
    for epoch in range(epochs):
        for pos, rows in mixture_schedule(sizes, cfg.batch_size, rng):
            batch = data[pos].take(rows)
            try:
                value, g = loss_and_grad(model, params, batch)
            except NumericError as exc:
                raise DivergenceError(
                    f"training diverged in stage {stage}, epoch {epoch}, step {state.step_count + 1} "
                    f"on task {batch.task_id!r}: {exc}",
                    coordinate=exc.coordinate,
                ) from exc
            if log is not None:
                log.add(state.step_count + 1, stage, batch.task_id, value)
            new_state, params = optimizer_step(state, params, g, mask, cfg)
            state.step_count, state.m, state.v = new_state.step_count, new_state.m, new_state.v
    return params


def _training_batches(tasks: Iterable[TaskSpec], model: ModelSpec, data) -> tuple[list[str], list[Batch]]:
    ids, batches = [], []
    for t in tasks:
        ids.append(t.task_id)
        if data is not None and t.task_id in data:
            batches.append(data[t.task_id][0])
        else:
            batches.append(generate_task(t, model.input_dim, model.output_dim)[0])
    return ids, batches


def probe_finetune(
    theta0: np.ndarray,
    task: TaskSpec,
    model: ModelSpec,
    cfg: TrainingConfig,
    data: dict | None = None,
    log: TrainingLog | None = None,
) -> np.ndarray:
    """Short unmasked fine-tune on one task, starting from a copy of ``theta0``."""
    ids, batches = _training_batches([task], model, data)
    mask = FreezeMask.ones(param_count(model))
    return _train(
        theta0, model, batches, mask, cfg, cfg.epochs_probe, stage_rng(cfg.seed, ids),
        OptimizerState.zeros(mask.dim), log, stage=0,
    )


def train_stage(
    theta: np.ndarray,
    tasks: Sequence[TaskSpec],
    model: ModelSpec,
    mask: FreezeMask,
    cfg: TrainingConfig,
    data: dict | None = None,
    state: OptimizerState | None = None,
    log: TrainingLog | None = None,
    stage: int = 1,
) -> np.ndarray:
    """Train ``epochs_stage`` epochs on the uniform mixture of ``tasks``.

    Every step is masked. A fresh optimizer state is used unless ``state`` is
    given, in which case it is updated in place.
    """
    tasks = list(tasks)
    if not tasks:
        raise ConfigError("a stage needs at least one task", field="tasks")
    ids, batches = _training_batches(tasks, model, data)
    if state is None:
        state = OptimizerState.zeros(param_count(model))
    return _train(theta, model, batches, mask, cfg, cfg.epochs_stage, stage_rng(cfg.seed, ids), state, log, stage)
