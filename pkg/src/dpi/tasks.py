"""Synthetic tasks with known parameter usage.

Each task reads a contiguous block of input features. Inside the block,
features are standard normal; outside it they are drawn i.i.d. from
N(0, distractor_std**2), which is exactly zero by default. Targets depend on
the block only, so for a linear model the gradient of a noiseless task is
supported on the weight columns fed by its block (plus the biases).
"""

from __future__ import annotations

import csv
import string
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .models import Batch, ModelSpec, pack

FAMILIES = ("block_regression", "block_classification", "shared_block_pair")
REGRESSION_FAMILIES = ("block_regression", "shared_block_pair")
PROFILES = ("disjoint", "overlapping", "mixed", "adversarial")


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    family: str
    block: tuple[int, int]
    seed: int
    n_train: int = 256
    n_eval: int = 512
    noise_std: float = 0.05
    distractor_std: float = 0.0
    # shared_block_pair: seed of the target component common to the pair
    shared_seed: int | None = None
    target_scale: float = 1.0
    # shared_block_pair: fraction of block weights in the pair's common
    # dominant support; None makes the common component dense Gaussian
    pair_support: float | None = 0.2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown task family {self.family!r}", field="family")
        lo, hi = self.block
        object.__setattr__(self, "block", (int(lo), int(hi)))
        if not 0 <= lo < hi:
            raise ConfigError(f"task {self.task_id}: empty or negative block {self.block}", field="block")
        if self.n_train <= 0 or self.n_eval <= 0:
            raise ConfigError(f"task {self.task_id}: sample counts must be positive", field="n_train")
        if self.noise_std < 0 or self.distractor_std < 0:
            raise ConfigError(f"task {self.task_id}: noise must be >= 0", field="noise_std")
        if self.family == "shared_block_pair" and self.shared_seed is None:
            raise ConfigError(f"task {self.task_id}: shared_block_pair needs shared_seed", field="shared_seed")
        if self.pair_support is not None and not 0.0 < self.pair_support <= 1.0:
            raise ConfigError(f"task {self.task_id}: pair_support must lie in (0, 1]", field="pair_support")

    @property
    def is_classification(self) -> bool:
        return self.family == "block_classification"

    @property
    def width(self) -> int:
        return self.block[1] - self.block[0]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block"] = list(self.block)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        d = dict(d)
        d["block"] = tuple(d["block"])
        return cls(**d)


@dataclass(frozen=True)
class TaskSuite:
    tasks: tuple[TaskSpec, ...]
    model: ModelSpec
    profile: str = "custom"
    expected_groups: tuple[tuple[str, ...], ...] | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ConfigError("task ids must be unique", field="tasks")
        for t in self.tasks:
            if t.block[1] > self.input_dim:
                raise ConfigError(
                    f"task {t.task_id}: block {t.block} exceeds input_dim={self.input_dim}", field="block"
                )

    @property
    def input_dim(self) -> int:
        return self.model.input_dim

    @property
    def task_ids(self) -> list[str]:
        return [t.task_id for t in self.tasks]

    def task(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(task_id)

    def order_key(self, task_id: str) -> int:
        return self.task_ids.index(task_id)

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "model": self.model.to_dict(),
            "tasks": [t.to_dict() for t in self.tasks],
            "expected_groups": None if self.expected_groups is None else [list(g) for g in self.expected_groups],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSuite":
        groups = d.get("expected_groups")
        return cls(
            tasks=tuple(TaskSpec.from_dict(t) for t in d["tasks"]),
            model=ModelSpec(**d["model"]),
            profile=d.get("profile", "custom"),
            expected_groups=None if groups is None else tuple(tuple(g) for g in groups),
        )

    def fingerprint(self) -> str:
        import hashlib
        import json

        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# shared_block_pair: magnitude range of the common dominant weights and the
# weight of each task's own dense component
PAIR_MAGNITUDE = (2.0, 3.0)
PAIR_OWN = 0.5


def pair_support(spec: TaskSpec, output_dim: int) -> np.ndarray:
    """Flat indices (into the out x width block) of the pair's dominant weights."""
    n = output_dim * spec.width
    if spec.pair_support is None:
        return np.arange(n)
    rng = np.random.default_rng([spec.shared_seed, 2])
    return np.sort(rng.permutation(n)[: max(1, round(spec.pair_support * n))])


def target_weights(spec: TaskSpec, output_dim: int) -> np.ndarray:
    """Hidden generating matrix of shape (output_dim, block width).

    Entries are N(0, 1/width). A shared_block_pair task mixes a component
    common to its pair with a weaker one of its own, rescaled to the same
    average variance. The common part is a sparse set of large weights, or
    plain Gaussian when ``pair_support`` is None.
    """
    rng = np.random.default_rng([spec.seed, 1])
    w = rng.normal(size=(output_dim, spec.width)) / np.sqrt(spec.width)
    if spec.family != "shared_block_pair":
        return spec.target_scale * w
    if spec.pair_support is None:
        common = np.random.default_rng([spec.shared_seed, 2]).normal(size=w.shape)
        second_moment = 1.0 + PAIR_OWN**2
    else:
        support = pair_support(spec, output_dim)
        rc = np.random.default_rng([spec.shared_seed, 3])
        lo, hi = PAIR_MAGNITUDE
        common = np.zeros(w.size)
        common[support] = rc.choice([-1.0, 1.0], size=support.size) * rc.uniform(lo, hi, size=support.size)
        common = common.reshape(w.shape)
        second_moment = support.size / w.size * (hi**3 - lo**3) / (3 * (hi - lo)) + PAIR_OWN**2
    w = (common / np.sqrt(spec.width) + PAIR_OWN * w) / np.sqrt(second_moment)
    return spec.target_scale * w


def _sample(spec: TaskSpec, input_dim: int, w: np.ndarray, n: int, rng) -> Batch:
    lo, hi = spec.block
    x = np.zeros((n, input_dim))
    if spec.distractor_std > 0:
        x[:] = rng.normal(scale=spec.distractor_std, size=x.shape)
    x[:, lo:hi] = rng.normal(size=(n, hi - lo))
    signal = x[:, lo:hi] @ w.T
    noise = rng.normal(scale=spec.noise_std, size=signal.shape) if spec.noise_std > 0 else 0.0
    if spec.is_classification:
        return Batch(x, np.argmax(signal + noise, axis=1).astype(np.int64), spec.task_id)
    return Batch(x, signal + noise, spec.task_id)


def generate_task(spec: TaskSpec, input_dim: int, output_dim: int = 1) -> tuple[Batch, Batch]:
    """Deterministic (train, eval) batches for one task."""
    if spec.block[1] > input_dim:
        raise ConfigError(f"task {spec.task_id}: block {spec.block} exceeds input_dim={input_dim}", field="block")
    w = target_weights(spec, output_dim)
    train = _sample(spec, input_dim, w, spec.n_train, np.random.default_rng([spec.seed, 3]))
    held = _sample(spec, input_dim, w, spec.n_eval, np.random.default_rng([spec.seed, 4]))
    return train, held


def suite_data(suite: TaskSuite) -> dict[str, tuple[Batch, Batch]]:
    return {t.task_id: generate_task(t, suite.input_dim, suite.model.output_dim) for t in suite.tasks}


def generating_params(task: TaskSpec, model: ModelSpec) -> np.ndarray:
    """Linear-model parameters that reproduce the task's noiseless targets."""
    if model.kind != "linear":
        raise ConfigError("generating parameters exist only for linear models", field="kind")
    W = np.zeros((model.output_dim, model.input_dim))
    W[:, task.block[0]:task.block[1]] = target_weights(task, model.output_dim)
    return pack(model, {"W": W, "b": np.zeros(model.output_dim)})


def block_weight_indices(task: TaskSpec, model: ModelSpec) -> np.ndarray:
    """Flat indices of linear-model weights fed by the task's input block."""
    if model.kind != "linear":
        raise ConfigError("block weight indices are defined for linear models", field="kind")
    cols = np.arange(task.block[0], task.block[1])
    rows = np.arange(model.output_dim)
    return (rows[:, None] * model.input_dim + cols[None, :]).reshape(-1)


def _task_ids(n: int) -> list[str]:
    if n <= 26:
        return list(string.ascii_uppercase[:n])
    return [f"T{i:03d}" for i in range(n)]


def _alternating(i: int) -> str:
    return "block_regression" if i % 2 == 0 else "block_classification"


def make_benchmark_suite(
    profile: str = "mixed",
    n_tasks: int = 5,
    input_dim: int | None = None,
    seed: int = 0,
    model: ModelSpec | None = None,
    **task_kwargs,
) -> TaskSuite:
    """Build a suite whose ground-truth grouping is known.

    ``disjoint``: one block per task, families alternate regression /
    classification. ``overlapping``: every task on block 0 with a different
    target function. ``mixed``: the first two tasks share block 0, every other
    task gets its own block. ``adversarial``: the mixed layout on narrow
    blocks inside a wide, mostly padded input, with noisy targets (see
    :func:`adversarial_suite`). ``input_dim`` defaults to 40 (160 for
    ``adversarial``).
    """
    if profile not in PROFILES:
        raise ConfigError(f"unknown suite profile {profile!r}", field="profile")
    if n_tasks < 2:
        raise ConfigError("a benchmark suite needs at least 2 tasks", field="n_tasks")
    if profile == "adversarial":
        return adversarial_suite(n_tasks=n_tasks, input_dim=input_dim or 160, seed=seed, model=model, **task_kwargs)
    input_dim = input_dim or 40
    n_blocks = {"disjoint": n_tasks, "overlapping": n_tasks, "mixed": n_tasks - 1}[profile]
    width = input_dim // n_blocks
    if width < 1:
        raise ConfigError(f"input_dim={input_dim} cannot hold {n_blocks} blocks", field="input_dim")
    if model is None:
        model = ModelSpec("linear", input_dim, 4)
    elif model.input_dim != input_dim:
        raise ConfigError("model input_dim differs from suite input_dim", field="input_dim")
    ids = _task_ids(n_tasks)
    seeds = np.random.default_rng([seed, 101]).integers(0, 2**31, size=n_tasks + 1).tolist()

    def block(b):
        return (b * width, (b + 1) * width)

    tasks = []
    if profile == "disjoint":
        for i, tid in enumerate(ids):
            tasks.append(TaskSpec(tid, _alternating(i), block(i), seeds[i], **task_kwargs))
        groups = [(tid,) for tid in ids]
    elif profile == "overlapping":
        for i, tid in enumerate(ids):
            tasks.append(TaskSpec(tid, "shared_block_pair", block(0), seeds[i], shared_seed=seeds[-1], **task_kwargs))
        groups = [tuple(ids)]
    else:
        for i, tid in enumerate(ids[:2]):
            tasks.append(TaskSpec(tid, "shared_block_pair", block(0), seeds[i], shared_seed=seeds[-1], **task_kwargs))
        for i, tid in enumerate(ids[2:], start=2):
            tasks.append(TaskSpec(tid, _alternating(i), block(i - 1), seeds[i], **task_kwargs))
        groups = [tuple(ids[:2])] + [(tid,) for tid in ids[2:]]
    return TaskSuite(tuple(tasks), model, profile, tuple(groups), {"seed": seed})


# training settings the adversarial benchmark is calibrated for
ADVERSARIAL_TRAINING = {"optimizer": "adam", "lr": 0.05, "epochs_probe": 2, "epochs_stage": 10, "batch_size": 32}
ADVERSARIAL_DPI = {"p": 1.0, "tau": 0.1}


def adversarial_suite(
    n_tasks: int = 5,
    input_dim: int = 160,
    seed: int = 0,
    model: ModelSpec | None = None,
    block_width: int = 12,
    noise_std: float = 0.5,
    **task_kwargs,
) -> TaskSuite:
    """Mixed layout on ``block_width``-wide blocks, the remaining features are
    padding that no task reads (always zero).

    Noisy targets make interleaved multi-task training with Adam pay for the
    shared optimizer state, and the padding means a large core percentage
    must include coordinates the task never moved. Calibrated training
    settings are in ``meta["training"]``.
    """
    if n_tasks < 2:
        raise ConfigError("a benchmark suite needs at least 2 tasks", field="n_tasks")
    if block_width < 1 or (n_tasks - 1) * block_width > input_dim:
        raise ConfigError(
            f"{n_tasks - 1} blocks of width {block_width} do not fit input_dim={input_dim}", field="block_width"
        )
    if model is None:
        model = ModelSpec("linear", input_dim, 4)
    elif model.input_dim != input_dim:
        raise ConfigError("model input_dim differs from suite input_dim", field="input_dim")
    ids = _task_ids(n_tasks)
    seeds = np.random.default_rng([seed, 101]).integers(0, 2**31, size=n_tasks + 1).tolist()
    # a dense shared component makes the pair's probe cores look unlike each
    # other although the tasks compete for the same block
    kw = {"noise_std": noise_std, "pair_support": None, **task_kwargs}

    def block(b):
        return (b * block_width, (b + 1) * block_width)

    tasks = [TaskSpec(tid, "shared_block_pair", block(0), seeds[i], shared_seed=seeds[-1], **kw) for i, tid in enumerate(ids[:2])]
    for i, tid in enumerate(ids[2:], start=2):
        tasks.append(TaskSpec(tid, _alternating(i), block(i - 1), seeds[i], **kw))
    groups = [tuple(ids[:2])] + [(tid,) for tid in ids[2:]]
    meta = {"seed": seed, "training": dict(ADVERSARIAL_TRAINING), **ADVERSARIAL_DPI}
    return TaskSuite(tuple(tasks), model, "adversarial", tuple(groups), meta)


def dump_batch_csv(batch: Batch, path) -> Path:
    """Write a batch as CSV: x0..x{n-1}, then y0.. (regression) or label."""
    path = Path(path)
    n_in = batch.inputs.shape[1]
    if batch.is_classification:
        header = [f"x{i}" for i in range(n_in)] + ["label"]
        rows = np.column_stack([batch.inputs, batch.targets])
    else:
        header = [f"x{i}" for i in range(n_in)] + [f"y{i}" for i in range(batch.targets.shape[1])]
        rows = np.column_stack([batch.inputs, batch.targets])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            vals = [repr(float(v)) for v in row]
            if batch.is_classification:
                vals[-1] = str(int(row[-1]))
            w.writerow(vals)
    return path
