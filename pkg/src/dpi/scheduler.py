"""End-to-end pipelines: the isolation run, three baselines and the p sweep.

Epoch budget: every method gives each task ``epochs_stage`` passes over its
training data, in whichever stage trains it. Probe epochs come on top for the
isolation run and are not charged to it.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .evalreport import Timeline, emit_report, evaluate
from .isolation import GroupingPlan, build_grouping, frozen_set, order_stages, similarity_matrix
from .models import init_params, param_count
from .param_core import (
    Checkpoint,
    CoreRegion,
    FreezeMask,
    core_size,
    delta_magnitude,
    mask_from_frozen,
    save_checkpoint,
    top_k_region,
    write_mask,
    write_region,
)
from .tasks import REGRESSION_FAMILIES, TaskSuite, suite_data
from .trainer import OptimizerState, TrainingConfig, TrainingLog, probe_finetune, train_stage

METHODS = ("dpi", "full_multitask", "random_stages", "heuristic_stages")
FROZEN_WARN_FRACTION = 0.9


class FrozenFractionWarning(UserWarning):
    """A stage starts with more than 90% of the parameters frozen."""


@dataclass(frozen=True)
class RunConfig:
    suite: TaskSuite
    training: TrainingConfig = field(default_factory=TrainingConfig)
    p: float = 1.0
    tau: float = 0.1
    method: str = "dpi"
    K: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}", field="method")
        if self.method == "random_stages":
            if self.K is None:
                raise ConfigError("random_stages needs K", field="K")
            if not 1 <= self.K <= len(self.suite.tasks):
                raise ConfigError(f"K={self.K} must lie in 1..{len(self.suite.tasks)}", field="K")
        core_size(self.p, 1)  # validates p
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau!r}", field="tau")

    @property
    def train_cfg(self) -> TrainingConfig:
        """Training config with the run seed driving batch order."""
        return replace(self.training, seed=self.seed)

    def to_dict(self) -> dict:
        return {
            "suite": self.suite.to_dict(),
            "training": self.training.to_dict(),
            "p": self.p,
            "tau": self.tau,
            "method": self.method,
            "K": self.K,
            "seed": self.seed,
        }


@dataclass
class RunResult:
    method: str
    config: RunConfig
    theta0: np.ndarray
    final_params: np.ndarray
    stages: list[tuple[str, ...]]
    checkpoints: list[Checkpoint]  # one per stage, stage_index 1..K
    masks: list[FreezeMask]
    states: list[OptimizerState]  # optimizer state at the end of each stage
    timeline: Timeline
    plan: GroupingPlan | None = None
    probes: dict[str, np.ndarray] = field(default_factory=dict)
    log: TrainingLog = field(default_factory=TrainingLog)
    label: str = ""

    @property
    def K(self) -> int:
        return len(self.stages)


def _warn_if_mostly_frozen(mask: FreezeMask, k: int) -> None:
    frozen = 1.0 - mask.trainable_fraction()
    if frozen > FROZEN_WARN_FRACTION:
        warnings.warn(
            f"stage {k} starts with {frozen:.1%} of parameters frozen",
            FrozenFractionWarning,
            stacklevel=3,
        )


def _run_staged(
    cfg: RunConfig,
    method: str,
    stages: Sequence[Sequence[str]],
    mask_for_stage,
    data=None,
    plan: GroupingPlan | None = None,
    probes=None,
    label: str = "",
) -> RunResult:
    suite = cfg.suite
    model = suite.model
    data = suite_data(suite) if data is None else data
    tcfg = cfg.train_cfg
    theta0 = init_params(model, cfg.seed)
    stages = [tuple(s) for s in stages]
    trained_in = {t: k for k, st in enumerate(stages, start=1) for t in st}
    timeline = Timeline(list(suite.task_ids), trained_in)
    for t in suite.task_ids:
        timeline.record(evaluate(theta0, model, data[t][1], 0))
    theta = theta0
    log = TrainingLog()
    ckpts, masks, states = [], [], []
    spec_hash = model.spec_hash()
    for k, stage in enumerate(stages, start=1):
        mask = mask_for_stage(k)
        _warn_if_mostly_frozen(mask, k)
        state = OptimizerState.zeros(param_count(model))
        theta = train_stage(theta, [suite.task(t) for t in stage], model, mask, tcfg, data=data, state=state, log=log, stage=k)
        for t in suite.task_ids:
            timeline.record(evaluate(theta, model, data[t][1], k))
        ckpts.append(Checkpoint(theta.copy(), spec_hash, cfg.seed, k))
        masks.append(mask)
        states.append(state)
    return RunResult(
        method, cfg, theta0, theta, stages, ckpts, masks, states, timeline,
        plan=plan, probes=dict(probes or {}), log=log, label=label or method,
    )


def probe_all(cfg: RunConfig, data=None, workers: int = 1) -> dict[str, np.ndarray]:
    """Probe checkpoints for every task, all starting from the same init.

    Probes are independent; with ``workers > 1`` they run in a thread pool and
    the result does not depend on scheduling.
    """
    suite = cfg.suite
    data = suite_data(suite) if data is None else data
    theta0 = init_params(suite.model, cfg.seed)
    tcfg = cfg.train_cfg

    def one(task):
        return probe_finetune(theta0, task, suite.model, tcfg, data=data)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, suite.tasks))
    else:
        out = [one(t) for t in suite.tasks]
    return {t.task_id: th for t, th in zip(suite.tasks, out)}


def plan_from_probes(cfg: RunConfig, probes: dict[str, np.ndarray]) -> GroupingPlan:
    """Regions, similarity, grouping and stage order from probe checkpoints."""
    suite = cfg.suite
    theta0 = init_params(suite.model, cfg.seed)
    regions: dict[str, CoreRegion] = {}
    for t in suite.task_ids:
        regions[t] = top_k_region(delta_magnitude(probes[t], theta0), cfg.p, t)
    S = similarity_matrix([regions[t] for t in suite.task_ids])
    groups = build_grouping(S, cfg.tau)
    plan = order_stages(groups, regions, cfg.tau, suite.task_ids, S, cfg.p)
    plan.check_invariants()
    return plan


def run_dpi(cfg: RunConfig, probes: dict[str, np.ndarray] | None = None, data=None, workers: int = 1) -> RunResult:
    """Probe, extract core regions, group, then train stage by stage with
    earlier stages' regions frozen."""
    if cfg.method != "dpi":
        cfg = replace(cfg, method="dpi")
    data = suite_data(cfg.suite) if data is None else data
    if probes is None:
        probes = probe_all(cfg, data, workers)
    plan = plan_from_probes(cfg, probes)
    D = param_count(cfg.suite.model)

    def mask(k):
        return mask_from_frozen(frozen_set(plan, k).indices, D)

    return _run_staged(cfg, "dpi", plan.stages, mask, data, plan, probes, label=f"dpi@p={cfg.p!r}")


def _all_ones(cfg):
    D = param_count(cfg.suite.model)
    return lambda k: FreezeMask.ones(D)


def run_full_multitask(cfg: RunConfig, data=None) -> RunResult:
    cfg = replace(cfg, method="full_multitask")
    return _run_staged(cfg, "full_multitask", [tuple(cfg.suite.task_ids)], _all_ones(cfg), data)


def random_partition(task_ids: Sequence[str], K: int, seed: int) -> list[tuple[str, ...]]:
    """Seeded shuffle, then round-robin into ``K`` groups of near-equal size.

    Each group keeps the suite's task order internally.
    """
    if not 1 <= K <= len(task_ids):
        raise ConfigError(f"K={K} must lie in 1..{len(task_ids)}", field="K")
    ids = list(task_ids)
    order = np.random.default_rng([seed, 7]).permutation(len(ids))
    groups = [sorted(order[g::K].tolist()) for g in range(K)]
    return [tuple(ids[i] for i in g) for g in groups]


def run_random_stages(cfg: RunConfig, K: int | None = None, data=None) -> RunResult:
    K = cfg.K if K is None else K
    if K is None:
        raise ConfigError("random_stages needs K", field="K")
    cfg = replace(cfg, method="random_stages", K=K)
    stages = random_partition(cfg.suite.task_ids, K, cfg.seed)
    # with K == 1 the single group is the full task list in suite order,
    # so this run replays run_full_multitask exactly
    return _run_staged(cfg, "random_stages", stages, _all_ones(cfg), data, label=f"random_stages@K={K}")


def heuristic_groups(suite: TaskSuite) -> list[tuple[str, ...]]:
    reg = tuple(t.task_id for t in suite.tasks if t.family in REGRESSION_FAMILIES)
    cls = tuple(t.task_id for t in suite.tasks if t.family not in REGRESSION_FAMILIES)
    return [g for g in (reg, cls) if g]


def run_heuristic_stages(cfg: RunConfig, data=None) -> RunResult:
    cfg = replace(cfg, method="heuristic_stages")
    return _run_staged(cfg, "heuristic_stages", heuristic_groups(cfg.suite), _all_ones(cfg), data)


def run_method(cfg: RunConfig, data=None, workers: int = 1) -> RunResult:
    if cfg.method == "dpi":
        return run_dpi(cfg, data=data, workers=workers)
    if cfg.method == "full_multitask":
        return run_full_multitask(cfg, data)
    if cfg.method == "random_stages":
        return run_random_stages(cfg, data=data)
    return run_heuristic_stages(cfg, data)


def ablate_p(cfg: RunConfig, p_values: Sequence[float], data=None, workers: int = 1) -> list[tuple[float, RunResult]]:
    """``run_dpi`` at each p, sharing one set of probe checkpoints."""
    p_values = list(p_values)
    if not p_values:
        raise ConfigError("p sweep needs at least one value", field="p")
    for p in p_values:
        core_size(p, 1)
    data = suite_data(cfg.suite) if data is None else data
    probes = probe_all(replace(cfg, method="dpi"), data, workers)
    return [(p, run_dpi(replace(cfg, method="dpi", p=p), probes=probes, data=data)) for p in p_values]


# -- run directory -----------------------------------------------------------


def prepare_run_dir(path, overwrite: bool = False) -> Path:
    """Create ``path``; refuse a non-empty directory unless ``overwrite``."""
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        if not overwrite:
            raise ConfigError(f"run directory {path} is not empty (pass overwrite to replace)", field="output.dir")
        for child in sorted(path.rglob("*"), reverse=True):
            child.unlink() if child.is_file() or child.is_symlink() else child.rmdir()
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_metrics_csv(result: RunResult, path) -> Path:
    import csv

    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "boundary", "task_id", "kind", "raw", "score"])
        for b, t, kind, raw, score in result.timeline.rows():
            w.writerow([result.method, b, t, kind, repr(raw), repr(score)])
    return path


def write_plan_files(plan: GroupingPlan, out: Path) -> Path:
    rdir = out / "regions"
    rdir.mkdir(exist_ok=True)
    for tid, region in plan.regions.items():
        write_region(region, rdir / f"{tid}.region")
        plan.region_files[tid] = f"regions/{tid}.region"
    return plan.write_json(out / "plan.json")


def write_run_dir(result: RunResult, path, overwrite: bool = False, extra_results: Sequence[RunResult] = ()) -> Path:
    """Config snapshot, plan, per-stage checkpoints and masks, metrics, report."""
    out = prepare_run_dir(path, overwrite)
    (out / "run_config.json").write_text(json.dumps(result.config.to_dict(), indent=2, sort_keys=True) + "\n")
    if result.plan is not None:
        write_plan_files(result.plan, out)
    ck = out / "checkpoints"
    ck.mkdir()
    save_checkpoint(Checkpoint(result.theta0, result.config.suite.model.spec_hash(), result.config.seed, 0), ck / "stage_0.ckpt")
    for c, m in zip(result.checkpoints, result.masks):
        save_checkpoint(c, ck / f"stage_{c.stage_index}.ckpt")
        write_mask(m, ck / f"stage_{c.stage_index}.mask", stage=c.stage_index)
    write_metrics_csv(result, out / "metrics.csv")
    result.log.write_csv(out / "train_log.csv")
    emit_report([result, *extra_results], out)
    return out
