"""Core-parameter isolation for multi-task fine-tuning, at desk scale."""

from .errors import (
    CheckpointError,
    ConfigError,
    DimensionError,
    DivergenceError,
    DPIError,
    NumericError,
)
from .evalreport import Scoreboard, TaskMetric, emit_report, evaluate, forgetting, normalize_score
from .isolation import GroupingPlan, build_grouping, frozen_set, jaccard, order_stages, similarity_matrix
from .models import Batch, ModelSpec, init_params, loss, loss_and_grad, param_count
from .param_core import (
    Checkpoint,
    CoreRegion,
    FreezeMask,
    apply_masked_update,
    core_size,
    delta_magnitude,
    load_checkpoint,
    mask_from_frozen,
    save_checkpoint,
    top_k_region,
)
from .scheduler import (
    RunConfig,
    RunResult,
    ablate_p,
    run_dpi,
    run_full_multitask,
    run_heuristic_stages,
    run_random_stages,
)
from .tasks import TaskSpec, TaskSuite, generate_task, make_benchmark_suite
from .trainer import OptimizerState, TrainingConfig, optimizer_step, probe_finetune, train_stage

__version__ = "0.1.0"
