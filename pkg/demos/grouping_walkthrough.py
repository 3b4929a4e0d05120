"""Probe, extract core regions and group tasks on the mixed suite.

Tasks A and B read the same input block, C, D and E each read their own.
The overlap of their top-5% regions should put A and B in one stage and
leave everyone else alone.
"""

import numpy as np

from dpi.models import init_params
from dpi.param_core import delta_magnitude
from dpi.scheduler import RunConfig, plan_from_probes, probe_all
from dpi.tasks import make_benchmark_suite
from dpi.trainer import TrainingConfig

suite = make_benchmark_suite("mixed", 5, 40, seed=0, noise_std=0.0)
cfg = RunConfig(suite, TrainingConfig(lr=1e-2, epochs_probe=3), p=5, tau=0.1)

probes = probe_all(cfg)
theta0 = init_params(suite.model, cfg.seed)
for tid, theta in probes.items():
    d = delta_magnitude(theta, theta0)
    print(f"{tid}: block {suite.task(tid).block}, total |delta| {d.sum():.4f}")

plan = plan_from_probes(cfg, probes)
np.set_printoptions(precision=2, suppress=True)
print("\nJaccard overlap of core regions:")
print(plan.similarity.values)
print("\nstages (largest footprint first):", plan.stages)
print("ground truth:", suite.expected_groups)
