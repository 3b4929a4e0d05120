"""Four methods on the adversarial suite, averaged over five seeds.

Full multitask shares one Adam state across all five noisy tasks; DPI trains
the isolated groups one after another and freezes what earlier stages
learned. Prints the scoreboard of mean avg-normalized scores and forgetting.
"""

import warnings

import numpy as np

from dpi.evalreport import build_scoreboard
from dpi.scheduler import RunConfig, run_dpi, run_full_multitask, run_heuristic_stages, run_random_stages
from dpi.tasks import make_benchmark_suite
from dpi.trainer import TrainingConfig

warnings.simplefilter("ignore")
avg, fgt = {}, {}
for seed in range(5):
    s = make_benchmark_suite("adversarial", seed=seed)
    cfg = RunConfig(s, TrainingConfig(**s.meta["training"]), p=s.meta["p"], tau=s.meta["tau"], seed=seed)
    runs = [run_dpi(cfg), run_full_multitask(cfg), run_random_stages(cfg, 3), run_heuristic_stages(cfg)]
    if seed == 0:
        print("seed 0 DPI stages:", runs[0].stages)
    for row in build_scoreboard(runs).ordered():
        avg.setdefault(row.label, []).append(row.avg_norm)
        fgt.setdefault(row.label, []).append(row.mean_forgetting)

print(f"\n{'method':<20}{'avg_norm':>10}{'forgetting':>12}")
for label in avg:
    print(f"{label:<20}{np.mean(avg[label]):>10.4f}{np.mean(fgt[label]):>12.4f}")
