"""Sweep the core percentage p on the adversarial suite.

Probes are shared across the sweep, so only region extraction and the
training that follows change with p. At p=10 the padding coordinates fill
every region the same way, the regions overlap heavily and all tasks merge
into a single stage.
"""

import warnings

from dpi.evalreport import build_scoreboard
from dpi.scheduler import RunConfig, ablate_p
from dpi.tasks import make_benchmark_suite
from dpi.trainer import TrainingConfig

warnings.simplefilter("ignore")
P = [0.1, 0.5, 1, 5, 10]
print("seed  " + "".join(f"p={p:<7}" for p in P) + "interior peak")
for seed in range(5):
    s = make_benchmark_suite("adversarial", seed=seed)
    cfg = RunConfig(s, TrainingConfig(**s.meta["training"]), tau=s.meta["tau"], seed=seed)
    sweep = ablate_p(cfg, P)
    curve = [build_scoreboard([r]).rows[0].avg_norm for _, r in sweep]
    peak = max(curve[1:-1]) > max(curve[0], curve[-1])
    print(f"{seed:<6}" + "".join(f"{v:<9.3f}" for v in curve) + str(peak))
    if seed == 0:
        stages = {p: r.K for p, r in sweep}
print("\nstages per p on seed 0:", stages)
