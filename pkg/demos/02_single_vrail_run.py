"""One Linear VRAIL run next to plain DQN on the same seed.

The full setting (20 cycles of 100 episodes) takes roughly a minute per run.
Pass a smaller cycle count as the first argument for a quicker look, e.g.
``python3 demos/02_single_vrail_run.py 5``.
"""

import sys

from vrail.bilevel import LoopConfig, run
from vrail.harness import compute_metrics

cycles = int(sys.argv[1]) if len(sys.argv) > 1 else 20
seed = 0

for kind in (None, "linear"):
    rec = run(LoopConfig(outer_cycles=cycles, estimator_kind=kind), seed=seed)
    m = compute_metrics(rec)
    print(f"{rec.model:>8}: final moving average {m.moving_avg[-1]:6.2f}, converged={m.converged}, "
          f"epochs to thresholds {m.epochs_to_threshold}")
    # Cycle 0 is unshaped, so both runs see identical first-cycle rewards.
    if kind is None:
        first_cycle = rec.rewards[:100]
    else:
        print("first cycle identical to DQN:", rec.rewards[:100] == first_cycle)
        w = rec.snapshots[-1].values
        print("final potential weight on 'P: T':", round(float(w[14]), 3))
