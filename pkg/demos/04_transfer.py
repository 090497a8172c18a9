"""Shape a fresh DQN with a potential pretrained by Linear VRAIL.

Needs a potential file. The acceptance suite writes one to
``runs/acceptance/frozen_potential.json``; ``vrail transfer`` writes
``<out-dir>/frozen_potential.json``.  Five seeds of 2000 episodes take a few
minutes.
"""

import sys
from pathlib import Path

from vrail.estimator import EstimatorParams
from vrail.harness import StudySpec, run_study

path = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/acceptance/frozen_potential.json")
if not path.exists():
    sys.exit(f"{path} not found; run the acceptance suite or `vrail transfer` first")
frozen = EstimatorParams.load(path)
print("frozen potential, weight on 'P: T':", round(float(frozen.values[14]), 3))

seeds = [0, 1, 2, 3, 4]
for model in ("dqn", "dqn+frozen"):
    report = run_study(StudySpec(model, seeds,
                                 frozen_params=frozen if model != "dqn" else None))
    print(f"{model:>10}: converged {report.tally}, trimmed epochs to +5: {report.table.trimmed[5.0]}")
