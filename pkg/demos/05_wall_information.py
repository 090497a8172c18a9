"""DQN with and without explicit wall features.

Without them the agent has to infer walls from collisions alone, which makes
some seeds stall. Ten seeds per arm at full length take about 20 minutes on one
core; pass a seed count to shorten it, e.g. ``python3 demos/05_wall_information.py 3``.
"""

import sys

from vrail.harness import StudySpec, run_study
from vrail.taxi import EnvConfig

n = int(sys.argv[1]) if len(sys.argv) > 1 else 10
for walls in (False, True):
    report = run_study(StudySpec("dqn", list(range(n)), env_config=EnvConfig(wall_features=walls)))
    failing = [m.seed for m in report.metrics if not m.converged]
    print(f"wall features={walls}: converged {report.tally}, failing seeds {failing}")
