"""Read feature importance off trained linear and quadratic estimators.

Uses stored studies if present (``runs/acceptance/linear`` and
``runs/acceptance/quadratic``, produced by the acceptance suite or by
``vrail study``); otherwise fits the estimators to oracle state values, which
shows the same structure without any RL training.
"""

from pathlib import Path

import numpy as np

from vrail import taxi
from vrail.bilevel import RunRecord
from vrail.estimator import attribution_report, fit
from vrail.harness import build_report

names = taxi.feature_names()


def from_study(kind):
    d = Path("runs/acceptance") / kind
    records = [RunRecord.load(p) for p in sorted(d.glob("run_*.json"))]
    if not records:
        return None
    report = build_report(kind, records)
    print(f"{kind}: averaging seeds {report.attribution_seeds}")
    return report.attribution


def from_oracle(kind):
    values, _ = taxi.value_iteration_oracle(gamma=0.99)
    print(f"{kind}: no stored study, fitting to oracle values instead")
    return attribution_report([fit(taxi.feature_matrix(), values, kind, epochs=1000).params], names)


linear = from_study("linear") or from_oracle("linear")
print("top linear features:")
for i in linear.ranking[:5]:
    print(f"  {names[i]:>8}  {linear.mean.values[i]:+.3f}")

quad = from_study("quadratic") or from_oracle("quadratic")
S = quad.symmetric.copy()
iu = np.triu_indices_from(S, k=1)
order = np.argsort(-S[iu])[:5]
print("strongest quadratic feature pairs:")
for k in order:
    i, j = iu[0][k], iu[1][k]
    print(f"  {names[i]:>8} x {names[j]:<8} {S[i, j]:+.3f}")
