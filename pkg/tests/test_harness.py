import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vrail import taxi
from vrail.bilevel import LoopConfig, RunRecord
from vrail.dqn import AgentConfig
from vrail.estimator import EstimatorParams
from vrail.harness import (
    StudySpec,
    build_report,
    compute_metrics,
    detect_convergence,
    epochs_to_threshold,
    moving_average,
    run_records,
    run_study,
    run_transfer_study,
    select_frozen_potential,
    threshold_row,
    trimmed_mean,
    write_report,
)

reals = st.floats(-1e6, 1e6, allow_nan=False)


def test_moving_average_warm_up_and_window():
    ma = moving_average([1, 2, 3, 4, 5], window=2)
    np.testing.assert_allclose(ma, [1, 1.5, 2.5, 3.5, 4.5])
    np.testing.assert_allclose(moving_average([4, 8], window=100), [4, 6])
    with pytest.raises(ValueError):
        moving_average([])


@given(st.lists(reals, min_size=1, max_size=300), st.integers(1, 120))
def test_moving_average_matches_direct_mean(xs, window):
    ma = moving_average(xs, window)
    for i in (0, len(xs) // 2, len(xs) - 1):
        lo = max(0, i - window + 1)
        assert ma[i] == pytest.approx(np.mean(xs[lo:i + 1]), abs=1e-6)


def test_epochs_to_threshold():
    assert epochs_to_threshold([-20, -8, -4, 1, 6], -10) == 1
    assert epochs_to_threshold([-20, -8, -4, 1, 6], 5) == 4
    assert epochs_to_threshold([-20, -8], 0) is None


@given(st.lists(reals, min_size=1, max_size=50), reals, reals)
def test_epochs_to_threshold_is_monotone(xs, t1, t2):
    lo, hi = sorted((t1, t2))
    a, b = epochs_to_threshold(xs, lo), epochs_to_threshold(xs, hi)
    if b is not None:
        assert a is not None and a <= b


@pytest.mark.parametrize("values, trim, expected", [
    (list(range(1, 11)), 2, 5.5),
    ([3.0] * 7, 2, 3.0),
    ([1, 2, 6], 0, 3.0),
])
def test_trimmed_mean_examples(values, trim, expected):
    assert trimmed_mean(values, trim) == expected


def test_trimmed_mean_needs_enough_values():
    with pytest.raises(ValueError):
        trimmed_mean([1, 2, 3, 4], 2)


@given(st.lists(reals, min_size=5, max_size=30), st.randoms())
def test_trimmed_mean_properties(xs, random):
    shuffled = list(xs)
    random.shuffle(shuffled)
    m = trimmed_mean(xs)
    assert m == pytest.approx(trimmed_mean(shuffled), abs=1e-6)
    kept = sorted(xs)[2:-2]
    assert min(kept) - 1e-6 <= m <= max(kept) + 1e-6


def _optimal_series(n=2000, seed=0):
    """Episode returns of the optimal policy from uniformly drawn starts."""
    values, _ = taxi.value_iteration_oracle(gamma=1.0, horizon=200)
    starts = np.random.default_rng(seed).choice(taxi.valid_start_indices(), size=n)
    return values[starts]


def test_optimal_series_converges():
    rewards = _optimal_series()
    assert rewards.mean() == pytest.approx(7.93, abs=0.2)
    converged, first = detect_convergence(rewards)
    assert converged and first < 100


def test_failing_series_does_not_converge():
    assert detect_convergence(np.full(2000, -200.0)) == (False, None)


def test_collapse_before_the_end_does_not_converge():
    rewards = np.concatenate([_optimal_series(1800), np.full(200, -200.0)])
    converged, first = detect_convergence(rewards)
    assert not converged and first < 100


def test_late_learner_converges_at_crossing():
    rewards = np.concatenate([np.full(1000, -200.0), _optimal_series(1000)])
    converged, first = detect_convergence(rewards)
    assert converged and 1000 < first < 1100


def test_metrics_for_failed_run():
    rec = RunRecord(seed=3, model="dqn", rewards=[8.0] * 300, error="boom")
    m = compute_metrics(rec)
    assert not m.converged and m.error == "boom"
    empty = compute_metrics(RunRecord(seed=4, model="dqn", error="boom"))
    assert empty.moving_avg == [] and all(v is None for v in empty.epochs_to_threshold.values())


def test_threshold_row_excludes_unreached_runs():
    recs = [RunRecord(seed=i, model="dqn", rewards=[-20.0] * (10 * i) + [8.0] * 300) for i in range(7)]
    recs.append(RunRecord(seed=9, model="dqn", rewards=[-20.0] * 300))
    row = threshold_row("dqn", [compute_metrics(r, window=1) for r in recs])
    assert row.missing == {-10.0: 1, -5.0: 1, 0.0: 1, 5.0: 1}
    assert row.trimmed[5.0] == 30.0  # mean of 20, 30, 40 after trimming 0, 10 and 50, 60
    few = threshold_row("dqn", [compute_metrics(r, window=1) for r in recs[:3]])
    assert few.trimmed[0.0] == 10.0  # too few runs to trim: plain mean of 0, 10, 20


def test_study_spec_validation():
    with pytest.raises(ValueError):
        StudySpec("dqn", [])
    with pytest.raises(ValueError):
        StudySpec("sarsa", [0])
    with pytest.raises(ValueError):
        StudySpec("dqn+frozen", [0])
    assert StudySpec("quadratic", [0]).loop_config.estimator_kind == "quadratic"
    assert StudySpec("dqn", [0], loop_config=LoopConfig(estimator_kind="linear")).loop_config.estimator_kind is None


SMALL = dict(agent_config=AgentConfig(hidden_layers=(16,)),
             loop_config=LoopConfig(outer_cycles=2, rl_epochs_per_cycle=10))


def _read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_single_seed_dqn_study(tmp_path):
    report = run_study(StudySpec("dqn", [0], out_dir=tmp_path, **SMALL))
    assert len(report.metrics) == 1 and report.tally in ("0/1", "1/1")
    rows = _read_csv(tmp_path / "curves_0.csv")
    assert rows[0] == ["seed", "epoch", "reward", "moving_avg"] and len(rows) == 21
    assert sorted(p.name for p in tmp_path.glob("curves_*.csv")) == ["curves_0.csv"]
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert len(metrics["runs"]) == 1
    assert not list(tmp_path.glob("attribution_*.csv"))
    episodes = _read_csv(tmp_path / "episodes.csv")
    assert episodes[0] == ["seed", "epoch", "reward", "epsilon", "converged_flag"]
    assert float(episodes[1][3]) == 1.0


def test_estimator_study_writes_attribution(tmp_path):
    report = run_study(StudySpec("quadratic", [0, 1], out_dir=tmp_path, **SMALL))
    assert report.attribution is not None and report.attribution.symmetric.shape == (19, 19)
    # No run converges this briefly, so attribution falls back to all seeds.
    assert report.attribution_seeds == [0, 1]
    assert len(_read_csv(tmp_path / "attribution_quadratic.csv")) == 1 + 19 * 19
    table = _read_csv(tmp_path / "table1.csv")
    assert table[0][:5] == ["model", "threshold_-10", "threshold_-5", "threshold_+0", "threshold_+5"]


def test_report_regeneration_is_idempotent(tmp_path):
    spec = StudySpec("linear", [0, 1], out_dir=tmp_path / "a", **SMALL)
    run_study(spec)
    records = [RunRecord.load(tmp_path / "a" / f"run_{s}.json") for s in (0, 1)]
    write_report(build_report("linear", records), tmp_path / "b")
    for name in ("metrics.json", "table1.csv", "episodes.csv", "curves_1.csv", "attribution_linear.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_study_determinism_and_reuse(tmp_path):
    a = run_records(StudySpec("dqn", [1, 2], out_dir=tmp_path, **SMALL))
    stamp = (tmp_path / "run_1.json").stat().st_mtime_ns
    b = run_records(StudySpec("dqn", [1, 2], out_dir=tmp_path, reuse=True, **SMALL))
    assert [r.to_json() for r in a] == [r.to_json() for r in b]
    assert (tmp_path / "run_1.json").stat().st_mtime_ns == stamp
    # A different configuration must not pick up the stored runs.
    other = dict(SMALL, agent_config=AgentConfig(hidden_layers=(8,)))
    c = run_records(StudySpec("dqn", [1], out_dir=tmp_path, reuse=True, **other))
    assert c[0].rewards != a[0].rewards


def test_parallel_study_matches_serial():
    serial = run_records(StudySpec("dqn", [0, 1], workers=1, **SMALL))
    parallel = run_records(StudySpec("dqn", [0, 1], workers=2, **SMALL))
    assert [r.to_json() for r in serial] == [r.to_json() for r in parallel]


def test_failed_seed_does_not_sink_the_study(tmp_path):
    wild = AgentConfig(hidden_layers=(16,), lr=1e200, grad_clip=1e300)
    with np.errstate(all="ignore"):
        report = run_study(StudySpec("linear", [0], agent_config=wild, loop_config=SMALL["loop_config"],
                                     out_dir=tmp_path))
    assert report.metrics[0].error is not None and report.tally == "0/1"
    assert (tmp_path / "metrics.json").exists()


def test_frozen_potential_selection():
    good = EstimatorParams("linear", np.ones(19))
    better = EstimatorParams("linear", np.full(19, 2.0))
    recs = [
        RunRecord(seed=0, model="linear", rewards=[8.0] * 300, snapshots=[good]),
        RunRecord(seed=1, model="linear", rewards=[7.0] * 100 + [9.0] * 200, snapshots=[better]),
        RunRecord(seed=2, model="linear", rewards=[-200.0] * 300, snapshots=[good]),
    ]
    assert select_frozen_potential(build_report("linear", recs)) is better
    with pytest.raises(ValueError):
        select_frozen_potential(build_report("linear", recs[2:]))


def test_transfer_study_layout(tmp_path):
    frozen = EstimatorParams("linear", np.linspace(0, 1, 19))
    result = run_transfer_study([0], out_dir=tmp_path, frozen=frozen, **SMALL)
    assert result.source is None
    assert EstimatorParams.load(tmp_path / "frozen_potential.json").values.tolist() == frozen.values.tolist()
    assert (tmp_path / "dqn" / "curves_0.csv").exists()
    assert (tmp_path / "dqn_frozen" / "curves_0.csv").exists()
    assert result.transfer.records[0].model == "dqn+frozen"
