"""Multi-seed studies: convergence statistics, threshold tables, transfer and attribution.

A study writes, per seed, ``run_<seed>.json`` (the full :class:`RunRecord`) and
``curves_<seed>.csv``; then ``episodes.csv``, ``metrics.json``, ``table1.csv``
and, for estimator models, ``attribution_<kind>.csv``.  Reports are rebuilt
from stored records, so rerunning :func:`build_report` on the same records
gives identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .bilevel import LoopConfig, RunRecord, run, transfer_run
from .dqn import AgentConfig, epsilon
from .estimator import AttributionReport, EstimatorParams, attribution_report
from .taxi import EnvConfig, feature_names

log = logging.getLogger(__name__)

THRESHOLDS = (-10.0, -5.0, 0.0, 5.0)
MA_WINDOW = 100
CONVERGENCE_THRESHOLD = 5.0
SUSTAIN_EPOCHS = 200
MODELS = ("dqn", "linear", "quadratic", "dqn+frozen")


def moving_average(rewards: Sequence[float], window: int = MA_WINDOW) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` entries average over what is available."""
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise ValueError("moving_average of an empty series")
    if window < 1:
        raise ValueError("window must be >= 1")
    if window == 1:
        return r.copy()
    out = np.empty_like(r)
    c = np.cumsum(r)
    head = min(window, r.size)
    out[:head] = c[:head] / np.arange(1, head + 1)
    if r.size > window:
        out[window:] = (c[window:] - c[:-window]) / window
    return out


def epochs_to_threshold(moving_avg: Sequence[float], threshold: float) -> Optional[int]:
    """First epoch whose moving average is at least ``threshold``, or None."""
    hits = np.flatnonzero(np.asarray(moving_avg) >= threshold)
    return int(hits[0]) if hits.size else None


def trimmed_mean(values: Sequence[float], trim: int = 2) -> float:
    """Mean after dropping the ``trim`` largest and ``trim`` smallest values."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size <= 2 * trim:
        raise ValueError(f"trimmed_mean needs more than {2 * trim} values, got {v.size}")
    return float(np.mean(v[trim:v.size - trim]))


def detect_convergence(rewards: Sequence[float], threshold: float = CONVERGENCE_THRESHOLD,
                       window: int = MA_WINDOW, sustain: int = SUSTAIN_EPOCHS) -> tuple[bool, Optional[int]]:
    """Whether the moving average ends the run at or above ``threshold`` for ``sustain`` epochs.

    Returns ``(converged, first_epoch_at_threshold)``; the epoch is reported even
    for runs that later fall back below the threshold.
    """
    ma = moving_average(rewards, window)
    first = epochs_to_threshold(ma, threshold)
    converged = ma.size >= sustain and bool(np.all(ma[-sustain:] >= threshold))
    return converged, first


@dataclass
class RunMetrics:
    seed: int
    model: str
    moving_avg: list[float]
    converged: bool
    convergence_epoch: Optional[int]
    epochs_to_threshold: dict[float, Optional[int]]
    error: Optional[str] = None

    def to_json(self) -> dict:
        out = asdict(self)
        out["epochs_to_threshold"] = {repr(k): v for k, v in self.epochs_to_threshold.items()}
        return out


def compute_metrics(record: RunRecord, *, threshold: float = CONVERGENCE_THRESHOLD,
                    window: int = MA_WINDOW, sustain: int = SUSTAIN_EPOCHS,
                    thresholds: Iterable[float] = THRESHOLDS) -> RunMetrics:
    if not record.rewards:
        return RunMetrics(record.seed, record.model, [], False, None,
                          {t: None for t in thresholds}, record.error)
    ma = moving_average(record.rewards, window)
    converged, first = detect_convergence(record.rewards, threshold, window, sustain)
    if record.error is not None:
        converged = False
    return RunMetrics(
        seed=record.seed,
        model=record.model,
        moving_avg=ma.tolist(),
        converged=converged,
        convergence_epoch=first,
        epochs_to_threshold={t: epochs_to_threshold(ma, t) for t in thresholds},
        error=record.error,
    )


@dataclass
class StudySpec:
    model: str
    seeds: list[int]
    env_config: EnvConfig = EnvConfig()
    agent_config: AgentConfig = AgentConfig()
    loop_config: LoopConfig = LoopConfig()
    out_dir: Optional[Path] = None
    frozen_params: Optional[EstimatorParams] = None
    workers: Optional[int] = None
    # Reuse run_<seed>.json files written by an identical earlier study.
    reuse: bool = False

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if not self.seeds:
            raise ValueError("a study needs at least one seed")
        if self.model == "dqn+frozen" and self.frozen_params is None:
            raise ValueError("model 'dqn+frozen' needs frozen_params")
        kind = {"dqn": None, "dqn+frozen": None}.get(self.model, self.model)
        self.loop_config = replace(self.loop_config, estimator_kind=kind)
        if self.out_dir is not None:
            self.out_dir = Path(self.out_dir)

    def fingerprint(self) -> dict:
        """Everything that determines the runs' results, seeds excluded."""
        return {
            "model": self.model,
            "env_config": asdict(self.env_config),
            "agent_config": asdict(self.agent_config),
            "loop_config": asdict(self.loop_config),
            "frozen_params": None if self.frozen_params is None else self.frozen_params.to_json(),
            "code": code_fingerprint(),
        }


_RUN_MODULES = ("taxi", "net", "dqn", "estimator", "shaping", "bilevel")


def _hash_run_modules() -> str:
    h = hashlib.sha256()
    here = Path(__file__).parent
    for path in (here / f"{name}.py" for name in _RUN_MODULES):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


# Taken at import so it describes the code this process actually runs.
_CODE_FINGERPRINT = _hash_run_modules()


def code_fingerprint() -> str:
    """Hash of the modules that determine run results; stored runs are only reused by identical code."""
    return _CODE_FINGERPRINT


def _execute(spec: StudySpec, seed: int) -> RunRecord:
    try:
        if spec.model == "dqn+frozen":
            rec = transfer_run(spec.frozen_params, spec.agent_config, spec.env_config, seed,
                               spec.loop_config.total_epochs)
        else:
            rec = run(spec.loop_config, spec.agent_config, spec.env_config, seed)
    except Exception as exc:  # a failed seed must not sink the study
        log.exception("run for seed %d failed", seed)
        rec = RunRecord(seed=seed, model=spec.model, error=f"{type(exc).__name__}: {exc}")
    rec.final_qnet = None
    return rec


def _load_reusable(spec: StudySpec) -> dict[int, RunRecord]:
    if not (spec.reuse and spec.out_dir and (spec.out_dir / "study.json").exists()):
        return {}
    stored = json.loads((spec.out_dir / "study.json").read_text())
    if stored.get("fingerprint") != json.loads(json.dumps(spec.fingerprint())):
        return {}
    found = {}
    for seed in spec.seeds:
        path = spec.out_dir / f"run_{seed}.json"
        if path.exists():
            found[seed] = RunRecord.load(path)
    return found


def run_records(spec: StudySpec) -> list[RunRecord]:
    """Execute (or reuse) every seeded run of ``spec``, in seed order."""
    records = _load_reusable(spec)
    todo = [s for s in spec.seeds if s not in records]
    workers = spec.workers or min(len(todo), os.cpu_count() or 1) or 1
    if todo:
        log.info("study %s: running %d seed(s) with %d worker(s)", spec.model, len(todo), workers)
    if spec.out_dir is not None:
        spec.out_dir.mkdir(parents=True, exist_ok=True)
        (spec.out_dir / "study.json").write_text(json.dumps({"fingerprint": spec.fingerprint()}, indent=1))

    def keep(seed: int, rec: RunRecord) -> None:
        records[seed] = rec
        if spec.out_dir is not None:
            rec.save(spec.out_dir / f"run_{seed}.json")

    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, rec in zip(todo, pool.map(_execute, [spec] * len(todo), todo)):
                keep(seed, rec)
    else:
        for seed in todo:
            keep(seed, _execute(spec, seed))
    return [records[s] for s in spec.seeds]


@dataclass
class ThresholdRow:
    model: str
    trimmed: dict[float, Optional[float]]
    # Runs that never reached the threshold and were left out of the mean.
    missing: dict[float, int]


def threshold_row(model: str, metrics: Sequence[RunMetrics], trim: int = 2,
                  thresholds: Iterable[float] = THRESHOLDS) -> ThresholdRow:
    trimmed, missing = {}, {}
    for t in thresholds:
        reached = [m.epochs_to_threshold[t] for m in metrics if m.epochs_to_threshold.get(t) is not None]
        missing[t] = len(metrics) - len(reached)
        effective_trim = trim if len(reached) > 2 * trim else 0
        trimmed[t] = trimmed_mean(reached, effective_trim) if reached else None
    return ThresholdRow(model, trimmed, missing)


def write_table1(rows: Sequence[ThresholdRow], path: str | Path) -> None:
    thresholds = list(rows[0].trimmed) if rows else list(THRESHOLDS)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", *[f"threshold_{t:+g}" for t in thresholds],
                    *[f"missing_{t:+g}" for t in thresholds]])
        for row in rows:
            w.writerow([row.model,
                        *["" if row.trimmed[t] is None else f"{row.trimmed[t]:.2f}" for t in thresholds],
                        *[row.missing[t] for t in thresholds]])


@dataclass
class StudyReport:
    model: str
    records: list[RunRecord]
    metrics: list[RunMetrics]
    table: ThresholdRow
    attribution: Optional[AttributionReport] = None
    attribution_seeds: list[int] = field(default_factory=list)

    @property
    def n_converged(self) -> int:
        return sum(m.converged for m in self.metrics)

    @property
    def tally(self) -> str:
        return f"{self.n_converged}/{len(self.metrics)}"


def build_report(model: str, records: Sequence[RunRecord], env_config: EnvConfig = EnvConfig(),
                 **metric_kwargs) -> StudyReport:
    """Derive metrics, the threshold row and (for estimator models) attribution from records.

    Attribution averages the final-cycle estimator of converged seeds only; if
    no seed converged it falls back to all seeds that produced an estimator.
    """
    metrics = [compute_metrics(r, **metric_kwargs) for r in records]
    report = StudyReport(model, list(records), metrics, threshold_row(model, metrics))
    with_params = [(r, m) for r, m in zip(records, metrics) if r.snapshots]
    if with_params:
        chosen = [(r, m) for r, m in with_params if m.converged] or with_params
        report.attribution = attribution_report([r.snapshots[-1] for r, _ in chosen],
                                                feature_names(env_config))
        report.attribution_seeds = [r.seed for r, _ in chosen]
    return report


def write_report(report: StudyReport, out_dir: str | Path, agent_config: AgentConfig = AgentConfig()) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec, met in zip(report.records, report.metrics):
        with open(out / f"curves_{rec.seed}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "epoch", "reward", "moving_avg"])
            for epoch, (r, ma) in enumerate(zip(rec.rewards, met.moving_avg)):
                w.writerow([rec.seed, epoch, repr(r), repr(ma)])
    with open(out / "episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "epoch", "reward", "epsilon", "converged_flag"])
        for rec, met in zip(report.records, report.metrics):
            for epoch, r in enumerate(rec.rewards):
                eps = epsilon(epoch, agent_config.epsilon_decay, agent_config.epsilon_floor)
                w.writerow([rec.seed, epoch, repr(r), repr(eps), int(met.converged)])
    summary = {
        "model": report.model,
        "converged": report.tally,
        "runs": [m.to_json() for m in report.metrics],
        "table1": {repr(t): v for t, v in report.table.trimmed.items()},
        "table1_missing": {repr(t): v for t, v in report.table.missing.items()},
        "attribution_seeds": report.attribution_seeds,
    }
    (out / "metrics.json").write_text(json.dumps(summary, indent=1))
    write_table1([report.table], out / "table1.csv")
    if report.attribution is not None:
        report.attribution.write_csv(out / f"attribution_{report.attribution.mean.kind.value}.csv")


def run_study(spec: StudySpec) -> StudyReport:
    records = run_records(spec)
    report = build_report(spec.model, records, spec.env_config)
    if spec.out_dir is not None:
        write_report(report, spec.out_dir, spec.agent_config)
    log.info("study %s: %s converged", spec.model, report.tally)
    return report


def select_frozen_potential(report: StudyReport) -> EstimatorParams:
    """Final-cycle estimator of the converged run with the highest final moving average."""
    candidates = [(m.moving_avg[-1], r.seed, r) for r, m in zip(report.records, report.metrics)
                  if m.converged and r.snapshots]
    if not candidates:
        raise ValueError("no converged run with estimator snapshots to take a potential from")
    best = max(candidates, key=lambda c: (c[0], -c[1]))
    return best[2].snapshots[-1]


@dataclass
class TransferStudy:
    source: StudyReport
    frozen: EstimatorParams
    baseline: StudyReport
    transfer: StudyReport


def run_transfer_study(seeds: Sequence[int] = (0, 1, 2, 3, 4), *, source_seeds: Sequence[int] = tuple(range(10)),
                       env_config: EnvConfig = EnvConfig(), agent_config: AgentConfig = AgentConfig(),
                       loop_config: LoopConfig = LoopConfig(), out_dir: Optional[Path] = None,
                       frozen: Optional[EstimatorParams] = None, reuse: bool = False) -> TransferStudy:
    """Pretrain Linear VRAIL, freeze its best potential, and compare shaped vs plain DQN."""
    def sub(name):
        return None if out_dir is None else Path(out_dir) / name

    source = None
    if frozen is None:
        source = run_study(StudySpec("linear", list(source_seeds), env_config, agent_config, loop_config,
                                     sub("linear"), reuse=reuse))
        frozen = select_frozen_potential(source)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        frozen.save(Path(out_dir) / "frozen_potential.json")
    baseline = run_study(StudySpec("dqn", list(seeds), env_config, agent_config, loop_config,
                                   sub("dqn"), reuse=reuse))
    transfer = run_study(StudySpec("dqn+frozen", list(seeds), env_config, agent_config, loop_config,
                                   sub("dqn_frozen"), frozen_params=frozen, reuse=reuse))
    return TransferStudy(source, frozen, baseline, transfer)
