"""Command line entry point: ``vrail <command>`` or ``python -m vrail <command>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Optional, Sequence

from . import taxi
from .bilevel import LoopConfig, RunRecord
from .dqn import AgentConfig
from .estimator import EstimatorParams, attribution_report
from .harness import (
    StudySpec,
    build_report,
    run_study,
    run_transfer_study,
    write_table1,
)
from .validation import run_all

log = logging.getLogger("vrail")

_CONFIG_CLASSES = (taxi.EnvConfig, AgentConfig, LoopConfig)
_SKIP = {"estimator_kind"}


def _parse_value(raw: str, default: Any) -> Any:
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def read_config_file(path: str | Path) -> dict[str, Any]:
    """JSON object or ``key = value`` lines (``#`` comments allowed); keys are config field names."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        # Accept both flat files and files grouped by config class name.
        flat: dict[str, Any] = {}
        for key, value in data.items():
            if isinstance(value, dict):
                flat.update(value)
            else:
                flat[key] = value
        return flat
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def build_configs(args: argparse.Namespace) -> tuple[taxi.EnvConfig, AgentConfig, LoopConfig]:
    file_values = read_config_file(args.config) if args.config else {}
    known = {f.name for cls in _CONFIG_CLASSES for f in fields(cls)}
    unknown = set(file_values) - known
    if unknown:
        raise SystemExit(f"unknown config keys: {', '.join(sorted(unknown))}")
    built = []
    for cls in _CONFIG_CLASSES:
        base = cls()
        values = {}
        for f in fields(cls):
            if f.name in _SKIP:
                continue
            default = getattr(base, f.name)
            if f.name in file_values:
                raw = file_values[f.name]
                values[f.name] = _parse_value(raw, default) if isinstance(raw, str) else (
                    tuple(raw) if isinstance(default, tuple) else raw)
            flag = getattr(args, f.name, None)
            if flag is not None:
                values[f.name] = _parse_value(flag, default)
        built.append(replace(base, **values))
    return tuple(built)  # type: ignore[return-value]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or key=value file with config field names")
    group = p.add_argument_group("config overrides")
    for cls in _CONFIG_CLASSES:
        for f in fields(cls):
            if f.name in _SKIP:
                continue
            group.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, metavar="VALUE",
                               help=f"{cls.__name__}.{f.name} (default {getattr(cls(), f.name)!r})")


def parse_seeds(text: str) -> list[int]:
    """``"0-9"``, ``"0,3,5"`` or a mix such as ``"0-2,7"``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


_MODEL_NAMES = {"dqn": "dqn", "linear": "linear", "quadratic": "quadratic"}


def cmd_train(args) -> int:
    env_cfg, agent_cfg, loop_cfg = build_configs(args)
    out = Path(args.out_dir)
    spec = StudySpec(_MODEL_NAMES[args.model], [args.seed], env_cfg, agent_cfg, loop_cfg, out)
    report = run_study(spec)
    rec = report.records[0]
    if rec.snapshots:
        rec.snapshots[-1].save(out / f"params_{args.seed}.json")
    m = report.metrics[0]
    print(f"model={args.model} seed={args.seed} converged={m.converged} "
          f"first_epoch_at_threshold={m.convergence_epoch} final_moving_avg={m.moving_avg[-1]:.2f}")
    return 0 if rec.error is None else 1


def cmd_study(args) -> int:
    env_cfg, agent_cfg, loop_cfg = build_configs(args)
    spec = StudySpec(_MODEL_NAMES[args.model], args.seeds, env_cfg, agent_cfg, loop_cfg,
                     Path(args.out_dir), workers=args.workers, reuse=args.reuse)
    report = run_study(spec)
    print(f"{args.model}: converged {report.tally}")
    for t, v in report.table.trimmed.items():
        print(f"  epochs to moving average >= {t:+g}: "
              f"{'n/a' if v is None else f'{v:.2f}'} (not reached: {report.table.missing[t]})")
    return 0


def cmd_transfer(args) -> int:
    env_cfg, agent_cfg, loop_cfg = build_configs(args)
    frozen = EstimatorParams.load(args.frozen) if args.frozen else None
    result = run_transfer_study(args.seeds, source_seeds=args.source_seeds, env_config=env_cfg,
                                agent_config=agent_cfg, loop_config=loop_cfg, out_dir=Path(args.out_dir),
                                frozen=frozen, reuse=args.reuse)
    if result.source is not None:
        print(f"pretraining (linear): converged {result.source.tally}")
    print(f"dqn: converged {result.baseline.tally}")
    print(f"dqn + frozen potential: converged {result.transfer.tally}")
    write_table1([result.baseline.table, result.transfer.table], Path(args.out_dir) / "table1.csv")
    return 0


def cmd_analyze(args) -> int:
    params = [EstimatorParams.load(p) for p in args.params]
    for d in args.study_dir:
        records = [RunRecord.load(p) for p in sorted(Path(d).glob("run_*.json"))]
        report = build_report(records[0].model if records else "unknown", records)
        if report.attribution is None:
            raise SystemExit(f"{d}: no estimator snapshots found")
        params += [r.snapshots[-1] for r in report.records if r.seed in report.attribution_seeds]
    if not params:
        raise SystemExit("nothing to analyze: pass --params files or --study-dir directories")
    env_cfg = taxi.EnvConfig(wall_features=params[0].dim > taxi.N_BASE_FEATURES)
    report = attribution_report(params, taxi.feature_names(env_cfg))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"attribution_{report.mean.kind.value}.csv"
    report.write_csv(path)
    if report.ranking is not None:
        top = ", ".join(f"{report.feature_names[i]}={report.mean.values[i]:.3f}" for i in report.ranking[:5])
        print(f"averaged {len(params)} linear estimators; top features: {top}")
    else:
        print(f"averaged {len(params)} quadratic estimators; symmetrised matrix written")
    print(f"wrote {path}")
    return 0


def cmd_dump_env(args) -> int:
    cfg = taxi.EnvConfig(sparse_rewards=args.sparse_rewards)
    text = taxi.dump_transitions(cfg)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_validate(args) -> int:
    results = run_all()
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vrail", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model for one seed")
    p.add_argument("--model", required=True, choices=sorted(_MODEL_NAMES))
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("study", help="multi-seed study of one model")
    p.add_argument("--model", required=True, choices=sorted(_MODEL_NAMES))
    p.add_argument("--seeds", type=parse_seeds, default=list(range(10)))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--reuse", action="store_true", help="reuse stored runs from an identical study")
    _add_config_flags(p)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("transfer", help="DQN shaped by a frozen, pretrained linear potential")
    p.add_argument("--seeds", type=parse_seeds, default=list(range(5)))
    p.add_argument("--source-seeds", type=parse_seeds, default=list(range(10)))
    p.add_argument("--frozen", help="estimator JSON to use instead of pretraining")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--reuse", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("analyze", help="attribution report from stored estimators")
    p.add_argument("--params", nargs="*", default=[], help="estimator JSON files")
    p.add_argument("--study-dir", nargs="*", default=[], help="study directories (converged seeds are used)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("dump-env", help="write the transition table as CSV")
    p.add_argument("--sparse-rewards", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_env)

    p = sub.add_parser("validate", help="run oracle and invariant checks")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
