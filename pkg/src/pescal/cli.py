"""Command-line experiment runner.

    pescal gen-data --config exp.json --out runs/data
    pescal train    --config exp.json --out runs/train --preset desk --seeds 10
    pescal evaluate --config exp.json --out runs/eval [--policies policies.json]
    pescal oracle   --config exp.json --out runs/oracle
    pescal figure6  --out runs/fig6 --preset desk --jobs 4

Exit codes: 0 success, 2 configuration error, 3 runtime failure. Logs go to
stderr; results only to files.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .dataset import Dataset
from .evaluation import aggregate, aggregate_to_csv, curves_to_csv, monte_carlo_returns
from .experiments import (ConfigError, ExperimentConfig, build_dataset, figure6_configs,
                          final_summary, run_experiment, run_seed)
from .m2dp import DeterministicPolicy
from .oracle import all_deterministic_policies, exact_policy_value, frontdoor_reduce, solve_oracle

log = logging.getLogger("pescal")

ORACLE_SCHEMA = {
    "type": "object",
    "required": ["q_star", "pi_star", "J_star", "mediated_Q_star", "c1", "c2", "c3",
                 "contraction_trace"],
    "properties": {
        "q_star": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "pi_star": {"type": "object", "additionalProperties": {"type": "integer"}},
        "J_star": {"type": "number"},
        "mediated_Q_star": {"type": "array", "items": {"type": "array", "items": {
            "type": "array", "items": {"type": "number"}}}},
        "c1": {"type": ["number", "null"]},
        "c2": {"type": ["number", "null"]},
        "c3": {"type": ["number", "null"]},
        "contraction_trace": {
            "type": "object",
            "required": ["value_iteration", "mediated_qstar"],
            "properties": {
                "value_iteration": {"type": "array", "items": {"type": "number"}},
                "mediated_qstar": {"type": "array", "items": {"type": "number"}},
            },
        },
        "config_hash": {"type": "string"},
    },
}


def write_atomic(path: Path, text: str) -> None:
    """Write ``text`` to a temp file beside ``path``, then rename over it."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _manifest(out: Path, cfg: ExperimentConfig, command: str, files: Sequence[Path], **extra):
    body = {
        "command": command,
        "config_hash": cfg.config_hash,
        "spec_fingerprint": cfg.spec.fingerprint,
        "config": cfg.to_dict(),
        "files": sorted(str(f.relative_to(out)) for f in files),
        **extra,
    }
    write_atomic(out / "manifest.json", _dump(body))


def load_config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
        if "spec" in raw and isinstance(raw["spec"], str):
            spec_path = Path(args.config).parent / raw["spec"]
            try:
                raw["spec"] = json.loads(spec_path.read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read spec {spec_path}: {e}") from e
    return ExperimentConfig.from_dict(raw, preset=args.preset, seeds=args.seeds)


def _coverage_manifest(cfg: ExperimentConfig) -> dict:
    if cfg.keep_k is None and cfg.keep_fraction is None:
        return {"mechanism": "full"}
    return {"mechanism": "keep-then-filter", "keep_k": cfg.keep_k,
            "keep_fraction": cfg.keep_fraction, "suboptimal_actions": [0, 1]}


def cmd_gen_data(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> List[Path]:
    files, sizes = [], {}
    for seed in cfg.seeds:
        d = build_dataset(cfg, seed)
        path = out / f"dataset_seed{seed}.csv"
        write_atomic(path, d.to_csv())
        files.append(path)
        sizes[str(seed)] = d.N
        log.info("seed %d: wrote %d tuples to %s", seed, d.N, path)
    _manifest(out, cfg, "gen-data", files, seeds=list(cfg.seeds), N=sizes,
              coverage=_coverage_manifest(cfg))
    return files


def _load_datasets(cfg: ExperimentConfig, data_dir: Optional[Path]) -> Dict[int, Dataset]:
    if data_dir is None:
        return {}
    out = {}
    for seed in cfg.seeds:
        path = data_dir / f"dataset_seed{seed}.csv"
        if not path.exists():
            raise FileNotFoundError(f"missing dataset {path}")
        out[seed] = Dataset.from_csv(path, fingerprint=cfg.spec.fingerprint)
    return out


def _write_runs(cfg: ExperimentConfig, runs, out: Path) -> List[Path]:
    files = []
    for learner in cfg.learners:
        for run in runs:
            path = out / "curves" / f"{learner}_seed{run.seed}.csv"
            write_atomic(path, curves_to_csv([run.curves[learner]]))
            files.append(path)
        steps, mean, sd = aggregate([run.curves[learner] for run in runs])
        path = out / "aggregate" / f"{learner}.csv"
        write_atomic(path, aggregate_to_csv(learner, steps, mean, sd))
        files.append(path)
    policies = {
        str(run.seed): {l: run.results[l].final_policy.as_dict() for l in cfg.learners}
        for run in runs
    }
    files.append(out / "policies.json")
    write_atomic(files[-1], _dump(policies))
    if cfg.save_tables:
        tables = {str(run.seed): {l: run.results[l].table.tolist() for l in cfg.learners}
                  for run in runs}
        files.append(out / "q_tables.json")
        write_atomic(files[-1], _dump(tables))
    summary = final_summary(runs, cfg.learners)
    files.append(out / "summary.json")
    write_atomic(files[-1], _dump(summary))
    return files


def cmd_train(cfg: ExperimentConfig, out: Path, jobs: int = 1,
              data_dir: Optional[Path] = None) -> List[Path]:
    datasets = _load_datasets(cfg, data_dir)
    if datasets:
        runs = [run_seed(cfg, s, datasets[s]) for s in cfg.seeds]
    else:
        runs = run_experiment(cfg, jobs)
    files = _write_runs(cfg, runs, out)
    _manifest(out, cfg, "train", files, seeds=list(cfg.seeds))
    return files


def cmd_evaluate(cfg: ExperimentConfig, out: Path, jobs: int = 1,
                 policies_path: Optional[Path] = None) -> List[Path]:
    """Monte-Carlo and exact values for named policies (default: all deterministic ones)."""
    if policies_path is not None:
        raw = json.loads(Path(policies_path).read_text())
        named = {name: DeterministicPolicy.from_dict(p) for name, p in raw.items()}
    else:
        named = {"pi_" + "_".join(map(str, p.actions)): p
                 for p in all_deterministic_policies(cfg.spec)}
    mdp = frontdoor_reduce(cfg.spec, cfg.eval.gamma)
    names = sorted(named)
    pairs = [(n, s) for n in names for s in cfg.seeds]
    returns = monte_carlo_returns(cfg.spec, [named[n] for n, _ in pairs], cfg.eval,
                                  [s for _, s in pairs])
    lines = ["policy,seed,mc_return,exact_value"]
    for (name, seed), ret in zip(pairs, returns):
        lines.append(f"{name},{seed},{float(ret)!r},{exact_policy_value(mdp, named[name])!r}")
    path = out / "evaluation.csv"
    write_atomic(path, "\n".join(lines) + "\n")
    _manifest(out, cfg, "evaluate", [path], seeds=list(cfg.seeds))
    return [path]


def cmd_oracle(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> List[Path]:
    sol = solve_oracle(cfg.spec, cfg.train.gamma)
    report = {**sol.to_dict(), "config_hash": cfg.config_hash}
    path = out / "oracle.json"
    write_atomic(path, _dump(report))
    _manifest(out, cfg, "oracle", [path])
    return [path]


def cmd_figure6(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> List[Path]:
    files, summary = [], {}
    for name, cell in figure6_configs(cfg).items():
        log.info("figure6 cell %s (%d seeds)", name, len(cell.seeds))
        runs = run_experiment(cell, jobs)
        cell_files = _write_runs(cell, runs, out / name)
        files.extend(cell_files)
        summary[name] = final_summary(runs, cell.learners)
    files.append(out / "summary.json")
    write_atomic(files[-1], _dump(summary))
    _manifest(out, cfg, "figure6", files, seeds=list(cfg.seeds))
    return files


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "oracle": cmd_oracle,
    "figure6": cmd_figure6,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pescal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seeds", help="seed count, or comma-separated seed list")
        p.add_argument("--preset", choices=["desk", "full"], default=None)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            p.add_argument("--data", help="directory written by gen-data")
        if name == "evaluate":
            p.add_argument("--policies", help="JSON object of named policies")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as e:
        log.error("config error: %s", e)
        return 2
    out = Path(args.out)
    extra = {}
    if args.command == "train" and args.data:
        extra["data_dir"] = Path(args.data)
    if args.command == "evaluate" and args.policies:
        extra["policies_path"] = Path(args.policies)
    try:
        COMMANDS[args.command](cfg, out, args.jobs, **extra)
    except ConfigError as e:
        log.error("config error: %s", e)
        return 2
    except Exception as e:  # noqa: BLE001 - mapped to the runtime-failure exit code
        log.error("%s failed: %s", args.command, e)
        if args.verbose:
            log.exception("traceback")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
