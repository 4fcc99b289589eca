"""Experiment configuration and the per-seed train/evaluate pipeline.

One training seed fixes everything downstream of it:

* the offline dataset is generated with ``derive_seed(seed, 1)``,
* every learner draws minibatches from ``derive_seed(seed, 2)``,
* checkpoint ``k`` is evaluated with ``eval_seed(seed, k)``,

so all learners of a seed see the same data, the same minibatch index stream,
and the same evaluation noise.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .dataset import CoverageFilterSpec, Dataset, coverage_filter, generate_dataset
from .evaluation import EvalProtocol, LearningCurve, aggregate, eval_seed, monte_carlo_returns
from .learners import LEARNERS, TrainConfig, TrainResult, incremental_train
from .m2dp import DeterministicPolicy, SyntheticM2dpSpec, derive_seed
from .nuisance import Nuisances, estimate_nuisances

__all__ = [
    "PRESETS",
    "ConfigError",
    "ExperimentConfig",
    "FIGURE6_COVERAGES",
    "SeedRun",
    "build_dataset",
    "figure6_configs",
    "final_summary",
    "run_experiment",
    "run_seed",
]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


PRESETS = {
    "desk": {"seeds": 10, "train": {"total_steps": 2000}, "eval": {"window": 20}},
    "full": {"seeds": 100, "train": {"total_steps": 10_000}, "eval": {"window": 50}},
}

FIGURE6_COVERAGES = {
    "keep15": {"keep_k": 15},
    "keephalf": {"keep_fraction": 0.5},
    "full": {},
}


@dataclass(frozen=True)
class ExperimentConfig:
    spec: SyntheticM2dpSpec = field(default_factory=SyntheticM2dpSpec)
    n_tuples: int = 50_000
    traj_horizon: int = 500
    keep_k: Optional[int] = None
    keep_fraction: Optional[float] = None
    learners: Tuple[str, ...] = LEARNERS
    train: TrainConfig = field(default_factory=TrainConfig)
    overrides: Mapping[str, Mapping] = field(default_factory=dict)
    eval: EvalProtocol = field(default_factory=lambda: EvalProtocol(seeds=tuple(range(10))))
    z: float = 1.96
    save_tables: bool = False

    def __post_init__(self):
        if not self.learners:
            raise ConfigError("at least one learner is required")
        bad = set(self.learners) - set(LEARNERS)
        if bad:
            raise ConfigError(f"unknown learners {sorted(bad)}")
        if self.keep_k is not None and self.keep_fraction is not None:
            raise ConfigError("keep_k and keep_fraction are mutually exclusive")
        if self.keep_fraction is not None and not 0.0 <= self.keep_fraction <= 1.0:
            raise ConfigError("keep_fraction must lie in [0, 1]")
        if self.keep_k is not None and not 0 <= self.keep_k <= self.n_tuples:
            raise ConfigError("keep_k must lie in [0, n_tuples]")
        if self.n_tuples < 1 or self.traj_horizon < 1:
            raise ConfigError("n_tuples and traj_horizon must be positive")
        if self.eval.gamma != self.train.gamma:
            raise ConfigError("train and eval discount factors differ")
        if set(self.overrides) - set(self.learners):
            raise ConfigError("overrides given for learners that are not run")

    @property
    def seeds(self) -> Tuple[int, ...]:
        return self.eval.seeds

    @property
    def coverage_label(self) -> str:
        if self.keep_k is not None:
            return f"keep_k={self.keep_k}"
        if self.keep_fraction is not None:
            return f"keep_fraction={self.keep_fraction}"
        return "full"

    def train_config(self, learner: str) -> TrainConfig:
        return self.train.replace(**self.overrides.get(learner, {}))

    # -- (de)serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "n_tuples": self.n_tuples,
            "traj_horizon": self.traj_horizon,
            "coverage": ({"keep_k": self.keep_k} if self.keep_k is not None else
                         {"keep_fraction": self.keep_fraction} if self.keep_fraction is not None
                         else {}),
            "learners": list(self.learners),
            "train": asdict(self.train),
            "overrides": {k: dict(v) for k, v in self.overrides.items()},
            "eval": {**asdict(self.eval), "seeds": list(self.eval.seeds)},
            "z": self.z,
            "save_tables": self.save_tables,
        }

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, raw: Mapping, preset: Optional[str] = None,
                  seeds=None) -> "ExperimentConfig":
        """Build a config from JSON-like data, optionally layered over a preset.

        Recognized keys: ``spec`` (object), ``confounded``, ``dataset``
        (``n_tuples``, ``traj_horizon``), ``coverage`` (``keep_k`` or
        ``keep_fraction``; empty means full), ``learners``, ``train``,
        ``overrides``, ``eval``, ``seeds`` (count or list), ``z``,
        ``save_tables``.
        """
        raw = dict(raw)
        known = {"spec", "confounded", "dataset", "coverage", "learners", "train", "overrides",
                 "eval", "seeds", "z", "save_tables", "n_tuples", "traj_horizon", "output_dir"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        base = PRESETS.get(preset, {}) if preset else {}
        if preset and preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        try:
            spec_d = dict(raw.get("spec", {}))
            if "confounded" in raw:
                spec_d["confounded"] = bool(raw["confounded"])
            spec = SyntheticM2dpSpec.from_dict(spec_d)
            train = TrainConfig(**{**base.get("train", {}), **raw.get("train", {})})
            eval_d = {**base.get("eval", {}), **raw.get("eval", {})}
            eval_d.setdefault("gamma", train.gamma)
            seed_spec = seeds if seeds is not None else raw.get("seeds", base.get("seeds", 10))
            eval_d["seeds"] = _parse_seeds(seed_spec)
            proto = EvalProtocol(**eval_d)
            dataset = dict(raw.get("dataset", {}))
            cov = dict(raw.get("coverage", {}))
            if set(cov) - {"keep_k", "keep_fraction", "mode"}:
                raise ConfigError(f"unknown coverage keys {sorted(cov)}")
            if cov.pop("mode", "full") not in ("full", "keep_k", "keep_fraction"):
                raise ConfigError("coverage.mode must be full, keep_k or keep_fraction")
            return cls(
                spec=spec,
                n_tuples=int(dataset.get("n_tuples", raw.get("n_tuples", 50_000))),
                traj_horizon=int(dataset.get("traj_horizon", raw.get("traj_horizon", 500))),
                keep_k=cov.get("keep_k"),
                keep_fraction=cov.get("keep_fraction"),
                learners=tuple(raw.get("learners", LEARNERS)),
                train=train,
                overrides={k: dict(v) for k, v in raw.get("overrides", {}).items()},
                eval=proto,
                z=float(raw.get("z", 1.96)),
                save_tables=bool(raw.get("save_tables", False)),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e


def _parse_seeds(value) -> Tuple[int, ...]:
    if isinstance(value, str):
        parts = [p for p in value.split(",") if p.strip()]
        if len(parts) == 1:
            return tuple(range(int(parts[0])))
        return tuple(int(p) for p in parts)
    if isinstance(value, int):
        if value < 1:
            raise ConfigError("seed count must be positive")
        return tuple(range(value))
    return tuple(int(s) for s in value)


def build_dataset(cfg: ExperimentConfig, seed: int) -> Dataset:
    """Generate the seed's dataset and apply the configured coverage filter."""
    d = generate_dataset(cfg.spec, cfg.n_tuples, derive_seed(seed, 1), cfg.traj_horizon)
    if cfg.keep_k is not None:
        d = coverage_filter(d, CoverageFilterSpec(cfg.keep_k))
    elif cfg.keep_fraction is not None:
        d = coverage_filter(d, CoverageFilterSpec(int(math.floor(d.N * cfg.keep_fraction))))
    return d


@dataclass
class SeedRun:
    seed: int
    n_tuples: int
    curves: Dict[str, LearningCurve]
    results: Dict[str, TrainResult]
    nuisances: Nuisances


def run_seed(cfg: ExperimentConfig, seed: int, dataset: Optional[Dataset] = None) -> SeedRun:
    """Estimate nuisances, train every learner, and evaluate all checkpoints."""
    d = build_dataset(cfg, seed) if dataset is None else dataset
    nuis = estimate_nuisances(d, cfg.spec, cfg.z)
    train_seed = derive_seed(seed, 2)
    results = {
        learner: incremental_train(d, cfg.spec, nuis, cfg.train_config(learner), learner,
                                   train_seed, keep_tables=cfg.save_tables)
        for learner in cfg.learners
    }
    # evaluate each distinct (policy, checkpoint) once; learners share eval seeds
    todo: Dict[Tuple[Tuple[int, ...], int], DeterministicPolicy] = {}
    for res in results.values():
        for k, cp in enumerate(res.checkpoints):
            todo.setdefault((cp.policy.actions, k), cp.policy)
    keys = sorted(todo)
    values = monte_carlo_returns(cfg.spec, [todo[key] for key in keys], cfg.eval,
                                 [eval_seed(seed, k) for _, k in keys])
    lookup = dict(zip(keys, values))
    curves = {}
    for learner, res in results.items():
        steps = [cp.step for cp in res.checkpoints]
        raw = [lookup[(cp.policy.actions, k)] for k, cp in enumerate(res.checkpoints)]
        curves[learner] = LearningCurve.from_raw(learner, seed, steps, raw, cfg.eval.window)
    return SeedRun(seed, d.N, curves, results, nuis)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> List[SeedRun]:
    """Run every seed, in a process pool when ``jobs > 1``; order follows ``cfg.seeds``."""
    if jobs <= 1:
        return [run_seed(cfg, s) for s in cfg.seeds]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds))


def final_summary(runs: Sequence[SeedRun], learners: Sequence[str]) -> dict:
    """Final smoothed return per learner and pairwise ordering verdicts.

    A verdict is ``">"`` when the gap in mean final return exceeds one pooled
    standard error ``sqrt(sd_a^2 / n + sd_b^2 / n)`` (sample sd), ``"<"`` in the
    opposite case, and ``"~"`` otherwise.
    """
    finals = {l: np.array([r.curves[l].final for r in runs]) for l in learners}
    n = len(runs)
    stats = {l: {"mean": float(v.mean()),
                 "sd": float(v.std(ddof=1)) if n > 1 else 0.0,
                 "n": n} for l, v in finals.items()}
    pairs = {}
    for a, b in combinations(learners, 2):
        gap = stats[a]["mean"] - stats[b]["mean"]
        se = math.sqrt((stats[a]["sd"] ** 2 + stats[b]["sd"] ** 2) / n) if n > 1 else 0.0
        verdict = ">" if gap > se else "<" if gap < -se else "~"
        pairs[f"{a}|{b}"] = {"gap": gap, "pooled_se": se, "verdict": verdict}
    best = max(learners, key=lambda l: stats[l]["mean"])
    return {"final": stats, "pairs": pairs, "best": best}


def figure6_configs(base: ExperimentConfig) -> Dict[str, ExperimentConfig]:
    """The 2 x 3 grid: confounded / unconfounded data by keep-15 / keep-half / full."""
    cells = {}
    for row, confounded in (("confounded", True), ("unconfounded", False)):
        spec = SyntheticM2dpSpec.from_dict({**base.spec.to_dict(), "confounded": confounded})
        for col, cov in FIGURE6_COVERAGES.items():
            cells[f"{row}/{col}"] = replace(base, spec=spec, keep_k=cov.get("keep_k"),
                                            keep_fraction=cov.get("keep_fraction"))
    return cells
