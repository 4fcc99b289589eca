"""Online Monte-Carlo evaluation, learning curves, smoothing, and aggregation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .m2dp import (DeterministicPolicy, SyntheticM2dpSpec, _rollout_indices, derive_seed)

__all__ = [
    "CURVE_HEADER",
    "AGGREGATE_HEADER",
    "EvalProtocol",
    "LearningCurve",
    "aggregate",
    "curves_to_csv",
    "aggregate_to_csv",
    "eval_seed",
    "monte_carlo_return",
    "monte_carlo_returns",
    "smooth",
]

CURVE_HEADER = ("learner", "seed", "step", "raw_return", "smoothed_return")
AGGREGATE_HEADER = ("learner", "step", "mean", "sd")


@dataclass(frozen=True)
class EvalProtocol:
    horizon: int = 500
    n_eval_traj: int = 10
    gamma: float = 0.95
    window: int = 50
    seeds: Tuple[int, ...] = tuple(range(100))

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if min(self.horizon, self.n_eval_traj, self.window) < 1:
            raise ValueError("horizon, n_eval_traj and window must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")


def eval_seed(train_seed: int, checkpoint_index: int) -> int:
    """Evaluation seed for one checkpoint; shared by every learner of a training seed."""
    return derive_seed(train_seed, 0xE7A1, checkpoint_index)


def _policy_table(spec: SyntheticM2dpSpec, pi: DeterministicPolicy) -> np.ndarray:
    table = np.zeros((len(spec.state_values), len(spec.action_values)))
    table[np.arange(len(spec.state_values)), pi.action_indices(spec.action_values)] = 1.0
    return table


def monte_carlo_returns(spec: SyntheticM2dpSpec, policies: Sequence[DeterministicPolicy],
                        proto: EvalProtocol, seeds: Sequence[int]) -> np.ndarray:
    """Vectorized :func:`monte_carlo_return` over ``(policy, seed)`` pairs."""
    if len(policies) != len(seeds):
        raise ValueError("need one seed per policy")
    if not policies:
        return np.zeros(0)
    k = proto.n_eval_traj
    traj_seeds = [derive_seed(seed, i) for seed in seeds for i in range(k)]
    tables = np.repeat(np.stack([_policy_table(spec, pi) for pi in policies]), k, axis=0)
    idx = _rollout_indices(spec, None, proto.horizon, traj_seeds, action_tables=tables)
    rewards = np.asarray(spec.reward_values)[idx["r"]]
    # row-wise sums keep each value independent of how many rollouts share the batch
    discounted = (rewards * proto.gamma ** np.arange(proto.horizon)).sum(axis=1)
    return discounted.reshape(len(policies), k).mean(axis=1)


def monte_carlo_return(spec: SyntheticM2dpSpec, pi: DeterministicPolicy, proto: EvalProtocol,
                       seed: int) -> float:
    """Mean discounted return of ``pi`` over ``proto.n_eval_traj`` intervention rollouts.

    Rollout ``i`` uses seed ``derive_seed(seed, i)``.
    """
    return float(monte_carlo_returns(spec, [pi], proto, [seed])[0])


def smooth(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average over ``min(i + 1, window)`` points."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("cannot smooth an empty sequence")
    # explicit per-window means; a running cumsum would drift by rounding
    return np.array([x[max(0, i + 1 - window):i + 1].mean() for i in range(x.size)])


@dataclass
class LearningCurve:
    learner: str
    seed: int
    steps: np.ndarray
    raw: np.ndarray
    smoothed: np.ndarray

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.int64)
        if np.any(np.diff(self.steps) <= 0):
            raise ValueError("curve steps must be strictly increasing")

    @classmethod
    def from_raw(cls, learner: str, seed: int, steps, raw, window: int) -> "LearningCurve":
        raw = np.asarray(raw, dtype=float)
        return cls(learner, seed, np.asarray(steps), raw, smooth(raw, window))

    @property
    def final(self) -> float:
        return float(self.smoothed[-1])


def aggregate(curves: Sequence[LearningCurve], ddof: int = 0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pointwise ``(steps, mean, sd)`` of smoothed returns across seeds.

    ``ddof=0`` gives the population standard deviation.
    """
    if not curves:
        raise ValueError("nothing to aggregate")
    steps = curves[0].steps
    for c in curves[1:]:
        if not np.array_equal(c.steps, steps):
            raise ValueError("curves do not share a step grid")
    vals = np.stack([c.smoothed for c in curves])
    sd = vals.std(axis=0, ddof=ddof) if len(curves) > ddof else np.zeros(len(steps))
    return steps, vals.mean(axis=0), sd


def _fmt(x: float) -> str:
    return repr(float(x))


def _write(rows: Iterable[Sequence], header: Sequence[str], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


def curves_to_csv(curves: Sequence[LearningCurve], path=None) -> str:
    rows = ((c.learner, c.seed, int(st), _fmt(r), _fmt(sm))
            for c in curves for st, r, sm in zip(c.steps, c.raw, c.smoothed))
    return _write(rows, CURVE_HEADER, path)


def curves_from_csv(source) -> List[LearningCurve]:
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CURVE_HEADER:
        raise ValueError("bad curve CSV header")
    groups: Dict[Tuple[str, int], List[dict]] = {}
    for row in reader:
        groups.setdefault((row["learner"], int(row["seed"])), []).append(row)
    return [LearningCurve(learner, seed, [int(r["step"]) for r in rows],
                          np.array([float(r["raw_return"]) for r in rows]),
                          np.array([float(r["smoothed_return"]) for r in rows]))
            for (learner, seed), rows in groups.items()]


def aggregate_to_csv(learner: str, steps, mean, sd, path=None) -> str:
    rows = ((learner, int(st), _fmt(mu), _fmt(s)) for st, mu, s in zip(steps, mean, sd))
    return _write(rows, AGGREGATE_HEADER, path)
