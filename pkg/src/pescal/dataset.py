"""Offline transition datasets, the coverage filter, and CSV I/O."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import FrozenSet, Iterator, NamedTuple, Sequence, Union

import numpy as np

from .m2dp import RolloutMode, SyntheticM2dpSpec, Trajectory, derive_seed, sample_trajectories

__all__ = [
    "CSV_HEADER",
    "CoverageFilterSpec",
    "Dataset",
    "TransitionTuple",
    "coverage_filter",
    "flatten",
    "generate_dataset",
    "support_positions",
]

CSV_HEADER = ("traj_id", "t", "s", "a", "m", "r", "s_next")
_COLUMNS = CSV_HEADER


def support_positions(col: np.ndarray, values: Sequence[int], name: str = "value") -> np.ndarray:
    """Map labels in ``col`` to their positions in ``values``."""
    lookup = {v: i for i, v in enumerate(values)}
    try:
        return np.fromiter((lookup[v] for v in np.asarray(col).tolist()), dtype=np.int64,
                           count=len(col))
    except KeyError as e:
        raise ValueError(f"{name}={e.args[0]} outside support {tuple(values)}") from None


class TransitionTuple(NamedTuple):
    traj_id: int
    t: int
    s: int
    a: int
    m: int
    r: float
    s_next: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Flattened ``(s, a, m, r, s')`` tuples stored column-wise.

    Rows are in trajectory-major, time-minor order. The latent confounder is
    never stored here.
    """

    traj_id: np.ndarray
    t: np.ndarray
    s: np.ndarray
    a: np.ndarray
    m: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    fingerprint: str = ""

    def __post_init__(self):
        n = len(self.s)
        for name in _COLUMNS:
            col = np.asarray(getattr(self, name), dtype=float if name == "r" else np.int64)
            if col.shape != (n,):
                raise ValueError(f"column {name} has shape {col.shape}, expected ({n},)")
            col.setflags(write=False)
            object.__setattr__(self, name, col)

    @property
    def N(self) -> int:
        return len(self.s)

    def __len__(self) -> int:
        return self.N

    def __getitem__(self, i: int) -> TransitionTuple:
        return TransitionTuple(int(self.traj_id[i]), int(self.t[i]), int(self.s[i]),
                               int(self.a[i]), int(self.m[i]), float(self.r[i]),
                               int(self.s_next[i]))

    def __iter__(self) -> Iterator[TransitionTuple]:
        return (self[i] for i in range(self.N))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.fingerprint == other.fingerprint and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in _COLUMNS)

    def take(self, mask_or_index) -> "Dataset":
        return Dataset(*(getattr(self, k)[mask_or_index] for k in _COLUMNS),
                       fingerprint=self.fingerprint)

    def indices(self, spec: SyntheticM2dpSpec):
        """Support positions ``(s, a, m, s_next)`` as integer arrays."""
        return (support_positions(self.s, spec.state_values, "s"),
                support_positions(self.a, spec.action_values, "a"),
                support_positions(self.m, spec.mediator_values, "m"),
                support_positions(self.s_next, spec.state_values, "s_next"))

    # -- CSV -------------------------------------------------------------

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        """Write the canonical CSV; returns the text as well."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        cols = [getattr(self, k).tolist() for k in _COLUMNS]
        cols[5] = [repr(float(v)) for v in cols[5]]
        w.writerows(zip(*cols))
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="")
        return text

    @classmethod
    def from_csv(cls, source: Union[str, Path], fingerprint: str = "") -> "Dataset":
        """Read a dataset from a CSV path (or from CSV text if it contains a newline)."""
        text = source if isinstance(source, str) and "\n" in source else \
            Path(source).read_text(encoding="utf-8")
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader, ()))
        if header != CSV_HEADER:
            raise ValueError(f"bad CSV header {header!r}, expected {CSV_HEADER!r}")
        rows = list(reader)
        if not rows:
            return cls(*([] for _ in _COLUMNS), fingerprint=fingerprint)
        cols = list(zip(*rows))
        return cls(*(np.array(c, dtype=float if k == "r" else np.int64)
                     for k, c in zip(_COLUMNS, cols)), fingerprint=fingerprint)


def flatten(trajectories: Sequence[Trajectory]) -> Dataset:
    """Concatenate trajectories in order, dropping the latent confounder."""
    if not trajectories:
        return Dataset(*([] for _ in _COLUMNS))
    fps = {tr.fingerprint for tr in trajectories}
    if len(fps) > 1:
        raise ValueError(f"trajectories come from different specs: {sorted(fps)}")
    return Dataset(
        traj_id=np.concatenate([np.full(len(tr), i) for i, tr in enumerate(trajectories)]),
        t=np.concatenate([np.arange(len(tr)) for tr in trajectories]),
        s=np.concatenate([tr.s for tr in trajectories]),
        a=np.concatenate([tr.a for tr in trajectories]),
        m=np.concatenate([tr.m for tr in trajectories]),
        r=np.concatenate([tr.r for tr in trajectories]),
        s_next=np.concatenate([tr.s_next for tr in trajectories]),
        fingerprint=fps.pop(),
    )


def generate_dataset(spec: SyntheticM2dpSpec, n_tuples: int, seed: int,
                     horizon: int = 500) -> Dataset:
    """Behavior-mode dataset of exactly ``n_tuples`` transitions.

    Trajectories of length ``horizon`` are drawn (the last one truncated),
    trajectory ``i`` seeded with ``derive_seed(seed, i)``. The rollout mode
    follows ``spec.confounded``.
    """
    if n_tuples < 0:
        raise ValueError("n_tuples must be nonnegative")
    n_traj = -(-n_tuples // horizon)
    mode = RolloutMode.behavior_confounded() if spec.confounded \
        else RolloutMode.behavior_unconfounded()
    trajs = sample_trajectories(spec, mode, horizon, [derive_seed(seed, i) for i in range(n_traj)])
    d = flatten(trajs)
    if d.N > n_tuples:
        d = d.take(slice(0, n_tuples))
    if not trajs:
        d = Dataset(*([] for _ in _COLUMNS), fingerprint=spec.fingerprint)
    return d


@dataclass(frozen=True)
class CoverageFilterSpec:
    """Keep the first ``keep_k`` tuples, then drop suboptimal actions."""

    keep_k: int
    suboptimal_actions: FrozenSet[int] = field(default_factory=lambda: frozenset({0, 1}))

    def __post_init__(self):
        if self.keep_k < 0:
            raise ValueError("keep_k must be nonnegative")
        object.__setattr__(self, "suboptimal_actions", frozenset(self.suboptimal_actions))


def coverage_filter(d: Dataset, f: CoverageFilterSpec) -> Dataset:
    if f.keep_k > d.N:
        raise ValueError(f"keep_k={f.keep_k} exceeds dataset size {d.N}")
    keep = np.ones(d.N, dtype=bool)
    tail = slice(f.keep_k, None)
    keep[tail] = ~np.isin(d.a[tail], list(f.suboptimal_actions))
    return d.take(keep)
