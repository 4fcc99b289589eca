"""Tabular causal Q-learning (CAL), its pessimistic variant (PESCAL), and baselines.

Mediated learners keep a table ``Q[s, a~, m]`` and act greedily on the
front-door weighted average

    q(s, a) = sum_{a~, m} p_m(m | s, a) p_b(a~ | s) Q(s, a~, m).

The FQI and CQL baselines keep an ordinary ``q[s, a]`` table and ignore the
mediator. Every argmax breaks ties toward the smallest action label.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .dataset import Dataset, TransitionTuple
from .m2dp import DeterministicPolicy, SyntheticM2dpSpec, make_generator
from .nuisance import Nuisances

__all__ = [
    "LEARNERS",
    "Checkpoint",
    "TrainConfig",
    "TrainResult",
    "cal_fit_batch",
    "cal_fit_population",
    "cal_policy",
    "cal_target",
    "greedy_q_policy",
    "incremental_train",
    "pescal_policy",
    "pessimistic_scores",
    "weighted_q",
    "weighted_q_table",
]

LEARNERS = ("cal", "pescal", "fqi", "cql")
SHIFT_MODES = ("subtract-min", "add-vmax")


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.95
    K: int = 20
    eta: float = 0.05
    minibatch_n: int = 64
    target_sync_T: int = 100
    total_steps: int = 10_000
    eval_every: int = 50
    pessimistic_base: bool = False
    cql_alpha: float = 0.1
    shift_mode: str = "subtract-min"
    clamp_penalized: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        for name in ("K", "minibatch_n", "target_sync_T", "total_steps", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.cql_alpha < 0:
            raise ValueError("cql_alpha must be nonnegative")
        if self.shift_mode not in SHIFT_MODES:
            raise ValueError(f"shift_mode must be one of {SHIFT_MODES}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _probs(x) -> np.ndarray:
    return np.asarray(getattr(x, "probs", x), dtype=float)


def _deltas(x) -> np.ndarray:
    return np.asarray(getattr(x, "delta", x), dtype=float)


def weighted_q_table(Q: np.ndarray, pm, pb) -> np.ndarray:
    """Front-door weighted values for every ``(s, a)``."""
    return np.einsum("sam,sb,sbm->sa", _probs(pm), _probs(pb), Q)


def weighted_q(Q: np.ndarray, pm, pb, s: int, a: int) -> float:
    """``sum_{a~, m} pm[s, a, m] pb[s, a~] Q[s, a~, m]`` at support positions ``(s, a)``."""
    pm, pb = _probs(pm), _probs(pb)
    return float(pm[s, a] @ (pb[s] @ Q[s]))


def _argmax_by_label(scores: np.ndarray, actions: Optional[Sequence[int]]) -> np.ndarray:
    if actions is None:
        return np.argmax(scores, axis=1)
    order = np.argsort(np.asarray(actions), kind="stable")
    return order[np.argmax(scores[:, order], axis=1)]


def _policy(scores: np.ndarray, states, actions) -> DeterministicPolicy:
    nS, nA = scores.shape
    states = tuple(range(nS)) if states is None else tuple(states)
    labels = tuple(range(nA)) if actions is None else tuple(actions)
    return DeterministicPolicy.from_indices(states, labels, _argmax_by_label(scores, actions))


def cal_target(transition: TransitionTuple, Q_prev: np.ndarray, pm, pb, gamma: float,
               states: Optional[Sequence[int]] = None) -> float:
    """Regression target ``r + gamma max_a q_prev(s', a)`` for one transition.

    ``states`` maps the tuple's ``s_next`` label to a table row; when omitted
    the label is used as the row index.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    row = transition.s_next if states is None else list(states).index(transition.s_next)
    return float(transition.r + gamma * weighted_q_table(Q_prev, pm, pb)[row].max())


def _clip(table: np.ndarray, v_max: float) -> np.ndarray:
    return np.clip(table, -v_max, v_max, out=table)


def cal_fit_batch(d: Dataset, spec: SyntheticM2dpSpec, pm, pb, cfg: TrainConfig = TrainConfig(),
                  delta=None) -> np.ndarray:
    """Fitted mediated Q-iteration over the whole dataset for ``cfg.K`` rounds.

    Each round sets every visited cell to the mean target of the tuples that
    hit it, which is the exact least-squares fit over tabular functions.
    With ``cfg.pessimistic_base`` the target weights use ``pm - delta``.
    """
    if d.N == 0:
        raise ValueError("cannot fit on an empty dataset")
    si, ai, mi, s2i = d.indices(spec)
    nS, nA, nM = spec.shape
    cells = (si * nA + ai) * nM + mi
    counts = np.bincount(cells, minlength=nS * nA * nM)
    visited = counts > 0
    weights = _target_weights(pm, delta, cfg)
    v_max = spec.v_max(cfg.gamma)
    Q = np.zeros((nS, nA, nM))
    for _ in range(cfg.K):
        v = weighted_q_table(Q, weights, pb).max(axis=1)
        y = d.r + cfg.gamma * v[s2i]
        sums = np.bincount(cells, weights=y, minlength=Q.size)
        flat = Q.reshape(-1)
        flat[visited] = sums[visited] / counts[visited]
        _clip(Q, v_max)
    return Q


def cal_fit_population(r_sam: np.ndarray, p_sam: np.ndarray, pm, pb,
                       cfg: TrainConfig = TrainConfig(), v_max: Optional[float] = None) -> np.ndarray:
    """CAL iteration with exact conditional expectations in place of sample means.

    ``r_sam[s, a, m]`` is ``E[R | s, a, m]`` and ``p_sam[s, a, m, s']`` the
    next-state law; every cell counts as visited.
    """
    Q = np.zeros_like(r_sam, dtype=float)
    for _ in range(cfg.K):
        v = weighted_q_table(Q, pm, pb).max(axis=1)
        Q = r_sam + cfg.gamma * (p_sam @ v)
        if v_max is not None:
            _clip(Q, v_max)
    return Q


def cal_policy(Q: np.ndarray, pm, pb, states=None, actions=None) -> DeterministicPolicy:
    """Greedy policy on the weighted average of ``Q``."""
    return _policy(weighted_q_table(Q, pm, pb), states, actions)


def pessimistic_scores(Q: np.ndarray, pm, pb, delta, shift_mode: str = "subtract-min",
                       v_max: Optional[float] = None, clamp: bool = False) -> np.ndarray:
    """Penalized scores ``sum (pm - delta) pb Q~`` with ``Q~`` shifted nonnegative."""
    if shift_mode == "subtract-min":
        Q_shift = Q - Q.min()
    elif shift_mode == "add-vmax":
        if v_max is None:
            raise ValueError("add-vmax shift needs v_max")
        Q_shift = Q + v_max
    else:
        raise ValueError(f"unknown shift_mode {shift_mode!r}")
    lower = _probs(pm) - _deltas(delta)
    if clamp:
        lower = np.maximum(lower, 0.0)
    return weighted_q_table(Q_shift, lower, pb)


def pescal_policy(Q: np.ndarray, pm, pb, delta, shift_mode: str = "subtract-min",
                  v_max: Optional[float] = None, clamp: bool = False,
                  states=None, actions=None) -> DeterministicPolicy:
    """Greedy policy on the uncertainty-penalized weighted average.

    The lower bound ``pm - delta`` is used as is (it may go negative) unless
    ``clamp`` is set.
    """
    return _policy(pessimistic_scores(Q, pm, pb, delta, shift_mode, v_max, clamp), states, actions)


def greedy_q_policy(q: np.ndarray, states=None, actions=None) -> DeterministicPolicy:
    """Greedy policy on an unmediated ``q[s, a]`` table."""
    return _policy(q, states, actions)


def _target_weights(pm, delta, cfg: TrainConfig) -> np.ndarray:
    w = _probs(pm)
    if cfg.pessimistic_base:
        if delta is None:
            raise ValueError("pessimistic_base needs an uncertainty quantifier")
        w = w - _deltas(delta)
        if cfg.clamp_penalized:
            w = np.maximum(w, 0.0)
    return w


@dataclass
class Checkpoint:
    step: int
    learner: str
    policy: DeterministicPolicy
    table: Optional[np.ndarray] = None

    def to_dict(self, include_table: bool = False) -> dict:
        d = {"step": self.step, "learner": self.learner, "policy": self.policy.as_dict()}
        if include_table and self.table is not None:
            d["q_table"] = self.table.tolist()
        return d


@dataclass
class TrainResult:
    learner: str
    table: np.ndarray
    checkpoints: List[Checkpoint] = field(default_factory=list)

    @property
    def final_policy(self) -> DeterministicPolicy:
        return self.checkpoints[-1].policy


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def incremental_train(d: Dataset, spec: SyntheticM2dpSpec, nuisances: Nuisances,
                      cfg: TrainConfig, learner: str, seed: int,
                      checkpoint_sink: Optional[Callable[[Checkpoint], None]] = None,
                      keep_tables: bool = False) -> TrainResult:
    """Minibatch training against a periodically synced target table.

    Each step draws ``cfg.minibatch_n`` tuples uniformly with replacement,
    computes targets from the frozen target table, and moves each visited
    cell by ``eta`` times the mean residual of its occurrences. CQL then
    subtracts ``eta * cql_alpha`` times the gradient of the conservative
    penalty, ``softmax(q[s]) - empirical action frequency at s``, for each
    state in the minibatch. Every ``cfg.eval_every`` steps the current greedy
    policy is recorded (and passed to ``checkpoint_sink``).
    """
    if learner not in LEARNERS:
        raise ValueError(f"unknown learner {learner!r}; choose from {LEARNERS}")
    if d.N == 0:
        raise ValueError("cannot train on an empty dataset")
    si, ai, mi, s2i = d.indices(spec)
    r = d.r
    nS, nA, nM = spec.shape
    states, actions = spec.state_values, spec.action_values
    mediated = learner in ("cal", "pescal")
    pm, pb, delta = nuisances.pm.probs, nuisances.pb.probs, nuisances.delta.delta
    v_max = spec.v_max(cfg.gamma)

    if mediated:
        table = np.zeros((nS, nA, nM))
        cells = (si * nA + ai) * nM + mi
        weights = _target_weights(pm, delta, cfg)

        def state_values(tgt):
            return weighted_q_table(tgt, weights, pb).max(axis=1)

        def policy(tab):
            if learner == "pescal":
                return pescal_policy(tab, pm, pb, delta, cfg.shift_mode, v_max,
                                     cfg.clamp_penalized, states, actions)
            return cal_policy(tab, pm, pb, states, actions)
    else:
        table = np.zeros((nS, nA))
        cells = si * nA + ai

        def state_values(tgt):
            return tgt.max(axis=1)

        def policy(tab):
            return greedy_q_policy(tab, states, actions)

    rng = make_generator(seed)
    flat = table.reshape(-1)
    v_target = state_values(table)
    result = TrainResult(learner, table)
    n_cells = table.size
    for step in range(1, cfg.total_steps + 1):
        idx = rng.integers(0, d.N, size=cfg.minibatch_n)
        batch_cells = cells[idx]
        y = r[idx] + cfg.gamma * v_target[s2i[idx]]
        counts = np.bincount(batch_cells, minlength=n_cells)
        sums = np.bincount(batch_cells, weights=y, minlength=n_cells)
        if learner == "cql":
            bs = si[idx]
            s_counts = np.bincount(bs, minlength=nS)
            freq = counts.reshape(nS, nA) / np.maximum(s_counts, 1)[:, None]
            penalty = cfg.eta * cfg.cql_alpha * (_softmax(table) - freq)
            penalty[s_counts == 0] = 0.0
        hit = counts > 0
        flat[hit] += cfg.eta * (sums[hit] / counts[hit] - flat[hit])
        if learner == "cql":
            table -= penalty
        _clip(table, v_max)
        if step % cfg.target_sync_T == 0:
            v_target = state_values(table)
        if step % cfg.eval_every == 0:
            cp = Checkpoint(step, learner, policy(table), table.copy() if keep_tables else None)
            result.checkpoints.append(cp)
            if checkpoint_sink is not None:
                checkpoint_sink(cp)
    return result
