"""Tabular estimates of the behavior policy and mediator model.

Both are count-ratio maximum-likelihood estimates. The mediator estimate is
floored, and the uncertainty quantifier is the normal-approximation
half-width ``z * sqrt(p (1 - p) / N(s, a))`` of the raw count ratio.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .dataset import Dataset, support_positions
from .m2dp import SyntheticM2dpSpec, apply_floor

__all__ = [
    "BehaviorEstimate",
    "MediatorEstimate",
    "Nuisances",
    "UncertaintyQuantifier",
    "delta_quantifier",
    "estimate_behavior",
    "estimate_mediator",
    "estimate_nuisances",
    "kl_diagnostics",
    "kl_divergence",
]


@dataclass(frozen=True)
class BehaviorEstimate:
    """``probs[s, a]`` with counts; unseen states fall back to uniform."""

    states: Tuple[int, ...]
    actions: Tuple[int, ...]
    probs: np.ndarray
    counts_s: np.ndarray
    counts_sa: np.ndarray

    @property
    def unseen(self) -> np.ndarray:
        return self.counts_s == 0

    def to_dict(self) -> dict:
        return {"states": list(self.states), "actions": list(self.actions),
                "probs": self.probs.tolist(), "counts_s": self.counts_s.tolist(),
                "counts_sa": self.counts_sa.tolist(), "unseen": self.unseen.tolist()}


@dataclass(frozen=True)
class MediatorEstimate:
    """``probs[s, a, m]`` after flooring; ``raw`` is the plain count ratio."""

    states: Tuple[int, ...]
    actions: Tuple[int, ...]
    mediators: Tuple[int, ...]
    probs: np.ndarray
    raw: np.ndarray
    counts_sa: np.ndarray
    counts_sam: np.ndarray
    floor: float

    @property
    def unseen(self) -> np.ndarray:
        return self.counts_sa == 0

    def to_dict(self) -> dict:
        return {"states": list(self.states), "actions": list(self.actions),
                "mediators": list(self.mediators), "floor": self.floor,
                "probs": self.probs.tolist(), "raw": self.raw.tolist(),
                "counts_sa": self.counts_sa.tolist(), "counts_sam": self.counts_sam.tolist(),
                "unseen": self.unseen.tolist()}


@dataclass(frozen=True)
class UncertaintyQuantifier:
    """Pointwise bound ``delta[s, a, m]`` on ``|p_m_hat - p_m|``."""

    delta: np.ndarray
    z: float
    alpha: float

    def to_dict(self) -> dict:
        return {"delta": self.delta.tolist(), "z": self.z, "alpha": self.alpha}


def estimate_behavior(d: Dataset, states: Sequence[int], actions: Sequence[int]) -> BehaviorEstimate:
    if d.N == 0:
        raise ValueError("cannot estimate the behavior policy from an empty dataset")
    nS, nA = len(states), len(actions)
    si = support_positions(d.s, states, "s")
    ai = support_positions(d.a, actions, "a")
    counts_sa = np.bincount(si * nA + ai, minlength=nS * nA).reshape(nS, nA)
    counts_s = counts_sa.sum(axis=1)
    probs = np.full((nS, nA), 1.0 / nA)
    seen = counts_s > 0
    probs[seen] = counts_sa[seen] / counts_s[seen, None]
    return BehaviorEstimate(tuple(states), tuple(actions), probs, counts_s, counts_sa)


def estimate_mediator(d: Dataset, states: Sequence[int], actions: Sequence[int],
                      mediators: Sequence[int], floor: float = 1e-5) -> MediatorEstimate:
    if d.N == 0:
        raise ValueError("cannot estimate the mediator model from an empty dataset")
    nS, nA, nM = len(states), len(actions), len(mediators)
    si = support_positions(d.s, states, "s")
    ai = support_positions(d.a, actions, "a")
    mi = support_positions(d.m, mediators, "m")
    counts_sam = np.bincount((si * nA + ai) * nM + mi, minlength=nS * nA * nM).reshape(nS, nA, nM)
    counts_sa = counts_sam.sum(axis=2)
    raw = np.full((nS, nA, nM), 1.0 / nM)
    seen = counts_sa > 0
    raw[seen] = counts_sam[seen] / counts_sa[seen][:, None]
    probs = np.array([apply_floor(row, floor) for row in raw.reshape(-1, nM)]).reshape(raw.shape)
    return MediatorEstimate(tuple(states), tuple(actions), tuple(mediators), probs, raw,
                            counts_sa, counts_sam, floor)


def delta_quantifier(me: MediatorEstimate, z: float = 1.96) -> UncertaintyQuantifier:
    """Normal-approximation half-width of the raw mediator count ratio.

    Cells with no data get the maximal bound 1. ``alpha`` is the two-sided
    miscoverage ``2 (1 - Phi(z))`` implied by ``z``.
    """
    if z <= 0:
        raise ValueError("z must be positive")
    n = me.counts_sa[:, :, None].astype(float)
    p = me.raw
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = z * np.sqrt(p * (1.0 - p) / n)
    delta = np.where(n > 0, delta, 1.0)
    return UncertaintyQuantifier(delta, float(z), math.erfc(z / math.sqrt(2.0)))


@dataclass(frozen=True)
class Nuisances:
    pb: BehaviorEstimate
    pm: MediatorEstimate
    delta: UncertaintyQuantifier

    def to_json(self) -> str:
        return json.dumps({"behavior": self.pb.to_dict(), "mediator": self.pm.to_dict(),
                           "uncertainty": self.delta.to_dict()}, sort_keys=True)


def estimate_nuisances(d: Dataset, spec: SyntheticM2dpSpec, z: float = 1.96) -> Nuisances:
    pb = estimate_behavior(d, spec.state_values, spec.action_values)
    pm = estimate_mediator(d, spec.state_values, spec.action_values, spec.mediator_values,
                           spec.mediator_floor)
    return Nuisances(pb, pm, delta_quantifier(pm, z))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """``sum_x p(x) ln(p(x) / q(x))`` with the ``0 ln 0 = 0`` convention."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    support = p > 0
    if np.any(q[support] <= 0):
        raise ValueError("estimate assigns zero probability where the truth is positive")
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def kl_diagnostics(spec: SyntheticM2dpSpec, be: BehaviorEstimate, me: MediatorEstimate,
                   weights: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """Expected KL divergences of the estimates from the true conditionals.

    ``weights`` is a distribution over states (default: the stationary state
    law of the behavior chain). The mediator term weights ``(s, a)`` by
    ``weights[s] * p_b(a | s)`` with the true behavior policy.
    """
    tab = spec.tables
    if weights is None:
        from .oracle import behavior_stationary_distribution
        weights = behavior_stationary_distribution(spec)
    weights = np.asarray(weights, dtype=float)
    pb = tab.pb
    kl_b = 0.0
    kl_m = 0.0
    for i in range(len(spec.state_values)):
        if weights[i] == 0:
            continue
        kl_b += weights[i] * kl_divergence(pb[i], be.probs[i])
        for j in range(len(spec.action_values)):
            w = weights[i] * pb[i, j]
            if w > 0:
                kl_m += w * kl_divergence(tab.pm[i, j], me.probs[i, j])
    return kl_b, kl_m
