"""Exact dynamic programming on the true synthetic model.

Everything here sums over the finite supports of the spec, so the results are
ground truth for the sampled learners: the front-door-reduced interventional
MDP, its optimal values, the mediated optimal Q-function, exact policy values,
and coverage constants.

Both fixed-point solvers iterate in increment form: instead of recomputing
``q_{k+1} = r + gamma P max q_k`` they propagate ``d_{k+1} = gamma P (v_k - v_{k-1})``
and accumulate ``q_{k+1} = q_k + d_{k+1}``. The two are algebraically the same,
but the increment form keeps each sup-norm delta accurate to relative machine
precision, which is what the recorded contraction trace needs.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np

from .m2dp import DeterministicPolicy, SyntheticM2dpSpec

__all__ = [
    "CoverageConstants",
    "ExactMdp",
    "FixedPointResult",
    "OracleSolution",
    "all_deterministic_policies",
    "behavior_stationary_distribution",
    "coverage_constants",
    "exact_policy_value",
    "frontdoor_reduce",
    "mediated_bellman_residual",
    "mediated_qstar",
    "offline_law",
    "regret",
    "solve_oracle",
    "value_iteration",
]


@dataclass(frozen=True)
class ExactMdp:
    """Interventional MDP: ``rbar[s, a]``, ``P[s, a, s']``, ``rho0[s]``."""

    rbar: np.ndarray
    P: np.ndarray
    gamma: float
    rho0: np.ndarray
    states: tuple
    actions: tuple

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")


@dataclass
class FixedPointResult:
    """Solution table plus the per-iteration sup-norm deltas."""

    table: np.ndarray
    deltas: List[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.deltas)

    def ratios(self) -> np.ndarray:
        d = np.asarray(self.deltas)
        nz = d[:-1] > 0
        return d[1:][nz] / d[:-1][nz]


def frontdoor_reduce(spec: SyntheticM2dpSpec, gamma: float) -> ExactMdp:
    """Interventional reward and kernel by front-door summation over ``(c, m)``."""
    tab = spec.tables
    # weight[s, a, c, m] = p_c(c|s) p_m(m|s,a)
    weight = tab.pc[:, None, :, None] * tab.pm[:, :, None, :]
    rbar = np.einsum("sacm,scm->sa", weight, tab.mean_reward)
    P = np.einsum("sacm,scmt->sat", weight, tab.ps)
    return ExactMdp(rbar, P, float(gamma), tab.rho0.copy(), spec.state_values, spec.action_values)


def _greedy_increment(q_new, q_old, d_new):
    """``max_a q_new - max_a q_old`` per state, exact where the argmax is unchanged."""
    a_new = np.argmax(q_new, axis=1)
    a_old = np.argmax(q_old, axis=1)
    rows = np.arange(q_new.shape[0])
    same = a_new == a_old
    return np.where(same, d_new[rows, a_new], q_new[rows, a_new] - q_old[rows, a_old])


def value_iteration(mdp: ExactMdp, tol: float = 1e-10, max_iter: int = 100_000) -> FixedPointResult:
    """Optimal ``q*[s, a]`` to sup-norm accuracy ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    g = mdp.gamma
    q = mdp.rbar.copy()
    d = q.copy()
    out = FixedPointResult(q, [float(np.abs(d).max())])
    if g == 0.0:
        return out
    threshold = tol * (1.0 - g) / g
    q_old = np.zeros_like(q)
    while out.deltas[-1] > threshold and out.iterations < max_iter:
        dv = _greedy_increment(q, q_old, d)
        d = g * (mdp.P @ dv)
        q_old, q = q, q + d
        out.deltas.append(float(np.abs(d).max()))
    out.table = q
    return out


def _policy_matrix(mdp: ExactMdp, pi):
    idx = pi.action_indices(mdp.actions) if isinstance(pi, DeterministicPolicy) \
        else np.asarray(pi, dtype=int)
    rows = np.arange(len(mdp.states))
    return mdp.rbar[rows, idx], mdp.P[rows, idx]


def exact_policy_value(mdp: ExactMdp, pi, return_values: bool = False):
    """``J(pi) = rho0 . v`` with ``v = (I - gamma P_pi)^{-1} r_pi``."""
    r_pi, P_pi = _policy_matrix(mdp, pi)
    A = np.eye(len(r_pi)) - mdp.gamma * P_pi
    try:
        v = np.linalg.solve(A, r_pi)
    except np.linalg.LinAlgError:
        raise ValueError("policy evaluation system is singular") from None
    J = float(mdp.rho0 @ v)
    return (J, v) if return_values else J


def all_deterministic_policies(spec: SyntheticM2dpSpec) -> List[DeterministicPolicy]:
    return [DeterministicPolicy(spec.state_values, acts)
            for acts in itertools.product(spec.action_values, repeat=len(spec.state_values))]


def offline_law(spec: SyntheticM2dpSpec):
    """Observational ``E[R | s,a,m]`` and ``P(s' | s,a,m)`` of the offline data.

    The confounder posterior is ``p(c | s, a) ∝ p_c(c|s) p_a(a|s,c)``; the
    mediator carries no extra information about ``c``.
    """
    tab = spec.tables
    joint = tab.pc[:, :, None] * tab.pa  # [s, c, a]
    post = joint / joint.sum(axis=1, keepdims=True)
    r_sam = np.einsum("sca,scm->sam", post, tab.mean_reward)
    p_sam = np.einsum("sca,scmt->samt", post, tab.ps)
    return r_sam, p_sam


def _weighted(Q, pm, pb):
    """``W[s, a] = sum_{a~, m} pm[s,a,m] pb[s,a~] Q[s,a~,m]``."""
    return np.einsum("sam,sb,sbm->sa", pm, pb, Q)


def mediated_qstar(spec: SyntheticM2dpSpec, gamma: float, tol: float = 1e-10,
                   max_iter: int = 100_000) -> FixedPointResult:
    """Fixed point of the mediated Bellman optimality equation, ``Q*[s, a~, m]``."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    tab = spec.tables
    pm, pb = tab.pm, tab.pb
    r_sam, p_sam = offline_law(spec)
    Q = r_sam.copy()
    D = Q.copy()
    out = FixedPointResult(Q, [float(np.abs(D).max())])
    if gamma == 0.0:
        return out
    threshold = tol * (1.0 - gamma) / gamma
    W_old = np.zeros((Q.shape[0], Q.shape[1]))
    W = _weighted(Q, pm, pb)
    while out.deltas[-1] > threshold and out.iterations < max_iter:
        dv = _greedy_increment(W, W_old, _weighted(D, pm, pb))
        D = gamma * np.einsum("samt,t->sam", p_sam, dv)
        Q = Q + D
        W_old, W = W, _weighted(Q, pm, pb)
        out.deltas.append(float(np.abs(D).max()))
    out.table = Q
    return out


def mediated_bellman_residual(spec: SyntheticM2dpSpec, Q: np.ndarray, gamma: float) -> float:
    """Sup-norm of ``Q - B*Q`` for the mediated optimality operator."""
    tab = spec.tables
    r_sam, p_sam = offline_law(spec)
    v = _weighted(Q, tab.pm, tab.pb).max(axis=1)
    return float(np.abs(Q - (r_sam + gamma * p_sam @ v)).max())


def behavior_stationary_distribution(spec: SyntheticM2dpSpec, tol: float = 1e-12,
                                     max_iter: int = 1_000_000) -> np.ndarray:
    """Stationary state law of the behavior chain, by power iteration from ``rho0``."""
    tab = spec.tables
    # K[s, s'] = sum_{c,a,m} p_c p_a p_m p_s
    K = np.einsum("sc,sca,sam,scmt->st", tab.pc, tab.pa, tab.pm, tab.ps)
    rho = tab.rho0.copy()
    for _ in range(max_iter):
        nxt = rho @ K
        if np.abs(nxt - rho).max() <= tol:
            return nxt
        rho = nxt
    return rho


def discounted_visitation(mdp: ExactMdp, pi) -> np.ndarray:
    """``(1 - gamma) rho0^T (I - gamma P_pi)^{-1}``."""
    _, P_pi = _policy_matrix(mdp, pi)
    n = P_pi.shape[0]
    return (1.0 - mdp.gamma) * np.linalg.solve((np.eye(n) - mdp.gamma * P_pi).T, mdp.rho0)


class CoverageConstants(NamedTuple):
    c1: float
    c2: float
    c3: float


def _inverse(p: float) -> float:
    return math.inf if p <= 0 else 1.0 / p


def coverage_constants(spec: SyntheticM2dpSpec, gamma: float,
                       pi_star: Optional[DeterministicPolicy] = None) -> CoverageConstants:
    """Coverage constants ``(c1, c2, c3)``; ``math.inf`` flags a zero denominator."""
    mdp = frontdoor_reduce(spec, gamma)
    pb = spec.tables.pb
    rho_d = behavior_stationary_distribution(spec)
    c1 = 0.0
    for pi in all_deterministic_policies(spec):
        rho_pi = discounted_visitation(mdp, pi)
        for a, b in zip(rho_pi, rho_d):
            c1 = max(c1, math.inf if b <= 0 and a > 0 else (a / b if b > 0 else 0.0))
    c2 = max(_inverse(p) for p in pb.ravel())
    if pi_star is None:
        pi_star = greedy_policy(value_iteration(mdp).table, spec.state_values, spec.action_values)
    idx = pi_star.action_indices(spec.action_values)
    c3 = max(_inverse(pb[i, j]) for i, j in enumerate(idx))
    return CoverageConstants(float(c1), float(c2), float(c3))


def greedy_policy(q: np.ndarray, states, actions) -> DeterministicPolicy:
    """Argmax per state; ``np.argmax`` breaks ties toward the smallest action index."""
    return DeterministicPolicy.from_indices(states, actions, np.argmax(q, axis=1))


def regret(J_star: float, J_pi: float) -> float:
    return float(J_star - J_pi)


@dataclass
class OracleSolution:
    q_star: np.ndarray
    pi_star: DeterministicPolicy
    J_star: float
    mediated_Q_star: np.ndarray
    pi_star_mediated: DeterministicPolicy
    policy_values: dict
    coverage: CoverageConstants
    vi_deltas: List[float]
    mediated_deltas: List[float]

    def to_dict(self) -> dict:
        def finite(x):
            return x if math.isfinite(x) else None
        return {
            "q_star": self.q_star.tolist(),
            "pi_star": self.pi_star.as_dict(),
            "J_star": self.J_star,
            "mediated_Q_star": self.mediated_Q_star.tolist(),
            "c1": finite(self.coverage.c1),
            "c2": finite(self.coverage.c2),
            "c3": finite(self.coverage.c3),
            "contraction_trace": {"value_iteration": self.vi_deltas,
                                  "mediated_qstar": self.mediated_deltas},
            "policy_values": self.policy_values,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def solve_oracle(spec: SyntheticM2dpSpec, gamma: float, tol: float = 1e-10) -> OracleSolution:
    """Run every exact solver on ``spec`` and bundle the results."""
    mdp = frontdoor_reduce(spec, gamma)
    vi = value_iteration(mdp, tol)
    pi_star = greedy_policy(vi.table, spec.state_values, spec.action_values)
    med = mediated_qstar(spec, gamma, tol)
    tab = spec.tables
    pi_med = greedy_policy(_weighted(med.table, tab.pm, tab.pb), spec.state_values,
                           spec.action_values)
    values = {json.dumps(pi.as_dict(), sort_keys=True): exact_policy_value(mdp, pi)
              for pi in all_deterministic_policies(spec)}
    return OracleSolution(
        q_star=vi.table,
        pi_star=pi_star,
        J_star=exact_policy_value(mdp, pi_star),
        mediated_Q_star=med.table,
        pi_star_mediated=pi_med,
        policy_values=values,
        coverage=coverage_constants(spec, gamma, pi_star),
        vi_deltas=vi.deltas,
        mediated_deltas=med.deltas,
    )
