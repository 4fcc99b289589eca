"""Confounded mediated MDP: the synthetic generative process and rollouts.

All randomness flows through ``numpy.random.Generator(numpy.random.Philox(seed))``.
Each trajectory owns one generator; it draws one uniform for the initial state
and then five uniforms per step in the fixed order C, A, M, R, S'. Categorical
draws use inverse-CDF lookup on those uniforms, so a rollout is a pure function
of ``(spec, mode, horizon, seed)``, and switching the intervention policy keeps
every other draw aligned (common random numbers).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

__all__ = [
    "SELECTORS",
    "DeterministicPolicy",
    "RolloutMode",
    "SyntheticM2dpSpec",
    "Trajectory",
    "apply_floor",
    "conditional",
    "derive_seed",
    "make_generator",
    "marginal_behavior",
    "sample_trajectories",
    "sample_trajectory",
    "sigmoid",
]

# selector -> required parents, in order
SELECTORS: Dict[str, Tuple[str, ...]] = {
    "initial": (),
    "confounder": ("s",),
    "behavior": ("s", "c"),
    "mediator": ("s", "a"),
    "reward": ("s", "c", "m"),
    "next_state": ("s", "c", "m"),
}


def sigmoid(x):
    """Logistic function ``e^x / (1 + e^x)``, stable for large ``|x|``."""
    if np.ndim(x) == 0:
        x = float(x)
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        z = math.exp(x)
        return z / (1.0 + z)
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    z = np.exp(x[~pos])
    out[~pos] = z / (1.0 + z)
    return out


def make_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def derive_seed(*keys: int) -> int:
    """Deterministically split integer keys into a fresh 64-bit seed."""
    words = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


@dataclass(frozen=True)
class SyntheticM2dpSpec:
    """Parameterized conditionals of the synthetic confounded M2DP.

    The defaults reproduce the two-state, three-action toy environment:

    * ``P(C=hi | S)      = sig(w_s S)``
    * ``P(A=0 | S, C)    = 1 - sig(w_s S + w_c C)``, the rest split evenly over
      the nonzero actions
    * ``P(M=lo | S, A)   = sig(w_s S + w_a A)``, floored at ``mediator_floor``
    * ``P(R=hi | S,C,M)  = sig(w_c C + w_s S + w_m M)``
    * ``P(S'=hi | S,C,M) = sig(w_c C + w_s S + w_m M)``

    where ``lo``/``hi`` are the first/last entries of each binary support.
    ``initial_probs`` defaults to uniform over states.
    """

    state_values: Tuple[int, ...] = (0, 1)
    action_values: Tuple[int, ...] = (-1, 0, 1)
    mediator_values: Tuple[int, ...] = (0, 1)
    reward_values: Tuple[float, ...] = (-1.0, 1.0)
    confounder_values: Tuple[int, ...] = (-1, 1)
    coef_c: Tuple[float, ...] = (0.1,)
    coef_a: Tuple[float, ...] = (1.0, 2.0)
    coef_m: Tuple[float, ...] = (0.1, 1.0)
    coef_r: Tuple[float, ...] = (2.0, 0.1, 2.0)
    coef_snext: Tuple[float, ...] = (2.0, 0.1, 2.0)
    mediator_floor: float = 1e-5
    confounded: bool = True
    initial_probs: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        # normalize list inputs (e.g. from JSON) to tuples so the spec stays hashable
        for name in ("state_values", "action_values", "mediator_values", "confounder_values"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        object.__setattr__(self, "reward_values", tuple(float(v) for v in self.reward_values))
        for name in ("coef_c", "coef_a", "coef_m", "coef_r", "coef_snext"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.initial_probs is not None:
            object.__setattr__(self, "initial_probs", tuple(float(v) for v in self.initial_probs))
        self._validate()

    def _validate(self):
        expected = {"coef_c": 1, "coef_a": 2, "coef_m": 2, "coef_r": 3, "coef_snext": 3}
        for name, n in expected.items():
            coefs = getattr(self, name)
            if len(coefs) != n:
                raise ValueError(f"{name} needs {n} coefficients, got {len(coefs)}")
            if not all(math.isfinite(v) for v in coefs):
                raise ValueError(f"{name} has non-finite coefficients")
        if not 0.0 < self.mediator_floor < 0.5:
            raise ValueError("mediator_floor must lie in (0, 0.5)")
        for name in ("state_values", "action_values", "mediator_values", "reward_values",
                     "confounder_values"):
            vals = getattr(self, name)
            if len(vals) == 0 or len(set(vals)) != len(vals):
                raise ValueError(f"{name} must be a nonempty set of distinct labels")
        for name in ("mediator_values", "reward_values", "confounder_values"):
            if len(getattr(self, name)) != 2:
                raise ValueError(f"{name} must be binary")
        if len(self.state_values) > 2:
            raise ValueError("state_values must have one or two labels")
        if 0 not in self.action_values or len(self.action_values) < 2:
            raise ValueError("action_values must contain 0 and at least one nonzero action")
        if self.initial_probs is not None:
            p = np.asarray(self.initial_probs)
            if p.shape != (len(self.state_values),) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
                raise ValueError("initial_probs must be a distribution over state_values")

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticM2dpSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticM2dpSpec":
        return cls.from_dict(json.loads(text))

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    # -- derived quantities --------------------------------------------------

    @property
    def r_max(self) -> float:
        return max(abs(v) for v in self.reward_values)

    def v_max(self, gamma: float) -> float:
        return self.r_max / (1.0 - gamma)

    @property
    def shape(self) -> Tuple[int, int, int]:
        """``(|S|, |A|, |M|)``."""
        return len(self.state_values), len(self.action_values), len(self.mediator_values)

    def index(self, variable: str, value) -> int:
        support = {
            "s": self.state_values, "a": self.action_values, "m": self.mediator_values,
            "c": self.confounder_values, "r": self.reward_values,
        }[variable]
        try:
            return support.index(value)
        except ValueError:
            raise ValueError(f"{variable}={value!r} outside support {support}") from None

    @cached_property
    def tables(self) -> "ModelTables":
        return ModelTables.from_spec(self)


def apply_floor(p: np.ndarray, floor: float) -> np.ndarray:
    """Raise entries below ``floor`` to it, rescaling the others to keep sum 1.

    Rescaling only the unfloored entries keeps every output entry >= ``floor``.
    """
    low = p < floor
    if not low.any():
        return p
    out = p.copy()
    out[low] = floor
    rest = ~low
    out[rest] = p[rest] * (1.0 - floor * low.sum()) / p[rest].sum()
    return out


def _binary(p_hi: float) -> np.ndarray:
    return np.array([1.0 - p_hi, p_hi])


def conditional(spec: SyntheticM2dpSpec, which: str, **parents) -> np.ndarray:
    """Probability vector of one variable given its parents.

    ``which`` is one of :data:`SELECTORS`; parents are passed by name
    (``s``, ``c``, ``a``, ``m``) as support labels. The result is ordered like
    the selected variable's support in ``spec``.
    """
    if which not in SELECTORS:
        raise ValueError(f"unknown selector {which!r}")
    required = SELECTORS[which]
    if set(parents) != set(required):
        raise ValueError(f"{which} requires parents {required}, got {tuple(parents)}")
    for name, value in parents.items():
        spec.index(name, value)
    s = parents.get("s")
    c = parents.get("c")

    if which == "initial":
        if spec.initial_probs is not None:
            return np.array(spec.initial_probs)
        n = len(spec.state_values)
        return np.full(n, 1.0 / n)
    if which == "confounder":
        return _binary(sigmoid(spec.coef_c[0] * s))
    if which == "behavior":
        if not spec.confounded:
            return marginal_behavior(spec, s)
        w_s, w_c = spec.coef_a
        p_move = sigmoid(w_s * s + w_c * c)
        acts = np.asarray(spec.action_values)
        nonzero = acts != 0
        out = np.where(nonzero, p_move / nonzero.sum(), 1.0 - p_move)
        return out
    if which == "mediator":
        w_s, w_a = spec.coef_m
        p_lo = sigmoid(w_s * s + w_a * parents["a"])
        return apply_floor(np.array([p_lo, 1.0 - p_lo]), spec.mediator_floor)
    w_c, w_s, w_m = spec.coef_r if which == "reward" else spec.coef_snext
    p_hi = sigmoid(w_c * c + w_s * s + w_m * parents["m"])
    if which == "next_state" and len(spec.state_values) == 1:
        return np.ones(1)
    return _binary(p_hi)


def marginal_behavior(spec: SyntheticM2dpSpec, s) -> np.ndarray:
    """Exact ``p_b(a|s) = sum_c p_c(c|s) p_a(a|s,c)`` under the confounded logit."""
    spec.index("s", s)
    confounded = spec if spec.confounded else _with_flag(spec, True)
    pc = conditional(spec, "confounder", s=s)
    out = np.zeros(len(spec.action_values))
    for c, w in zip(spec.confounder_values, pc):
        out += w * conditional(confounded, "behavior", s=s, c=c)
    return out


@dataclass(frozen=True)
class ModelTables:
    """Dense conditional tables, indexed by support position.

    Shapes: ``rho0[s]``, ``pc[s,c]``, ``pa[s,c,a]`` (behavior, honoring the
    ``confounded`` flag), ``pm[s,a,m]``, ``pr[s,c,m,r]``, ``ps[s,c,m,s']``.
    """

    rho0: np.ndarray
    pc: np.ndarray
    pa: np.ndarray
    pm: np.ndarray
    pr: np.ndarray
    ps: np.ndarray
    reward_values: np.ndarray

    @classmethod
    def from_spec(cls, spec: SyntheticM2dpSpec) -> "ModelTables":
        S, C, A, M = (spec.state_values, spec.confounder_values, spec.action_values,
                      spec.mediator_values)
        pc = np.array([conditional(spec, "confounder", s=s) for s in S])
        pa = np.array([[conditional(spec, "behavior", s=s, c=c) for c in C] for s in S])
        pm = np.array([[conditional(spec, "mediator", s=s, a=a) for a in A] for s in S])
        pr = np.array([[[conditional(spec, "reward", s=s, c=c, m=m) for m in M] for c in C]
                       for s in S])
        ps = np.array([[[conditional(spec, "next_state", s=s, c=c, m=m) for m in M] for c in C]
                       for s in S])
        tables = cls(conditional(spec, "initial"), pc, pa, pm, pr, ps,
                     np.asarray(spec.reward_values))
        for arr in (tables.pc, tables.pa, tables.pm, tables.pr, tables.ps):
            arr.setflags(write=False)
        return tables

    @property
    def pb(self) -> np.ndarray:
        """Marginal behavior policy ``p_b[s,a]`` of the offline data."""
        return np.einsum("sc,sca->sa", self.pc, self.pa)

    @property
    def mean_reward(self) -> np.ndarray:
        """``E[R | s, c, m]`` as ``[s,c,m]``."""
        return self.pr @ self.reward_values


@dataclass(frozen=True)
class DeterministicPolicy:
    """A map from state label to action label."""

    states: Tuple[int, ...]
    actions: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        if len(self.states) != len(self.actions):
            raise ValueError("policy must assign exactly one action per state")

    def __call__(self, s: int) -> int:
        return self.actions[self.states.index(s)]

    @classmethod
    def constant(cls, spec: SyntheticM2dpSpec, action: int) -> "DeterministicPolicy":
        spec.index("a", action)
        return cls(spec.state_values, (action,) * len(spec.state_values))

    @classmethod
    def from_indices(cls, states: Sequence[int], actions: Sequence[int],
                     idx: Iterable[int]) -> "DeterministicPolicy":
        return cls(tuple(states), tuple(actions[int(i)] for i in idx))

    def action_indices(self, action_values: Sequence[int]) -> np.ndarray:
        return np.array([list(action_values).index(a) for a in self.actions])

    def as_dict(self) -> Dict[str, int]:
        return {str(s): a for s, a in zip(self.states, self.actions)}

    @classmethod
    def from_dict(cls, d: Mapping[str, int]) -> "DeterministicPolicy":
        items = sorted((int(k), int(v)) for k, v in d.items())
        return cls(tuple(k for k, _ in items), tuple(v for _, v in items))


@dataclass(frozen=True)
class RolloutMode:
    """How actions are chosen during a rollout.

    ``confounded`` and ``unconfounded`` sample the behavior policy (with and
    without the C -> A edge). ``intervention`` assigns actions from ``policy``
    regardless of C; ``policy`` is a :class:`DeterministicPolicy` or an
    ``[s, a]`` array of action probabilities.
    """

    kind: str
    policy: Optional[Union[DeterministicPolicy, np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("confounded", "unconfounded", "intervention"):
            raise ValueError(f"unknown rollout mode {self.kind!r}")
        if (self.kind == "intervention") != (self.policy is not None):
            raise ValueError("exactly the intervention mode carries a policy")

    @classmethod
    def behavior_confounded(cls) -> "RolloutMode":
        return cls("confounded")

    @classmethod
    def behavior_unconfounded(cls) -> "RolloutMode":
        return cls("unconfounded")

    @classmethod
    def intervention(cls, policy) -> "RolloutMode":
        return cls("intervention", policy)


@dataclass
class Trajectory:
    """One rollout stored column-wise; ``c`` is the latent confounder."""

    s: np.ndarray
    c: np.ndarray
    a: np.ndarray
    m: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    seed: int
    mode: str
    fingerprint: str

    def __len__(self) -> int:
        return len(self.s)

    def steps(self) -> List[tuple]:
        return list(zip(self.s.tolist(), self.c.tolist(), self.a.tolist(), self.m.tolist(),
                        self.r.tolist(), self.s_next.tolist()))


def _draw(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draw, one row of ``probs`` per uniform."""
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf < u[:, None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def _action_table(spec: SyntheticM2dpSpec, mode: RolloutMode) -> Optional[np.ndarray]:
    """Per-state action distribution for intervention rollouts, ``[s, a]``."""
    if mode.kind != "intervention":
        return None
    pol = mode.policy
    if isinstance(pol, DeterministicPolicy):
        table = np.zeros((len(spec.state_values), len(spec.action_values)))
        for i, s in enumerate(spec.state_values):
            table[i, spec.index("a", pol(s))] = 1.0
        return table
    table = np.asarray(pol, dtype=float)
    if table.shape != (len(spec.state_values), len(spec.action_values)):
        raise ValueError("stochastic policy must be an [s, a] probability table")
    if np.any(table < 0) or np.any(np.abs(table.sum(axis=1) - 1) > 1e-12):
        raise ValueError("stochastic policy rows must be distributions")
    return table


def _rollout_indices(spec: SyntheticM2dpSpec, mode: Optional[RolloutMode], horizon: int,
                     seeds: Sequence[int], action_tables: Optional[np.ndarray] = None):
    """Vectorized rollouts over seeds; returns index arrays shaped ``[n, horizon]``.

    ``action_tables[i, s, a]`` gives row ``i`` its own intervention policy and
    takes the place of ``mode``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    tab = spec.tables
    rows = np.arange(len(seeds))
    if action_tables is not None:
        act = np.asarray(action_tables, dtype=float)
    else:
        if mode.kind == "unconfounded" and spec.confounded:
            tab = _with_flag(spec, False).tables
        elif mode.kind == "confounded" and not spec.confounded:
            tab = _with_flag(spec, True).tables
        act = _action_table(spec, mode)
        if act is not None:
            act = np.broadcast_to(act, (len(seeds),) + act.shape)

    n = len(seeds)
    u0 = np.empty(n)
    u = np.empty((n, horizon, 5))
    for i, seed in enumerate(seeds):
        rng = make_generator(seed)
        u0[i] = rng.random()
        u[i] = rng.random((horizon, 5))

    out = {k: np.empty((n, horizon), dtype=np.int64) for k in ("s", "c", "a", "m", "r", "s_next")}
    s = _draw(np.broadcast_to(tab.rho0, (n, len(tab.rho0))), u0)
    for t in range(horizon):
        ut = u[:, t]
        c = _draw(tab.pc[s], ut[:, 0])
        a = _draw(tab.pa[s, c] if act is None else act[rows, s], ut[:, 1])
        m = _draw(tab.pm[s, a], ut[:, 2])
        r = _draw(tab.pr[s, c, m], ut[:, 3])
        s2 = _draw(tab.ps[s, c, m], ut[:, 4])
        for k, v in (("s", s), ("c", c), ("a", a), ("m", m), ("r", r), ("s_next", s2)):
            out[k][:, t] = v
        s = s2
    return out


def _with_flag(spec: SyntheticM2dpSpec, confounded: bool) -> SyntheticM2dpSpec:
    d = spec.to_dict()
    d["confounded"] = confounded
    return SyntheticM2dpSpec.from_dict(d)


def sample_trajectories(spec: SyntheticM2dpSpec, mode: RolloutMode, horizon: int,
                        seeds: Sequence[int]) -> List[Trajectory]:
    """Sample one trajectory per seed; identical to repeated :func:`sample_trajectory`."""
    idx = _rollout_indices(spec, mode, horizon, seeds)
    S = np.asarray(spec.state_values)
    labels = {
        "s": S, "s_next": S, "c": np.asarray(spec.confounder_values),
        "a": np.asarray(spec.action_values), "m": np.asarray(spec.mediator_values),
        "r": np.asarray(spec.reward_values),
    }
    fp = spec.fingerprint
    return [
        Trajectory(**{k: labels[k][idx[k][i]] for k in labels}, seed=int(seed),
                   mode=mode.kind, fingerprint=fp)
        for i, seed in enumerate(seeds)
    ]


def sample_trajectory(spec: SyntheticM2dpSpec, mode: RolloutMode, horizon: int,
                      seed: int) -> Trajectory:
    return sample_trajectories(spec, mode, horizon, [seed])[0]
