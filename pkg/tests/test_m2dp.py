import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pescal import (DeterministicPolicy, RolloutMode, SyntheticM2dpSpec, apply_floor,
                    conditional, marginal_behavior, sample_trajectories, sample_trajectory,
                    sigmoid)

from conftest import sigmoid_ref

BEHAVIOR = RolloutMode.behavior_confounded()


# sigmoid -------------------------------------------------------------------

def test_sigmoid_examples():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(2.0) == pytest.approx(math.exp(2) / (1 + math.exp(2)), abs=1e-15)
    assert sigmoid(2.0) == pytest.approx(0.880797, abs=1e-6)
    assert sigmoid(-0.9) == pytest.approx(0.289050, abs=1e-6)


def test_sigmoid_stable_at_extremes():
    with np.errstate(over="raise"):
        assert sigmoid(700.0) == 1.0
        assert 0.0 <= sigmoid(-700.0) < 1e-300


@given(st.floats(-30, 30))
def test_sigmoid_matches_reference_and_symmetry(x):
    assert sigmoid(x) == pytest.approx(sigmoid_ref(x), rel=1e-12, abs=1e-15)
    assert sigmoid(x) + sigmoid(-x) == pytest.approx(1.0, abs=1e-15)


# conditionals --------------------------------------------------------------

def test_conditional_examples(spec):
    assert np.allclose(conditional(spec, "confounder", s=0), [0.5, 0.5])
    b = conditional(spec, "behavior", s=0, c=1)
    assert b == pytest.approx([0.5 * sigmoid_ref(2), 1 - sigmoid_ref(2), 0.5 * sigmoid_ref(2)])
    assert b == pytest.approx([0.440399, 0.119203, 0.440399], abs=1e-6)
    m = conditional(spec, "mediator", s=1, a=-1)
    assert m == pytest.approx([0.289050, 0.710950], abs=1e-6)


@pytest.mark.parametrize("which,parents", [
    ("initial", {}),
    ("confounder", {"s": 1}),
    ("behavior", {"s": 1, "c": -1}),
    ("mediator", {"s": 0, "a": 1}),
    ("reward", {"s": 1, "c": -1, "m": 0}),
    ("next_state", {"s": 0, "c": 1, "m": 1}),
])
def test_conditionals_sum_to_one(spec, which, parents):
    p = conditional(spec, which, **parents)
    assert abs(p.sum() - 1) <= 1e-12 and np.all(p >= 0)


@pytest.mark.parametrize("which,parents", [
    ("nope", {"s": 0}),
    ("mediator", {"s": 0}),
    ("mediator", {"s": 0, "a": 1, "c": 1}),
    ("mediator", {"s": 5, "a": 1}),
])
def test_conditional_errors(spec, which, parents):
    with pytest.raises((ValueError, KeyError)):
        conditional(spec, which, **parents)


def test_mediator_floor_applies():
    spec = SyntheticM2dpSpec(coef_m=(0.0, 30.0))
    p = conditional(spec, "mediator", s=0, a=-1)
    assert p.min() == pytest.approx(spec.mediator_floor)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=6).filter(lambda v: sum(v) > 0.5),
       st.floats(1e-6, 0.1))
def test_apply_floor_properties(raw, floor):
    p = np.asarray(raw) / sum(raw)
    if floor * len(p) >= 1:
        return
    q = apply_floor(p, floor)
    assert abs(q.sum() - 1) <= 1e-12
    assert np.all(q >= floor - 1e-15)


def test_spec_validation_and_json_roundtrip(spec):
    with pytest.raises(ValueError):
        SyntheticM2dpSpec(mediator_floor=0.6)
    with pytest.raises(ValueError):
        SyntheticM2dpSpec(coef_a=(1.0, float("nan")))
    again = SyntheticM2dpSpec.from_json(spec.to_json())
    assert again == spec and again.fingerprint == spec.fingerprint
    assert SyntheticM2dpSpec(coef_c=(0.2,)).fingerprint != spec.fingerprint


# marginal behavior ---------------------------------------------------------

def test_marginal_behavior_examples(spec):
    assert marginal_behavior(spec, 0) == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)
    p1 = marginal_behavior(spec, 1)
    assert p1.sum() == pytest.approx(1.0, abs=1e-12)
    assert p1[0] == pytest.approx(p1[2], abs=1e-15)
    assert np.all(p1 >= 0)


def test_marginal_behavior_is_exact_mixture(spec):
    for s in spec.state_values:
        pc = conditional(spec, "confounder", s=s)
        mix = sum(w * conditional(spec, "behavior", s=s, c=c)
                  for w, c in zip(pc, spec.confounder_values))
        assert marginal_behavior(spec, s) == pytest.approx(mix, abs=1e-15)


def test_unconfounded_joint_matches_confounded_marginal(spec):
    flat = SyntheticM2dpSpec.from_dict({**spec.to_dict(), "confounded": False})
    for s in spec.state_values:
        pc = conditional(flat, "confounder", s=s)
        # unconfounded: A does not depend on C, so every c-row equals the marginal
        for c in flat.confounder_values:
            assert conditional(flat, "behavior", s=s, c=c) == pytest.approx(
                marginal_behavior(spec, s), abs=1e-15)
        joint = sum(w * conditional(flat, "behavior", s=s, c=c)
                    for w, c in zip(pc, spec.confounder_values))
        assert joint == pytest.approx(marginal_behavior(spec, s), abs=1e-15)


# rollouts ------------------------------------------------------------------

def test_rollout_is_deterministic(spec):
    a = sample_trajectory(spec, BEHAVIOR, 500, 7)
    b = sample_trajectory(spec, BEHAVIOR, 500, 7)
    for f in ("s", "c", "a", "m", "r", "s_next"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    c = sample_trajectory(spec, BEHAVIOR, 500, 8)
    assert not np.array_equal(a.a, c.a)


@given(st.integers(0, 2**63 - 1), st.integers(1, 40))
@settings(max_examples=30)
def test_rollout_chain_and_supports(seed, horizon):
    spec = SyntheticM2dpSpec()
    tr = sample_trajectory(spec, BEHAVIOR, horizon, seed)
    assert len(tr.s) == horizon
    assert np.array_equal(tr.s_next[:-1], tr.s[1:])
    assert set(tr.r) <= {-1.0, 1.0}
    assert set(tr.a) <= set(spec.action_values)


def test_intervention_actions_follow_policy(spec):
    pi = DeterministicPolicy.constant(spec, -1)
    trs = sample_trajectories(spec, RolloutMode.intervention(pi), 500, range(200))
    assert all(np.all(t.a == -1) for t in trs)


@pytest.fixture(scope="module")
def behavior_pool(spec):
    trs = sample_trajectories(spec, BEHAVIOR, 500, range(2000))
    return {f: np.concatenate([getattr(t, f) for t in trs]) for f in ("s", "c", "a", "m", "r", "s_next")}


def test_behavior_action_frequency_state0(spec, behavior_pool):
    p = behavior_pool
    sel = p["s"] == 0
    assert np.mean(p["a"][sel] == 0) == pytest.approx(0.5, abs=0.005)


def test_distributional_fidelity(spec, behavior_pool):
    p = behavior_pool
    checks = []
    for s in spec.state_values:
        sel = p["s"] == s
        checks.append((p["c"][sel] == 1, conditional(spec, "confounder", s=s)[1]))
        for c in spec.confounder_values:
            sc = sel & (p["c"] == c)
            checks.append((p["a"][sc] == -1, conditional(spec, "behavior", s=s, c=c)[0]))
        for a in spec.action_values:
            sa = sel & (p["a"] == a)
            checks.append((p["m"][sa] == 0, conditional(spec, "mediator", s=s, a=a)[0]))
        for c in spec.confounder_values:
            for m in spec.mediator_values:
                scm = sel & (p["c"] == c) & (p["m"] == m)
                checks.append((p["r"][scm] == 1, conditional(spec, "reward", s=s, c=c, m=m)[1]))
                checks.append((p["s_next"][scm] == 1,
                               conditional(spec, "next_state", s=s, c=c, m=m)[1]))
    for hits, prob in checks:
        n = hits.size
        assert abs(hits.mean() - prob) <= 3 * math.sqrt(prob * (1 - prob) / n) + 1e-12


def _corr_at_state(pool, s, transform=lambda a: a):
    sel = pool["s"] == s
    return np.corrcoef(transform(pool["a"][sel]), pool["r"][sel])[0, 1]


def test_confounding_signature(spec, behavior_pool):
    # The behavior logit is symmetric in a = +1 / -1, so the confounder moves
    # |A| rather than the sign of A. Its fingerprint is a strong positive
    # |A|-reward association in logged data that vanishes under intervention,
    # and an A-reward correlation biased upward relative to the causal one.
    uniform = np.full((len(spec.state_values), len(spec.action_values)), 1 / 3)
    trs = sample_trajectories(spec, RolloutMode.intervention(uniform), 500, range(1000))
    pool = {f: np.concatenate([getattr(t, f) for t in trs]) for f in ("s", "a", "r")}
    for s in spec.state_values:
        causal = _corr_at_state(pool, s)
        logged = _corr_at_state(behavior_pool, s)
        assert causal < 0
        assert logged > causal
        assert _corr_at_state(behavior_pool, s, np.abs) > 0.3
        assert abs(_corr_at_state(pool, s, np.abs)) < 0.02


def _chi2_independence(x, y):
    xs, ys = np.unique(x), np.unique(y)
    table = np.array([[np.sum((x == a) & (y == b)) for b in ys] for a in xs], dtype=float)
    exp = table.sum(1, keepdims=True) * table.sum(0, keepdims=True) / table.sum()
    stat = ((table - exp) ** 2 / exp).sum()
    dof = (len(xs) - 1) * (len(ys) - 1)
    return stat, dof


def test_unconfounded_mode_independence(spec):
    trs = sample_trajectories(spec, RolloutMode.behavior_unconfounded(), 500, range(2000))
    s = np.concatenate([t.s for t in trs])
    a = np.concatenate([t.a for t in trs])
    c = np.concatenate([t.c for t in trs])
    for state in spec.state_values:
        stat, dof = _chi2_independence(a[s == state], c[s == state])
        # chi-square 0.99 quantile with 2 dof is 9.21
        assert dof == 2 and stat < 9.21


def test_confounded_mode_is_dependent(spec, behavior_pool):
    p = behavior_pool
    stat, _ = _chi2_independence(p["a"][p["s"] == 0], p["c"][p["s"] == 0])
    assert stat > 9.21


def test_intervention_mode_independent_of_confounder(spec):
    uniform = np.full((2, 3), 1 / 3)
    trs = sample_trajectories(spec, RolloutMode.intervention(uniform), 500, range(2000))
    s = np.concatenate([t.s for t in trs])
    a = np.concatenate([t.a for t in trs])
    c = np.concatenate([t.c for t in trs])
    for state in spec.state_values:
        stat, _ = _chi2_independence(a[s == state], c[s == state])
        assert stat < 9.21
