import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pescal import (Dataset, SyntheticM2dpSpec, conditional, delta_quantifier,
                    estimate_behavior, estimate_mediator, estimate_nuisances,
                    generate_dataset, kl_diagnostics, kl_divergence, marginal_behavior)

S, A, M = (0, 1), (-1, 0, 1), (0, 1)


def _dataset(s, a, m):
    n = len(s)
    return Dataset(np.zeros(n), np.arange(n), s, a, m, np.ones(n), np.zeros(n))


def test_behavior_count_ratio():
    d = _dataset([0] * 100, [-1] * 25 + [0] * 50 + [1] * 25, [0] * 100)
    be = estimate_behavior(d, S, A)
    assert be.probs[0] == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)
    # state 1 never visited: uniform fallback, flagged
    assert be.probs[1] == pytest.approx([1 / 3] * 3)
    assert list(be.unseen) == [False, True]


def test_mediator_count_ratio_and_floor():
    d = _dataset([0] * 100, [-1] * 100, [0] * 29 + [1] * 71)
    me = estimate_mediator(d, S, A, M, floor=1e-5)
    assert me.probs[0, 0, 0] == pytest.approx(0.29, abs=1e-4)
    assert me.raw[0, 0, 0] == 0.29
    d2 = _dataset([0] * 10, [1] * 10, [1] * 10)
    me2 = estimate_mediator(d2, S, A, M, floor=1e-5)
    assert me2.probs[0, 2, 0] == 1e-5
    assert me2.probs[0, 2].sum() == pytest.approx(1.0, abs=1e-12)
    assert me2.probs[1, 1] == pytest.approx([0.5, 0.5])
    assert me2.unseen[1, 1] and not me2.unseen[0, 2]


def test_empty_dataset_errors():
    d = _dataset([], [], [])
    with pytest.raises(ValueError):
        estimate_behavior(d, S, A)
    with pytest.raises(ValueError):
        estimate_mediator(d, S, A, M)


def test_large_sample_consistency(spec):
    d = generate_dataset(spec, 1_000_000, seed=5)
    be = estimate_behavior(d, S, A)
    me = estimate_mediator(d, S, A, M, spec.mediator_floor)
    truth_b = np.stack([marginal_behavior(spec, s) for s in S])
    truth_m = np.array([[conditional(spec, "mediator", s=s, a=a) for a in A] for s in S])
    assert np.max(np.abs(be.probs - truth_b)) <= 0.005
    assert np.max(np.abs(me.probs - truth_m)) <= 0.005


def test_delta_examples():
    d = _dataset([0] * 100, [-1] * 100, [0] * 50 + [1] * 50)
    dq = delta_quantifier(estimate_mediator(d, S, A, M), z=1.96)
    assert dq.delta[0, 0, 0] == pytest.approx(1.96 * math.sqrt(0.25 / 100), abs=1e-12)
    assert dq.delta[0, 0, 0] == pytest.approx(0.098, abs=1e-12)
    d2 = _dataset([0] * 10, [1] * 10, [1] * 10)
    dq2 = delta_quantifier(estimate_mediator(d2, S, A, M))
    assert np.all(dq2.delta[0, 2] == 0.0)
    assert np.all(dq2.delta[1] == 1.0)
    assert dq.alpha == pytest.approx(0.05, abs=1e-3)
    with pytest.raises(ValueError):
        delta_quantifier(estimate_mediator(d, S, A, M), z=0.0)


@given(st.integers(1, 200), st.integers(0, 200))
@settings(max_examples=50, deadline=None)
def test_delta_nonincreasing_in_count(k, extra):
    # fixed empirical frequency 1/3, growing sample size
    def delta(n):
        m = [0] * n + [1] * (2 * n)
        return delta_quantifier(estimate_mediator(_dataset([0] * 3 * n, [0] * 3 * n, m), S, A, M)).delta[0, 1, 0]
    assert delta(k + extra) <= delta(k) + 1e-15


@given(st.lists(st.tuples(st.sampled_from(S), st.sampled_from(A), st.sampled_from(M)),
                min_size=1, max_size=200))
@settings(max_examples=50, deadline=None)
def test_tables_sum_to_one(rows):
    s, a, m = map(list, zip(*rows))
    d = _dataset(s, a, m)
    be = estimate_behavior(d, S, A)
    me = estimate_mediator(d, S, A, M)
    assert np.allclose(be.probs.sum(-1), 1, atol=1e-12)
    assert np.allclose(me.probs.sum(-1), 1, atol=1e-12)
    assert np.all(me.probs >= me.floor)


def test_kl_divergence_reference():
    p, q = np.array([0.2, 0.8]), np.array([0.5, 0.5])
    assert kl_divergence(p, q) == pytest.approx(0.2 * math.log(0.4) + 0.8 * math.log(1.6))
    assert kl_divergence(p, p) == 0.0
    with pytest.raises(ValueError):
        kl_divergence(p, np.array([0.0, 1.0]))


def test_kl_zero_at_truth(spec):
    n = estimate_nuisances(generate_dataset(spec, 2000, seed=0), spec)
    truth_b = np.stack([marginal_behavior(spec, s) for s in S])
    truth_m = np.array([[conditional(spec, "mediator", s=s, a=a) for a in A] for s in S])
    be = type(n.pb)(n.pb.states, n.pb.actions, truth_b, n.pb.counts_s, n.pb.counts_sa)
    me = type(n.pm)(n.pm.states, n.pm.actions, n.pm.mediators, truth_m, truth_m,
                    n.pm.counts_sa, n.pm.counts_sam, n.pm.floor)
    kb, km = kl_diagnostics(spec, be, me)
    assert kb == pytest.approx(0.0, abs=1e-15) and km == pytest.approx(0.0, abs=1e-15)


def test_kl_reports_zero_estimate(spec):
    d = _dataset([0] * 10, [1] * 10, [1] * 10)
    be = estimate_behavior(d, S, A)
    me = estimate_mediator(d, S, A, M)
    with pytest.raises(ValueError):
        kl_diagnostics(spec, be, me)


def test_nuisances_export_json(spec):
    n = estimate_nuisances(generate_dataset(spec, 500, seed=2), spec)
    doc = json.loads(n.to_json())
    assert np.array(doc["mediator"]["probs"]).shape == (2, 3, 2)
    assert np.array(doc["behavior"]["probs"]).shape == (2, 3)
    assert np.array(doc["uncertainty"]["delta"]).shape == (2, 3, 2)
