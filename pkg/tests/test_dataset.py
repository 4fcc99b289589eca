import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pescal import (CSV_HEADER, CoverageFilterSpec, Dataset, RolloutMode, SyntheticM2dpSpec,
                    coverage_filter, flatten, generate_dataset, sample_trajectories,
                    sample_trajectory)

BEHAVIOR = RolloutMode.behavior_confounded()


def _is_subsequence(small: Dataset, big: Dataset) -> bool:
    keys_big = list(zip(big.traj_id, big.t))
    it = iter(keys_big)
    return all(k in it for k in zip(small.traj_id, small.t))


def test_flatten_sizes_and_order(spec):
    d = flatten(sample_trajectories(spec, BEHAVIOR, 500, range(100)))
    assert d.N == 50_000
    assert flatten([]).N == 0
    one = flatten([sample_trajectory(spec, BEHAVIOR, 3, 5)])
    assert list(one.t) == [0, 1, 2] and list(one.traj_id) == [0, 0, 0]
    assert not hasattr(one, "c")


def test_flatten_preserves_generation_order(spec):
    trs = sample_trajectories(spec, BEHAVIOR, 4, [3, 1, 2])
    d = flatten(trs)
    assert list(d.traj_id) == [0] * 4 + [1] * 4 + [2] * 4
    assert np.array_equal(d.a, np.concatenate([t.a for t in trs]))


def test_flatten_rejects_mixed_specs(spec):
    other = SyntheticM2dpSpec(coef_c=(0.3,))
    with pytest.raises(ValueError):
        flatten([sample_trajectory(spec, BEHAVIOR, 3, 0), sample_trajectory(other, BEHAVIOR, 3, 0)])


def test_generate_dataset_size_and_fingerprint(spec):
    d = generate_dataset(spec, 1234, seed=3)
    assert d.N == 1234 and d.fingerprint == spec.fingerprint
    assert d == generate_dataset(spec, 1234, seed=3)


def test_coverage_filter_examples(data50k):
    d = data50k
    assert coverage_filter(d, CoverageFilterSpec(d.N)) == d
    assert set(coverage_filter(d, CoverageFilterSpec(0)).a) == {-1}
    kept = coverage_filter(d, CoverageFilterSpec(15))
    assert kept.N == 15 + int(np.sum(d.a[15:] == -1))
    assert kept.take(np.arange(15)) == d.take(np.arange(15))
    with pytest.raises(ValueError):
        coverage_filter(d, CoverageFilterSpec(d.N + 1))


@given(st.integers(0, 300), st.integers(0, 300), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_coverage_filter_properties(k1, k2, seed):
    spec = SyntheticM2dpSpec()
    d = generate_dataset(spec, 300, seed=seed)
    k1, k2 = sorted((k1, k2))
    f1 = coverage_filter(d, CoverageFilterSpec(k1))
    assert coverage_filter(f1, CoverageFilterSpec(k1)) == f1
    assert _is_subsequence(f1, coverage_filter(d, CoverageFilterSpec(k2)))


@given(st.integers(1, 400), st.integers(0, 10**9))
@settings(max_examples=25, deadline=None)
def test_csv_roundtrip(n, seed):
    spec = SyntheticM2dpSpec()
    d = generate_dataset(spec, n, seed=seed, horizon=37)
    text = d.to_csv()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert "\r" not in text and len(text.splitlines()) == n + 1
    assert Dataset.from_csv(text, fingerprint=spec.fingerprint) == d


def test_csv_file_roundtrip(tmp_path, spec):
    d = generate_dataset(spec, 50, seed=1)
    path = tmp_path / "d.csv"
    d.to_csv(path)
    assert Dataset.from_csv(path, fingerprint=spec.fingerprint) == d


def test_dataset_is_read_only(spec):
    d = generate_dataset(spec, 10, seed=0)
    with pytest.raises(ValueError):
        d.a[0] = 7
