import logging
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clava.errors import UnseenLabel
from clava.groupsize import (
    GroupSizeModel,
    fit_group_sizes,
    group_sizes,
    load_group_sizes,
    remap_unseen,
    sample_group_size,
    sample_group_sizes,
    save_group_sizes,
)


def _fit(parent_labels, fk, k, centroids=None):
    a = SimpleNamespace(parent_labels=np.asarray(parent_labels), sentinel=k)
    return fit_group_sizes(a, np.asarray(fk), centroids)


def test_frequency_example():
    # three parents in cluster 0 with 1, 1 and 3 children
    m = _fit([0, 0, 0], [0, 1, 2, 2, 2], k=2)
    assert m.probabilities(0) == {1: 2 / 3, 3: 1 / 3}


def test_sentinel_and_single_group():
    m = _fit([2, 4], [0, 0, 0, 0, 0], k=4)
    assert m.probabilities(2) == {5: 1.0}
    # parent 1 is childless and carries the sentinel
    assert m.probabilities(4) == {0: 1.0}
    rng = np.random.default_rng(0)
    assert sample_group_sizes(m, [4, 4, 4], rng).tolist() == [0, 0, 0]
    assert sample_group_size(m, 2, rng) == 5


def test_deterministic_histogram():
    m = GroupSizeModel({0: {4: 7}}, sentinel=1)
    assert set(sample_group_sizes(m, np.zeros(100, dtype=int), np.random.default_rng(0)).tolist()) == {4}


def test_monte_carlo_frequencies():
    m = GroupSizeModel({0: {1: 2, 3: 1}}, sentinel=1)
    draws = sample_group_sizes(m, np.zeros(100_000, dtype=int), np.random.default_rng(0))
    assert abs(np.mean(draws == 1) - 2 / 3) <= 0.01
    assert abs(np.mean(draws == 3) - 1 / 3) <= 0.01
    assert set(draws.tolist()) == {1, 3}


def test_unseen_label():
    m = GroupSizeModel({0: {1: 1}, 2: {3: 1}}, sentinel=5)
    with pytest.raises(UnseenLabel) as info:
        sample_group_sizes(m, [1], np.random.default_rng(0))
    assert info.value.label == 1


def test_remap_by_centroid(caplog):
    cents = np.array([[0.0], [9.0], [10.0]])
    m = GroupSizeModel({0: {1: 1}, 2: {3: 1}}, sentinel=3, centroids={i: c for i, c in enumerate(cents)})
    with caplog.at_level(logging.WARNING):
        out = remap_unseen(m, [0, 1, 3])
    assert out.tolist() == [0, 2, 3]
    assert "label 1" in caplog.text


def test_remap_without_centroids():
    m = GroupSizeModel({0: {1: 1}, 4: {3: 1}}, sentinel=6)
    assert remap_unseen(m, [1, 3]).tolist() == [0, 4]


def test_json_roundtrip(tmp_path):
    m = _fit([0, 1, 0, 2], [0, 0, 1, 2, 2, 2], k=2, centroids=np.array([[0.5, 1.0], [2.0, 3.0]]))
    save_group_sizes(tmp_path / "g.json", m)
    again = load_group_sizes(tmp_path / "g.json")
    assert again.to_dict() == m.to_dict()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=40), st.integers(1, 4), st.integers(0, 10_000))
def test_histogram_properties(sizes, k, seed):
    rng = np.random.default_rng(seed)
    n = len(sizes)
    fk = np.repeat(np.arange(n), sizes)
    labels = np.where(np.array(sizes) == 0, k, rng.integers(0, k, size=n))
    m = _fit(labels, fk, k)
    for label in m.labels:
        p = m.probabilities(label)
        assert sum(p.values()) == pytest.approx(1.0, abs=1e-12)
        if label != k:
            assert min(p) >= 1
    draws = sample_group_sizes(m, labels, rng)
    for label in m.labels:
        assert set(draws[labels == label].tolist()) <= set(m.probabilities(label))


def test_group_sizes_counts_childless():
    assert group_sizes(np.array([0, 0, 2]), 4).tolist() == [2, 0, 1, 0]


def test_reconstruction_total_within_3_sigma():
    rng = np.random.default_rng(1)
    n, k = 2000, 3
    labels = rng.integers(0, k, size=n)
    sizes = rng.integers(1, 4, size=n) + 2 * labels
    fk = np.repeat(np.arange(n), sizes)
    m = _fit(labels, fk, k)
    mean = sum(sum(s * p for s, p in m.probabilities(c).items()) for c in labels)
    var = sum(sum(s * s * p for s, p in m.probabilities(c).items()) - sum(s * p for s, p in m.probabilities(c).items()) ** 2
              for c in labels)
    total = sample_group_sizes(m, labels, np.random.default_rng(5)).sum()
    assert sizes.sum() == pytest.approx(mean)
    assert abs(total - mean) <= 3 * np.sqrt(var)
