import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clava.diffusion import DiffusionConfig, make_schedule, q_sample, reverse_step, sample, train_denoiser
from clava.errors import LabelOutOfRange
from clava.guidance import (
    Classifier,
    ClassifierConfig,
    grad_log_prob,
    guided_reverse_step,
    guided_sample,
    train_classifier,
)
from clava.nn import MLP


def _clf(layers, d=3, k=4, seed=0):
    rng = np.random.default_rng(seed)
    return Classifier(MLP(d, layers, k, rng), np.zeros(d), np.ones(d), [f"x{i}" for i in range(d)])


@pytest.mark.parametrize("layers", [(3,), (4, 4), (8, 16, 8), (128, 256, 128)])
def test_grad_log_prob_finite_differences(layers):
    clf = _clf(layers)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 3))
    t = np.array([1, 5, 10, 50, 99])
    labels = np.array([0, 1, 2, 3, 1])
    g = grad_log_prob(clf, x, t, labels)
    h = 1e-6
    num = np.zeros_like(x)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        up = clf.log_probs(x + e, t)[np.arange(5), labels]
        down = clf.log_probs(x - e, t)[np.arange(5), labels]
        num[:, j] = (up - down) / (2 * h)
    rel = np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-8)
    assert rel.max() <= 1e-4


def test_constant_logits_zero_gradient():
    clf = _clf((4, 4))
    for i, p in enumerate(clf.net.params):
        if i < len(clf.net.params) - 1:
            p[...] = 0.0
    x = np.random.default_rng(0).normal(size=(6, 3))
    assert np.all(grad_log_prob(clf, x, 7, 2) == 0.0)


def _antisymmetric(seed=3):
    clf = _clf((6,), d=2, k=2, seed=seed)
    W, b = clf.net.params[-2], clf.net.params[-1]
    W[:, 1] = -W[:, 0]
    b[1] = -b[0]
    return clf


def test_two_class_antisymmetric_logits():
    clf = _antisymmetric()
    x = np.random.default_rng(0).normal(size=(20, 2))
    g0, g1 = grad_log_prob(clf, x, 3, 0), grad_log_prob(clf, x, 3, 1)
    p = np.exp(clf.log_probs(x, 3))
    # with logits (l, -l): g0 = 2 p1 dl and g1 = -2 p0 dl
    np.testing.assert_allclose(p[:, :1] * g0 + p[:, 1:] * g1, 0.0, atol=1e-12)


def test_two_class_gradients_opposite_at_even_odds():
    clf = _antisymmetric()
    x = np.array([[0.4, -0.9]])
    b = clf.net.params[-1]
    # move the bias so both logits vanish at x while their slopes do not
    l0 = clf.logits(x, 3)[0, 0] - b[0]
    b[0], b[1] = -l0, l0
    assert np.allclose(clf.logits(x, 3), 0.0)
    g0 = grad_log_prob(clf, x, 3, 0)
    assert np.abs(g0).max() > 1e-6
    np.testing.assert_allclose(g0, -grad_log_prob(clf, x, 3, 1), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 100))
def test_probabilities_sum_to_one(seed, t):
    clf = _clf((8, 8), k=5, seed=seed % 7)
    x = np.random.default_rng(seed).normal(scale=5.0, size=(4, 3))
    total = np.exp(clf.log_probs(x, t)).sum(axis=1)
    assert np.all(np.abs(total - 1.0) <= 1e-6)


def test_classifier_initial_loss_ln_k():
    k = 4
    rng = np.random.default_rng(0)
    X = rng.normal(size=(400, 3))
    labels = np.repeat(np.arange(k), 100)
    clf = train_classifier(X, labels, make_schedule(50), ClassifierConfig(iterations=1, batch_size=400))
    assert clf.loss_history[0] == pytest.approx(math.log(k), abs=0.25)


def test_single_label_accuracy():
    X = np.random.default_rng(0).normal(size=(100, 2))
    s = make_schedule(20)
    clf = train_classifier(X, np.zeros(100, dtype=int), s, ClassifierConfig(iterations=50, layers=(8,)))
    pred = clf.logits(clf_norm(clf, X), 1).argmax(axis=1)
    assert np.all(pred == 0)


def clf_norm(clf, X):
    return (X - clf.shift) / clf.scale


def test_separable_blobs_accuracy():
    rng = np.random.default_rng(0)
    n = 600
    labels = rng.integers(0, 2, size=n)
    X = (np.where(labels == 1, 5.0, -5.0) + rng.normal(size=n))[:, None]
    s = make_schedule(100)
    clf = train_classifier(X, labels, s, ClassifierConfig(iterations=1500, lr=1e-3, layers=(32, 32), seed=1))
    test_labels = rng.integers(0, 2, size=1000)
    Xt = (np.where(test_labels == 1, 5.0, -5.0) + rng.normal(size=1000))[:, None]
    t = np.ones(1000, dtype=int)
    xt = q_sample(clf_norm(clf, Xt), t, rng.standard_normal((1000, 1)), s)
    acc = np.mean(clf.logits(xt, t).argmax(axis=1) == test_labels)
    assert acc >= 0.95


def test_label_out_of_range():
    X = np.zeros((4, 1))
    with pytest.raises(LabelOutOfRange):
        train_classifier(X, [0, 1, 2, 3], make_schedule(5), ClassifierConfig(iterations=1), n_classes=3)
    with pytest.raises(LabelOutOfRange):
        train_classifier(X, [0, -1, 0, 0], make_schedule(5), ClassifierConfig(iterations=1))


class _ZeroDenoiser:
    feature_dim = 2

    def predict_noise(self, x, t):
        return np.zeros_like(x)


class _FixedGrad:
    def grad_log_prob(self, x, t, label):
        return np.tile([1.0, 0.0], (x.shape[0], 1))


def test_guided_step_formula():
    sched = SimpleNamespace(betas=np.array([0.5, 0.5]), alphas=np.array([0.5, 0.5]),
                            alpha_bars=np.array([0.5, 0.25]), posterior_variance=np.array([1.0, 1.0]))
    out = guided_reverse_step(np.zeros((1, 2)), 2, 0, _ZeroDenoiser(), _FixedGrad(), 2.0, sched, np.zeros((1, 2)))
    assert out.tolist() == [[2.0, 0.0]]


def _trained_pair():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 2))
    labels = (X[:, 0] > 0).astype(int)
    s = make_schedule(20)
    den = train_denoiser(X, s, DiffusionConfig(iterations=30, layers=(16, 16)))
    clf = train_classifier(X, labels, s, ClassifierConfig(iterations=30, layers=(16,)))
    return den, clf, s


def test_eta_zero_matches_unconditional():
    den, clf, s = _trained_pair()
    a = guided_sample(den, clf, s, np.zeros(40, dtype=int), eta=0.0, seed=11)
    b = sample(den, s, 40, seed=11)
    assert a.values.tobytes() == b.values.tobytes()
    x = np.random.default_rng(2).normal(size=(5, 2))
    z = np.random.default_rng(3).normal(size=(5, 2))
    assert guided_reverse_step(x, 7, 1, den, clf, 0.0, s, z).tobytes() == reverse_step(x, 7, den, s, z).tobytes()


def test_guided_empty_and_deterministic():
    den, clf, s = _trained_pair()
    assert guided_sample(den, clf, s, [], eta=1.0).values.shape == (0, 2)
    a = guided_sample(den, clf, s, [0, 1, 1], eta=1.0, seed=3)
    b = guided_sample(den, clf, s, [0, 1, 1], eta=1.0, seed=3)
    assert a.values.tobytes() == b.values.tobytes()


def test_classifier_save_load(tmp_path):
    _, clf, _ = _trained_pair()
    clf.save(tmp_path / "a__b.classifier", {"k": 1})
    assert (tmp_path / "a__b.classifier.bin").exists()
    again, meta = Classifier.load(tmp_path / "a__b.classifier")
    assert again.n_classes == clf.n_classes and meta["k"] == 1
