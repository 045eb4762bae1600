"""Noisy-input label classifier and classifier-guided reverse diffusion.

The classifier predicts a child row's cluster label from ``(x_t, t)``.  During
sampling its input gradient ``d log p(c | x_t) / d x_t`` shifts the reverse
mean by ``eta * posterior_variance_t * g``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import (
    SAMPLE_CHUNK,
    NoiseSchedule,
    _as_values,
    column_standardization,
    check_same_space,
    q_sample,
    reverse_mean,
    run_chain,
)
from .encode import UnifiedMatrix
from .errors import BadRange, EmptyTable, LabelOutOfRange, NonFiniteLoss
from .nn import MLP, AdamW, load_mlp, save_mlp, sinusoidal_embedding

log = logging.getLogger(__name__)


@dataclass
class ClassifierConfig:
    iterations: int = 5000
    lr: float = 1e-4
    batch_size: int = 256
    layers: tuple[int, ...] = (128, 256, 128)
    weight_decay: float = 1e-4
    seed: int = 0
    log_every: int = 1000


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class Classifier:
    """MLP over ``(x_t, t)`` returning ``n_classes`` logits.

    Inputs are standardized with the same shift/scale as the denoiser of the
    table, so both networks see the same space.
    """

    def __init__(self, net: MLP, shift: np.ndarray, scale: np.ndarray, columns: list[str]):
        self.net = net
        self.shift = np.asarray(shift, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.columns = list(columns)
        self.loss_history: list[float] = []

    @property
    def feature_dim(self) -> int:
        return self.net.sizes[0]

    @property
    def n_classes(self) -> int:
        return self.net.sizes[-1]

    def _embed(self, t, n: int) -> np.ndarray:
        t = np.broadcast_to(np.asarray(t), (n,))
        return sinusoidal_embedding(t, self.net.sizes[1])

    def logits(self, x_t: np.ndarray, t) -> np.ndarray:
        return self.net(x_t, self._embed(t, x_t.shape[0]))

    def log_probs(self, x_t: np.ndarray, t) -> np.ndarray:
        return _log_softmax(self.logits(x_t, t))

    def grad_log_prob(self, x_t: np.ndarray, t, labels) -> np.ndarray:
        """Row-wise gradient of ``log softmax(logits)[label]`` w.r.t. ``x_t``."""
        n = x_t.shape[0]
        out, cache = self.net.forward(x_t, self._embed(t, n))
        probs = np.exp(_log_softmax(out))
        upstream = -probs
        upstream[np.arange(n), np.broadcast_to(np.asarray(labels), (n,))] += 1.0
        _, dx = self.net.backward(cache, upstream, need_params=False)
        return dx

    def loss_and_grads(self, x_t: np.ndarray, t, labels: np.ndarray):
        n = x_t.shape[0]
        out, cache = self.net.forward(x_t, self._embed(t, n))
        logp = _log_softmax(out)
        loss = float(-logp[np.arange(n), labels].mean())
        upstream = np.exp(logp)
        upstream[np.arange(n), labels] -= 1.0
        grads, _ = self.net.backward(cache, upstream / n)
        return loss, grads

    def save(self, stem: str | Path, extra: dict | None = None) -> None:
        header = {
            "kind": "classifier",
            "columns": self.columns,
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
        }
        header.update(extra or {})
        save_mlp(stem, self.net, header)

    @classmethod
    def load(cls, stem: str | Path) -> tuple["Classifier", dict]:
        net, meta = load_mlp(stem)
        return cls(net, meta["shift"], meta["scale"], meta["columns"]), meta


def train_classifier(
    matrix,
    labels,
    schedule: NoiseSchedule,
    config: ClassifierConfig | None = None,
    n_classes: int | None = None,
) -> Classifier:
    """Cross-entropy training on ``q_sample``-noised rows with ``t ~ U{1..T}``."""
    config = config or ClassifierConfig()
    values, columns = _as_values(matrix)
    labels = np.asarray(labels, dtype=np.int64)
    if values.shape[0] == 0:
        raise EmptyTable("cannot train a classifier on an empty matrix")
    if len(labels) != values.shape[0]:
        raise LabelOutOfRange(f"{len(labels)} labels for {values.shape[0]} rows")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes - 1}], got [{labels.min()}, {labels.max()}]")
    rng = np.random.default_rng(config.seed)
    shift, scale = column_standardization(values)
    data = (values - shift) / scale
    n, d = data.shape
    net = MLP(d, tuple(config.layers), n_classes, rng)
    clf = Classifier(net, shift, scale, columns)
    opt = AdamW(net.params, config.lr, config.weight_decay)
    batch = min(config.batch_size, n) if config.batch_size > 0 else n
    running = 0.0
    for it in range(1, config.iterations + 1):
        idx = rng.integers(0, n, size=batch)
        t = rng.integers(1, schedule.T + 1, size=batch)
        eps = rng.standard_normal((batch, d))
        loss, grads = clf.loss_and_grads(q_sample(data[idx], t, eps, schedule), t, labels[idx])
        if not np.isfinite(loss):
            norms = ", ".join(f"{np.linalg.norm(p):.3g}" for p in net.params)
            raise NonFiniteLoss(f"classifier loss became {loss} at iteration {it}; parameter norms: {norms}")
        clf.loss_history.append(loss)
        opt.step(net.params, grads)
        running += loss
        if config.log_every and it % config.log_every == 0:
            log.info("classifier iter %d/%d loss %.4f", it, config.iterations, running / config.log_every)
            running = 0.0
    return clf


def grad_log_prob(classifier: Classifier, x_t: np.ndarray, t, label) -> np.ndarray:
    return classifier.grad_log_prob(x_t, t, label)


def guided_reverse_step(x_t, t, label, denoiser, classifier, eta, schedule: NoiseSchedule, z):
    """``x_{t-1} = mu + eta * var_t * grad log p(label | x_t) + sqrt(var_t) z``."""
    if eta < 0:
        raise BadRange("classifier scale must be >= 0")
    mu = reverse_mean(x_t, t, denoiser, schedule)
    var = schedule.posterior_variance[t - 1]
    if eta > 0:
        mu = mu + eta * var * classifier.grad_log_prob(x_t, t, label)
    if t == 1 or z is None:
        return mu
    return mu + np.sqrt(var) * z


def guided_sample(denoiser, classifier, schedule: NoiseSchedule, labels, eta: float = 1.0,
                  seed: int = 0, table_name: str = "") -> UnifiedMatrix:
    """One guided reverse chain per entry of ``labels``.

    With ``eta == 0`` the classifier is never evaluated and the result equals
    :func:`clava.diffusion.sample` for the same seed.
    """
    if eta < 0:
        raise BadRange("classifier scale must be >= 0")
    labels = np.asarray(labels, dtype=np.int64)
    if eta > 0:
        check_same_space(denoiser, classifier)
    rng = np.random.default_rng(seed)
    chunks = []
    for start in range(0, len(labels), SAMPLE_CHUNK):
        lab = labels[start: start + SAMPLE_CHUNK]

        def guide(x, t, lab=lab):
            return eta * schedule.posterior_variance[t - 1] * classifier.grad_log_prob(x, t, lab)

        chunks.append(run_chain(denoiser, schedule, len(lab), rng, guide if eta > 0 else None))
    x = np.concatenate(chunks) if chunks else np.zeros((0, denoiser.feature_dim))
    return UnifiedMatrix(table_name, denoiser.columns, denoiser.denormalize(x))
