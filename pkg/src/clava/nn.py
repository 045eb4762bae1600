"""Small numpy MLP with hand-written backpropagation.

The first hidden layer accepts an additive term (the time embedding), which
is all the denoiser and the classifier need.  Everything runs in float64 so
the analytic gradients can be checked against finite differences.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def sinusoidal_embedding(t: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """``[cos(t f_i), sin(t f_i)]`` with geometrically spaced frequencies."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb


class MLP:
    """ReLU network ``in -> hidden[0] -> ... -> hidden[-1] -> out``.

    ``forward(x, add0)`` adds ``add0`` to the first pre-activation.
    """

    def __init__(self, in_dim: int, hidden: tuple[int, ...], out_dim: int, rng: np.random.Generator | None = None):
        if not hidden:
            raise ValueError("MLP needs at least one hidden layer")
        self.sizes = [in_dim, *hidden, out_dim]
        self.params: list[np.ndarray] = []
        rng = rng if rng is not None else np.random.default_rng(0)
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            # same bound as torch.nn.Linear's default init
            bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, size=(fan_out,)))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(self.sizes[1:-1])

    def forward(self, x: np.ndarray, add0: np.ndarray | None = None):
        """Return ``(output, cache)``; the cache feeds :meth:`backward`."""
        acts = [x]
        pre = []
        h = x
        for layer in range(self.n_layers):
            W, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = h @ W + b
            if layer == 0 and add0 is not None:
                z = z + add0
            if layer < self.n_layers - 1:
                pre.append(z)
                h = np.maximum(z, 0.0)
                acts.append(h)
            else:
                h = z
        return h, (acts, pre)

    def __call__(self, x, add0=None) -> np.ndarray:
        return self.forward(x, add0)[0]

    def backward(self, cache, grad_out: np.ndarray, need_params: bool = True):
        """Gradients w.r.t. parameters (same order as ``params``) and input."""
        acts, pre = cache
        grads: list[np.ndarray | None] = [None] * len(self.params)
        g = grad_out
        for layer in reversed(range(self.n_layers)):
            W = self.params[2 * layer]
            if need_params:
                grads[2 * layer] = acts[layer].T @ g
                grads[2 * layer + 1] = g.sum(axis=0)
            g = g @ W.T
            if layer > 0:
                g = g * (pre[layer - 1] > 0)
        return grads, g

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for i, p in enumerate(self.params):
            self.params[i] = np.asarray(flat[offset: offset + p.size], dtype=np.float64).reshape(p.shape)
            offset += p.size

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.sizes = list(self.sizes)
        other.params = [p.copy() for p in self.params]
        return other


class AdamW:
    """Adam with decoupled weight decay (Loshchilov & Hutter)."""

    def __init__(self, params: list[np.ndarray], lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr, self.wd, self.eps = lr, weight_decay, eps
        self.b1, self.b2 = betas
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.step_count += 1
        c1 = 1.0 - self.b1 ** self.step_count
        c2 = 1.0 - self.b2 ** self.step_count
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] *= self.b1
            self.m[i] += (1.0 - self.b1) * g
            self.v[i] *= self.b2
            self.v[i] += (1.0 - self.b2) * g * g
            if self.wd:
                p *= 1.0 - self.lr * self.wd
            p -= self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def _sibling(stem: Path, suffix: str) -> Path:
    return stem.parent / (stem.name + suffix)


def save_mlp(stem: str | Path, net: MLP, header: dict) -> None:
    """Write ``<stem>.bin`` (little-endian float32 parameters) and ``<stem>.json``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    flat = net.get_flat().astype("<f4")
    _sibling(stem, ".bin").write_bytes(flat.tobytes())
    meta = dict(header)
    meta["sizes"] = list(net.sizes)
    meta["n_params"] = int(flat.size)
    meta["dtype"] = "<f4"
    with open(_sibling(stem, ".json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_mlp(stem: str | Path) -> tuple[MLP, dict]:
    stem = Path(stem)
    with open(_sibling(stem, ".json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    flat = np.frombuffer(_sibling(stem, ".bin").read_bytes(), dtype="<f4").astype(np.float64)
    if flat.size != meta["n_params"]:
        raise ValueError(f"{stem}.bin holds {flat.size} values, header says {meta['n_params']}")
    sizes = meta["sizes"]
    net = MLP(sizes[0], tuple(sizes[1:-1]), sizes[-1])
    net.set_flat(flat)
    return net, meta
