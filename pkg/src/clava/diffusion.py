"""Gaussian DDPM on unified matrices.

Epsilon-prediction with a fixed posterior variance.  Timesteps are 1-based:
``t = 1`` is the last reverse step and adds no noise.  The denoiser
standardizes its training matrix column-wise and works in that space; samples
are mapped back before they are returned.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encode import UnifiedMatrix
from .errors import BadRange, DimensionMismatch, EmptyTable, NonFiniteLoss
from .nn import MLP, AdamW, load_mlp, save_mlp, sinusoidal_embedding

log = logging.getLogger(__name__)

SAMPLE_CHUNK = 8192


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "alphas", 1.0 - b)
        ab = np.cumprod(1.0 - b)
        object.__setattr__(self, "alpha_bars", ab)
        prev = np.concatenate([[1.0], ab[:-1]])
        object.__setattr__(self, "alpha_bars_prev", prev)
        object.__setattr__(self, "posterior_variance", b * (1.0 - prev) / (1.0 - ab))

    @property
    def T(self) -> int:
        return len(self.betas)

    def to_dict(self) -> dict:
        return {"betas": self.betas.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(np.asarray(d["betas"], dtype=np.float64))


def default_beta_range(T: int) -> tuple[float, float]:
    """1e-4..0.02 for T >= 1000, stretched by 1000/T for shorter chains so the
    forward process still ends near pure noise."""
    scale = max(1.0, 1000.0 / T)
    return 1e-4 * scale, min(0.02 * scale, 0.999)


def make_schedule(T: int, kind: str = "linear", beta_min: float | None = None,
                  beta_max: float | None = None) -> NoiseSchedule:
    if kind != "linear":
        raise BadRange(f"unsupported schedule kind {kind!r}")
    if T < 1:
        raise BadRange(f"timesteps must be >= 1, got {T}")
    lo, hi = default_beta_range(T)
    beta_min = lo if beta_min is None else beta_min
    beta_max = hi if beta_max is None else beta_max
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise BadRange(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    if T > 1 and beta_min == beta_max:
        raise BadRange("beta_min must be < beta_max when T > 1")
    return NoiseSchedule(np.linspace(beta_min, beta_max, T))


def q_sample(x0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward noising ``sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``."""
    t = np.asarray(t)
    ab = schedule.alpha_bars[t - 1]
    if ab.ndim == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


@dataclass
class DiffusionConfig:
    iterations: int = 5000
    lr: float = 6e-4
    batch_size: int = 256
    layers: tuple[int, ...] = (128, 256, 256, 128)
    weight_decay: float = 1e-4
    seed: int = 0
    log_every: int = 1000


class Denoiser:
    """Noise predictor ``eps_hat(x_t, t)`` plus the column standardization."""

    def __init__(self, net: MLP, shift: np.ndarray, scale: np.ndarray, columns: list[str]):
        self.net = net
        self.shift = np.asarray(shift, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.columns = list(columns)
        self.loss_history: list[float] = []

    @property
    def feature_dim(self) -> int:
        return self.net.sizes[0]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.shift) / self.scale

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.scale + self.shift

    def _embed(self, t, n: int) -> np.ndarray:
        t = np.broadcast_to(np.asarray(t), (n,))
        return sinusoidal_embedding(t, self.net.sizes[1])

    def predict_noise(self, x_t: np.ndarray, t) -> np.ndarray:
        return self.net(x_t, self._embed(t, x_t.shape[0]))

    def loss_and_grads(self, x_t: np.ndarray, t, eps: np.ndarray):
        """Batch loss ``mean_b ||eps - eps_hat||^2`` and its parameter gradients."""
        out, cache = self.net.forward(x_t, self._embed(t, x_t.shape[0]))
        diff = out - eps
        loss = float(np.mean(np.sum(diff * diff, axis=1)))
        grads, _ = self.net.backward(cache, 2.0 * diff / x_t.shape[0])
        return loss, grads

    def save(self, stem: str | Path, schedule: NoiseSchedule, extra: dict | None = None) -> None:
        header = {
            "kind": "denoiser",
            "columns": self.columns,
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
            "schedule": schedule.to_dict(),
        }
        header.update(extra or {})
        save_mlp(stem, self.net, header)

    @classmethod
    def load(cls, stem: str | Path) -> tuple["Denoiser", NoiseSchedule, dict]:
        net, meta = load_mlp(stem)
        den = cls(net, meta["shift"], meta["scale"], meta["columns"])
        return den, NoiseSchedule.from_dict(meta["schedule"]), meta


@dataclass
class DiffusionBundle:
    """Everything needed to sample one table: schedule, denoiser and, for
    child tables, the label classifier and group-size model of each edge."""

    table: str
    schedule: NoiseSchedule
    denoiser: Denoiser
    transforms: list = field(default_factory=list)
    classifiers: dict = field(default_factory=dict)
    group_sizes: dict = field(default_factory=dict)


def column_standardization(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shift = values.mean(axis=0)
    std = values.std(axis=0)
    return shift, np.where(std > 1e-8, std, 1.0)


def _as_values(matrix) -> tuple[np.ndarray, list[str]]:
    if isinstance(matrix, UnifiedMatrix):
        return matrix.values, list(matrix.column_order)
    values = np.asarray(matrix, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    return values, [f"x{i}" for i in range(values.shape[1])]


def train_denoiser(matrix, schedule: NoiseSchedule, config: DiffusionConfig | None = None) -> Denoiser:
    config = config or DiffusionConfig()
    values, columns = _as_values(matrix)
    if values.shape[0] == 0:
        raise EmptyTable("cannot train a denoiser on an empty matrix")
    rng = np.random.default_rng(config.seed)
    shift, scale = column_standardization(values)
    data = (values - shift) / scale
    n, d = data.shape
    net = MLP(d, tuple(config.layers), d, rng)
    den = Denoiser(net, shift, scale, columns)
    opt = AdamW(net.params, config.lr, config.weight_decay)
    batch = min(config.batch_size, n) if config.batch_size > 0 else n
    running = 0.0
    for it in range(1, config.iterations + 1):
        idx = rng.integers(0, n, size=batch)
        x0 = data[idx]
        t = rng.integers(1, schedule.T + 1, size=batch)
        eps = rng.standard_normal((batch, d))
        loss, grads = den.loss_and_grads(q_sample(x0, t, eps, schedule), t, eps)
        if not np.isfinite(loss):
            norms = ", ".join(f"{np.linalg.norm(p):.3g}" for p in net.params)
            raise NonFiniteLoss(f"denoiser loss became {loss} at iteration {it}; parameter norms: {norms}")
        den.loss_history.append(loss)
        opt.step(net.params, grads)
        running += loss
        if config.log_every and it % config.log_every == 0:
            log.info("denoiser iter %d/%d loss %.4f", it, config.iterations, running / config.log_every)
            running = 0.0
    return den


def reverse_mean(x_t: np.ndarray, t: int, denoiser, schedule: NoiseSchedule) -> np.ndarray:
    eps_hat = denoiser.predict_noise(x_t, t)
    beta = schedule.betas[t - 1]
    return (x_t - beta / np.sqrt(1.0 - schedule.alpha_bars[t - 1]) * eps_hat) / np.sqrt(schedule.alphas[t - 1])


def reverse_step(x_t: np.ndarray, t: int, denoiser, schedule: NoiseSchedule, z: np.ndarray | None) -> np.ndarray:
    """One ancestral step ``x_t -> x_{t-1}`` (no noise at t = 1)."""
    if not 1 <= t <= schedule.T:
        raise BadRange(f"t={t} outside 1..{schedule.T}")
    mu = reverse_mean(x_t, t, denoiser, schedule)
    if t == 1 or z is None:
        return mu
    return mu + np.sqrt(schedule.posterior_variance[t - 1]) * z


def run_chain(denoiser, schedule: NoiseSchedule, n_rows: int, rng: np.random.Generator,
              guide=None) -> np.ndarray:
    """Full reverse chain in the denoiser's normalized space.

    ``guide(x_t, t)``, when given, returns the mean offset to add at step t.
    """
    d = denoiser.feature_dim
    x = rng.standard_normal((n_rows, d))
    for t in range(schedule.T, 0, -1):
        mu = reverse_mean(x, t, denoiser, schedule)
        if guide is not None:
            mu = mu + guide(x, t)
        if t > 1:
            x = mu + np.sqrt(schedule.posterior_variance[t - 1]) * rng.standard_normal((n_rows, d))
        else:
            x = mu
    return x


def sample(denoiser: Denoiser, schedule: NoiseSchedule, n_rows: int, seed: int = 0,
           table_name: str = "") -> UnifiedMatrix:
    rng = np.random.default_rng(seed)
    chunks = []
    for start in range(0, n_rows, SAMPLE_CHUNK):
        n = min(SAMPLE_CHUNK, n_rows - start)
        chunks.append(run_chain(denoiser, schedule, n, rng))
    x = np.concatenate(chunks) if chunks else np.zeros((0, denoiser.feature_dim))
    return UnifiedMatrix(table_name, denoiser.columns, denoiser.denormalize(x))


def check_same_space(denoiser: Denoiser, other) -> None:
    if denoiser.feature_dim != other.feature_dim or not (
        np.allclose(denoiser.shift, other.shift) and np.allclose(denoiser.scale, other.scale)
    ):
        raise DimensionMismatch("classifier and denoiser were trained on different feature spaces")


def config_dict(config) -> dict:
    d = asdict(config)
    d["layers"] = list(d["layers"])
    return d
