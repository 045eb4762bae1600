"""Relationship-aware latent learning.

For every foreign-key edge (child -> parent) the child rows are joined with
their parent rows, the parent block is weighted by ``parent_scale``, and a
diagonal Gaussian mixture is fitted on the joint space.  Each foreign-key
group then takes the majority label of its rows; that label becomes a new
column on the parent (for the parent diffusion model) and on the child (as the
classifier target).  Edges are processed bottom-up so that a child already
carries the labels of its own children when it is clustered with its parent.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encode import ColumnTransform, UnifiedMatrix, encode_table, fit_transforms, LABEL
from .errors import DimensionMismatch, InsufficientRows, OrphanChildRow
from .rng import derive_seed
from .schema import Database, Edge, fk_parent_index, topo_order

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    parent_scale: float = 1.0
    log_likelihood: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def feature_dim(self) -> int:
        return self.means.shape[1]

    def component_log_prob(self, H: np.ndarray) -> np.ndarray:
        """log pi_c + log N(h; mu_c, diag(var_c)), shape (n, k)."""
        H = np.asarray(H, dtype=np.float64)
        if H.ndim != 2 or H.shape[1] != self.feature_dim:
            raise DimensionMismatch(f"GMM expects {self.feature_dim} features, got shape {H.shape}")
        out = np.empty((H.shape[0], self.k))
        for c in range(self.k):
            diff = H - self.means[c]
            out[:, c] = -0.5 * (
                np.sum(diff * diff / self.variances[c], axis=1)
                + np.sum(np.log(self.variances[c]))
                + self.feature_dim * _LOG_2PI
            )
        with np.errstate(divide="ignore"):
            return out + np.log(self.weights)

    def predict(self, H: np.ndarray) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the smallest label on ties
        return np.argmax(self.component_log_prob(H), axis=1)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "parent_scale": self.parent_scale,
            "log_likelihood": list(self.log_likelihood),
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        k = len(d["weights"])
        return cls(
            np.asarray(d["weights"], dtype=np.float64),
            np.asarray(d["means"], dtype=np.float64).reshape(k, -1),
            np.asarray(d["variances"], dtype=np.float64).reshape(k, -1),
            d.get("parent_scale", 1.0),
            list(d.get("log_likelihood", [])),
            d.get("converged", False),
        )


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True)))[:, 0]


def _kmeans_pp(H: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = H.shape[0]
    centers = [H[rng.integers(n)]]
    d2 = np.sum((H - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers.append(H[idx])
        d2 = np.minimum(d2, np.sum((H - H[idx]) ** 2, axis=1))
    return np.array(centers)


def _m_step(H: np.ndarray, resp: np.ndarray, var_floor: float):
    n = H.shape[0]
    nk = resp.sum(axis=0) + 10 * np.finfo(np.float64).eps
    weights = nk / n
    means = (resp.T @ H) / nk[:, None]
    variances = np.empty_like(means)
    for c in range(resp.shape[1]):
        diff = H - means[c]
        variances[c] = (resp[:, c] @ (diff * diff)) / nk[c]
    return weights / weights.sum(), means, np.maximum(variances, var_floor)


def fit_gmm(
    H: np.ndarray,
    k: int,
    seed: int = 0,
    *,
    max_iter: int = 200,
    tol: float = 1e-6,
    var_floor: float = VAR_FLOOR,
    parent_scale: float = 1.0,
) -> GmmModel:
    """Diagonal-covariance GMM by EM from a k-means++ start.

    Stops when the mean per-row log-likelihood improves by less than ``tol``
    or after ``max_iter`` E/M rounds.
    """
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {H.shape}")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = H.shape[0]
    if n < k:
        raise InsufficientRows(f"cannot fit {k} clusters on {n} rows")
    rng = np.random.default_rng(seed)

    centers = _kmeans_pp(H, k, rng)
    d2 = np.stack([np.sum((H - c) ** 2, axis=1) for c in centers], axis=1)
    resp = np.zeros((n, k))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    model = GmmModel(*_m_step(H, resp, var_floor), parent_scale=parent_scale)

    prev = -np.inf
    for _ in range(max_iter):
        logp = model.component_log_prob(H)
        norm = _logsumexp_rows(logp)
        ll = float(norm.mean())
        model.log_likelihood.append(ll)
        if ll - prev < tol:
            model.converged = True
            break
        prev = ll
        resp = np.exp(logp - norm[:, None])
        model.weights, model.means, model.variances = _m_step(H, resp, var_floor)
    return model


@dataclass
class LatentAssignment:
    child: str
    parent: str
    k: int
    parent_labels: np.ndarray
    child_labels: np.ndarray
    raw_child_labels: np.ndarray
    agree_rates: np.ndarray

    @property
    def sentinel(self) -> int:
        return self.k

    @property
    def avg_agree_rate(self) -> float:
        return float(self.agree_rates.mean()) if len(self.agree_rates) else 1.0

    def to_dict(self) -> dict:
        return {
            "child": self.child,
            "parent": self.parent,
            "k": self.k,
            "parent_labels": self.parent_labels.tolist(),
            "child_labels": self.child_labels.tolist(),
            "raw_child_labels": self.raw_child_labels.tolist(),
            "agree_rates": self.agree_rates.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatentAssignment":
        return cls(
            d["child"],
            d["parent"],
            d["k"],
            np.asarray(d["parent_labels"], dtype=np.int64),
            np.asarray(d["child_labels"], dtype=np.int64),
            np.asarray(d["raw_child_labels"], dtype=np.int64),
            np.asarray(d["agree_rates"], dtype=np.float64),
        )


def build_joint(
    child_matrix: UnifiedMatrix | np.ndarray,
    parent_matrix: UnifiedMatrix | np.ndarray,
    fk_map: np.ndarray,
    parent_scale: float,
) -> np.ndarray:
    """Rows ``[x ; parent_scale * y_parent(x)]``, one per child row."""
    if parent_scale < 0:
        raise ValueError("parent_scale must be >= 0")
    X = child_matrix.values if isinstance(child_matrix, UnifiedMatrix) else np.asarray(child_matrix, float)
    Y = parent_matrix.values if isinstance(parent_matrix, UnifiedMatrix) else np.asarray(parent_matrix, float)
    fk_map = np.asarray(fk_map)
    if len(fk_map) != X.shape[0]:
        raise OrphanChildRow(f"{X.shape[0]} child rows but {len(fk_map)} foreign-key entries")
    bad = (fk_map < 0) | (fk_map >= Y.shape[0])
    if np.any(bad):
        raise OrphanChildRow(f"child row {int(np.flatnonzero(bad)[0])} has no parent row")
    return np.hstack([X, parent_scale * Y[fk_map]])


def assign_and_vote(
    model: GmmModel, H: np.ndarray, fk_map: np.ndarray, n_parents: int, *, child: str = "", parent: str = ""
) -> LatentAssignment:
    raw = model.predict(H)
    return vote(raw, fk_map, n_parents, model.k, child=child, parent=parent)


def vote(
    raw_labels: np.ndarray, fk_map: np.ndarray, n_parents: int, k: int, *, child: str = "", parent: str = ""
) -> LatentAssignment:
    """Majority label per foreign-key group (ties -> smaller label)."""
    raw_labels = np.asarray(raw_labels, dtype=np.int64)
    fk_map = np.asarray(fk_map, dtype=np.int64)
    counts = np.bincount(fk_map * k + raw_labels, minlength=n_parents * k).reshape(n_parents, k)
    sizes = counts.sum(axis=1)
    mode = np.argmax(counts, axis=1)
    parent_labels = np.where(sizes > 0, mode, k)
    has_children = sizes > 0
    agree = counts[has_children, mode[has_children]] / sizes[has_children]
    return LatentAssignment(
        child, parent, k, parent_labels, parent_labels[fk_map], raw_labels, agree.astype(np.float64)
    )


def standardize(values: np.ndarray) -> np.ndarray:
    mean = values.mean(axis=0) if len(values) else np.zeros(values.shape[1])
    std = values.std(axis=0) if len(values) else np.ones(values.shape[1])
    return (values - mean) / np.where(std > 1e-12, std, 1.0)


def latent_column_name(edge: Edge) -> str:
    return f"latent:{edge.name}"


def latent_transform(edge: Edge, labels: np.ndarray) -> ColumnTransform:
    cats = [str(v) for v in sorted(set(np.asarray(labels).tolist()))]
    return ColumnTransform(latent_column_name(edge), LABEL, categories=cats, role="latent")


@dataclass
class AugmentedTable:
    """A table's encoded features followed by one latent-label column per child edge."""

    name: str
    transforms: list[ColumnTransform]
    values: np.ndarray

    def matrix(self) -> UnifiedMatrix:
        return UnifiedMatrix(self.name, [t.name for t in self.transforms], self.values)

    @property
    def base_width(self) -> int:
        return sum(1 for t in self.transforms if t.role == "feature")


@dataclass
class Augmentation:
    tables: dict[str, AugmentedTable]
    base_transforms: dict[str, list[ColumnTransform]]
    models: dict[Edge, GmmModel]
    assignments: dict[Edge, LatentAssignment]
    fk_maps: dict[Edge, np.ndarray]


def _edge_k(k_clusters: int | dict, edge: Edge) -> int:
    if isinstance(k_clusters, dict):
        return int(k_clusters.get(edge.name, k_clusters.get("default", 20)))
    return int(k_clusters)


def augment_tables(
    db: Database, parent_scale: float = 1.0, k_clusters: int | dict = 20, seed: int = 0
) -> Augmentation:
    """Latent learning and table augmentation over the whole database."""
    tables, graph = db
    base_transforms = {name: fit_transforms(t) for name, t in tables.items()}
    aug = {
        name: AugmentedTable(name, list(base_transforms[name]), encode_table(t, base_transforms[name]).values)
        for name, t in tables.items()
    }
    models, assignments, fk_maps = {}, {}, {}
    for edge in topo_order(graph, "bottom_up"):
        child_aug = aug[edge.child]
        parent_base = aug[edge.parent].values[:, : aug[edge.parent].base_width]
        fk_map = fk_parent_index(tables, edge)
        H = build_joint(standardize(child_aug.values), standardize(parent_base), fk_map, parent_scale)
        k = _edge_k(k_clusters, edge)
        if H.shape[0] < k:
            log.warning("edge %s: only %d child rows, reducing k from %d", edge, H.shape[0], k)
            k = max(H.shape[0], 1)
        gmm = fit_gmm(H, k, seed=derive_seed(seed, "gmm", edge.name), parent_scale=parent_scale)
        assignment = assign_and_vote(gmm, H, fk_map, tables[edge.parent].row_count, child=edge.child, parent=edge.parent)
        log.info(
            "edge %s: k=%d, EM iterations=%d, avg agree rate=%.3f",
            edge, k, len(gmm.log_likelihood), assignment.avg_agree_rate,
        )
        tr = latent_transform(edge, assignment.parent_labels)
        parent_aug = aug[edge.parent]
        parent_aug.transforms.append(tr)
        parent_aug.values = np.column_stack([parent_aug.values, tr.encode(assignment.parent_labels.astype(str))])
        models[edge], assignments[edge], fk_maps[edge] = gmm, assignment, fk_map
    return Augmentation(aug, base_transforms, models, assignments, fk_maps)


def save_latents(path: str | Path, model: GmmModel, assignment: LatentAssignment) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"gmm": model.to_dict(), "assignment": assignment.to_dict()}, fh)
        fh.write("\n")


def load_latents(path: str | Path) -> tuple[GmmModel, LatentAssignment]:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return GmmModel.from_dict(d["gmm"]), LatentAssignment.from_dict(d["assignment"])
