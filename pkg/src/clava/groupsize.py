"""Empirical group-size distributions conditioned on the parent's cluster label."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UnseenLabel

log = logging.getLogger(__name__)


@dataclass
class GroupSizeModel:
    # label -> {size: count}
    histograms: dict[int, dict[int, int]]
    sentinel: int
    # optional label -> centroid, used to remap labels without a histogram
    centroids: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self._tables = {}
        for label, hist in self.histograms.items():
            sizes = np.array(sorted(hist), dtype=np.int64)
            counts = np.array([hist[s] for s in sizes], dtype=np.float64)
            self._tables[label] = (sizes, np.cumsum(counts) / counts.sum())

    @property
    def labels(self) -> list[int]:
        return sorted(self.histograms)

    def probabilities(self, label: int) -> dict[int, float]:
        if label == self.sentinel:
            return {0: 1.0}
        hist = self.histograms.get(label)
        if hist is None:
            raise UnseenLabel(label, self.histograms)
        total = sum(hist.values())
        return {s: c / total for s, c in sorted(hist.items())}

    def nearest_seen(self, label: int) -> int:
        """Closest label with a histogram, by centroid distance when known."""
        seen = [s for s in self.labels if s != self.sentinel]
        if not seen:
            return self.sentinel
        if label in self.centroids and all(s in self.centroids for s in seen):
            d = [float(np.linalg.norm(self.centroids[label] - self.centroids[s])) for s in seen]
            return seen[int(np.argmin(d))]
        return min(seen, key=lambda s: (abs(s - label), s))

    def to_dict(self) -> dict:
        return {
            "sentinel": self.sentinel,
            "histograms": {str(k): {str(s): c for s, c in sorted(v.items())} for k, v in sorted(self.histograms.items())},
            "centroids": {str(k): np.asarray(v).tolist() for k, v in sorted(self.centroids.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroupSizeModel":
        hists = {int(k): {int(s): int(c) for s, c in v.items()} for k, v in d["histograms"].items()}
        cents = {int(k): np.asarray(v, dtype=np.float64) for k, v in d.get("centroids", {}).items()}
        return cls(hists, int(d["sentinel"]), cents)


def group_sizes(fk_map: np.ndarray, n_parents: int) -> np.ndarray:
    """Number of child rows per parent row (0 for childless parents)."""
    return np.bincount(np.asarray(fk_map, dtype=np.int64), minlength=n_parents)


def fit_group_sizes(assignment, fk_map: np.ndarray, centroids: np.ndarray | None = None) -> GroupSizeModel:
    """Histogram of ``|g|`` per voted parent label.

    ``centroids`` (k x d, e.g. the GMM means) enables centroid-based remapping
    of labels that never occur on a real parent.
    """
    labels = np.asarray(assignment.parent_labels, dtype=np.int64)
    sizes = group_sizes(fk_map, len(labels))
    hists: dict[int, dict[int, int]] = {}
    for label, size in zip(labels.tolist(), sizes.tolist()):
        h = hists.setdefault(label, {})
        h[size] = h.get(size, 0) + 1
    cents = {}
    if centroids is not None:
        cents = {c: np.asarray(centroids[c], dtype=np.float64) for c in range(len(centroids))}
    return GroupSizeModel(hists, assignment.sentinel, cents)


def sample_group_sizes(model: GroupSizeModel, labels, rng: np.random.Generator) -> np.ndarray:
    """One size per label by inverse-CDF lookup; raises UnseenLabel."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    u = rng.random(len(labels))
    out = np.zeros(len(labels), dtype=np.int64)
    for label in np.unique(labels).tolist():
        mask = labels == label
        if label == model.sentinel:
            continue
        if label not in model._tables:
            raise UnseenLabel(label, model.histograms)
        sizes, cdf = model._tables[label]
        idx = np.searchsorted(cdf, u[mask], side="right")
        out[mask] = sizes[np.minimum(idx, len(sizes) - 1)]
    return out


def sample_group_size(model: GroupSizeModel, label: int, rng: np.random.Generator) -> int:
    return int(sample_group_sizes(model, [label], rng)[0])


def remap_unseen(model: GroupSizeModel, labels) -> np.ndarray:
    """Replace labels without a histogram by their nearest seen label (logged)."""
    labels = np.asarray(labels, dtype=np.int64).copy()
    for label in np.unique(labels).tolist():
        if label == model.sentinel or label in model.histograms:
            continue
        target = model.nearest_seen(label)
        log.warning("label %d has no group-size support; using %d", label, target)
        labels[labels == label] = target
    return labels


def save_group_sizes(path: str | Path, model: GroupSizeModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=1)
        fh.write("\n")


def load_group_sizes(path: str | Path) -> GroupSizeModel:
    with open(path, encoding="utf-8") as fh:
        return GroupSizeModel.from_dict(json.load(fh))
