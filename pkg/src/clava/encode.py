"""Mapping between mixed-type tables and the unified numeric matrix.

Categoricals are label-encoded to integer codes 0..m-1.  Numerical columns
with at least 30 distinct values get a rank -> standard-normal quantile map;
the rest are z-scored.  Key columns never enter the matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DimensionMismatch, EmptyTable, EncodeError
from .schema import CATEGORICAL, NUMERICAL, ColumnSpec, TableData

QUANTILE = "quantile_gaussian"
ZSCORE = "zscore"
LABEL = "label_encode"

MIN_DISTINCT_FOR_QUANTILE = 30
MAX_QUANTILES = 1000


@dataclass
class ColumnTransform:
    name: str
    kind: str
    categories: list[str] = field(default_factory=list)
    references: np.ndarray | None = None
    mean: float = 0.0
    std: float = 1.0
    # "feature" for table columns, "latent" for appended cluster-label columns
    role: str = "feature"

    @property
    def is_categorical(self) -> bool:
        return self.kind == LABEL

    @property
    def levels(self) -> np.ndarray:
        n = len(self.references)
        return (np.arange(n) + 0.5) / n

    def encode(self, values: np.ndarray) -> np.ndarray:
        if self.kind == LABEL:
            index = {c: i for i, c in enumerate(self.categories)}
            try:
                return np.array([index[str(v)] for v in values], dtype=np.float64)
            except KeyError as exc:
                raise EncodeError(f"column {self.name!r}: unseen category {exc.args[0]!r}") from None
        x = np.asarray(values, dtype=np.float64)
        if self.kind == ZSCORE:
            return (x - self.mean) / self.std
        q, lv = self.references, self.levels
        # average of forward and backward interpolation maps ties to the middle level
        u = 0.5 * (np.interp(x, q, lv) - np.interp(-x, -q[::-1], -lv[::-1]))
        return ndtri(u)

    def codes(self, values: np.ndarray) -> np.ndarray:
        """Clamp-and-round a label-encoded float column to integer codes."""
        m = len(self.categories)
        return np.rint(np.clip(values, 0, m - 1)).astype(np.int64)

    def decode(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if self.kind == LABEL:
            cats = np.array(self.categories, dtype=object)
            return cats[self.codes(values)]
        if self.kind == ZSCORE:
            return values * self.std + self.mean
        return np.interp(ndtr(values), self.levels, self.references)

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "role": self.role}
        if self.kind == LABEL:
            d["categories"] = list(self.categories)
        elif self.kind == ZSCORE:
            d["mean"], d["std"] = self.mean, self.std
        else:
            d["references"] = self.references.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnTransform":
        refs = d.get("references")
        return cls(
            name=d["name"],
            kind=d["kind"],
            categories=list(d.get("categories", [])),
            references=None if refs is None else np.asarray(refs, dtype=np.float64),
            mean=d.get("mean", 0.0),
            std=d.get("std", 1.0),
            role=d.get("role", "feature"),
        )


@dataclass
class UnifiedMatrix:
    table_name: str
    column_order: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, len(self.column_order))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_order.index(name)]


def fit_label(name: str, values, role: str = "feature") -> ColumnTransform:
    # first-occurrence order
    cats = list(dict.fromkeys(str(v) for v in values))
    return ColumnTransform(name, LABEL, categories=cats, role=role)


def fit_numeric(name: str, values: np.ndarray) -> ColumnTransform:
    x = np.asarray(values, dtype=np.float64)
    if len(np.unique(x)) >= MIN_DISTINCT_FOR_QUANTILE:
        n_q = min(len(x), MAX_QUANTILES)
        refs = np.quantile(x, np.linspace(0.0, 1.0, n_q))
        return ColumnTransform(name, QUANTILE, references=refs)
    std = float(x.std())
    return ColumnTransform(name, ZSCORE, mean=float(x.mean()), std=std if std > 1e-12 else 1.0)


def fit_transforms(table: TableData) -> list[ColumnTransform]:
    if table.row_count == 0:
        raise EmptyTable(f"table {table.name!r} has no rows")
    out = []
    for c in table.feature_columns:
        if c.kind == CATEGORICAL:
            out.append(fit_label(c.name, table.data[c.name]))
        else:
            out.append(fit_numeric(c.name, table.data[c.name]))
    return out


def encode_table(table: TableData, transforms: list[ColumnTransform]) -> UnifiedMatrix:
    names = [c.name for c in table.feature_columns]
    if names != [tr.name for tr in transforms]:
        raise DimensionMismatch(
            f"table {table.name!r}: feature columns {names} do not match transforms {[t.name for t in transforms]}"
        )
    cols = [tr.encode(table.data[tr.name]) for tr in transforms]
    values = np.column_stack(cols) if cols else np.zeros((table.row_count, 0))
    return UnifiedMatrix(table.name, names, values)


def decode_matrix(matrix: UnifiedMatrix, transforms: list[ColumnTransform]) -> TableData:
    if matrix.values.shape[1] != len(transforms):
        raise DimensionMismatch(
            f"table {matrix.table_name!r}: matrix has {matrix.values.shape[1]} columns, "
            f"{len(transforms)} transforms"
        )
    columns, data = [], {}
    for j, tr in enumerate(transforms):
        columns.append(ColumnSpec(tr.name, CATEGORICAL if tr.is_categorical else NUMERICAL))
        data[tr.name] = tr.decode(matrix.values[:, j])
    return TableData(matrix.table_name, columns, data)


def save_transforms(path: str | Path, transforms: list[ColumnTransform]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([t.to_dict() for t in transforms], fh, indent=1)
        fh.write("\n")


def load_transforms(path: str | Path) -> list[ColumnTransform]:
    with open(path, encoding="utf-8") as fh:
        return [ColumnTransform.from_dict(d) for d in json.load(fh)]
