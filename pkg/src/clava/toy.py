"""Planted-correlation toy databases.

Every root row draws a hidden binary regime that is not written out.  Child
rows inherit the regime of their (first) parent; group sizes, numeric means
and categorical frequencies all depend on it, so parent-child and
grandparent-grandchild correlations exist only through the foreign keys.

Spec format::

    {"tables": {"a": {"rows": 300, "numeric": 2, "categorical": 1},
                "c": {"parents": ["a"], "group_size": [1, 5], "numeric": 2},
                "d": {"parents": ["a", "b"], "group_size": [1, 3], "numeric": 2}},
     "shift": 2.0, "noise": 1.0, "categories": 3}

In a multi-parent table the first parent drives the group sizes and the other
FK columns point to uniformly drawn rows; feature column ``c`` follows the
regime of ``parents[c % len(parents)]``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .rng import make_rng
from .schema import (
    CATEGORICAL,
    FOREIGN_KEY,
    NUMERICAL,
    PRIMARY_KEY,
    ColumnSpec,
    Database,
    TableData,
    build_graph,
    table_order,
    validate_database,
    write_database,
)


def _size_range(lo: int, hi: int, regime: int) -> tuple[int, int]:
    mid = (lo + hi) // 2
    if mid + 1 > hi:
        return lo, hi
    return (lo, mid) if regime == 0 else (mid + 1, hi)


def gen_toy(spec: dict, seed: int = 0) -> Database:
    tspecs = spec["tables"]
    shift = float(spec.get("shift", 2.0))
    noise = float(spec.get("noise", 1.0))
    n_cats = int(spec.get("categories", 3))

    # build an empty schema first to get a parents-first order
    columns: dict[str, list[ColumnSpec]] = {}
    for name, t in tspecs.items():
        cols = [ColumnSpec(f"{name}_id", PRIMARY_KEY)]
        cols += [ColumnSpec(f"num{c}", NUMERICAL) for c in range(int(t.get("numeric", 0)))]
        cols += [ColumnSpec(f"cat{c}", CATEGORICAL) for c in range(int(t.get("categorical", 0)))]
        cols += [ColumnSpec(f"{p}_id", FOREIGN_KEY, p, f"{p}_id") for p in t.get("parents", [])]
        columns[name] = cols
    empty = [TableData(n, c, {x.name: np.empty(0, dtype=object) for x in c}) for n, c in columns.items()]
    graph = build_graph(empty)

    regimes: dict[str, np.ndarray] = {}
    tables: dict[str, TableData] = {}
    for name in table_order(graph):
        t = tspecs[name]
        rng = make_rng(seed, "toy", name)
        parents = list(t.get("parents", []))
        data = {}
        if not parents:
            n = int(t["rows"])
            regime = (rng.random(n) < 0.5).astype(np.int64)
            col_regimes = [regime]
        else:
            lo, hi = (int(v) for v in t.get("group_size", [1, 3]))
            first = regimes[parents[0]]
            sizes = np.array([rng.integers(*_size_range(lo, hi, int(r)), endpoint=True) for r in first], dtype=np.int64)
            fk0 = np.repeat(np.arange(len(first)), sizes)
            n = len(fk0)
            regime = first[fk0]
            fks = {parents[0]: fk0}
            for p in parents[1:]:
                fks[p] = rng.integers(0, len(regimes[p]), size=n)
            col_regimes = [regimes[p][fks[p]] for p in parents]
            for p in parents:
                data[f"{p}_id"] = np.array([str(i) for i in fks[p].tolist()], dtype=object)
        data[f"{name}_id"] = np.array([str(i) for i in range(n)], dtype=object)
        for c in range(int(t.get("numeric", 0))):
            r = col_regimes[c % len(col_regimes)]
            data[f"num{c}"] = shift * (2 * r - 1) + noise * rng.standard_normal(n) + c
        for c in range(int(t.get("categorical", 0))):
            r = col_regimes[c % len(col_regimes)]
            w0 = np.arange(n_cats, 0, -1, dtype=np.float64)
            probs = np.stack([w0 / w0.sum(), w0[::-1] / w0.sum()])
            u = rng.random(n)
            codes = (u[:, None] > np.cumsum(probs[r], axis=1)).sum(axis=1)
            data[f"cat{c}"] = np.array([f"v{k}" for k in np.minimum(codes, n_cats - 1)], dtype=object)
        regimes[name] = regime
        tables[name] = TableData(name, columns[name], data)
    validate_database(tables, graph)
    return Database(tables, graph)


def write_toy(spec: dict, out_dir: str | Path, seed: int = 0) -> Database:
    db = gen_toy(spec, seed)
    write_database(db, out_dir)
    return db


CHAIN_SPEC = {
    "tables": {
        "household": {"rows": 500, "numeric": 2, "categorical": 1},
        "person": {"parents": ["household"], "group_size": [1, 5], "numeric": 2, "categorical": 1},
        "trip": {"parents": ["person"], "group_size": [1, 2], "numeric": 2, "categorical": 1},
    },
    "shift": 2.0,
    "noise": 1.0,
    "categories": 3,
}

DIAMOND_SPEC = {
    "tables": {
        "store": {"rows": 300, "numeric": 2, "categorical": 1},
        "product": {"rows": 300, "numeric": 2, "categorical": 1},
        "sale": {"parents": ["store", "product"], "group_size": [1, 5], "numeric": 2, "categorical": 2},
    },
    "shift": 2.0,
    "noise": 1.0,
    "categories": 3,
}
