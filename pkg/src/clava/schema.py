"""Multi-table datasets: column specs, tables, the foreign-key DAG and joins.

A dataset directory holds ``dataset_meta.json`` plus one ``<table>.csv`` per
declared table::

    {"tables": {"loan": {"primary_key": "loan_id",
                         "columns": [{"name": "amount", "kind": "numerical"}],
                         "foreign_keys": [{"column": "account_id",
                                           "parent_table": "account",
                                           "parent_column": "account_id"}]}}}

Tables are stored column-major (one numpy array per column); numerical
columns are float64, everything else is an object array of strings.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import networkx as nx
import numpy as np

from .errors import (
    CycleDetected,
    DanglingForeignKey,
    Disconnected,
    DuplicatePrimaryKey,
    MissingTable,
    SchemaError,
    TypeParseError,
    UnknownTable,
)

META_FILE = "dataset_meta.json"

NUMERICAL = "numerical"
CATEGORICAL = "categorical"
PRIMARY_KEY = "primary_key"
FOREIGN_KEY = "foreign_key"
KINDS = (NUMERICAL, CATEGORICAL, PRIMARY_KEY, FOREIGN_KEY)


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    parent_table: str | None = None
    parent_column: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        is_fk = self.kind == FOREIGN_KEY
        if is_fk != (self.parent_table is not None and self.parent_column is not None):
            raise SchemaError(
                f"column {self.name!r}: parent_table/parent_column must be set iff kind is foreign_key"
            )

    @property
    def is_key(self) -> bool:
        return self.kind in (PRIMARY_KEY, FOREIGN_KEY)


@dataclass
class TableData:
    name: str
    columns: list[ColumnSpec]
    data: dict[str, np.ndarray]

    def __post_init__(self):
        lengths = {len(self.data[c.name]) for c in self.columns}
        if len(lengths) > 1:
            raise SchemaError(f"table {self.name!r}: columns have differing lengths {sorted(lengths)}")

    @property
    def row_count(self) -> int:
        if not self.columns:
            return 0
        return len(self.data[self.columns[0].name])

    def spec(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"table {self.name!r} has no column {name!r}")

    @property
    def primary_key(self) -> ColumnSpec | None:
        for c in self.columns:
            if c.kind == PRIMARY_KEY:
                return c
        return None

    @property
    def foreign_keys(self) -> list[ColumnSpec]:
        return [c for c in self.columns if c.kind == FOREIGN_KEY]

    @property
    def feature_columns(self) -> list[ColumnSpec]:
        return [c for c in self.columns if not c.is_key]

    def row(self, i: int) -> tuple:
        return tuple(self.data[c.name][i] for c in self.columns)


@dataclass(frozen=True, order=True)
class Edge:
    """Foreign-key edge ``child.fk_column -> parent`` (child refers to parent)."""

    child: str
    parent: str
    fk_column: str

    @property
    def name(self) -> str:
        return f"{self.child}__{self.parent}"

    def __str__(self) -> str:
        return f"{self.child}->{self.parent}"


@dataclass(frozen=True)
class ConstraintGraph:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    depth: int = field(init=False)

    def __post_init__(self):
        g = self.digraph()
        if not nx.is_directed_acyclic_graph(g):
            cycle = nx.find_cycle(g)
            raise CycleDetected("foreign keys form a cycle: " + " -> ".join(u for u, _ in cycle))
        # longest path counted in nodes, not edges
        object.__setattr__(self, "depth", nx.dag_longest_path_length(g) + 1 if self.nodes else 0)

    def digraph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from((e.child, e.parent) for e in self.edges)
        return g

    def parent_edges(self, table: str) -> list[Edge]:
        return sorted(e for e in self.edges if e.child == table)

    def child_edges(self, table: str) -> list[Edge]:
        return sorted(e for e in self.edges if e.parent == table)

    def roots(self) -> list[str]:
        children = {e.child for e in self.edges}
        return sorted(n for n in self.nodes if n not in children)

    def edge(self, child: str, parent: str) -> Edge:
        for e in self.edges:
            if e.child == child and e.parent == parent:
                return e
        raise UnknownTable(f"no foreign key {child}->{parent}")


class Database(NamedTuple):
    tables: dict[str, TableData]
    graph: ConstraintGraph


def build_graph(tables: Iterable[TableData]) -> ConstraintGraph:
    tables = list(tables)
    names = {t.name for t in tables}
    edges = []
    seen_pairs = set()
    for t in tables:
        for c in t.foreign_keys:
            if c.parent_table not in names:
                raise MissingTable(f"table {t.name!r} column {c.name!r} refers to undeclared table {c.parent_table!r}")
            if (t.name, c.parent_table) in seen_pairs:
                raise SchemaError(
                    f"table {t.name!r} has more than one foreign key to {c.parent_table!r}; "
                    "only one key per parent-child pair is supported"
                )
            seen_pairs.add((t.name, c.parent_table))
            edges.append(Edge(t.name, c.parent_table, c.name))
    return ConstraintGraph(tuple(sorted(names)), tuple(sorted(edges)))


# ---------------------------------------------------------------------------
# loading / writing


def _parse_meta(meta: dict) -> dict[str, list[ColumnSpec]]:
    if "tables" not in meta or not isinstance(meta["tables"], dict):
        raise SchemaError(f"{META_FILE}: missing 'tables' object")
    specs: dict[str, list[ColumnSpec]] = {}
    for name, tmeta in meta["tables"].items():
        if not isinstance(tmeta, dict) or not isinstance(tmeta.get("columns", []), list) \
                or not isinstance(tmeta.get("foreign_keys", []), list):
            raise SchemaError(f"table {name!r}: expected an object with 'columns' and 'foreign_keys' lists")
        cols: list[ColumnSpec] = []
        pk = tmeta.get("primary_key")
        if isinstance(pk, (list, tuple)):
            if len(pk) != 1:
                raise SchemaError(f"table {name!r}: composite primary keys are not supported")
            pk = pk[0]
        if pk is not None:
            cols.append(ColumnSpec(pk, PRIMARY_KEY))
        for c in tmeta.get("columns", []):
            if not isinstance(c, dict) or "name" not in c:
                raise SchemaError(f"table {name!r}: every column needs an object with a 'name'")
            kind = c.get("kind")
            if kind not in (NUMERICAL, CATEGORICAL):
                raise SchemaError(f"table {name!r} column {c.get('name')!r}: kind must be numerical or categorical")
            cols.append(ColumnSpec(c["name"], kind))
        for fk in tmeta.get("foreign_keys", []):
            if not isinstance(fk, dict) or not {"column", "parent_table", "parent_column"} <= set(fk):
                raise SchemaError(f"table {name!r}: foreign keys need column, parent_table and parent_column")
            cols.append(ColumnSpec(fk["column"], FOREIGN_KEY, fk["parent_table"], fk["parent_column"]))
        names = [c.name for c in cols]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise SchemaError(f"table {name!r}: column(s) declared twice: {sorted(dupes)}")
        specs[name] = cols
    return specs


def _read_csv(path: Path, name: str, cols: list[ColumnSpec]) -> TableData:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TypeParseError(f"table {name!r}: {path.name} is empty (no header row)") from None
        declared = {c.name for c in cols}
        missing = declared - set(header)
        if missing:
            raise SchemaError(f"table {name!r}: CSV lacks declared column(s) {sorted(missing)}")
        extra = [h for h in header if h not in declared]
        if extra:
            raise SchemaError(f"table {name!r}: CSV has undeclared column(s) {extra}")
        pos = {h: i for i, h in enumerate(header)}
        raw: dict[str, list] = {c.name: [] for c in cols}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise TypeParseError(
                    f"table {name!r} row {lineno}: expected {len(header)} cells, got {len(row)}"
                )
            for c in cols:
                raw[c.name].append(row[pos[c.name]])

    data = {}
    for c in cols:
        values = raw[c.name]
        if c.kind == NUMERICAL:
            out = np.empty(len(values), dtype=np.float64)
            for i, v in enumerate(values):
                try:
                    f = float(v)
                except ValueError:
                    raise TypeParseError(
                        f"table {name!r} column {c.name!r} row {i + 2}: {v!r} is not a number"
                    ) from None
                if not math.isfinite(f):
                    raise TypeParseError(f"table {name!r} column {c.name!r} row {i + 2}: non-finite value {v!r}")
                out[i] = f
            data[c.name] = out
        else:
            for i, v in enumerate(values):
                if v == "":
                    raise TypeParseError(f"table {name!r} column {c.name!r} row {i + 2}: missing value")
            data[c.name] = np.array(values, dtype=object)
    return TableData(name, cols, data)


def load_database(dir_path: str | Path) -> Database:
    """Read and validate a dataset directory."""
    root = Path(dir_path)
    meta_path = root / META_FILE
    if not meta_path.is_file():
        raise MissingTable(f"{meta_path} not found")
    with open(meta_path, encoding="utf-8") as fh:
        specs = _parse_meta(json.load(fh))
    tables = {}
    for name in sorted(specs):
        path = root / f"{name}.csv"
        if not path.is_file():
            raise MissingTable(f"table {name!r}: {path.name} not found in {root}")
        tables[name] = _read_csv(path, name, specs[name])
    graph = build_graph(tables.values())
    validate_database(tables, graph)
    return Database(tables, graph)


def validate_database(tables: dict[str, TableData], graph: ConstraintGraph) -> None:
    """Key uniqueness, referential integrity and numeric finiteness.

    Used on both real and synthetic databases.
    """
    for name in graph.nodes:
        if name not in tables:
            raise MissingTable(f"table {name!r} missing")
    for t in tables.values():
        pk = t.primary_key
        if pk is not None:
            vals = t.data[pk.name]
            uniq, counts = np.unique(vals.astype(str), return_counts=True)
            if len(uniq) != len(vals):
                dup = uniq[counts > 1][0]
                raise DuplicatePrimaryKey(f"table {t.name!r} column {pk.name!r}: duplicate key {dup!r}")
        for c in t.feature_columns:
            if c.kind == NUMERICAL and not np.all(np.isfinite(t.data[c.name])):
                raise TypeParseError(f"table {t.name!r} column {c.name!r}: non-finite value")
    for e in graph.edges:
        child, parent = tables[e.child], tables[e.parent]
        ppk = parent.primary_key
        fk = child.spec(e.fk_column)
        if ppk is None or ppk.name != fk.parent_column:
            raise SchemaError(
                f"table {e.child!r} column {e.fk_column!r} must reference the primary key of {e.parent!r}"
            )
        known = set(parent.data[ppk.name].tolist())
        for i, v in enumerate(child.data[e.fk_column].tolist()):
            if v not in known:
                raise DanglingForeignKey(
                    f"table {e.child!r} column {e.fk_column!r} row {i + 2}: {v!r} not found in {e.parent}.{ppk.name}"
                )


def _format_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def database_meta(specs: dict[str, list[ColumnSpec]]) -> dict:
    """``dataset_meta.json`` content for the given column specs."""
    meta = {"tables": {}}
    for name in sorted(specs):
        cols = specs[name]
        pk = [c for c in cols if c.kind == PRIMARY_KEY]
        meta["tables"][name] = {
            "primary_key": pk[0].name if pk else None,
            "columns": [{"name": c.name, "kind": c.kind} for c in cols if not c.is_key],
            "foreign_keys": [
                {"column": c.name, "parent_table": c.parent_table, "parent_column": c.parent_column}
                for c in cols
                if c.kind == FOREIGN_KEY
            ],
        }
    return meta


def schema_from_meta(meta: dict) -> tuple[dict[str, list[ColumnSpec]], ConstraintGraph]:
    specs = _parse_meta(meta)
    empty = [TableData(n, cols, {c.name: np.empty(0, dtype=object) for c in cols}) for n, cols in specs.items()]
    return specs, build_graph(empty)


def write_database(db: Database, dir_path: str | Path) -> None:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    meta = database_meta({name: t.columns for name, t in db.tables.items()})
    for name in sorted(db.tables):
        t = db.tables[name]
        with open(root / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([c.name for c in t.columns])
            cols = [t.data[c.name] for c in t.columns]
            for i in range(t.row_count):
                w.writerow([_format_cell(col[i]) for col in cols])
    with open(root / META_FILE, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# graph queries


def topo_order(graph: ConstraintGraph, direction: str = "bottom_up") -> list[Edge]:
    """Order edges so that children are handled before (bottom_up) or after
    (top_down) their parents.

    bottom_up: edge (i->j) comes after every edge (.->i).
    top_down:  edge (i->j) comes before every edge (.->i).
    Among ready edges the smallest (child, parent) pair goes first, which makes
    the result the lexicographically smallest valid order.
    """
    if direction not in ("bottom_up", "top_down"):
        raise ValueError(f"direction must be bottom_up or top_down, not {direction!r}")
    edges = sorted(graph.edges)
    blockers: dict[Edge, set[Edge]] = {}
    for e in edges:
        if direction == "bottom_up":
            blockers[e] = {f for f in edges if f.parent == e.child}
        else:
            blockers[e] = {f for f in edges if f.child == e.parent}
    waiting_on = {e: len(b) for e, b in blockers.items()}
    unblocks: dict[Edge, list[Edge]] = defaultdict(list)
    for e, b in blockers.items():
        for f in b:
            unblocks[f].append(e)
    heap = [e for e in edges if waiting_on[e] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        e = heapq.heappop(heap)
        order.append(e)
        for nxt in unblocks[e]:
            waiting_on[nxt] -= 1
            if waiting_on[nxt] == 0:
                heapq.heappush(heap, nxt)
    if len(order) != len(edges):
        raise CycleDetected("foreign-key graph has a cycle")
    return order


def table_order(graph: ConstraintGraph) -> list[str]:
    """Tables with every parent listed before its children (ties by name)."""
    return list(nx.lexicographical_topological_sort(graph.digraph().reverse(copy=True)))


def _check_table(graph: ConstraintGraph, name: str) -> None:
    if name not in graph.nodes:
        raise UnknownTable(f"unknown table {name!r}")


def hop_distance(graph: ConstraintGraph, table_a: str, table_b: str) -> int | None:
    """Edge count of the shortest undirected FK path, or None if disconnected."""
    _check_table(graph, table_a)
    _check_table(graph, table_b)
    try:
        return nx.shortest_path_length(graph.digraph().to_undirected(), table_a, table_b)
    except nx.NetworkXNoPath:
        return None


def fk_parent_index(tables: dict[str, TableData], edge: Edge) -> np.ndarray:
    """Row index into the parent table for every child row."""
    child, parent = tables[edge.child], tables[edge.parent]
    pk = parent.primary_key
    lookup = {v: i for i, v in enumerate(parent.data[pk.name].tolist())}
    try:
        return np.array([lookup[v] for v in child.data[edge.fk_column].tolist()], dtype=np.int64)
    except KeyError as exc:
        raise DanglingForeignKey(
            f"table {edge.child!r} column {edge.fk_column!r}: {exc.args[0]!r} not in {edge.parent}"
        ) from None


def _expand_to_children(pairs: np.ndarray, parent_idx: np.ndarray) -> np.ndarray:
    """Replace the right-hand (parent) index of each pair with all its children."""
    order = np.argsort(parent_idx, kind="stable")
    sorted_parents = parent_idx[order]
    starts = np.searchsorted(sorted_parents, pairs[:, 1], side="left")
    stops = np.searchsorted(sorted_parents, pairs[:, 1], side="right")
    counts = stops - starts
    left = np.repeat(pairs[:, 0], counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    right = order[np.repeat(starts, counts) + offsets]
    return np.column_stack([left, right])


def join_path_rows(
    tables: dict[str, TableData], graph: ConstraintGraph, table_a: str, table_b: str
) -> np.ndarray:
    """Row-index pairs ``(row in a, row in b)`` joined along the shortest FK path(s).

    When several shortest paths exist the pair sets are unioned.  Returns an
    ``(n, 2)`` int64 array sorted lexicographically.
    """
    _check_table(graph, table_a)
    _check_table(graph, table_b)
    if table_a == table_b:
        idx = np.arange(tables[table_a].row_count, dtype=np.int64)
        return np.column_stack([idx, idx])
    directed = graph.digraph()
    undirected = directed.to_undirected()
    try:
        paths = sorted(nx.all_shortest_paths(undirected, table_a, table_b))
    except nx.NetworkXNoPath:
        raise Disconnected(f"tables {table_a!r} and {table_b!r} are not connected") from None
    fk_cache: dict[Edge, np.ndarray] = {}
    results = []
    for path in paths:
        idx = np.arange(tables[table_a].row_count, dtype=np.int64)
        pairs = np.column_stack([idx, idx])
        for cur, nxt in zip(path, path[1:]):
            if directed.has_edge(cur, nxt):
                e = graph.edge(cur, nxt)
                if e not in fk_cache:
                    fk_cache[e] = fk_parent_index(tables, e)
                pairs = np.column_stack([pairs[:, 0], fk_cache[e][pairs[:, 1]]])
            else:
                e = graph.edge(nxt, cur)
                if e not in fk_cache:
                    fk_cache[e] = fk_parent_index(tables, e)
                pairs = _expand_to_children(pairs, fk_cache[e])
        results.append(pairs)
    out = np.unique(np.concatenate(results), axis=0) if results else np.empty((0, 2), np.int64)
    return out.astype(np.int64).reshape(-1, 2)
