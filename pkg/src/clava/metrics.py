"""Multi-table fidelity metrics.

All scores are complements of a distance, so 1.0 means identical
distributions.  ``MetricReport.to_dict`` multiplies them by 100.
"""

from __future__ import annotations

import csv
import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .encode import encode_table, fit_transforms
from .errors import EmptyHistogram, EmptyInput, EmptySample
from .groupsize import group_sizes
from .schema import NUMERICAL, ConstraintGraph, Database, Edge, fk_parent_index, hop_distance, join_path_rows

log = logging.getLogger(__name__)

N_BINS = 20


def ks_complement(sample_a, sample_b) -> float:
    """``1 - sup_x |F_a(x) - F_b(x)|`` for empirical CDFs."""
    a = np.sort(np.asarray(sample_a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(sample_b, dtype=np.float64).ravel())
    if len(a) == 0 or len(b) == 0:
        raise EmptySample("KS statistic needs two non-empty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(1.0 - np.max(np.abs(fa - fb)))


def tv_complement(counts_a: Mapping, counts_b: Mapping) -> float:
    """``1 - 0.5 * sum_v |p_a(v) - p_b(v)|`` over the union of categories."""
    ta, tb = sum(counts_a.values()), sum(counts_b.values())
    if ta <= 0 or tb <= 0:
        raise EmptyHistogram("TV distance needs two non-empty histograms")
    keys = sorted(set(counts_a) | set(counts_b), key=repr)
    tv = 0.5 * sum(abs(counts_a.get(v, 0) / ta - counts_b.get(v, 0) / tb) for v in keys)
    return float(max(0.0, 1.0 - tv))


def _edge_sizes(db: Database, edge: Edge) -> np.ndarray:
    return group_sizes(fk_parent_index(db.tables, edge), db.tables[edge.parent].row_count)


def cardinality_score(real_db: Database, synth_db: Database, edge: Edge) -> float:
    return ks_complement(_edge_sizes(real_db, edge), _edge_sizes(synth_db, edge))


def _column_score(real_col: np.ndarray, synth_col: np.ndarray, kind: str) -> float:
    if kind == NUMERICAL:
        return ks_complement(real_col, synth_col)
    return tv_complement(Counter(real_col.tolist()), Counter(synth_col.tolist()))


def one_way_scores(real_db: Database, synth_db: Database) -> dict[str, float]:
    out = {}
    for name in sorted(real_db.tables):
        real, synth = real_db.tables[name], synth_db.tables[name]
        for c in real.feature_columns:
            key = f"{name}.{c.name}"
            if synth.row_count == 0:
                log.warning("%s: synthetic table is empty, scoring 0", key)
                out[key] = 0.0
                continue
            out[key] = _column_score(real.data[c.name], synth.data[c.name], c.kind)
    return out


class _Discretizer:
    """Equal-frequency bins for numerics (edges fitted on real data); categories pass through."""

    def __init__(self, values: np.ndarray, kind: str, n_bins: int = N_BINS):
        self.kind = kind
        if kind == NUMERICAL:
            qs = np.quantile(np.asarray(values, dtype=np.float64), np.linspace(0, 1, n_bins + 1)[1:-1])
            self.edges = np.unique(qs)

    def __call__(self, values: np.ndarray) -> np.ndarray:
        if self.kind == NUMERICAL:
            return np.searchsorted(self.edges, np.asarray(values, dtype=np.float64), side="right").astype(object)
        return np.asarray(values, dtype=object)


def table_pairs(graph: ConstraintGraph, k: int) -> list[tuple[str, str]]:
    """Unordered table pairs at hop distance exactly k (k=0: each table with itself)."""
    if k == 0:
        return [(t, t) for t in sorted(graph.nodes)]
    return [(a, b) for a, b in itertools.combinations(sorted(graph.nodes), 2) if hop_distance(graph, a, b) == k]


def column_pairs(db: Database, k: int) -> list[tuple[str, str, str, str]]:
    """(table_a, col_a, table_b, col_b) for every column pair at distance k."""
    out = []
    for a, b in table_pairs(db.graph, k):
        ca = [c.name for c in db.tables[a].feature_columns]
        cb = [c.name for c in db.tables[b].feature_columns]
        if a == b:
            out.extend((a, x, a, y) for x, y in itertools.combinations(ca, 2))
        else:
            out.extend((a, x, b, y) for x in ca for y in cb)
    return out


def khop_scores(real_db: Database, synth_db: Database, graph: ConstraintGraph | None, k: int) -> dict[str, float]:
    """TV complement of the 2-D contingency table of each column pair at distance k."""
    graph = graph or real_db.graph
    pairs = column_pairs(Database(real_db.tables, graph), k)
    disc: dict[tuple[str, str], _Discretizer] = {}

    def discretizer(t, c):
        if (t, c) not in disc:
            col = real_db.tables[t]
            disc[(t, c)] = _Discretizer(col.data[c], col.spec(c).kind)
        return disc[(t, c)]

    joins: dict[tuple[str, str, str], np.ndarray] = {}

    def joined(which, db, a, b):
        key = (which, a, b)
        if key not in joins:
            joins[key] = join_path_rows(db.tables, graph, a, b)
        return joins[key]

    out = {}
    for ta, ca, tb, cb in pairs:
        key = f"{ta}.{ca}|{tb}.{cb}"
        hists = []
        for which, db in (("real", real_db), ("synth", synth_db)):
            rows = joined(which, db, ta, tb)
            va = discretizer(ta, ca)(db.tables[ta].data[ca][rows[:, 0]])
            vb = discretizer(tb, cb)(db.tables[tb].data[cb][rows[:, 1]])
            hists.append(Counter(zip(va.tolist(), vb.tolist())))
        if not hists[0]:
            log.warning("%s: no real joined rows, pair skipped", key)
            continue
        if not hists[1]:
            log.warning("%s: no synthetic joined rows, scoring 0", key)
            out[key] = 0.0
            continue
        out[key] = tv_complement(hists[0], hists[1])
    return out


def avg_two_way(khop: Mapping[int, Mapping[str, float]]) -> float | None:
    scores = [s for k in sorted(khop) for s in khop[k].values()]
    return float(np.mean(scores)) if scores else None


def min_max_fit(real: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = real.min(axis=0), real.max(axis=0)
    span = hi - lo
    return lo, np.where(span > 0, span, 1.0)


def dcr_median(real_matrix, synth_matrix) -> float:
    """Median over synthetic rows of the L2 distance to the closest real row,
    after min-max scaling fitted on the real rows."""
    real = np.asarray(getattr(real_matrix, "values", real_matrix), dtype=np.float64)
    synth = np.asarray(getattr(synth_matrix, "values", synth_matrix), dtype=np.float64)
    if real.ndim == 1:
        real, synth = real[:, None], synth.reshape(-1, 1)
    if len(real) == 0 or len(synth) == 0:
        raise EmptyInput("DCR needs non-empty real and synthetic matrices")
    lo, span = min_max_fit(real)
    r, s = (real - lo) / span, (synth - lo) / span
    best = np.empty(len(s))
    step = max(1, 2_000_000 // max(1, len(r) * r.shape[1]))
    for start in range(0, len(s), step):
        d = s[start: start + step, None, :] - r[None, :, :]
        best[start: start + step] = np.sqrt(np.min(np.einsum("ijk,ijk->ij", d, d), axis=1))
    return float(np.median(best))


@dataclass
class MetricReport:
    cardinality: dict[str, float] = field(default_factory=dict)
    one_way: dict[str, float] = field(default_factory=dict)
    khop: dict[int, dict[str, float]] = field(default_factory=dict)
    agree_rates: dict[str, float] = field(default_factory=dict)
    dcr_median: dict[str, float] | None = None

    @staticmethod
    def _mean(d: Mapping[str, float]) -> float | None:
        return float(np.mean(list(d.values()))) if d else None

    @property
    def avg_two_way(self) -> float | None:
        return avg_two_way(self.khop)

    def khop_mean(self, k: int) -> float | None:
        return self._mean(self.khop.get(k, {}))

    def to_dict(self) -> dict:
        """Display form: every score times 100; DCR stays a distance."""

        def pct(v):
            return None if v is None else 100.0 * v

        def block(d):
            return {"mean": pct(self._mean(d)), "scores": {k: pct(v) for k, v in sorted(d.items())}}

        out = {
            "cardinality": block(self.cardinality),
            "one_way": block(self.one_way),
            "khop": {str(k): block(v) for k, v in sorted(self.khop.items())},
            "avg_two_way": pct(self.avg_two_way),
        }
        if self.agree_rates:
            out["agree_rates"] = block(self.agree_rates)
        if self.dcr_median is not None:
            out["dcr_median"] = dict(sorted(self.dcr_median.items()))
        return out

    def rows(self) -> list[tuple[str, str, str, float | None]]:
        """Flat ``(metric, k, key, score x 100)`` rows for CSV export."""
        d = self.to_dict()
        out = [("cardinality", "", k, v) for k, v in d["cardinality"]["scores"].items()]
        out += [("one_way", "", k, v) for k, v in d["one_way"]["scores"].items()]
        for k, blk in d["khop"].items():
            out += [("khop", k, key, v) for key, v in blk["scores"].items()]
        out.append(("avg_two_way", "", "", d["avg_two_way"]))
        for k, v in d.get("agree_rates", {}).get("scores", {}).items():
            out.append(("agree_rate", "", k, v))
        for k, v in d.get("dcr_median", {}).items():
            out.append(("dcr_median", "", k, v))
        return out


def max_hop(graph: ConstraintGraph) -> int:
    best = 0
    for a, b in itertools.combinations(sorted(graph.nodes), 2):
        d = hop_distance(graph, a, b)
        if d is not None:
            best = max(best, d)
    return best


def evaluate(real_db: Database, synth_db: Database, *, max_k: int | None = None, dcr: bool = False,
             agree_rates: Mapping[str, float] | None = None) -> MetricReport:
    graph = real_db.graph
    report = MetricReport()
    for e in sorted(graph.edges):
        report.cardinality[e.name] = cardinality_score(real_db, synth_db, e)
    report.one_way = one_way_scores(real_db, synth_db)
    top = max_hop(graph) if max_k is None else max_k
    for k in range(0, top + 1):
        report.khop[k] = khop_scores(real_db, synth_db, graph, k)
    if agree_rates:
        report.agree_rates = dict(sorted(agree_rates.items()))
    if dcr:
        report.dcr_median = {}
        for name, real in sorted(real_db.tables.items()):
            synth = synth_db.tables[name]
            if not real.feature_columns or synth.row_count == 0:
                continue
            tr = fit_transforms(real)
            report.dcr_median[name] = dcr_median(encode_table(real, tr), encode_table(synth, tr))
    return report


def aggregate(reports: list[dict]) -> dict:
    """Mean and standard deviation of every numeric leaf across report dicts."""

    def walk(items):
        first = items[0]
        if isinstance(first, dict):
            return {k: walk([it[k] for it in items]) for k in first}
        if first is None or any(v is None for v in items):
            return None
        arr = np.asarray(items, dtype=np.float64)
        return {"mean": float(arr.mean()), "std": float(arr.std())}

    return walk(reports)


def write_csv(report: MetricReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "k", "key", "score"])
        for row in report.rows():
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v) for v in row])
