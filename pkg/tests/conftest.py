import re

import numpy as np
import pytest

from clava.schema import (
    CATEGORICAL,
    FOREIGN_KEY,
    NUMERICAL,
    PRIMARY_KEY,
    ColumnSpec,
    Database,
    TableData,
    build_graph,
    validate_database,
    write_database,
)

# (table, parents, rows per parent or root rows)
BERKA_LAYOUT = [
    ("district", [], 6),
    ("account", ["district"], None),
    ("client", ["district"], None),
    ("disposition", ["account", "client"], None),
    ("card", ["disposition"], None),
    ("loan", ["account"], None),
    ("order", ["account"], None),
    ("trans", ["account"], None),
]


def make_table(name, parents, n, rng, parent_rows=None, numeric=1, categorical=1):
    cols = [ColumnSpec(f"{name}_id", PRIMARY_KEY)]
    cols += [ColumnSpec(f"x{i}", NUMERICAL) for i in range(numeric)]
    cols += [ColumnSpec(f"c{i}", CATEGORICAL) for i in range(categorical)]
    cols += [ColumnSpec(f"{p}_id", FOREIGN_KEY, p, f"{p}_id") for p in parents]
    data = {f"{name}_id": np.array([f"{name[:2]}{i}" for i in range(n)], dtype=object)}
    for i in range(numeric):
        data[f"x{i}"] = rng.normal(size=n)
    for i in range(categorical):
        data[f"c{i}"] = np.array(rng.choice(["a", "b", "c"], size=n), dtype=object)
    for p in parents:
        m = parent_rows[p]
        idx = np.concatenate([np.arange(m), rng.integers(0, m, size=max(0, n - m))])[:n]
        data[f"{p}_id"] = np.array([f"{p[:2]}{i}" for i in idx], dtype=object)
    return TableData(name, cols, data)


def make_berka(seed=0, child_rows=12):
    """Berka-shaped schema: 8 tables, 8 foreign keys, longest path 4 tables."""
    rng = np.random.default_rng(seed)
    tables, rows = {}, {}
    for name, parents, n in BERKA_LAYOUT:
        n = n if n is not None else child_rows
        tables[name] = make_table(name, parents, n, rng, rows)
        rows[name] = n
    graph = build_graph(tables.values())
    validate_database(tables, graph)
    return Database(tables, graph)


@pytest.fixture
def berka_db():
    return make_berka()


@pytest.fixture
def berka_dir(tmp_path, berka_db):
    d = tmp_path / "berka"
    write_database(berka_db, d)
    return d


def make_two_table(seed=0, n_parents=40):
    rng = np.random.default_rng(seed)
    parent = make_table("parent", [], n_parents, rng)
    sizes = rng.integers(1, 4, size=n_parents)
    n = int(sizes.sum())
    child = make_table("child", ["parent"], n, rng, {"parent": n_parents})
    child.data["parent_id"] = np.array([f"pa{i}" for i in np.repeat(np.arange(n_parents), sizes)], dtype=object)
    tables = {"parent": parent, "child": child}
    graph = build_graph(tables.values())
    validate_database(tables, graph)
    return Database(tables, graph)


@pytest.fixture
def two_table_db():
    return make_two_table()


def tiny_config(**overrides):
    """Just enough training to exercise the plumbing quickly."""
    from clava.config import RunConfig

    base = dict(k_clusters=2, timesteps=10, iterations=20, layers=[16, 16], classifier_layers=[16],
                batch_size=64, seed=0)
    base.update(overrides)
    return RunConfig(**base)


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion at the end of the run

ACCEPTANCE = []


@pytest.fixture
def record():
    def _record(criterion, description, ok, detail=""):
        ACCEPTANCE.append((criterion, description, bool(ok), detail))
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, description, ok, detail in sorted(ACCEPTANCE, key=lambda r: (int(re.match(r"\d+", str(r[0])).group()), str(r[0]))):
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {description}"
        if detail:
            line += f" [{detail}]"
        terminalreporter.write_line(line)
