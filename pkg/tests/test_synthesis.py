import json

import numpy as np
import pytest

from clava.encode import LABEL, ZSCORE, ColumnTransform
from clava.errors import EmptyVersion
from clava.schema import load_database, topo_order, validate_database
from clava.synthesis import (
    ChildVersion,
    _make_version,
    load_models,
    match_multi_parent,
    singlet_baseline,
    synthesize,
    train_all,
    write_synthetic,
)
from clava.toy import DIAMOND_SPEC, gen_toy

from conftest import make_berka, make_two_table, tiny_config


@pytest.fixture(scope="module")
def two_table_models(tmp_path_factory):
    db = make_two_table()
    d = tmp_path_factory.mktemp("two") / "models"
    train_all(db, tiny_config(singlet=True), d)
    return db, d


@pytest.fixture(scope="module")
def berka_models(tmp_path_factory):
    db = make_berka(child_rows=16)
    d = tmp_path_factory.mktemp("berka") / "models"
    train_all(db, tiny_config(), d)
    return db, d


def _count(d, pattern):
    return len(list((d / "models").glob(pattern)))


def test_two_table_model_counts(two_table_models):
    _, d = two_table_models
    assert _count(d, "*.classifier.bin") == 1
    assert _count(d, "*.singlet.bin") == 2
    assert _count(d, "*.bin") - 1 - 2 == 2
    assert len(list((d / "groupsize").glob("*.json"))) == 1


def test_berka_model_counts(berka_models):
    _, d = berka_models
    assert _count(d, "*.classifier.bin") == 8
    assert _count(d, "*.bin") - 8 == 8
    assert len(list((d / "groupsize").glob("*.json"))) == 8


def test_parent_and_child_table_has_latent_per_child_edge(berka_models):
    db, d = berka_models
    store = load_models(d)
    # disposition is a child of account and client and the parent of card
    lat = [t.name for t in store.bundles["disposition"].transforms if t.role == "latent"]
    assert lat == ["latent:card__disposition"]
    assert store.bundles["disposition"].denoiser.feature_dim == len(store.bundles["disposition"].transforms)


def test_synthesize_integrity_and_schema(berka_models):
    db, d = berka_models
    sdb = synthesize(d, scale=1.0, seed=0)
    validate_database(sdb.tables, sdb.graph)
    for name, t in sdb.tables.items():
        assert [c.name for c in t.columns] == [c.name for c in db.tables[name].columns]
        assert not any(c.startswith("latent:") for c in t.data)
        pk = t.primary_key.name
        assert t.data[pk].tolist() == [str(i) for i in range(t.row_count)]
    assert len(sdb.tables["disposition"].foreign_keys) == 2


def test_same_seed_identical(two_table_models):
    _, d = two_table_models
    a, b = synthesize(d, seed=3), synthesize(d, seed=3)
    for name in a.tables:
        for col in a.tables[name].data:
            assert np.array_equal(a.tables[name].data[col], b.tables[name].data[col])
    c = synthesize(d, seed=4)
    assert not np.array_equal(a.tables["parent"].data["x0"], c.tables["parent"].data["x0"])


def test_trace_respects_topological_order(berka_models):
    db, d = berka_models
    sdb = synthesize(d, seed=1)
    finished = {e[1] for e in sdb.trace if e[0] == "root"}
    for event in sdb.trace:
        if event[0] == "generate":
            _, child, parent, _ = event
            assert parent in finished
        elif event[0] == "finish":
            finished.add(event[1])
    assert finished == set(db.graph.nodes)
    assert [e for e in sdb.trace if e[0] == "match"] == [("match", "disposition", 2)]
    gen = [(e[1], e[2]) for e in sdb.trace if e[0] == "generate"]
    assert gen == [(e.child, e.parent) for e in topo_order(db.graph, "top_down")]


def test_scale_multiplies_roots(two_table_models):
    db, d = two_table_models
    assert synthesize(d, scale=2.0, seed=0).tables["parent"].row_count == 80
    assert synthesize(d, scale=0.0, seed=0).tables["child"].row_count == 0


def test_child_count_close_to_real():
    db = make_two_table(n_parents=400)
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        train_all(db, tiny_config(), f"{tmp}/m")
        counts = [synthesize(f"{tmp}/m", seed=s).tables["child"].row_count for s in range(3)]
    real = db.tables["child"].row_count
    assert abs(np.mean(counts) - real) <= 0.1 * real


def test_refuses_overwrite(two_table_models, tmp_path):
    db, _ = two_table_models
    d = tmp_path / "m"
    train_all(db, tiny_config(iterations=1), d)
    with pytest.raises(FileExistsError):
        train_all(db, tiny_config(iterations=1), d)
    train_all(db, tiny_config(iterations=1), d, force=True)
    assert (d / "meta.json").exists()


def test_failed_training_leaves_nothing(two_table_models, tmp_path, monkeypatch):
    import clava.synthesis as synthesis
    from clava.errors import NonFiniteLoss

    def boom(*args, **kwargs):
        raise NonFiniteLoss("classifier loss became nan")

    monkeypatch.setattr(synthesis, "train_classifier", boom)
    db, _ = two_table_models
    d = tmp_path / "m"
    with pytest.raises(NonFiniteLoss):
        train_all(db, tiny_config(), d)
    assert not d.exists()


def test_singlet_integrity_and_sizes(two_table_models):
    db, d = two_table_models
    sdb = singlet_baseline(db, d, seed=0)
    validate_database(sdb.tables, sdb.graph)
    assert sdb.tables["parent"].row_count == db.tables["parent"].row_count
    sizes = np.unique(sdb.tables["child"].data["parent_id"], return_counts=True)[1]
    assert set(sizes.tolist()) <= {1, 2, 3}


def test_singlet_diamond(tmp_path):
    spec = {"tables": {k: dict(v) for k, v in DIAMOND_SPEC["tables"].items()}}
    for t in spec["tables"].values():
        if "rows" in t:
            t["rows"] = 30
    db = gen_toy(spec, seed=0)
    train_all(db, tiny_config(singlet=True), tmp_path / "m")
    sdb = singlet_baseline(db, tmp_path / "m", seed=0)
    sale = sdb.tables["sale"]
    assert len(sale.foreign_keys) == 2
    validate_database(sdb.tables, sdb.graph)


def test_write_synthetic_roundtrip(two_table_models, tmp_path):
    _, d = two_table_models
    sdb = synthesize(d, seed=0)
    out = write_synthetic(sdb, tmp_path / "out")
    again = load_database(out)
    assert again.tables["child"].row_count == sdb.tables["child"].row_count
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["seed"] == 0 and prov["trace"][0][0] == "root"
    assert "meta.json" in prov["model_hashes"]


# ---------------------------------------------------------------------------
# matching

NUM = ColumnTransform("v", ZSCORE, mean=0.0, std=1.0)


def _version(values, fks):
    return _make_version(np.asarray(values, dtype=float).reshape(-1, 1), [NUM], fks)


def test_match_example():
    base = _version([0.0, 1.0], {"a_id": np.array([0, 1])})
    other = _version([0.1, 0.9], {"b_id": np.array([7, 3])})
    out = match_multi_parent([base, other], [NUM])
    np.testing.assert_allclose(out.raw["v"], [0.05, 0.95], atol=1e-15)
    assert out.fks["a_id"].tolist() == [0, 1]
    assert out.fks["b_id"].tolist() == [7, 3]


def test_match_identical_versions():
    vals = np.random.default_rng(0).normal(size=20)
    out = match_multi_parent([_version(vals, {"a": np.arange(20)}), _version(vals, {"b": np.arange(20)})], [NUM])
    np.testing.assert_array_equal(out.raw["v"], vals)
    assert out.fks["b"].tolist() == list(range(20))


def test_match_keeps_base_categoricals_and_latents():
    trs = [NUM, ColumnTransform("c", LABEL, categories=["x", "y"]),
           ColumnTransform("latent:k__p", LABEL, categories=[0, 1, 2], role="latent")]
    a = _make_version(np.array([[0.0, 0.0, 2.0], [3.0, 1.0, 0.0]]), trs, {"p": np.array([0, 1])})
    b = _make_version(np.array([[3.2, 1.0, 1.0], [0.2, 0.0, 1.0], [9.0, 0.0, 0.0]]), trs, {"q": np.array([5, 6, 7])})
    out = match_multi_parent([a, b], trs)
    assert out.n_rows == 2
    assert out.raw["c"].tolist() == ["x", "y"]
    assert out.values[:, 2].tolist() == [2.0, 0.0]
    assert out.fks["q"].tolist() == [6, 5]
    np.testing.assert_allclose(out.raw["v"], [0.1, 3.1])


def test_match_three_versions_sequential():
    a = _version([0.0, 4.0], {"a": np.array([0, 1])})
    b = _version([1.0, 3.0], {"b": np.array([0, 1])})
    c = _version([0.0, 10.0], {"c": np.array([0, 1])})
    out = match_multi_parent([a, b, c], [NUM])
    # (0+1)/2 = 0.5 then (0.5+0)/2; (4+3)/2 = 3.5 then nearest in c is 0.0
    np.testing.assert_allclose(out.raw["v"], [0.25, 1.75])
    assert set(out.fks) == {"a", "b", "c"}


def test_match_empty_version():
    with pytest.raises(EmptyVersion):
        match_multi_parent([_version([1.0], {"a": np.array([0])}), _version([], {"b": np.array([], dtype=int)})], [NUM])
    out = match_multi_parent([_version([], {"a": np.array([], dtype=int)}), _version([1.0], {"b": np.array([0])})], [NUM])
    assert out.n_rows == 0 and set(out.fks) == {"a", "b"}


def test_match_property_midpoints():
    rng = np.random.default_rng(0)
    for _ in range(30):
        n, m = rng.integers(1, 20, size=2)
        a, b = rng.normal(size=n), rng.normal(size=m)
        out = match_multi_parent([_version(a, {"a": np.arange(n)}), _version(b, {"b": np.arange(m)})], [NUM])
        assert out.n_rows == n
        j = out.fks["b"]
        np.testing.assert_array_equal(out.raw["v"], (a + b[j]) / 2)
        assert np.all(np.abs(a - b[j]) <= np.abs(a[:, None] - b[None, :]).min(axis=1) + 1e-12)


def test_child_version_rows():
    assert ChildVersion(np.zeros((3, 1)), {}).n_rows == 3
