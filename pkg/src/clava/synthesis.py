"""Training and synthesis over the whole foreign-key DAG.

Model directory layout::

    meta.json                          config, schema, row counts, edges
    transforms/<table>.json            column transforms (features, then latents)
    latents/<child>__<parent>.json     GMM + voted labels per edge
    models/<table>.bin/.json           denoiser of the augmented table
    models/<child>__<parent>.classifier.bin/.json
    models/<table>.singlet.bin/.json   optional unconditional baseline
    groupsize/<child>__<parent>.json   p(size | label)
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import augment_tables, latent_column_name, save_latents
from .config import RunConfig
from .diffusion import Denoiser, DiffusionBundle, make_schedule, sample, train_denoiser
from .encode import ColumnTransform, encode_table, load_transforms, save_transforms
from .errors import EmptyVersion
from .groupsize import (
    fit_group_sizes,
    group_sizes,
    load_group_sizes,
    remap_unseen,
    sample_group_sizes,
    save_group_sizes,
)
from .guidance import Classifier, guided_sample, train_classifier
from .neighbors import nearest_neighbors
from .rng import derive_seed, make_rng
from .schema import (
    FOREIGN_KEY,
    NUMERICAL,
    PRIMARY_KEY,
    ColumnSpec,
    ConstraintGraph,
    Database,
    Edge,
    TableData,
    database_meta,
    fk_parent_index,
    schema_from_meta,
    table_order,
    topo_order,
    validate_database,
    write_database,
)

log = logging.getLogger(__name__)

META = "meta.json"
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# training


def _prepare_dir(model_dir: Path, force: bool) -> None:
    if model_dir.exists() and any(model_dir.iterdir()):
        if not force:
            raise FileExistsError(f"{model_dir} is not empty; pass --force to overwrite")
        shutil.rmtree(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)


def train_all(db: Database, config: RunConfig, model_dir: str | Path, force: bool = False) -> Path:
    """Latent learning, then one denoiser per table and one classifier plus
    group-size model per edge.  A failed run leaves no model directory."""
    model_dir = Path(model_dir)
    _prepare_dir(model_dir, force)
    try:
        _train_into(db, config, model_dir)
    except BaseException:
        shutil.rmtree(model_dir, ignore_errors=True)
        raise
    return model_dir


def _train_into(db: Database, config: RunConfig, model_dir: Path) -> None:
    tables, graph = db
    seed = config.seed
    aug = augment_tables(db, config.parent_scale, config.k_clusters, derive_seed(seed, "cluster"))
    schedule = make_schedule(config.timesteps, "linear", config.beta_min, config.beta_max)

    for name, at in aug.tables.items():
        save_transforms(model_dir / "transforms" / f"{name}.json", at.transforms)
    for edge, gmm in aug.models.items():
        save_latents(model_dir / "latents" / f"{edge.name}.json", gmm, aug.assignments[edge])

    for name in table_order(graph):
        log.info("training denoiser for %s (%d rows, %d columns)", name, *aug.tables[name].values.shape)
        den = train_denoiser(aug.tables[name].matrix(), schedule, config.diffusion_config(derive_seed(seed, "denoiser", name)))
        den.save(model_dir / "models" / name, schedule, {"table": name, "final_loss": _tail_loss(den)})

    for edge in topo_order(graph, "top_down"):
        assignment = aug.assignments[edge]
        log.info("training classifier for %s (k=%d)", edge, assignment.k)
        clf = train_classifier(
            aug.tables[edge.child].matrix(),
            assignment.child_labels,
            schedule,
            config.classifier_config(derive_seed(seed, "classifier", edge.name)),
            n_classes=assignment.k + 1,
        )
        clf.save(model_dir / "models" / f"{edge.name}.classifier",
                 {"edge": [edge.child, edge.parent], "k": assignment.k, "final_loss": _tail_loss(clf)})
        gs = fit_group_sizes(assignment, aug.fk_maps[edge], aug.models[edge].means)
        save_group_sizes(model_dir / "groupsize" / f"{edge.name}.json", gs)

    if config.singlet:
        train_singlet(db, config, model_dir, schedule)

    meta = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "dataset_meta": database_meta({n: t.columns for n, t in tables.items()}),
        "row_counts": {n: t.row_count for n, t in sorted(tables.items())},
        "edges": [[e.child, e.parent, e.fk_column] for e in graph.edges],
        "agree_rates": {e.name: a.avg_agree_rate for e, a in sorted(aug.assignments.items())},
    }
    with open(model_dir / META, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def train_singlet(db: Database, config: RunConfig, model_dir: str | Path, schedule=None) -> None:
    """Unconditional per-table denoisers on the raw (non-augmented) tables."""
    model_dir = Path(model_dir)
    schedule = schedule or make_schedule(config.timesteps, "linear", config.beta_min, config.beta_max)
    for name, t in sorted(db.tables.items()):
        transforms = [tr for tr in _load_or_fit(model_dir, t) if tr.role == "feature"]
        log.info("training singlet denoiser for %s", name)
        den = train_denoiser(encode_table(t, transforms), schedule,
                             config.diffusion_config(derive_seed(config.seed, "singlet", name)))
        den.save(model_dir / "models" / f"{name}.singlet", schedule, {"table": name, "final_loss": _tail_loss(den)})


def _load_or_fit(model_dir: Path, table: TableData) -> list[ColumnTransform]:
    path = model_dir / "transforms" / f"{table.name}.json"
    if path.exists():
        return load_transforms(path)
    from .encode import fit_transforms

    return fit_transforms(table)


def _tail_loss(model) -> float | None:
    h = model.loss_history
    return float(np.mean(h[-100:])) if h else None


# ---------------------------------------------------------------------------
# loading


@dataclass
class ModelStore:
    model_dir: Path
    meta: dict
    specs: dict[str, list[ColumnSpec]]
    graph: ConstraintGraph
    bundles: dict[str, DiffusionBundle]

    @property
    def config(self) -> RunConfig:
        return RunConfig.from_dict(self.meta["config"])


def load_models(model_dir: str | Path) -> ModelStore:
    model_dir = Path(model_dir)
    with open(model_dir / META, encoding="utf-8") as fh:
        meta = json.load(fh)
    specs, graph = schema_from_meta(meta["dataset_meta"])
    bundles = {}
    for name in graph.nodes:
        den, schedule, _ = Denoiser.load(model_dir / "models" / name)
        bundle = DiffusionBundle(name, schedule, den, load_transforms(model_dir / "transforms" / f"{name}.json"))
        for e in graph.parent_edges(name):
            bundle.classifiers[e.name] = Classifier.load(model_dir / "models" / f"{e.name}.classifier")[0]
            bundle.group_sizes[e.name] = load_group_sizes(model_dir / "groupsize" / f"{e.name}.json")
        bundles[name] = bundle
    return ModelStore(model_dir, meta, specs, graph, bundles)


def model_hashes(model_dir: str | Path) -> dict[str, str]:
    root = Path(model_dir)
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[p.relative_to(root).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


# ---------------------------------------------------------------------------
# synthesis


@dataclass
class ChildVersion:
    """One synthetic version of a table.

    ``values`` is the augmented unified matrix (features then latents);
    ``raw`` holds decoded feature columns; ``fks`` maps FK column -> parent row.
    """

    values: np.ndarray
    raw: dict[str, np.ndarray]
    fks: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]


def _make_version(values: np.ndarray, transforms: list[ColumnTransform], fks=None) -> ChildVersion:
    raw = {tr.name: tr.decode(values[:, j]) for j, tr in enumerate(transforms) if tr.role == "feature"}
    return ChildVersion(values, raw, dict(fks or {}))


@dataclass
class SyntheticDatabase:
    tables: dict[str, TableData]
    graph: ConstraintGraph
    provenance: dict
    trace: list[tuple] = field(default_factory=list)
    # pre-matching versions of multi-parent tables (only with keep_versions)
    versions: dict[str, list[ChildVersion]] = field(default_factory=dict)

    @property
    def database(self) -> Database:
        return Database(self.tables, self.graph)


def match_multi_parent(versions: list[ChildVersion], transforms: list[ColumnTransform], seed: int = 0) -> ChildVersion:
    """Merge versions of one table generated under different parents.

    Version 0 is the base.  Each base row is paired with its nearest row of the
    next version (Euclidean on pooled-standardized non-latent features,
    duplicates allowed).  Numerics become the midpoint of the pair in decoded
    space; categoricals and latents stay as in the base; the FK columns are the
    union.  Three or more versions are folded in one after another.
    """
    if len(versions) < 2:
        raise ValueError("matching needs at least two versions")
    base = versions[0]
    for k, other in enumerate(versions[1:], start=1):
        if base.n_rows == 0:
            base = ChildVersion(base.values, base.raw, {**base.fks, **{c: v[:0] for c, v in other.fks.items()}})
            continue
        if other.n_rows == 0:
            raise EmptyVersion(f"version {k} is empty but the base has {base.n_rows} rows")
        feat = [j for j, tr in enumerate(transforms) if tr.role == "feature"]
        a, b = base.values[:, feat], other.values[:, feat]
        pooled = np.vstack([a, b])
        mean, std = pooled.mean(axis=0), pooled.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        nn = nearest_neighbors((a - mean) / std, (b - mean) / std, seed=derive_seed(seed, "nn", str(k)))
        values = base.values.copy()
        raw = dict(base.raw)
        for j, tr in enumerate(transforms):
            if tr.role != "feature" or tr.is_categorical:
                continue
            mid = (base.raw[tr.name] + other.raw[tr.name][nn]) / 2.0
            raw[tr.name] = mid
            values[:, j] = tr.encode(mid)
        fks = dict(base.fks)
        for col, idx in other.fks.items():
            fks[col] = idx[nn]
        base = ChildVersion(values, raw, fks)
    return base


def _root_count(real: int, scale: float) -> int:
    return int(round(scale * real))


def synthesize(model_dir: str | Path, scale: float = 1.0, seed: int = 0, classifier_scale: float | None = None,
               store: ModelStore | None = None, keep_versions: bool = False) -> SyntheticDatabase:
    store = store or load_models(model_dir)
    graph, bundles = store.graph, store.bundles
    eta = store.config.classifier_scale if classifier_scale is None else classifier_scale
    row_counts = store.meta["row_counts"]

    finished: dict[str, ChildVersion] = {}
    pending: dict[str, list[tuple[Edge, ChildVersion]]] = {}
    trace: list[tuple] = []
    kept: dict[str, list[ChildVersion]] = {}

    for name in graph.roots():
        b = bundles[name]
        n = _root_count(row_counts[name], scale)
        m = sample(b.denoiser, b.schedule, n, seed=derive_seed(seed, "root", name), table_name=name)
        finished[name] = _make_version(m.values, b.transforms)
        trace.append(("root", name, n))

    for edge in topo_order(graph, "top_down"):
        if edge.parent not in finished:
            raise RuntimeError(f"{edge}: parent {edge.parent} has not been synthesized yet")
        parent_b, child_b = bundles[edge.parent], bundles[edge.child]
        lat = latent_column_name(edge)
        j = [t.name for t in parent_b.transforms].index(lat)
        parent_labels = parent_b.transforms[j].decode(finished[edge.parent].values[:, j]).astype(np.int64)
        gs = child_b.group_sizes[edge.name]
        parent_labels = remap_unseen(gs, parent_labels)
        sizes = sample_group_sizes(gs, parent_labels, make_rng(seed, "size", edge.name))
        labels = np.repeat(parent_labels, sizes)
        fk = np.repeat(np.arange(len(parent_labels), dtype=np.int64), sizes)
        m = guided_sample(child_b.denoiser, child_b.classifiers[edge.name], child_b.schedule, labels, eta,
                          seed=derive_seed(seed, "child", edge.name), table_name=edge.child)
        pending.setdefault(edge.child, []).append((edge, _make_version(m.values, child_b.transforms, {edge.fk_column: fk})))
        trace.append(("generate", edge.child, edge.parent, int(len(labels))))

        if len(pending[edge.child]) == len(graph.parent_edges(edge.child)):
            versions = [v for _, v in pending.pop(edge.child)]
            if len(versions) == 1:
                finished[edge.child] = versions[0]
            else:
                if keep_versions:
                    kept[edge.child] = versions
                finished[edge.child] = match_multi_parent(versions, child_b.transforms, derive_seed(seed, "match", edge.child))
                trace.append(("match", edge.child, len(versions)))
            trace.append(("finish", edge.child, finished[edge.child].n_rows))

    tables = {name: _to_table(name, store.specs[name], finished[name]) for name in graph.nodes}
    validate_database(tables, graph)
    provenance = {
        "method": "clava",
        "seed": seed,
        "scale": scale,
        "classifier_scale": eta,
        "config": store.meta["config"],
        "model_hashes": model_hashes(store.model_dir),
    }
    return SyntheticDatabase(tables, graph, provenance, trace, kept)


def _to_table(name: str, specs: list[ColumnSpec], version: ChildVersion) -> TableData:
    """Decoded table with dense integer primary keys."""
    n = version.n_rows
    data = {}
    for c in specs:
        if c.kind == PRIMARY_KEY:
            data[c.name] = np.array([str(i) for i in range(n)], dtype=object)
        elif c.kind == FOREIGN_KEY:
            data[c.name] = np.array([str(i) for i in version.fks[c.name].tolist()], dtype=object)
        elif c.kind == NUMERICAL:
            data[c.name] = np.asarray(version.raw[c.name], dtype=np.float64)
        else:
            data[c.name] = np.asarray(version.raw[c.name], dtype=object)
    return TableData(name, list(specs), data)


def singlet_baseline(db: Database, model_dir: str | Path, seed: int = 0, scale: float = 1.0) -> SyntheticDatabase:
    """Independent per-table sampling; foreign keys from resampled real group sizes.

    The first parent (top-down order) fixes the row count; further FK columns
    are filled from their own resampled sizes, truncated or padded with
    uniform draws to that length, then shuffled.
    """
    model_dir = Path(model_dir)
    tables, graph = db
    order = topo_order(graph, "top_down")
    out: dict[str, TableData] = {}
    for name in table_order(graph):
        real = tables[name]
        den, schedule, _ = Denoiser.load(model_dir / "models" / f"{name}.singlet")
        transforms = [tr for tr in _load_or_fit(model_dir, real) if tr.role == "feature"]
        rng = make_rng(seed, "singlet", name)
        pedges = sorted(graph.parent_edges(name), key=order.index)
        fks = {}
        if not pedges:
            n = _root_count(real.row_count, scale)
        else:
            first = pedges[0]
            real_sizes = group_sizes(fk_parent_index(tables, first), tables[first.parent].row_count)
            sizes = rng.choice(real_sizes, size=out[first.parent].row_count, replace=True)
            fks[first.fk_column] = np.repeat(np.arange(len(sizes), dtype=np.int64), sizes)
            n = int(sizes.sum())
            for e in pedges[1:]:
                n_par = out[e.parent].row_count
                real_sizes = group_sizes(fk_parent_index(tables, e), tables[e.parent].row_count)
                s = rng.choice(real_sizes, size=n_par, replace=True)
                fk = np.repeat(np.arange(n_par, dtype=np.int64), s)[:n]
                if len(fk) < n:
                    fk = np.concatenate([fk, rng.integers(0, max(n_par, 1), size=n - len(fk))])
                fks[e.fk_column] = rng.permutation(fk)
        m = sample(den, schedule, n, seed=derive_seed(seed, "singlet-sample", name), table_name=name)
        out[name] = _to_table(name, real.columns, _make_version(m.values, transforms, fks))
    validate_database(out, graph)
    provenance = {"method": "singlet", "seed": seed, "scale": scale, "model_hashes": model_hashes(model_dir)}
    return SyntheticDatabase(out, graph, provenance, [])


def write_synthetic(sdb: SyntheticDatabase, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    write_database(sdb.database, out_dir)
    prov = dict(sdb.provenance)
    prov["created"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    prov["trace"] = [list(t) for t in sdb.trace]
    with open(out_dir / "provenance.json", "w", encoding="utf-8") as fh:
        json.dump(prov, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out_dir
