"""Command-line driver.

Exit codes: 0 ok, 2 validation error, 3 training failure, 4 IO error.
``CLAVA_LOG`` (error, info, debug) sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import ConfigError, RunConfig
from .errors import ClavaError, EncodeError, SchemaError, TrainingError
from .metrics import aggregate, evaluate, write_csv
from .schema import load_database
from .synthesis import load_models, singlet_baseline, synthesize, train_all, write_synthetic
from .toy import CHAIN_SPEC, DIAMOND_SPEC, write_toy

log = logging.getLogger("clava")

BUILTIN_SPECS = {"chain": CHAIN_SPEC, "diamond": DIAMOND_SPEC}

EXIT_OK, EXIT_ERROR, EXIT_VALIDATION, EXIT_TRAINING, EXIT_IO = 0, 1, 2, 3, 4


def _setup_logging() -> None:
    level = os.environ.get("CLAVA_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _agree_rates(model_dir) -> dict | None:
    if not model_dir:
        return None
    with open(Path(model_dir) / "meta.json", encoding="utf-8") as fh:
        return json.load(fh).get("agree_rates")


def _load_config(args) -> RunConfig:
    overrides = {
        "data_dir": getattr(args, "data", None),
        "model_dir": getattr(args, "model", None),
        "out_dir": getattr(args, "out", None),
        "seed": getattr(args, "seed", None),
        "iterations": getattr(args, "iterations", None),
        "threads": getattr(args, "threads", None),
    }
    return RunConfig.load(args.config, **overrides)


def cmd_validate(args) -> int:
    db = load_database(args.data)
    print(f"ok: {len(db.tables)} tables, {len(db.graph.edges)} foreign keys, depth {db.graph.depth}")
    for name, t in sorted(db.tables.items()):
        print(f"  {name}: {t.row_count} rows, {len(t.feature_columns)} feature columns")
    for e in db.graph.edges:
        print(f"  {e.child}.{e.fk_column} -> {e.parent}")
    return EXIT_OK


def _config_threads(cfg: RunConfig):
    return threadpool_limits(limits=cfg.threads) if cfg.threads else nullcontext()


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    db = load_database(cfg.data_dir)
    with _config_threads(cfg):
        train_all(db, cfg, cfg.model_dir, force=args.force)
    log.info("models written to %s", cfg.model_dir)
    return EXIT_OK


def cmd_sample(args) -> int:
    if args.singlet:
        if not args.data:
            raise ConfigError("--singlet needs --data (real group sizes)")
        sdb = singlet_baseline(load_database(args.data), args.model, args.seed, args.scale)
    else:
        sdb = synthesize(args.model, args.scale, args.seed, classifier_scale=args.eta)
    write_synthetic(sdb, args.out)
    log.info("synthetic database written to %s", args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    real, synth = load_database(args.real), load_database(args.synth)
    report = evaluate(real, synth, dcr=args.dcr, agree_rates=_agree_rates(args.model))
    _write_json(Path(args.report), report.to_dict())
    if args.csv:
        write_csv(report, args.csv)
    d = report.to_dict()
    print(f"cardinality {d['cardinality']['mean']}, one-way {d['one_way']['mean']}, avg 2-way {d['avg_two_way']}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    with _config_threads(cfg):
        return _pipeline(args, cfg)


def _pipeline(args, cfg: RunConfig) -> int:
    if not cfg.out_dir or not cfg.model_dir or not cfg.data_dir:
        raise ConfigError("pipeline needs data_dir, model_dir and out_dir")
    real = load_database(cfg.data_dir)
    train_all(real, cfg, cfg.model_dir, force=args.force)
    store = load_models(cfg.model_dir)
    agree = store.meta.get("agree_rates")
    out = Path(cfg.out_dir)
    runs = {"clava": [], "singlet": []}
    for s in cfg.sample_seeds:
        sdb = synthesize(cfg.model_dir, cfg.scale, s, store=store)
        write_synthetic(sdb, out / f"seed_{s}")
        rep = evaluate(real, sdb.database, dcr=cfg.dcr, agree_rates=agree).to_dict()
        _write_json(out / f"seed_{s}" / "report.json", rep)
        runs["clava"].append(rep)
        if cfg.singlet:
            bdb = singlet_baseline(real, cfg.model_dir, s, cfg.scale)
            write_synthetic(bdb, out / f"singlet_seed_{s}")
            brep = evaluate(real, bdb.database, dcr=cfg.dcr).to_dict()
            _write_json(out / f"singlet_seed_{s}" / "report.json", brep)
            runs["singlet"].append(brep)
    summary = {"seeds": list(cfg.sample_seeds), "clava": aggregate(runs["clava"])}
    if runs["singlet"]:
        summary["singlet"] = aggregate(runs["singlet"])
    _write_json(out / "report.json", summary)
    c = summary["clava"]
    print(f"avg 2-way {c['avg_two_way']}, cardinality {c['cardinality']['mean']}")
    return EXIT_OK


def cmd_gen_toy(args) -> int:
    if args.spec in BUILTIN_SPECS and not Path(args.spec).exists():
        spec = BUILTIN_SPECS[args.spec]
    else:
        with open(args.spec, encoding="utf-8") as fh:
            spec = json.load(fh)
    db = write_toy(spec, args.out, args.seed)
    print(f"wrote {len(db.tables)} tables to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="cap BLAS threads (1 = reproducible across machines)")

    p = argparse.ArgumentParser(prog="clava", description="Multi-table relational synthesis with guided diffusion.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", parents=[common], help="check a dataset directory")
    v.add_argument("--data", required=True)
    v.set_defaults(func=cmd_validate)

    f = sub.add_parser("fit", parents=[common], help="latent learning and model training")
    f.add_argument("--config", required=True)
    f.add_argument("--data")
    f.add_argument("--model")
    f.add_argument("--seed", type=int)
    f.add_argument("--iterations", type=int)
    f.add_argument("--force", action="store_true", help="overwrite an existing model directory")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("sample", parents=[common], help="synthesize a database from trained models")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--eta", type=float, default=None, help="classifier scale (default: from the fit config)")
    s.add_argument("--singlet", action="store_true", help="independent per-table baseline")
    s.add_argument("--data", help="real data (needed by --singlet)")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", parents=[common], help="compare a synthetic database with the real one")
    e.add_argument("--real", required=True)
    e.add_argument("--synth", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--csv")
    e.add_argument("--dcr", action="store_true")
    e.add_argument("--model", help="model directory, adds agree rates to the report")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("pipeline", parents=[common], help="fit, sample every seed, evaluate")
    pl.add_argument("--config", required=True)
    pl.add_argument("--data")
    pl.add_argument("--model")
    pl.add_argument("--out")
    pl.add_argument("--seed", type=int)
    pl.add_argument("--iterations", type=int)
    pl.add_argument("--force", action="store_true")
    pl.set_defaults(func=cmd_pipeline)

    g = sub.add_parser("gen-toy", parents=[common], help="write a planted-correlation toy database")
    g.add_argument("--out", required=True)
    g.add_argument("--spec", required=True, help="JSON spec file, or 'chain' / 'diamond'")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_toy)
    return p


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    limits = threadpool_limits(limits=args.threads) if args.threads else nullcontext()
    try:
        with limits:
            return args.func(args)
    except (SchemaError, EncodeError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except TrainingError as exc:
        log.error("%s", exc)
        return EXIT_TRAINING
    except (OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except ClavaError as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
