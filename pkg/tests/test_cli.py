import json

import pytest

from clava.cli import main
from clava.schema import load_database, write_database

from conftest import make_two_table

SMALL = {"k_clusters": 2, "timesteps": 10, "iterations": 20, "layers": [16, 16], "classifier_layers": [16],
         "batch_size": 64, "sample_seeds": [0, 1]}


def _config(tmp_path, **extra):
    data = tmp_path / "data"
    if not data.exists():
        write_database(make_two_table(), data)
    cfg = dict(SMALL, data_dir=str(data), model_dir=str(tmp_path / "models"), out_dir=str(tmp_path / "out"))
    cfg.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_gen_toy_diamond(tmp_path):
    assert main(["gen-toy", "--out", str(tmp_path / "toy"), "--spec", "diamond", "--seed", "1"]) == 0
    db = load_database(tmp_path / "toy")
    assert len(db.tables["sale"].foreign_keys) == 2
    assert "regime" not in db.tables["store"].data


def test_gen_toy_spec_file(tmp_path):
    spec = {"tables": {"a": {"rows": 10, "numeric": 1}, "b": {"parents": ["a"], "group_size": [1, 2], "numeric": 1}}}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    assert main(["gen-toy", "--out", str(tmp_path / "toy"), "--spec", str(tmp_path / "spec.json")]) == 0
    assert load_database(tmp_path / "toy").tables["a"].row_count == 10


def test_validate(tmp_path, capsys, berka_dir):
    assert main(["validate", "--data", str(berka_dir)]) == 0
    assert "8 tables, 8 foreign keys, depth 4" in capsys.readouterr().out


def test_validate_dangling_fk_exit_2(tmp_path):
    write_database(make_two_table(), tmp_path / "d")
    path = tmp_path / "d" / "child.csv"
    lines = path.read_text().splitlines()
    lines[1] = lines[1].rsplit(",", 1)[0] + ",nope"
    path.write_text("\n".join(lines) + "\n")
    assert main(["validate", "--data", str(tmp_path / "d")]) == 2


def test_missing_directory_exit(tmp_path):
    assert main(["validate", "--data", str(tmp_path / "none")]) in (2, 4)


def test_bad_config_exit_2(tmp_path):
    assert main(["fit", "--config", str(_config(tmp_path, k_clusters=0))]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"no_such_key": 1}))
    assert main(["fit", "--config", str(bad)]) == 2


def test_fit_refuses_overwrite(tmp_path):
    cfg = str(_config(tmp_path))
    assert main(["fit", "--config", cfg]) == 0
    assert main(["fit", "--config", cfg]) == 4
    assert main(["fit", "--config", cfg, "--force"]) == 0


def test_fit_sample_eval(tmp_path):
    cfg = str(_config(tmp_path, singlet=True))
    assert main(["fit", "--config", cfg]) == 0
    out = tmp_path / "synth"
    assert main(["sample", "--model", str(tmp_path / "models"), "--out", str(out), "--seed", "2"]) == 0
    assert (out / "provenance.json").exists()
    assert main(["sample", "--model", str(tmp_path / "models"), "--out", str(tmp_path / "st"), "--singlet"]) == 2
    assert main(["sample", "--model", str(tmp_path / "models"), "--out", str(tmp_path / "st"), "--singlet",
                 "--data", str(tmp_path / "data")]) == 0
    rep = tmp_path / "r.json"
    assert main(["eval", "--real", str(tmp_path / "data"), "--synth", str(out), "--report", str(rep),
                 "--csv", str(tmp_path / "r.csv"), "--dcr", "--model", str(tmp_path / "models")]) == 0
    d = json.loads(rep.read_text())
    assert "dcr_median" in d and "agree_rates" in d
    assert all(0.0 <= v <= 100.0 for v in d["one_way"]["scores"].values())


def test_eval_real_real_is_100(tmp_path, berka_dir):
    rep = tmp_path / "r.json"
    assert main(["eval", "--real", str(berka_dir), "--synth", str(berka_dir), "--report", str(rep)]) == 0
    d = json.loads(rep.read_text())
    assert d["cardinality"]["mean"] == 100.0 and d["one_way"]["mean"] == 100.0
    assert all(v == 100.0 for blk in d["khop"].values() for v in blk["scores"].values())
    assert d["avg_two_way"] == 100.0


def test_pipeline_writes_report(tmp_path):
    cfg = str(_config(tmp_path, singlet=True))
    assert main(["pipeline", "--config", cfg, "--threads", "1"]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["seeds"] == [0, 1]
    assert set(report) == {"seeds", "clava", "singlet"}
    assert set(report["clava"]["cardinality"]["mean"]) == {"mean", "std"}
    for s in (0, 1):
        assert (tmp_path / "out" / f"seed_{s}" / "child.csv").exists()
        assert (tmp_path / "out" / f"singlet_seed_{s}" / "report.json").exists()


def test_flags_override_config(tmp_path):
    cfg = str(_config(tmp_path))
    assert main(["fit", "--config", cfg, "--model", str(tmp_path / "other"), "--iterations", "1"]) == 0
    meta = json.loads((tmp_path / "other" / "meta.json").read_text())
    assert meta["config"]["iterations"] == 1


def test_module_entry_point():
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "clava", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "pipeline" in r.stdout


@pytest.mark.parametrize("level", ["error", "debug"])
def test_log_level_env(tmp_path, monkeypatch, berka_dir, level):
    monkeypatch.setenv("CLAVA_LOG", level)
    assert main(["validate", "--data", str(berka_dir)]) == 0
