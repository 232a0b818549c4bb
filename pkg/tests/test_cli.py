import json

import numpy as np
import pytest
from click.testing import CliRunner

from blowup_lab import storage
from blowup_lab.cli import (EXIT_CONFIG, EXIT_MISSING_TABLE, EXIT_OK, ConfigError, load_config,
                            main, run_command)


@pytest.fixture
def seeded(tmp_path, table, tm):
    base = tmp_path / "tables" / table.key
    storage.save_table(table, base / "table")
    storage.save_transference(tm, base / "transference")
    return tmp_path


def invoke(*args):
    return CliRunner().invoke(main, list(args))


def test_unknown_experiment_exit_code(tmp_path):
    r = invoke("no-such-thing", "--out", str(tmp_path))
    assert r.exit_code == EXIT_CONFIG
    assert run_command("no-such-thing", load_config("growth"))[0] == EXIT_CONFIG


def test_bad_configs(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("colour: blue\n")
    assert invoke("growth", "--config", str(p), "--out", str(tmp_path)).exit_code == EXIT_CONFIG
    p.write_text("nu: -1\n")
    assert invoke("growth", "--config", str(p), "--out", str(tmp_path)).exit_code == EXIT_CONFIG
    with pytest.raises(ConfigError):
        load_config("growth", overrides={"window": 0.5})
    with pytest.raises(ConfigError):
        load_config("growth", overrides={"bulk": "solid"})


def test_experiment_defaults():
    cfg = load_config("iterate")
    assert cfg.nu == pytest.approx(1 / 3) and cfg.tau0 == 40.0
    assert load_config("iterate", overrides={"nu": 0.25}).nu == 0.25


def test_missing_table_exit_code(tmp_path):
    r = invoke("growth", "--out", str(tmp_path))
    assert r.exit_code == EXIT_MISSING_TABLE


def test_build_table_uses_cache(seeded):
    r = invoke("build-table", "--out", str(seeded))
    assert r.exit_code == EXIT_OK, r.output
    js = [p for p in r.output.split() if p.endswith(".json")][0]
    body = json.loads(open(js).read())
    assert body["cache_hit"] is True and body["K_dd"] == pytest.approx(-0.5, abs=1e-3)


def test_growth_admissible_switch(seeded):
    expo = {}
    for flag in ("on", "off"):
        cfg = load_config("growth", overrides={"out": str(seeded), "n_taus": 8,
                                               "admissible": flag == "on"})
        code, paths = run_command("growth", cfg)
        assert code == EXIT_OK
        expo[flag] = json.loads(open(paths[1]).read())["fitted_exponent"]
    assert expo["on"] < expo["off"] - 1


def test_artifacts_are_reproducible(seeded, tmp_path_factory, table, tm):
    other = tmp_path_factory.mktemp("again")
    storage.save_table(table, other / "tables" / table.key / "table")
    storage.save_transference(tm, other / "tables" / table.key / "transference")
    outs = []
    for d in (seeded, other):
        cfg = load_config("discrete-fit", overrides={"out": str(d)})
        code, paths = run_command("discrete-fit", cfg)
        assert code == EXIT_OK
        outs.append(paths)
    assert outs[0][0].rsplit("/", 1)[1] == outs[1][0].rsplit("/", 1)[1]
    a, b = (open(p[0], "rb").read() for p in outs)
    assert a == b
    lines = a.decode().splitlines()
    assert lines[0].startswith("# config_hash=") and "format_version=1" in lines[0]
    assert lines[1].split(",")[0] == "tau0"


def test_persist_roundtrip_is_bit_exact(tmp_path, table, tm):
    back = storage.persist_load(table, tmp_path / "t")
    assert back.key == table.key and np.array_equal(back.phi, table.phi)
    mats = storage.persist_load(tm, tmp_path / "m")
    assert mats.Kdd == tm.Kdd and np.array_equal(mats.F, tm.F)


def test_corrupt_payload_is_rejected(tmp_path, tm):
    storage.save_transference(tm, tmp_path / "m")
    raw = bytearray((tmp_path / "m.f64").read_bytes())
    raw[100] ^= 0xFF
    (tmp_path / "m.f64").write_bytes(bytes(raw))
    with pytest.raises(storage.PersistError, match="checksum"):
        storage.load_transference(tmp_path / "m")


def test_version_and_kind_mismatch(tmp_path, table, tm):
    storage.save_transference(tm, tmp_path / "m")
    with pytest.raises(storage.PersistError, match="expected"):
        storage.load_table(tmp_path / "m")
    hdr = json.loads((tmp_path / "m.json").read_text())
    hdr["format_version"] = 99
    (tmp_path / "m.json").write_text(json.dumps(hdr))
    with pytest.raises(storage.PersistError, match="version"):
        storage.load_transference(tmp_path / "m")


def test_matrices_must_match_table(tmp_path, table, tm):
    storage.save_transference(tm, tmp_path / "m")
    hdr = json.loads((tmp_path / "m.json").read_text())
    hdr["meta"]["key"] = "0" * 16
    (tmp_path / "m.json").write_text(json.dumps(hdr))
    with pytest.raises(storage.PersistError, match="belong"):
        storage.load_transference(tmp_path / "m", table)
