import json
import math
import re
import shutil
from pathlib import Path

import numpy as np
import pytest

from peakfield.harness import runner
from peakfield.harness.cli import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_OK, main
from peakfield.harness.config import ConfigError, config_from_dict, load_config
from peakfield.harness.runner import parse_csv, record_csv, record_json, run, snake_key

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BLOCK = {"experiment": "sup-stats", "name": "blk", "seed": 7, "trials": 20_000, "field": {"kind": "block", "K": 2, "N": 4}}


def write_toml(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


@pytest.mark.parametrize(
    "doc, key",
    [
        ({**BLOCK, "experiment": "nope"}, "experiment"),
        ({**BLOCK, "colour": 1}, "colour"),
        ({**BLOCK, "field": {"kind": "torus"}}, "field.kind"),
        ({**BLOCK, "field": {"kind": "block", "K": 2}}, "field.N"),
        ({**BLOCK, "trials": 1}, "trials"),
        ({**BLOCK, "seed": -1}, "seed"),
        ({**BLOCK, "seed": 1 << 64}, "seed"),
        ({**BLOCK, "trials": 2.5}, "trials"),
        ({**BLOCK, "field": {"kind": "explicit", "covariance_csv": "missing.csv"}}, "field.covariance_csv"),
        ({**BLOCK, "field": {"kind": "explicit"}}, "field"),
        ({**BLOCK, "field": {"kind": "sk", "n": 4, "normalization": "weird"}}, "field.normalization"),
        ({**BLOCK, "params": {"x": math.inf}}, "params.x"),
    ],
)
def test_config_errors_name_the_key(doc, key, tmp_path):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(doc, tmp_path)
    assert exc.value.key == key


def test_invalid_covariance_is_a_config_error(tmp_path):
    (tmp_path / "bad.csv").write_text("1,2\n2,1\n")
    with pytest.raises(ConfigError):
        config_from_dict({**BLOCK, "field": {"kind": "explicit", "covariance_csv": "bad.csv"}}, tmp_path)


def test_shipped_configs_load():
    for path in sorted(CONFIGS.glob("*.toml")):
        cfg = load_config(path)
        assert cfg.build_field().size >= 1


def test_sup_stats_record_and_round_trip(tmp_path):
    rec = run(config_from_dict(BLOCK, tmp_path), tmp_path)
    m = next(r for r in rec.estimates if r["estimate"] == "m_hat")
    assert abs(m["value"] - 1 / math.sqrt(math.pi)) < 4 * m["stderr"]
    assert rec.passed
    raw = (tmp_path / "blk.csv").read_bytes()
    assert raw.startswith(b"config,experiment,estimate,value,ci_low,ci_high,stderr\r\n")
    assert raw.count(b"\r\n") == len(rec.estimates) + 1
    rows = parse_csv(raw.decode("utf-8"))
    assert [r["estimate"] for r in rows] == [r["estimate"] for r in rec.estimates]
    for a, b in zip(rows, rec.estimates):
        assert a["value"] == b["value"] and a["ci_low"] == b["ci_low"]
    doc = json.loads((tmp_path / "blk.json").read_text(encoding="utf-8"))
    assert set(doc) == {"config", "field", "estimates", "checks", "details", "provenance"}
    assert doc["estimates"] == rec.estimates
    assert json.loads((tmp_path / "blk.timing.json").read_text())["wall_clock_seconds"] >= 0


def _keys(obj):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield k
            yield from _keys(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from _keys(v)


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_json_keys_are_lower_snake(name):
    cfg = load_config(CONFIGS / name)
    small = {"martingale": 4, "tail": 2, "surface": 20_000}.get(cfg.experiment, 2000)
    doc = json.loads(record_json(run(cfg.with_overrides(trials=small))))
    for k in _keys(doc):
        assert re.fullmatch(r"[a-z0-9_]+", k), k


def test_snake_key_examples():
    assert snake_key("L_hat") == "l_hat"
    assert snake_key("log N / (delta m)") == "log_n_delta_m"
    assert snake_key("K") == "k"


def test_non_finite_values_serialise(tmp_path):
    rec = run(config_from_dict(BLOCK, tmp_path))
    rec.estimates.append({"config": "blk", "experiment": "sup-stats", "estimate": "odd, \"quoted\"", "value": math.inf,
                          "ci_low": None, "ci_high": None, "stderr": math.nan})
    doc = json.loads(record_json(rec))
    assert doc["estimates"][-1]["value"] == "inf"
    row = parse_csv(record_csv(rec))[-1]
    assert row["estimate"] == 'odd, "quoted"'
    assert row["value"] == math.inf and math.isnan(row["stderr"]) and row["ci_low"] is None


def test_reruns_are_byte_identical(tmp_path):
    cfg = config_from_dict(BLOCK, tmp_path)
    run(cfg, tmp_path / "a")
    run(cfg.with_overrides(workers=3), tmp_path / "b")
    for ext in ("json", "csv"):
        a = (tmp_path / "a" / f"blk.{ext}").read_bytes()
        b = (tmp_path / "b" / f"blk.{ext}").read_bytes().replace(b'"workers": 3', b'"workers": 1')
        assert a == b


# -- command line -------------------------------------------------------------


def test_cli_runs_a_config(tmp_path, capsys):
    cfg = shutil.copy(CONFIGS / "sup_stats_block.toml", tmp_path / "c.toml")
    code = main(["sim", "--config", str(cfg), "--trials", "5000", "--seed", "3", "--out", str(tmp_path / "o")])
    assert code == EXIT_OK
    doc = json.loads((tmp_path / "o" / "sup-stats-block.json").read_text())
    assert doc["config"]["trials"] == 5000 and doc["config"]["seed"] == 3
    assert "m_hat" in capsys.readouterr().out


def test_cli_config_errors(tmp_path, capsys):
    assert main(["sim", "--config", str(tmp_path / "absent.toml")]) == EXIT_CONFIG
    bad = write_toml(tmp_path / "bad.toml", 'experiment = "sup-stats"\ntrials = 1\n[field]\nkind = "block"\nK = 2\nN = 4\n')
    assert main(["sim", "--config", str(bad)]) == EXIT_CONFIG
    broken = write_toml(tmp_path / "broken.toml", "experiment = \n")
    assert main(["sim", "--config", str(broken)]) == EXIT_CONFIG
    # experiment belongs to another subcommand
    assert main(["tail", "--config", str(CONFIGS / "sup_stats_block.toml")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["sim"])
    assert exc.value.code == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--profile", "medium"])
    assert exc.value.code == EXIT_CONFIG


def test_cli_failed_check_exits_two(tmp_path, monkeypatch):
    monkeypatch.setitem(runner.DISPATCH, "sup-stats", lambda cfg, field, rows: ({"forced": False}, {}))
    cfg = write_toml(tmp_path / "c.toml", (CONFIGS / "sup_stats_block.toml").read_text())
    assert main(["sim", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_ACCEPTANCE


def test_default_output_directory_is_relative_to_config(tmp_path):
    cfg = write_toml(tmp_path / "c.toml", (CONFIGS / "tail_shifted.toml").read_text())
    assert main(["tail", "--config", str(cfg)]) == EXIT_OK
    assert list((tmp_path / "results").glob("*.csv"))


def test_explicit_config_reads_csv_covariance(tmp_path):
    shutil.copy(CONFIGS / "triangle_cov.csv", tmp_path / "triangle_cov.csv")
    cfg = write_toml(tmp_path / "c.toml", (CONFIGS / "surface_explicit.toml").read_text())
    field = load_config(cfg).build_field()
    np.testing.assert_allclose(field.covariance_matrix(), np.loadtxt(CONFIGS / "triangle_cov.csv", delimiter=","), atol=1e-12)
