import json

import numpy as np
import pytest

from gklab.cli import main
from gklab.config import DEFAULTS, ConfigError, load_config, validate
from gklab.experiments import run_experiment
from gklab.fields import Trajectory
from gklab.records import ResultRecord, field_csv, read_records, write_records

SMALL_HYDRO = {"experiment": "hydro", "N": [16, 32], "J": 32, "T": 0.05, "frames": 5,
               "replicas": 2, "blocks": 2}


# ----------------------------------------------------------------- config
def test_defaults():
    cfg = validate({})
    assert (cfg.J, cfg.dt, cfg.K_s, cfg.K_t) == (256, 1e-4, 8, 16)
    assert cfg.model == DEFAULTS["model"]


def test_misspelled_key_named():
    with pytest.raises(ConfigError, match="gamma_profil"):
        validate({"gamma_profil": {"kind": "constant"}})


@pytest.mark.parametrize("raw,needle", [
    ({"J": "64"}, "J: expected int"),
    ({"J": True}, "J: expected int"),
    ({"N": [64, 32]}, "ascending"),
    ({"dt": 0}, "dt: must be > 0"),
    ({"engine": "gillespie"}, "engine"),
    ({"model": {"preset": "triple-well"}}, "model:"),
    ({"gamma": {"kind": "spiral"}}, "gamma.kind"),
    ({"experiment": "nope"}, "experiment"),
])
def test_distinct_messages(raw, needle):
    with pytest.raises(ConfigError, match=needle):
        validate(raw)


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{J: 3")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)


def test_round_trip_hash(tmp_path):
    cfg = validate({"J": 64, "N": [32, 64]})
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    again = load_config(p)
    assert again.hash == cfg.hash and again.data == cfg.data
    assert cfg.replace(J=128).hash != cfg.hash
    assert cfg.replace(out=str(tmp_path / "elsewhere")).hash == cfg.hash


def test_overrides_win(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 3}))
    assert load_config(p, seed=9).seed == 9
    assert load_config(p, seed=None).seed == 3


# ---------------------------------------------------------------- records
def test_empty_record_list(tmp_path):
    manifest = write_records([], tmp_path / "run")
    body = json.loads(manifest.read_text())
    assert body["complete"] and body["records"] == 0
    assert read_records(tmp_path / "run") == []


def test_field_csv_layout():
    tr = Trajectory(np.array([0.0, 0.5]), np.array([[0.1, 0.2], [0.3, 0.4]]))
    rows = [list(map(float, r.split(","))) for r in field_csv(tr).splitlines()]
    assert rows == [[0.0, 0.1, 0.2], [0.5, 0.3, 0.4]]


def test_partial_manifest_on_io_error(tmp_path):
    out = tmp_path / "run"
    (out / "records.ndjson").mkdir(parents=True)
    rec = ResultRecord("x", "demo", "h", {"v": 1}, plots={"a.dat": ([0, 1], [2, 3])})
    with pytest.raises(OSError):
        write_records([rec], out)
    body = json.loads((out / "manifest.json").read_text())
    assert body["complete"] is False and "error" in body
    assert [f["name"] for f in body["files"]] == ["a.dat"]


def test_nonfinite_values_serialized(tmp_path):
    write_records([ResultRecord("x", "demo", "h", {"v": float("inf")})], tmp_path)
    assert read_records(tmp_path)[0]["payload"]["v"] == "inf"


@pytest.fixture(scope="module")
def hydro_runs(tmp_path_factory):
    dirs = []
    for k in range(2):
        out = tmp_path_factory.mktemp(f"hydro{k}")
        cfg = validate(dict(SMALL_HYDRO, out=str(out)))
        write_records(run_experiment(cfg), out, cfg.data)
        dirs.append(out)
    return dirs


def test_hydro_outputs(hydro_runs):
    out = hydro_runs[0]
    rows = np.loadtxt(out / "error_vs_N.dat", ndmin=2)
    assert rows[:, 0].tolist() == [16, 32]
    recs = read_records(out)
    assert [r["type"] for r in recs] == ["pde"] + ["replica"] * 4 + ["summary"]
    assert len({r["config_hash"] for r in recs}) == 1
    assert (out / recs[0]["fields"]["pde"]).exists()
    body = json.loads((out / "manifest.json").read_text())
    assert body["complete"] and body["config"]["N"] == [16, 32]


def test_reruns_byte_identical(hydro_runs):
    a, b = hydro_runs
    for name in ("records.ndjson", "error_vs_N.dat", "pde-0000-pde.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_parallel_matches_serial(hydro_runs, tmp_path, monkeypatch):
    monkeypatch.setenv("GKLAB_WORKERS", "2")
    cfg = validate(dict(SMALL_HYDRO, out=str(tmp_path)))
    write_records(run_experiment(cfg), tmp_path, cfg.data)
    assert (tmp_path / "records.ndjson").read_bytes() == \
        (hydro_runs[0] / "records.ndjson").read_bytes()


# -------------------------------------------------------------------- CLI
def _config(tmp_path, **kw):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(kw))
    return str(p)


def test_cli_derive_rates(capsys):
    assert main(["derive-rates"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["roots"] == [0.5]


def test_cli_simulate_ndjson(tmp_path, capsys):
    cfg = _config(tmp_path, N=[32], T=0.05, frames=4)
    assert main(["simulate", "--config", cfg, "--block", "8", "--seed", "5"]) == 0
    lines = [json.loads(s) for s in capsys.readouterr().out.splitlines()]
    assert lines[0]["type"] == "meta" and lines[0]["seed"] == 5 and lines[0]["N"] == 32
    assert [len(x["density"]) for x in lines[1:]] == [4] * 5


def test_cli_pde_csv(tmp_path, capsys):
    cfg = _config(tmp_path, J=16, T=0.1, frames=2)
    assert main(["pde", "--config", cfg]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert len(rows) == 3 and len(rows[0].split(",")) == 17


def test_cli_stationary_exact(capsys):
    assert main(["stationary", "--exact", "--N", "4"]) == 0
    rec = json.loads(capsys.readouterr().out)
    np.testing.assert_allclose(rec["probabilities"], np.full(16, 1 / 16), atol=1e-12)


def test_cli_rate_held_path(tmp_path, capsys):
    path = tmp_path / "held.csv"
    path.write_text(field_csv(Trajectory.held(np.full(16, 0.25), 1.0, 200)))
    cfg = _config(tmp_path, K_s=2, K_t=4)
    assert main(["rate", "--config", cfg, "--path", str(path)]) == 0
    recs = [json.loads(s) for s in capsys.readouterr().out.splitlines()]
    assert [r["route"] for r in recs] == ["variational", "explicit", "homogeneous"]
    for r in recs:
        assert r["value"] == pytest.approx(0.13397, rel=0.02)


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["pde", "--config", _config(tmp_path, gamma_profil={})]) == 2
    assert "gamma_profil" in capsys.readouterr().err
    assert main(["pde", "--config", str(tmp_path / "nope.json")]) == 2
    zero = tmp_path / "zero.csv"
    zero.write_text(field_csv(Trajectory.held(np.zeros(16), 1.0, 50)))
    assert main(["rate", "--route", "explicit", "--path", str(zero)]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_cli_experiment_writes_manifest(tmp_path):
    cfg = _config(tmp_path, **{k: v for k, v in SMALL_HYDRO.items() if k != "experiment"})
    out = tmp_path / "run"
    assert main(["experiment", "hydro", "--config", cfg, "--out", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["complete"]
