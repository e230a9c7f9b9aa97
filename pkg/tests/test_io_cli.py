import json
import os

import numpy as np
import pytest

from refti import cli
from refti.errors import InvalidArgumentError, MissingTraceError
from refti.io import (
    RECORD_SCHEMA,
    RunConfig,
    RunRecord,
    atomic_write,
    convergence_csv,
    lambda_curve_csv,
    running_mean_csv,
)
from refti.runner import run_evidence

FAST = {"n_iter": 200, "n_chains": 2, "seed": 3}


def test_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(InvalidArgumentError):
        RunConfig.from_dict({"model_id": "cusp1d", "colour": "red"})
    with pytest.raises(InvalidArgumentError):
        RunConfig("cusp1d", sampler={"n_iters": 5})
    with pytest.raises(InvalidArgumentError):
        RunConfig("cusp1d", method="bridge")
    with pytest.raises(InvalidArgumentError):
        RunConfig("cusp1d", lambdas=[0.0, 0.5])
    with pytest.raises(InvalidArgumentError):
        RunConfig("radiata:M1", method="model-switch")


def test_config_round_trip(tmp_path):
    c = RunConfig("cusp1d", lambdas=[0, 0.2, 0.5, 0.8, 1], sampler=FAST, emit_traces=True)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(c.to_dict()))
    assert RunConfig.load(str(p)) == c


def test_record_round_trip_and_determinism(tmp_path):
    c = RunConfig("cusp1d", lambdas=5, sampler=FAST, emit_traces=True, output_path=str(tmp_path / "r.json"))
    a = run_evidence(c)
    b = run_evidence(c)
    assert a.deterministic_json() == b.deterministic_json()
    loaded = RunRecord.load(c.output_path)
    assert loaded.to_json() == b.to_json()
    assert loaded.schema == RECORD_SCHEMA
    assert loaded.evidence().to_dict(with_traces=True) == b.result


def test_record_schema_file_validates_records(tmp_path):
    jsonschema = pytest.importorskip("jsonschema")
    from importlib import resources

    schema = json.loads(resources.files("refti").joinpath("schema").joinpath("run-record.schema.json").read_text())
    rec = run_evidence(RunConfig("cusp1d", lambdas=3, sampler=FAST))
    jsonschema.validate(json.loads(rec.to_json()), schema)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    p = tmp_path / "sub" / "x.txt"
    atomic_write(str(p), "hello")
    atomic_write(str(p), "world")
    assert p.read_text() == "world"
    assert os.listdir(p.parent) == ["x.txt"]


def test_plot_csvs_shapes():
    rec = run_evidence(RunConfig("cusp1d", lambdas=[0, 0.2, 0.5, 0.8, 1], sampler=FAST, emit_traces=True))
    res = rec.evidence()
    lines = lambda_curve_csv(res).strip().splitlines()
    assert sum(line.startswith("measured") for line in lines) == 5
    assert sum(line.startswith("spline") for line in lines) == 101
    rm = running_mean_csv(res).strip().splitlines()
    assert len(rm) == 1 + 5 * 200
    conv = convergence_csv(res).strip().splitlines()
    assert conv[0].startswith("iteration,log_z_running") and len(conv) == 201


def test_missing_traces_error():
    rec = run_evidence(RunConfig("cusp1d", lambdas=3, sampler=FAST))
    with pytest.raises(MissingTraceError):
        running_mean_csv(rec.evidence())


# -- command line -----------------------------------------------------------


def test_cli_evidence_exit_codes(tmp_path, capsys):
    out = tmp_path / "r.json"
    code = cli.main(["evidence", "--model", "radiata:M2", "--method", "laplace", "--reference", "mode",
                     "--out", str(out)])
    assert code == 0
    rec = RunRecord.load(str(out))
    assert rec.result["ti_correction"] == 0.0 and np.isfinite(rec.result["log_z"])
    assert cli.main(["evidence", "--model", "no-such-model"]) == 3
    assert cli.main(["evidence", "--model", str(tmp_path / "gone.json")]) == 4
    with pytest.raises(SystemExit) as e:
        cli.main(["evidence", "--method", "nope"])
    assert e.value.code == 3


def test_cli_flagged_run_exits_2(tmp_path):
    code = cli.main(["evidence", "--model", "constrained2d", "--iters", "8", "--warmup", "8", "--chains", "4",
                     "--lambdas", "3", "--out", str(tmp_path / "r.json")])
    assert code == 2
    assert RunRecord.load(str(tmp_path / "r.json")).status == "flagged"


def test_cli_compare(tmp_path):
    d = tmp_path / "runs"
    for m in ("radiata:M1", "radiata:M2"):
        assert cli.main(["evidence", "--model", m, "--method", "laplace", "--reference", "mode",
                         "--out", str(d / f"{m.replace(':', '_')}.json")]) == 0
    assert cli.main(["compare", str(d), "--out-dir", str(tmp_path / "cmp")]) == 0
    bf = json.loads((tmp_path / "cmp" / "bf.json").read_text())
    assert bf["best_per_family"] == {"radiata": "radiata:M2"}
    assert bf["log_bf"][1][0] == pytest.approx(-bf["log_bf"][0][1])
    assert (tmp_path / "cmp" / "bf.csv").read_text().startswith("model,radiata:M1,radiata:M2")
    assert cli.main(["compare", str(d / "radiata_M1.json"), "--out-dir", str(tmp_path / "c2")]) == 3


def test_cli_compare_refuses_mismatched_data(tmp_path):
    recs = []
    for i, m in enumerate(("radiata:M1", "radiata:M2")):
        r = run_evidence(RunConfig(m, method="laplace", reference_kind="mode"))
        if i:
            r.data_checksums = {k: "0" * 64 for k in r.data_checksums}
        p = tmp_path / f"{i}.json"
        p.write_text(r.to_json())
        recs.append(str(p))
    assert cli.main(["compare", *recs, "--out-dir", str(tmp_path / "cmp")]) == 4
    assert not (tmp_path / "cmp" / "bf.json").exists()


def test_cli_fetch_cases_offline(tmp_path):
    src = tmp_path / "ecdc.csv"
    src.write_text(
        "dateRep,cases,countriesAndTerritories\n"
        "03/03/2020,3,South_Korea\n01/03/2020,1,South_Korea\n02/03/2020,2,South_Korea\n02/03/2020,9,Italy\n"
    )
    out = tmp_path / "sk.csv"
    assert cli.main(["fetch-cases", "--from-file", str(src), "--out", str(out)]) == 0
    assert out.read_text() == "date,cases\n2020-03-01,1\n2020-03-02,2\n2020-03-03,3\n"
    meta = json.loads((tmp_path / "sk.csv.meta.json").read_text())
    assert len(meta["source_sha256"]) == 64 and meta["rows"] == 3
    src.write_text("dateRep,cases\n01/03/2020,1\n")
    assert cli.main(["fetch-cases", "--from-file", str(src), "--out", str(tmp_path / "x.csv")]) == 4


def test_cli_fetch_network_failure(tmp_path):
    code = cli.main(["fetch-cases", "--url", "http://127.0.0.1:9/none", "--out", str(tmp_path / "x.csv")])
    assert code == 4 and not (tmp_path / "x.csv").exists()


def test_cli_emit_plots(tmp_path):
    rec = tmp_path / "r.json"
    assert cli.main(["evidence", "--model", "cusp1d", "--lambdas", "0,0.2,0.5,0.8,1", "--iters", "200",
                     "--chains", "2", "--traces", "--out", str(rec)]) in (0, 2)
    assert cli.main(["emit-plots", "--record", str(rec), "--out-dir", str(tmp_path / "p")]) == 0
    assert sorted(os.listdir(tmp_path / "p")) == ["r.convergence.csv", "r.lambda-curve.csv", "r.running-mean.csv"]
    bare = tmp_path / "bare.json"
    assert cli.main(["evidence", "--model", "cusp1d", "--lambdas", "3", "--iters", "100", "--out", str(bare)]) in (0, 2)
    assert cli.main(["emit-plots", "--record", str(bare), "--out-dir", str(tmp_path / "q")]) == 3
    assert not (tmp_path / "q").exists() or not os.listdir(tmp_path / "q")


def test_cli_config_file_and_workers_env(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model_id": "gaussian:1.5", "lambdas": 3, "sampler": {"n_iter": 300}}))
    monkeypatch.setenv("REFTI_WORKERS", "2")
    out = tmp_path / "r.json"
    assert cli.main(["evidence", "--config", str(cfg), "--seed", "4", "--out", str(out)]) in (0, 2)
    rec = RunRecord.load(str(out))
    assert rec.config["sampler"] == {"n_iter": 300, "seed": 4}
    monkeypatch.setenv("REFTI_WORKERS", "zero")
    assert cli.main(["evidence", "--config", str(cfg)]) == 3


def test_cli_pp_requires_prior():
    assert cli.main(["evidence", "--model", "cusp1d", "--method", "pp", "--iters", "10"]) == 3


def test_cli_mode_falls_back_on_cusp(tmp_path):
    out = tmp_path / "r.json"
    assert cli.main(["evidence", "--model", "cusp1d", "--method", "laplace", "--reference", "mode",
                     "--iters", "300", "--out", str(out)]) == 0
    rec = RunRecord.load(str(out))
    assert rec.extra["reference"]["name"] == "sampled"
    assert "reference_fallback" in rec.extra
