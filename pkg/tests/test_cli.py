import csv
import json
import shutil
import subprocess

import pytest

from mhecert.certify import DiossCertificate, save_certificate
from mhecert.cli import main

import numpy as np


@pytest.fixture
def cfgdir(tmp_path, configs_dir):
    d = tmp_path / "configs"
    shutil.copytree(configs_dir, d)
    return d


def test_verify_printed_certificate_fails(cfgdir, capsys):
    code = main(["verify", "--model", str(cfgdir / "reactor.json"),
                 "--cert", str(cfgdir / "reactor_certificate.json")])
    out = capsys.readouterr().out
    assert code == 1
    assert "worst LMI eigenvalue 4.06" in out and "soundness: exact" in out


def test_verify_synthesized_certificate_passes(cfgdir, synth_cert, capsys):
    save_certificate(synth_cert, cfgdir / "synth.json")
    code = main(["verify", "--model", str(cfgdir / "reactor.json"),
                 "--cert", str(cfgdir / "synth.json"), "--tol", "1e-9"])
    assert code == 0 and "PASS" in capsys.readouterr().out


def test_verify_grid(cfgdir, synth_cert, capsys):
    save_certificate(synth_cert, cfgdir / "synth.json")
    code = main(["verify", "--model", str(cfgdir / "reactor.json"),
                 "--cert", str(cfgdir / "synth.json"), "--grid", "5,5,1,1,1"])
    assert code == 0 and "heuristic" in capsys.readouterr().out


def test_verify_eta_zero_fails(cfgdir):
    doc = json.load(open(cfgdir / "reactor_certificate.json"))
    doc["eta"] = 0.0
    json.dump(doc, open(cfgdir / "eta0.json", "w"))
    assert main(["verify", "--model", str(cfgdir / "reactor.json"),
                 "--cert", str(cfgdir / "eta0.json")]) == 1


def test_usage_errors_exit_2(cfgdir, capsys):
    assert main(["verify", "--model", "missing.json", "--cert", "missing.json"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--model", str(cfgdir / "reactor.json")])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    (cfgdir / "bad.json").write_text("{")
    assert main(["horizon", "--cert", str(cfgdir / "bad.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["synthesize", "--model", str(cfgdir / "reactor.json"), "--eta-grid", "0.9"])
    assert exc.value.code == 2


def test_horizon_ref_certificate(cfgdir, capsys):
    assert main(["horizon", "--cert", str(cfgdir / "reactor_certificate.json")]) == 0
    out = capsys.readouterr().out.splitlines()
    proposed = [l for l in out if l.startswith("proposed")][0]
    assert proposed.split()[-1] == "15"
    assert any(l.startswith("allan2021FIE") and ">" in l for l in out)


def test_horizon_eta_half(tmp_path, capsys):
    save_certificate(DiossCertificate.quadratic(np.eye(2), np.eye(3), np.eye(1), 0.5),
                     tmp_path / "c.json")
    main(["horizon", "--cert", str(tmp_path / "c.json")])
    proposed = [l for l in capsys.readouterr().out.splitlines() if l.startswith("proposed")][0]
    assert proposed.split()[-1] == "3"


def test_compare_writes_csv(cfgdir, tmp_path):
    out = tmp_path / "cmp.csv"
    assert main(["compare", "--cert", str(cfgdir / "reactor_certificate.json"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    m = {r["method"]: int(r["M_min"]) for r in rows}
    assert m["proposed"] == 15
    assert m["proposed"] < m["knuefer2021MHE"] <= m["allan2019moving"] < m["allan2021FIE"]


def test_synthesize(cfgdir, tmp_path, capsys):
    out = tmp_path / "c.json"
    assert main(["synthesize", "--model", str(cfgdir / "reactor.json"),
                 "--eta-grid", "0.88:0.95:0.01", "--out", str(out)]) == 0
    assert json.load(open(out))["eta"] == 0.9


def test_synthesize_infeasible(tmp_path):
    m = {"model": "linear", "A": [[2.0]], "B": [[1.0]], "C": [[0.0]], "D": [[1.0]],
         "x_box": [[-1, 1]], "w_box": [[-1, 1]]}
    (tmp_path / "m.json").write_text(json.dumps(m))
    assert main(["synthesize", "--model", str(tmp_path / "m.json"), "--eta-grid", "0.5:0.9:0.2"]) == 1


def test_simulate_exact_prior(cfgdir, tmp_path, capsys):
    out = tmp_path / "log.csv"
    assert main(["simulate", "--scenario", str(cfgdir / "scenario_exact_prior.json"),
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert float(rows[-1]["err_norm"]) <= 1e-6


def test_simulate_short_horizon_informational(cfgdir, tmp_path, capsys):
    out = tmp_path / "log.json"
    code = main(["simulate", "--scenario", str(cfgdir / "scenario_short_horizon.json"),
                 "--out", str(out), "--format", "json", "--steps", "30"])
    text = capsys.readouterr().out
    assert code == 0
    assert "NOT met" in text and "informational" in text
    assert json.load(open(out))["summary"]["horizon_condition"]["rho_M"] == pytest.approx(4 * 0.91 ** 5)


def test_simulate_overrides_and_seed_env(cfgdir, tmp_path, monkeypatch, capsys):
    out = tmp_path / "a.json"
    monkeypatch.setenv("MHECERT_SEED", "77")
    main(["simulate", "--scenario", str(cfgdir / "scenario_reactor.json"), "--out", str(out),
          "--format", "json", "--steps", "5", "--horizon", "4", "--eta", "0.9"])
    sc = json.load(open(out))["scenario"]
    assert sc["seed"] == 77 and sc["M"] == 4 and sc["cert"]["eta"] == 0.9 and sc["T"] == 5
    main(["simulate", "--scenario", str(cfgdir / "scenario_reactor.json"), "--out", str(out),
          "--format", "json", "--steps", "5", "--seed", "5"])
    assert json.load(open(out))["scenario"]["seed"] == 5
    monkeypatch.setenv("MHECERT_SEED", "abc")
    assert main(["simulate", "--scenario", str(cfgdir / "scenario_reactor.json"),
                 "--out", str(out), "--steps", "5"]) == 2


def test_simulate_plant_abort(cfgdir, tmp_path):
    doc = json.load(open(cfgdir / "scenario_reactor.json"))
    doc["x0_true"] = [0.1, 0.1]
    doc["T"] = 50
    (cfgdir / "abort.json").write_text(json.dumps(doc))
    assert main(["simulate", "--scenario", str(cfgdir / "abort.json"), "--out",
                 str(tmp_path / "x.csv")]) == 1


def test_console_script(cfgdir):
    exe = shutil.which("mhecert")
    if exe is None:
        pytest.skip("console script not installed")
    res = subprocess.run([exe, "horizon", "--cert", str(cfgdir / "reactor_certificate.json")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "proposed" in res.stdout
