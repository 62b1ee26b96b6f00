import csv
import json
from pathlib import Path

import numpy as np
import pytest

from uclab.cli import main
from uclab.io import read_field

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


SOLVE = "[domain]\nshape = box\nextents = 0 1 0 1\nh = 1/32\n[coefficients]\nA = 1\n[solve]\nboundary = x1*x2\n"


def test_solve_writes_field_and_manifest(tmp_path):
    cfg = _write(tmp_path, "s.ini", SOLVE)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    vals, h, _ = read_field(tmp_path / "o" / "field.bin")
    assert vals.shape == (33, 33) and h == 1 / 32
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert "field.bin" in man["artifacts"]
    assert "timings.json" not in man["artifacts"]


def test_validation_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, "b.ini", "[domain]\nshape = box\nextents = 0 1 0 1\nh = 1/64\n[field]\nformula = x1\n"
                 "[fit-tbi]\nrho = 0.2\nr = 0.04\nregion_rho = 0.2\n")
    assert main(["fit-tbi", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "rho = 0.2 is empty" in capsys.readouterr().err


def test_missing_config_exit_code(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.ini")]) == 2


def test_kind_mismatch(tmp_path):
    cfg = _write(tmp_path, "s.ini", "kind = spectra\n" + SOLVE)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_convergence_exit_code(tmp_path):
    # the eigen solver cannot reach a residual tolerance of zero
    from uclab import spectral as sp
    from uclab.exceptions import ConvergenceError
    from uclab.coefficients import make_metric
    from uclab.geometry import build_domain

    d = build_domain({"shape": "box", "extents": [0, 1, 0, 1]}, h=1 / 16)
    with pytest.raises(ConvergenceError) as info:
        sp.solve_eigs(sp.assemble_beltrami(d, make_metric(d, 1)), 4, tol=0.0)
    assert info.value.exit_code == 3


def test_certificate_violation_exit_code(tmp_path):
    cert = {"audit": [{"step_name": "x", "relation": "log(a)", "inputs": {"a": "2"}, "output": "a",
                       "log_value": "5"}], "outputs": {}}
    (tmp_path / "c.json").write_text(json.dumps(cert))
    cfg = _write(tmp_path, "v.ini", "[verify-certificate]\ncertificate = c.json\n")
    assert main(["verify-certificate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4


def test_vanishing_order_plot_rows(tmp_path):
    out = tmp_path / "vo"
    assert main(["vanishing-order", "--config", str(CONFIGS / "vanishing_order.ini"), "--out", str(out)]) == 0
    fit = json.loads((out / "vanishing_order.json").read_text())
    rows = list(csv.reader((out / "plot_vanishing_order.csv").open()))
    assert rows[0] == ["log_r", "log_norm"]
    assert len(rows) - 1 == len(fit["radii"])
    assert fit["gamma_slope"] == pytest.approx(4.0, abs=0.1)


def test_spectra_plot_and_plot_data(tmp_path):
    cfg = _write(tmp_path, "sp.ini", "[domain]\nshape = box\nextents = 0 1 0 1\nh = 1/32\n[spectra]\nk = 6\n")
    out = tmp_path / "sp"
    assert main(["spectra", "--config", str(cfg), "--out", str(out)]) == 0
    rows = list(csv.reader((out / "plot_spectra.csv").open()))
    assert rows[0] == ["k", "lambda", "weyl"] and len(rows) == 7
    lam = float(rows[1][1])
    assert float(rows[1][2]) == pytest.approx(lam / (4 * np.pi))
    assert (out / "archive" / "manifest.json").exists()
    pcfg = _write(tmp_path, "p.ini", f"[plot-data]\nrun = {out}\n")
    assert main(["plot-data", "--config", str(pcfg), "--out", str(tmp_path / "plots")]) == 0
    assert (tmp_path / "plots" / "plot_spectra.csv").read_text() == (out / "plot_spectra.csv").read_text()


def test_plot_data_missing_artifacts(tmp_path):
    (tmp_path / "empty").mkdir()
    cfg = _write(tmp_path, "p.ini", "[plot-data]\nrun = empty\n")
    assert main(["plot-data", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_certificate_audit_csv_matches_json(tmp_path):
    cfg = _write(tmp_path, "c.ini",
                 "[domain]\nshape = box\nextents = 0 1 0 1\nh = 1/1024\n"
                 "[field]\nformula = sin(pi*x1)*sin(pi*x2)\n"
                 "[certificate]\nrho = 0.1\ntau = 0.24\ngeometry_h = 1/32\nmax_centers = 30\nchain_pairs = 5\n"
                 "q_centers = 30\naudit_samples = 10\n")
    out = tmp_path / "c"
    assert main(["certificate", "--config", str(cfg), "--out", str(out)]) == 0
    cert = json.loads((out / "certificate.json").read_text())
    rows = list(csv.DictReader((out / "plot_certificate_audit.csv").open()))
    assert len(rows) == len(cert["audit"])
    for row, step in zip(rows, cert["audit"]):
        assert row["step_name"] == step["step_name"]
        assert row["log_value"] == step["log_value"]
        assert json.loads(row["inputs"]) == step["inputs"]


def test_observability_outputs(tmp_path):
    cfg = _write(tmp_path, "o.ini", "[domain]\nshape = box\nextents = 0 1 0 1\nh = 1/32\n"
                 "[field]\nsource = eigen\nmodes = 3\n[observability]\nfractions = 0.1 0.2\nmasks = 5\n")
    out = tmp_path / "o"
    assert main(["observability", "--config", str(cfg), "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "observability.csv").open()))
    assert len(rows) == 3 * 2 * 5
    hist = list(csv.DictReader((out / "plot_observability_hist.csv").open()))
    assert sum(int(r["count"]) for r in hist) == 30
