import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from inclusion_probe.cli import run
from inclusion_probe.fem import read_matrix_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMOKE = str(CONFIGS / "smoke.toml")


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_help_runs():
    r = subprocess.run([sys.executable, "-c", "from inclusion_probe.cli import main; main()", "--help"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("forward", "probe", "inside-dtn", "kernels-check"):
        assert cmd in r.stdout


def test_schema_error_names_missing_section(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text((CONFIGS / "smoke.toml").read_text().replace("[mesh]", "[mesh_typo]"))
    assert run(["forward", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "schema error" in err and "[mesh]" in err


def test_schema_error_for_unparsable_expression(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    text = (CONFIGS / "smoke.toml").read_text()
    text = text.replace('[gamma0]\nkind = "constant"\nvalue = 1.0', '[gamma0]\nkind = "expression"\nexpr = "1 + * x"')
    cfg.write_text(text)
    assert run(["forward", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "gamma0" in capsys.readouterr().err


def test_forward_outputs_and_manifest(tmp_path):
    out = tmp_path / "fw"
    assert run(["forward", SMOKE, "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "forward"
    for name, digest in man["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    hdr, L = read_matrix_csv(out / "dtn_gamma.csv")
    assert np.abs(L - L.T).max() <= 1e-12 * np.abs(L).max()
    assert "time" not in json.dumps(man)


def test_probe_deterministic_across_jobs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["probe", SMOKE, "--out", str(a), "--seed", "3", "--validation"]) == 0
    assert run(["probe", SMOKE, "--out", str(b), "--seed", "3", "--validation", "--jobs", "2"]) == 0
    assert tree_bytes(a) == tree_bytes(b)
    summary = json.loads((a / "summary.json").read_text())
    assert len(summary["needles"]) == 3
    assert "oracle_distance" in (a / "traces" / "needle_000.csv").read_text().splitlines()[0]


def test_probe_without_validation_hides_truth(tmp_path):
    out = tmp_path / "p"
    assert run(["probe", SMOKE, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert "hausdorff_one_sided" not in summary
    assert all("t_true" not in n for n in summary["needles"])
    assert "oracle_distance" not in (out / "traces" / "needle_000.csv").read_text()


def test_seed_changes_noisy_outputs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(["forward", SMOKE, "--out", str(a), "--seed", "1"])
    run(["forward", SMOKE, "--out", str(b), "--seed", "2"])
    assert (a / "oracle_audit.csv").read_bytes() != (b / "oracle_audit.csv").read_bytes()


def test_inside_dtn_exact_interior(tmp_path):
    out = tmp_path / "in"
    assert run(["inside-dtn", SMOKE, "--out", str(out), "--exact-interior"]) == 0
    rep = json.loads((out / "comparison.json").read_text())
    assert rep["mode"] == "exact_interior"
    assert rep["lambda_minus_relative_error"] <= 0.05
    assert rep["identity_residual_direct"] <= 1e-6
    hdr, Lm = read_matrix_csv(out / "lambda_minus.csv")
    assert Lm.shape == (len(hdr), len(hdr)) and len(hdr[0].split()) == 2


def test_kernels_check_and_injected_failure(tmp_path):
    assert run(["kernels-check", SMOKE, "--out", str(tmp_path / "k")]) == 0
    rep = json.loads((tmp_path / "k" / "report.json").read_text())
    assert rep["passed"]
    assert run(["kernels-check", SMOKE, "--out", str(tmp_path / "kf"), "--inject-failure"]) == 1
    rep = json.loads((tmp_path / "kf" / "report.json").read_text())
    assert not rep["passed"]


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        run(["reconstruct", SMOKE])


def test_schema_error_for_bad_probe_settings(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text((CONFIGS / "smoke.toml").read_text().replace("[probe]\n", "[probe]\nbogus = 1\n"))
    assert run(["probe", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "[probe]" in capsys.readouterr().err
