import os
import subprocess
import sys

import numpy as np
import pytest

from taylorhel import io
from taylorhel.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, main


def test_dry_run_validates_only(tmp_path):
    out = tmp_path / "never"
    assert main(["evolve", "--dry-run", "-o", str(out)]) == EXIT_OK
    assert not out.exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["evolve", "--eta", "-1", "--dry-run"],
        ["evolve", "--eta", "1e-2,1e-3", "--dry-run"],
        ["ideal-limit", "--eta", "1e-2,0", "--dry-run"],
        ["relax", "--recipe", "mobius", "--dry-run"],
        ["verify-identities", "--levels", "16,16", "--dry-run"],
    ],
)
def test_invalid_flags_exit_2(argv):
    assert main(argv) == EXIT_CONFIG


def test_unknown_config_key_exit_2(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("domain:\n  recipe: solid_torus\n  dimz: 3\n")
    assert main(["evolve", "-c", str(cfg)]) == EXIT_CONFIG


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("domain: {dims: 24}\nnumerics: {t_end: 5.0}\n")
    out = tmp_path / "run"
    assert main(["evolve", "-c", str(cfg), "--dims", "16", "--t-end", "0.05", "-o", str(out)]) == EXIT_OK
    hdr, rows = io.read_csv(out / "diagnostics.csv")
    assert float(rows[-1][hdr.index("t")]) == 0.05
    assert "16" in (out / "manifest.json").read_text()


def test_evolve_outputs_and_determinism(tmp_path):
    args = ["evolve", "--dims", "16", "--t-end", "0.1", "--cadence", "2"]
    cfg = tmp_path / "c.yaml"
    cfg.write_text("output: {snapshot_times: [0.0, 0.05]}\n")
    for name in ("a", "b"):
        assert main([*args, "-c", str(cfg), "-o", str(tmp_path / name)]) == EXIT_OK
    a, b = tmp_path / "a", tmp_path / "b"
    for f in ("diagnostics.csv", "summary.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    assert sorted(p.name for p in a.glob("*.hltr")) == ["B_000.hltr", "B_001.hltr", "B_final.hltr", "u_000.hltr", "u_001.hltr", "u_final.hltr"]


def test_helicity_and_export_vtk(tmp_path):
    out = tmp_path / "h"
    assert main(["helicity", "--dims", "16", "-o", str(out)]) == EXIT_OK
    hdr, rows = io.read_csv(out / "helicity.csv")
    assert hdr[:3] == ["H", "Upsilon", "Z"] and len(rows) == 1
    assert main(["export-vtk", "--dims", "16", "-o", str(out), str(out / "B.hltr"), str(out / "A.hltr")]) == EXIT_OK
    assert "VECTORS A double" in (out / "fields.vtk").read_text()
    assert main(["export-vtk", "--dims", "20", "-o", str(out), str(out / "B.hltr")]) == EXIT_CONFIG


def test_relax_command(tmp_path):
    out = tmp_path / "r"
    assert main(["relax", "-o", str(out)]) == EXIT_OK
    summary = dict(io.read_csv(out / "summary.csv")[1])
    assert summary["converged"] == "1" and summary["flux_drift_structural"] == "0"
    assert main(["relax", "-o", str(out), "--max-iter", "2"]) == EXIT_CHECK


def test_verify_identities_and_corrupted_basis(tmp_path, capsys):
    out = tmp_path / "v"
    argv = ["verify-identities", "--levels", "12,16", "--gauge-samples", "5", "-o", str(out)]
    assert main(argv) == EXIT_OK
    basis = out / "basis_16"
    assert main([*argv, "--basis", str(basis)]) == EXIT_OK
    # flip one value of the first harmonic field
    path = basis / "h_1.hltr"
    head, values = io.read_snapshot_raw(path)
    raw = bytearray(path.read_bytes())
    k = int(np.argmax(np.abs(values)))
    off = len(raw) - 8 * (values.size - k)
    raw[off : off + 8] = np.float64(values[k] + 0.5).tobytes()
    path.write_bytes(bytes(raw))
    capsys.readouterr()
    assert main([*argv, "--basis", str(basis)]) == EXIT_CHECK
    assert "flux_matrix" in capsys.readouterr().err


def test_box_marks_convergence_rows_not_applicable(tmp_path):
    out = tmp_path / "box"
    assert main(["verify-identities", "--recipe", "box", "--levels", "12,16", "--gauge-samples", "5", "-o", str(out)]) == EXIT_OK
    hdr, rows = io.read_csv(out / "identities.csv")
    conv = [r for r in rows if r[0] in ("iden_check", "z_consistency")]
    assert conv and all("n/a" in r[hdr.index("note")] for r in conv)


def test_module_entry_point_with_thread_variable(tmp_path):
    env = dict(os.environ, TAYLORHEL_THREADS="1")
    proc = subprocess.run([sys.executable, "-m", "taylorhel", "relax", "--dry-run"], env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "configuration valid" in proc.stdout
