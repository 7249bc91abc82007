import numpy as np
import pytest

from satrecon import cli, io
from satrecon.isd import IsdAbort

SWEEP = ["synth", "sweep", "--experiment", "sparsity", "--trials", "1", "--seed", "3", "--grid", "100",
         "--methods", "lasso,m1bit-csr"]


def test_sweep_writes_tables(tmp_path):
    assert cli.main(SWEEP + ["--out", str(tmp_path)]) == cli.EXIT_OK
    meta, cols, rows = io.read_csv(tmp_path / "sparsity.csv")
    assert meta["seed"] == 3 and meta["trials"] == 1
    assert cols[:3] == ["grid", "method", "mean_snr_db"]
    assert [r[1] for r in rows] == ["lasso", "m1bit-csr"]
    _, tcols, trows = io.read_csv(tmp_path / "sparsity_trials.csv")
    assert len(trows) == 2 and "wall_time" not in tcols


def test_sweep_bytes_repeat(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(SWEEP + ["--out", str(a)]) == 0
    assert cli.main(SWEEP + ["--out", str(b)]) == 0
    for name in ("sparsity.csv", "sparsity_trials.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_config_file_fills_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sweep settings\nexperiment=sparsity\ntrials=1\nseed=3\ngrid=100\nmethods=lasso\n")
    out = tmp_path / "o"
    assert cli.main(["--config", str(cfg), "synth", "sweep", "--out", str(out), "--seed", "4"]) == 0
    meta, _, rows = io.read_csv(out / "sparsity.csv")
    assert meta["seed"] == 4 and len(rows) == 1


@pytest.mark.parametrize(
    "argv",
    [
        ["synth", "sweep", "--trials", "1"],
        ["synth", "sweep", "--experiment", "sparsity", "--trials", "0"],
        SWEEP + ["--param", "bogus=1"],
        SWEEP + ["--param", "tau=0.5"],
        ["detect", "--in", "/nonexistent/sino.csv", "--out", "x.csv"],
    ],
)
def test_invalid_spec_exit_code(argv, tmp_path, capsys):
    assert cli.main(argv) == cli.EXIT_SPEC
    assert "error" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour=blue\n")
    assert cli.main(["--config", str(cfg)] + SWEEP) == cli.EXIT_SPEC


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    import satrecon.ct.experiment as exp

    def boom(method, scan, cfg):
        raise IsdAbort("diverged", None)

    monkeypatch.setattr(exp, "reconstruct", boom)
    argv = ["ct", "run", "--phantom", "knee", "--nx", "16", "--pixel-size", "16", "--out", str(tmp_path)]
    assert cli.main(argv) == cli.EXIT_SOLVER


def test_ct_run_and_detect(tmp_path):
    argv = ["ct", "run", "--phantom", "knee", "--method", "fbp", "--nx", "32", "--pixel-size", "8",
            "--out", str(tmp_path)]
    assert cli.main(argv) == 0
    meta, cols, rows = io.read_csv(tmp_path / "ct_knee_fbp.csv")
    assert cols == ["method", "rmse_hu", "isd_rounds", "converged"] and rows[0][0] == "fbp"
    assert meta["seed"] == 0 and meta["kappa_frac"] == 0.5
    img, side = io.read_image(tmp_path / "ct_knee_fbp.pgm")
    assert img.shape == (32, 32) and side["pixel_size"] == 8
    sino = tmp_path / "ct_knee_fbp_sino.csv"
    psi_path = tmp_path / "psi.csv"
    assert cli.main(["detect", "--in", str(sino), "--out", str(psi_path)]) == 0
    psi, _ = io.read_matrix_csv(psi_path)
    p, _ = io.read_matrix_csv(sino)
    # every zero reading gets flagged, every positive one stays analog
    assert np.array_equal(psi.astype(bool), p <= 0)


def test_detect_fixed_threshold(tmp_path):
    src = tmp_path / "s.csv"
    io.emit_matrix_csv(src, np.array([[0.0, 1.0, 3.0], [2.0, 0.5, 0.0]]))
    assert cli.main(["detect", "--in", str(src), "--s-beta", "1.0", "--out", str(tmp_path / "p.csv")]) == 0
    psi, meta = io.read_matrix_csv(tmp_path / "p.csv")
    assert np.array_equal(psi, [[1, 1, 0], [0, 1, 1]]) and meta["flagged"] == 4
