import numpy as np
import pytest

from adaptikh.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main

SMALL = ["--problem", "gravity", "--size", "32", "--noise", "1e-2", "--seed", "3"]


def _read(path):
    rows = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return rows[0].split(","), [r.split(",") for r in rows[1:]]


def test_solve_writes_trace_and_solution(tmp_path, capsys):
    assert main(["solve", *SMALL, "--rule", "dp", "--out", str(tmp_path)]) == EXIT_OK
    header, rows = _read(tmp_path / "trace.csv")
    assert header == ["k", "param_alpha", "Pk_value", "dPk", "stop_metric", "rre", "wall_ms"]
    assert rows and all(r[-1] == "" for r in rows)
    sol = np.loadtxt(tmp_path / "solution.csv", comments="#", delimiter=",")
    assert sol.shape == (32,)
    out = capsys.readouterr().out
    assert "stopped_by=dp-residual" in out
    text = (tmp_path / "trace.csv").read_bytes()
    assert b"\r" not in text and text.startswith(b"# ")


def test_blur_solution_is_image(tmp_path):
    args = ["solve", "--size", "16", "--psf-sigma", "1.5", "--band", "4", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    sol = np.loadtxt(tmp_path / "solution.csv", comments="#", delimiter=",")
    assert sol.shape == (16, 16)


def test_timing_and_withheld_exact(tmp_path):
    args = ["solve", *SMALL, "--timing", "--withhold-exact", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    _, rows = _read(tmp_path / "trace.csv")
    assert all(r[5] == "" and float(r[6]) >= 0 for r in rows)


def test_values_roundtrip_17_digits(tmp_path):
    main(["solve", *SMALL, "--out", str(tmp_path)])
    _, rows = _read(tmp_path / "trace.csv")
    v = rows[0][1]
    assert float("%.17g" % float(v)) == float(v) and "%.17g" % float(v) == v


def test_invalid_pairing_exit_2(capsys):
    assert main(["solve", "--rule", "gcv", "--stop", "sc2"]) == EXIT_USAGE
    assert "sc2" in capsys.readouterr().err


def test_zero_noise_dp_is_rejected(tmp_path, capsys):
    assert main(["solve", *SMALL, "--noise", "0", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "epsilon" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "--rule", "bogus"],
        ["solve", "--tau", "-1"],
        ["solve", "--alpha-min", "1", "--alpha-max", "0.1"],
        ["frobnicate"],
        ["compare", "--rules", ""],
        ["compare", "--rules", "dp,lcurve"],
        ["surface", "--surfaces", "heat"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_runtime_error_exit_1(tmp_path):
    # band wider than the image is rejected by the problem generator
    assert main(["solve", "--size", "8", "--band", "9", "--out", str(tmp_path)]) == EXIT_RUNTIME


def test_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nproblem = gravity\nsize=32\nrule=qo\nstop=sc2\nwithhold-exact=true\n")
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    text = (out / "trace.csv").read_text()
    assert "# rule=qo" in text and "# stop=sc2" in text and "# withhold_exact=True" in text
    # explicit flags override the file
    assert main(["solve", "--config", str(cfg), "--rule", "reginska", "--out", str(out)]) == EXIT_OK
    assert "# rule=reginska" in (out / "trace.csv").read_text()


@pytest.mark.parametrize("content", ["colour=blue\n", "size\n", "size=big\n", "rule=magic\n"])
def test_bad_config_rejected(tmp_path, content):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(content)
    assert main(["solve", "--config", str(cfg)]) == EXIT_USAGE


def test_missing_config(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.cfg")]) == EXIT_USAGE


def test_surface_outputs(tmp_path):
    args = ["surface", *SMALL, "--kmax", "12", "--alpha-count", "7", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    for kind in ("error", "dp", "gcv", "qo", "reginska"):
        header, rows = _read(tmp_path / f"surface_{kind}.csv")
        assert header == ["alpha", "k", "z"]
        assert len(rows) == 12 * 7
        ks = [int(r[1]) for r in rows]
        assert ks == sorted(ks) and ks[:7] == [1] * 7
    _, rows = _read(tmp_path / "surface_qo.csv")
    assert all(r[2] == "nan" for r in rows[:7])
    _, err = _read(tmp_path / "surface_error.csv")
    _, markers = _read(tmp_path / "markers.csv")
    series = {m[0] for m in markers}
    assert series == {"adaptive", "hybrid", "optimal"}
    z = np.array([float(r[2]) for r in err]).reshape(12, 7)
    opt = [m for m in markers if m[0] == "optimal"]
    assert [float(m[3]) for m in opt] == pytest.approx(z.min(axis=1).tolist())


def test_surface_subset_and_spot_checks(tmp_path):
    from adaptikh.cli import _alphas, build_parser, make_problem
    from adaptikh.driver import rre
    from adaptikh.gkb import run_gkb
    from adaptikh.quadkernel import projected_tikhonov_solve

    argv = ["surface", *SMALL, "--kmax", "10", "--surfaces", "error", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    assert not (tmp_path / "surface_dp.csv").exists()
    args = build_parser().parse_args(argv)
    prob = make_problem(args)
    alphas = _alphas(args)
    f = run_gkb(prob.operator, prob.b_noisy, 10)
    _, rows = _read(tmp_path / "surface_error.csv")
    rng = np.random.default_rng(0)
    for i in rng.choice(len(rows), 5, replace=False):
        a, k, z = float(rows[i][0]), int(rows[i][1]), float(rows[i][2])
        assert a == alphas[i % len(alphas)]
        y, _ = projected_tikhonov_solve(f.rho[:k], f.sigma[:k], f.bnorm, a)
        assert z == pytest.approx(rre(f.V[:, :k] @ y, prob.x_exact), rel=1e-12)


def test_compare_outputs(tmp_path):
    args = ["compare", *SMALL, "--rules", "dp,qo", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    header, rows = _read(tmp_path / "compare.csv")
    assert header == [
        "rule", "k", "alpha_adaptive", "alpha_hybrid", "alpha_optimal", "rre_adaptive", "rre_hybrid", "rre_optimal",
    ]
    assert {r[0] for r in rows} == {"dp", "qo"}
    alphas = set(np.logspace(-6, 0, 50))
    for r in rows:
        assert float(r[4]) in alphas
        if float(r[2]) in alphas:
            assert float(r[7]) <= float(r[5])


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("ADAPTIKH_THREADS", "1")
    args = ["surface", *SMALL, "--kmax", "5", "--alpha-count", "5", "--out", str(tmp_path / "a")]
    assert main(args) == EXIT_OK
    monkeypatch.setenv("ADAPTIKH_THREADS", "3")
    args[-1] = str(tmp_path / "b")
    assert main(args) == EXIT_OK
    for name in ("surface_error.csv", "markers.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    monkeypatch.setenv("ADAPTIKH_THREADS", "zero")
    assert main(args) == EXIT_USAGE


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "adaptikh", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "0.1.0"
