import io
import json

import pytest

from dnlsqp.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main, run


def _run(tmp_path, command, text, name="out", **kw):
    cfg = tmp_path / f"{name}.ini"
    cfg.write_text(text)
    err = io.StringIO()
    out = tmp_path / name
    code = run(command, str(cfg), out=str(out), stderr=err, **kw)
    return code, out, err.getvalue()


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_malformed_value_names_key(tmp_path):
    code, _, err = _run(tmp_path, "solve", "[solver]\neps = abc\n")
    assert code == EXIT_CONFIG
    assert "solver.eps" in err


def test_unknown_key_and_section(tmp_path):
    code, _, err = _run(tmp_path, "solve", "[solver]\nepz = 1\n")
    assert code == EXIT_CONFIG and "solver.epz" in err
    code, _, err = _run(tmp_path, "solve", "[solvr]\neps = 1\n", name="o2")
    assert code == EXIT_CONFIG and "solvr" in err


def test_keys_are_case_sensitive(tmp_path):
    code, _, err = _run(tmp_path, "solve", "[solver]\nm = 5\n")
    assert code == EXIT_CONFIG and "solver.m" in err


def test_unknown_command_and_argparse():
    assert run("nope", None, stderr=io.StringIO()) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["nope"])
    assert exc.value.code == 2


def test_unperturbed_solve(tmp_path):
    code, out, _ = _run(tmp_path, "solve", "[solver]\neps = 0\ndelta = 0\n", seed=5)
    assert code == EXIT_OK
    man = _manifest(out)
    assert man["result"]["status"] == "Converged"
    assert man["result"]["stages"] == 0
    assert man["result"]["kappa"] == 0.0
    assert man["config"]["solver"]["eps"] == "0"
    assert set(man["files"]) == {"solve_table.csv", "coefficients.txt"}


def test_forced_resonance_exit(tmp_path):
    text = "[disorder]\noverrides = 0 0.5; 1 0.5\n[solver]\neps = 1e-3\ndelta = 0\ncondition_cap = 1e5\n"
    code, out, err = _run(tmp_path, "solve", text, seed=2024)
    assert code == EXIT_NUMERIC
    man = _manifest(out)
    assert man["failure"]["kind"] == "Resonant"
    assert float(man["failure"]["condition"]) > 1e5
    assert "Resonant" in err


def test_digests_reproducible_and_atomic(tmp_path):
    text = "[global]\nseed = 11\n[disorder]\nradius = 20\n"
    c1, o1, _ = _run(tmp_path, "solve", text, name="a")
    c2, o2, _ = _run(tmp_path, "solve", text, name="b")
    assert c1 == c2 == EXIT_OK
    assert _manifest(o1)["files"] == _manifest(o2)["files"]
    for out in (o1, o2):
        assert not [p for p in out.iterdir() if p.name.startswith(".")]


def test_seed_flag_overrides_config(tmp_path):
    text = "[global]\nseed = 11\n[solver]\neps = 0\n"
    _, o1, _ = _run(tmp_path, "solve", text, name="a", seed=3)
    assert _manifest(o1)["config"]["seed"] == 3


def test_bench_small(tmp_path):
    code, out, _ = _run(tmp_path, "bench", "[bench]\nN = 2 3\neps = 0.01\ndelta = 0.01\n")
    assert code == EXIT_OK
    lines = [ln for ln in (out / "bench.csv").read_text().splitlines() if not ln.startswith("#")]
    assert lines[0].startswith("N,sites")
    for row in lines[1:]:
        cells = row.split(",")
        assert float(cells[7]) <= 1e-8
        assert cells[4] == "" or float(cells[4]) <= 1e-8


def test_dioph_and_wegner(tmp_path):
    code, out, _ = _run(tmp_path, "dioph", "[dioph]\nomega = 0.6180339887\nA = 2\nc = 0.1\nN = 50\n")
    assert code == EXIT_OK and _manifest(out)["result"]["diophantine"] is True
    code, out, _ = _run(tmp_path, "wegner", "[wegner]\nsize = 3\ntrials = 200\nkappas = 0.01 0.1\n", name="w")
    assert code == EXIT_OK and (out / "wegner.csv").exists()


def test_evolve_command(tmp_path):
    text = "[disorder]\nradius = 12\n[evolve]\neps = 0.01\ndelta = 0.01\nbox_radius = 8\nt_end = 5\ndt = 0.05\n"
    code, out, _ = _run(tmp_path, "evolve", text)
    assert code == EXIT_OK
    man = _manifest(out)
    assert man["result"]["norm_drift"] <= 1e-10
