import json

import numpy as np
import pytest

from lpstream import cli
from lpstream.matcore import load_matrix, save_csv
from lpstream.regression import ConvergenceError


@pytest.fixture
def data(tmp_path):
    rng = np.random.default_rng(0)
    A = rng.standard_normal((120, 3))
    b = A @ np.array([1.0, -1.0, 0.5]) + 0.1 * rng.standard_normal(120)
    path = tmp_path / "z.csv"
    save_csv(path, np.hstack([A, b[:, None]]))
    return path


def _run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    return code, capsys.readouterr().out


def test_gen(tmp_path, capsys):
    code, out = _run(capsys, "gen", "--name", "augmented-identity", "--n", 50, "--d", 3,
                     "--k", 2, "--out", tmp_path)
    assert code == 0
    M = load_matrix(tmp_path / "augmented-identity.csv")
    assert M.shape == (52, 6)
    assert len(json.loads(out)["planted"]) == 2


@pytest.mark.parametrize("argv", [
    ["leverage", "--tau", "0.05"],
    ["leverage", "--block", "30", "--method", "orth", "--p", "2"],
    ["embed", "--p", "1"],
    ["regress", "--p", "inf"],
    ["regress", "--p", "1", "--stream"],
    ["linf", "--p", "2", "--eps", "0.2"],
    ["amm", "--eps", "0.3"],
    ["amm", "--eps", "0.3", "--columns"],
])
def test_subcommands_succeed(data, tmp_path, capsys, argv):
    code, out = _run(capsys, *argv, "--input", data, "--out", tmp_path / "o")
    assert code == 0
    json.loads(out)
    assert (tmp_path / "o" / f"{argv[0]}.json").exists()


def test_lowrank_writes_factors(tmp_path, capsys):
    rng = np.random.default_rng(1)
    path = tmp_path / "r1.csv"
    save_csv(path, np.outer(rng.standard_normal(40), rng.standard_normal(4)))
    code, out = _run(capsys, "lowrank", "--input", path, "--k", 1, "--out", tmp_path)
    assert code == 0 and json.loads(out)["l1_error"] <= 1e-6
    assert load_matrix(tmp_path / "left.csv").shape == (40, 1)


def test_experiment(tmp_path, capsys):
    code, out = _run(capsys, "experiment", "--dataset", "gaussian", "--n", 200, "--d", 3,
                     "--methods", "orth,sample", "--budgets", "6,24", "--p", 2,
                     "--no-timing", "--out", tmp_path)
    assert code == 0
    assert set(json.loads(out)["median_error_ratio"]) == {"orth", "sample"}
    assert (tmp_path / "linf.csv").exists()


def test_input_errors(tmp_path, capsys):
    assert cli.main(["leverage", "--input", str(tmp_path / "missing.csv")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3\n")
    assert cli.main(["embed", "--input", str(bad)]) == 2
    assert cli.main(["nosuch"]) == 2
    ok = tmp_path / "ok.csv"
    ok.write_text("1,2\n3,4\n5,7\n")
    assert cli.main(["leverage", "--input", str(ok), "--method", "bogus"]) == 2
    assert cli.main(["experiment", "--methods", "bogus", "--n", "50", "--d", "2"]) == 2


def test_convergence_exit(data, monkeypatch, capsys):
    real = cli.solve_lp_regression

    def capped(inst, **kw):
        return real(inst, max_iter=1)

    monkeypatch.setattr(cli, "solve_lp_regression", capped)
    assert cli.main(["regress", "--input", str(data), "--p", "1.3"]) == 3

    def boom(*a, **kw):
        raise ConvergenceError("no progress")

    monkeypatch.setattr(cli, "solve_lp_regression", boom)
    assert cli.main(["regress", "--input", str(data), "--p", "1.3"]) == 3
