"""CLI harness: subcommands, exit codes, deterministic CSV output."""

import json

import numpy as np
import pytest

from sg.cli import main
from sg.exact import value_iteration
from sg.game import save_game
from sg.generate import random_game
from sg.qvi import VSSequence, qvi_mdvss, QviConstants
from sg.sampler import GenerativeModel


@pytest.fixture
def game_file(tmp_path):
    g = random_game(5, 2, 0.9, seed=0)
    path = tmp_path / "g.json"
    save_game(g, str(path))
    return g, str(path)


def test_solve_vi_smoke(game_file, capsys):
    _, path = game_file
    assert main(["solve", "--game", path, "--method", "vi", "--eps", "0.01"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("value:")
    assert "strategy:" in out and "iterations:" in out


def test_solve_si_smoke(game_file, capsys):
    _, path = game_file
    assert main(["solve", "--game", path, "--method", "si"]) == 0
    assert "equilibrium residual" in capsys.readouterr().out


def test_solve_pi_rejects_two_player_game(game_file, capsys):
    _, path = game_file
    assert main(["solve", "--game", path, "--method", "pi"]) == 2
    err = capsys.readouterr().err
    assert json.loads(err.strip())["error"]


def test_solve_qvi_requires_seed(game_file, capsys):
    _, path = game_file
    assert main(["solve", "--game", path, "--method", "qvi"]) == 2


def test_solve_qvi_certify(tmp_path, capsys):
    g = random_game(5, 2, 0.9, seed=1)
    path = tmp_path / "g.json"
    save_game(g, str(path))
    code = main(["solve", "--game", str(path), "--method", "qvi",
                 "--eps", "0.2", "--delta", "0.1", "--seed", "7", "--certify"])
    out = capsys.readouterr().out
    assert "certificate" in out
    assert code == 0


def test_hard_pi_trace_rows(tmp_path, capsys):
    out = tmp_path / "trace.csv"
    assert main(["hard", "pi", "--T", "192", "--out", str(out)]) == 0
    rows = out.read_text().strip().split("\n")
    assert rows[0].startswith("iteration,")
    flips = [r for r in rows[1:] if r.split(",")[4] == "1"]
    assert len(flips) == 4  # one single-flip row per chain state
    assert not any("nan" in r.lower() for r in rows)


def test_hard_si_smoke(tmp_path, capsys):
    out = tmp_path / "si.csv"
    assert main(["hard", "si", "--T", "400", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "single-action corrections: 4" in text
    assert out.read_text().startswith("iteration,")


def test_flux_enumerate_smoke(game_file, capsys):
    _, path = game_file
    assert main(["flux", "--game", path]) == 0
    out = capsys.readouterr().out
    assert "flux extremes" in out and "stationary extremes" in out


def test_flux_sampled_deterministic_csv(game_file, tmp_path):
    _, path = game_file
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["flux", "--game", path, "--sample", "8", "--seed", "5"]
    assert main(argv + ["--out", str(out1)]) == 0
    assert main(argv + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    assert out1.read_text().startswith("strategy,")


def test_flux_sample_requires_seed(game_file, capsys):
    _, path = game_file
    assert main(["flux", "--game", path, "--sample", "8"]) == 2


def test_check_accepts_valid_sequence(tmp_path, capsys):
    g = random_game(6, 2, 0.9, seed=2)
    gpath = tmp_path / "g.json"
    save_game(g, str(gpath))
    model = GenerativeModel(g, master_seed=3)
    beta = 1.0 / (1.0 - g.gamma)
    seq = qvi_mdvss(model, beta, 0.1, np.full(6, beta),
                    np.zeros(6, dtype=np.int64),
                    QviConstants(c1=2.0, c2=0.05, c3=0.3, c=0.5))
    spath = tmp_path / "seq.json"
    seq.save(str(spath))
    code = main(["check", "--game", str(gpath), "--seq", str(spath)])
    assert code == 0
    assert "PASS" in capsys.readouterr().out


def test_check_flags_broken_sequence(tmp_path, capsys):
    g = random_game(6, 2, 0.9, seed=2)
    gpath = tmp_path / "g.json"
    save_game(g, str(gpath))
    vstar, sstar, _ = value_iteration(g, 1e-11)
    qstar = np.tile(np.zeros(g.n_pairs), (2, 1))
    from sg.exact import q_from_v
    seq = VSSequence(direction="decreasing",
                     values=np.tile(vstar, (2, 1)),
                     q_values=np.tile(q_from_v(g, vstar), (2, 1)),
                     strategies=np.tile(sstar, (2, 1)),
                     error_bounds=np.zeros((2, g.n_pairs)))
    seq.values[1][0] -= 0.05  # dip below the optimum: property-1 break
    spath = tmp_path / "seq.json"
    seq.save(str(spath))
    code = main(["check", "--game", str(gpath), "--seq", str(spath)])
    assert code == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "1:" in out


def test_malformed_game_file_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", "--game", str(bad), "--method", "vi"]) == 2
    err = capsys.readouterr().err
    assert "error" in json.loads(err.strip())


def test_missing_game_source_exits_2(capsys):
    assert main(["solve", "--method", "vi"]) == 2


def test_scaling_emits_csv_and_slope(tmp_path, capsys):
    out = tmp_path / "scal.csv"
    code = main(["scaling", "--seed", "11", "--trials", "3", "--out", str(out)])
    text = capsys.readouterr().out
    assert "log-log slope" in text
    rows = out.read_text().strip().split("\n")
    assert rows[0] == "m1,trial,error"
    assert len(rows) == 1 + 4 * 3
    assert code == 0


def test_scaling_requires_seed(capsys):
    assert main(["scaling"]) == 2
