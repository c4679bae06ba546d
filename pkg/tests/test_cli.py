import subprocess
import sys

import numpy as np
import pytest

from martlab import io
from martlab.cli import run
from martlab.filtration import FiltrationGrid, build_product_grid, random_grid
from martlab.mixed import AdaptedFamily
from martlab.prob import FiniteProbSpace, Partition, join


@pytest.fixture
def two_coin_instance(tmp_path):
    coin = FiniteProbSpace([0.5, 0.5])
    sp, G = build_product_grid([coin], [coin])
    idx = np.indices((2, 2)).reshape(2, -1)
    f = (1.0 - 2.0 * idx[0]) * (1.0 - 2.0 * idx[1])
    path = tmp_path / "inst.json"
    io.write_json(path, io.instance_to_json(G, f))
    return G, f, path


def test_check_f4_exit_codes(tmp_path, capsys):
    _, G = random_grid(0, [2], [2])
    good = tmp_path / "good.json"
    io.write_json(good, io.grid_to_json(G))
    assert run(["check-f4", "--in", str(good)]) == 0
    assert io.loads(capsys.readouterr().out)["passed"] is True
    sp = FiniteProbSpace([0.4, 0.2, 0.1, 0.3])
    rows, cols = Partition([0, 0, 1, 1]), Partition([0, 1, 1, 0])
    H = FiltrationGrid(sp, [[Partition.trivial(4), cols], [rows, join(rows, cols)]])
    bad = tmp_path / "bad.json"
    io.write_json(bad, io.grid_to_json(H))
    assert run(["check-f4", "--in", str(bad)]) == 2
    out = io.loads(capsys.readouterr().out)
    assert out["worstDefect"] > 1e-3


def test_usage_and_io_errors(tmp_path, capsys):
    assert run(["no-such-command"]) == 64
    assert run(["check-f4", "--bogus"]) == 64
    assert run(["check-f4"]) == 64
    assert run(["ratio-search", "--corpus-size", "0"]) == 64
    assert run(["check-f4", "--in", str(tmp_path / "missing.json")]) == 1
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert run(["check-f4", "--in", str(broken)]) == 1
    wrong = tmp_path / "wrong.json"
    wrong.write_text('{"probs": [0.5, 0.6], "parts": [[[0, 0]]]}')
    assert run(["check-f4", "--in", str(wrong)]) == 2
    capsys.readouterr()


def test_norms(two_coin_instance, capsys):
    _, _, path = two_coin_instance
    assert run(["norms", "--in", str(path)]) == 0
    out = io.loads(capsys.readouterr().out)
    assert out["certifiedF4"] and out["h1S"] == pytest.approx(1.0) and out["h1M"] == pytest.approx(1.0)


def test_solve_single_entry(two_coin_instance, tmp_path):
    G, f, path = two_coin_instance
    out = tmp_path / "sol.json"
    assert run(["solve-decomposition", "--in", str(path), "--tol", "1e-6", "--out", str(out)]) == 0
    res = io.read_json(out)
    assert res["report"]["objective"] <= res["lhs"] + 1e-6
    parts = [np.array(res["decomposition"][k]) for k in "ABCD"]
    np.testing.assert_allclose(sum(parts)[1, 1], f, atol=1e-9)


def test_solve_nonconverged_exit(tmp_path):
    sp, G = random_grid(1, [3, 2], [2, 2])
    X = G.adapt(np.random.default_rng(1).normal(size=G.shape + (sp.n,)))
    path = tmp_path / "x.json"
    io.write_json(path, io.instance_to_json(G, X=X))
    assert run(["solve-decomposition", "--in", str(path), "--max-iter", "3",
                "--tol", "1e-12", "--out", str(tmp_path / "o.json")]) == 3


def test_assemble_davis(two_coin_instance, tmp_path):
    _, f, path = two_coin_instance
    out = tmp_path / "davis.json"
    assert run(["assemble-davis", "--in", str(path), "--out", str(out)]) == 0
    res = io.read_json(out)
    assert res["davis"]["reconstructionResidual"] <= 1e-9
    assert res["chain"]["ratio"] == pytest.approx(1.0)


def test_verify_duality(tmp_path, capsys):
    sp = FiniteProbSpace([1.0])
    F = AdaptedFamily(sp, [[1.0], [1.0]], [Partition.trivial(1)] * 2)
    path = tmp_path / "fam.json"
    io.write_json(path, io.family_to_json(F))
    assert run(["verify-duality", "--in", str(path), "--p", "2", "--q", "4"]) == 0
    out = io.loads(capsys.readouterr().out)
    assert out["pairing"] == pytest.approx(4.0) and out["ratio"] == pytest.approx(1.0)
    assert run(["verify-duality", "--corpus-size", "5", "--p", "4/3", "--q", "3/2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("id,ratio") and len(lines) >= 2


def test_br_suite(tmp_path):
    out = tmp_path / "br.csv"
    assert run(["br-suite", "--corpus-size", "4", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 5


def test_ratio_search_deterministic(tmp_path):
    a, b, c = (tmp_path / f"{k}.csv" for k in "abc")
    base = ["ratio-search", "--seed", "7", "--corpus-size", "10"]
    assert run(base + ["--out", str(a)]) == 0
    assert run(base + ["--out", str(b)]) == 0
    assert run(base + ["--out", str(c), "--threads", "2"]) == 0
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()
    worst = io.read_json(tmp_path / "a.worst.json")
    assert "h1M/h1S" in worst["summary"]
    G, f, _ = io.instance_from_json(worst["worst"]["h1M/h1S"])
    assert G.certified_f4


def test_module_entry_point(tmp_path):
    out = tmp_path / "r.csv"
    proc = subprocess.run([sys.executable, "-m", "martlab", "ratio-search", "--corpus-size", "3",
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.read_text().startswith("id,sampler")
    proc = subprocess.run([sys.executable, "-m", "martlab", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and "ratio-search" in proc.stdout
