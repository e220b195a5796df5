import json
import subprocess
import sys

import pytest

from mixlab.cli import main


def _write(path, obj):
    path.write_text(json.dumps(obj, indent=2))
    return str(path)


FREE = {"kind": "normal_free"}
G_FREE = {"atoms": [{"mean": 0, "scale": 1}, {"mean": 3, "scale": 0.5}], "weights": [0.5, 0.5]}


@pytest.fixture
def sample_csv(tmp_path):
    cfg = _write(tmp_path / "s.json", {"family": FREE, "G": G_FREE, "n": 120, "seed": 4})
    out = str(tmp_path / "s.csv")
    assert main(["sample", "--config", cfg, "--output", out]) == 0
    return out


def test_distance_identical(tmp_path, capsys):
    g = _write(tmp_path / "g.json", {"atoms": [{"mean": 0.0}, {"mean": 1.0}], "weights": [0.5, 0.5]})
    assert main(["distance", g, g]) == 0
    assert capsys.readouterr().out.strip() == "0.000000000000"


def test_distance_json(tmp_path, capsys):
    g1 = _write(tmp_path / "g1.json", {"atoms": [{"mean": 0.0}], "weights": [1.0]})
    g2 = _write(tmp_path / "g2.json", {"atoms": [{"mean": 1.0}], "weights": [1.0]})
    assert main(["--json", "distance", g1, g2]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["value"] == pytest.approx(0.6321205588285577, rel=1e-15)


def test_check_pfanzagl_equality(tmp_path, capsys):
    p = _write(tmp_path / "p.json", {
        "family": {"kind": "normal_equal", "sigma2": 1.0},
        "G_star": {"atoms": [{"mean": 0.0}], "weights": [1.0]},
        "G_alt": {"atoms": [{"mean": 0.0}], "weights": [1.0]},
        "mc_n": 10000,
    })
    assert main(["--json", "check", "--name", "pfanzagl", "--config", p]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["statistic"] == 0 and rep["passed"]


def test_check_failure_exit_one(tmp_path, capsys):
    # l_n(G_k) at k = 1 stays far below the equal-variance optimum + 100
    p = _write(tmp_path / "d.json", {"sample": [0.1, -0.4, 1.3, 0.7, -1.1], "k_list": [1.0]})
    assert main(["check", "--name", "degenerate_sequence", "--config", p]) == 1
    assert "[FAIL]" in capsys.readouterr().out


def test_check_bad_params(tmp_path, capsys):
    p = _write(tmp_path / "g.json", {"eps0": 0.05})
    assert main(["check", "--name", "g_dominance", "--config", p]) == 2
    assert "sigma1_list" in capsys.readouterr().err


def test_fit_underdetermined(tmp_path, sample_csv, capsys):
    c = _write(tmp_path / "f.json", {"family": FREE, "m": 500, "mode": "penalized"})
    assert main(["fit", "--sample", sample_csv, "--config", c]) == 2
    assert "precondition n >= m" in capsys.readouterr().err


def test_fit_writes_report(tmp_path, sample_csv):
    c = _write(tmp_path / "f.json", {"family": FREE, "m": 2, "mode": "penalized", "seed": 1})
    out = tmp_path / "r.json"
    assert main(["fit", "--sample", sample_csv, "--config", c, "--output", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["converged"] and len(rep["estimate"]["atoms"]) == 2


def test_fit_is_reproducible(tmp_path, sample_csv, capsys):
    c = _write(tmp_path / "f.json", {"family": FREE, "m": 2, "mode": "penalized", "restarts": 3, "seed": 7})
    main(["--json", "fit", "--sample", sample_csv, "--config", c])
    first = capsys.readouterr().out
    main(["--json", "fit", "--sample", sample_csv, "--config", c])
    assert capsys.readouterr().out == first


def test_malformed_json(tmp_path, sample_csv, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"family": {"kind": "normal_free"},\n "m": 2,,\n}')
    assert main(["fit", "--sample", sample_csv, "--config", str(bad)]) == 2
    assert "bad.json:2:" in capsys.readouterr().err


def test_schema_violation(tmp_path, sample_csv, capsys):
    c = _write(tmp_path / "f.json", {"family": FREE, "m": 2, "mode": "bayes"})
    assert main(["fit", "--sample", sample_csv, "--config", c]) == 2
    assert "schema violation at mode" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 2
    assert main([]) == 2


def test_help_documents_schemas(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for word in ("mixing", "fit config", "experiment", "sample CSV", "pfanzagl"):
        assert word in out


def test_npmle(tmp_path, capsys):
    s = _write(tmp_path / "p.json", {"family": {"kind": "poisson"},
                                     "G": {"atoms": [{"mean": 1}, {"mean": 5}], "weights": [0.5, 0.5]},
                                     "n": 200, "seed": 3})
    csv = str(tmp_path / "p.csv")
    main(["sample", "--config", s, "--output", csv])
    c = _write(tmp_path / "n.json", {"family": {"kind": "poisson"}})
    capsys.readouterr()
    assert main(["--json", "npmle", "--sample", csv, "--config", c]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["certified"] and res["support_size"] <= res["distinct_obs"]


def test_experiment_consistency(tmp_path, capsys):
    cfg = _write(tmp_path / "e.json", {
        "family": FREE, "G_star": G_FREE, "n_grid": [60, 120], "reps": 2,
        "fit": {"family": FREE, "m": 2, "mode": "penalized"}, "master_seed": 1,
    })
    out = tmp_path / "res.csv"
    assert main(["experiment", "consistency", "--config", cfg, "--output", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "n,rep,kw_dist,objective,converged,wall_time_ms"
    assert (tmp_path / "res.summary.json").exists()
    assert capsys.readouterr().out.startswith("n,median,q25,q75,failures")


def test_experiment_degeneracy(tmp_path, capsys):
    cfg = _write(tmp_path / "e.json", {
        "family": FREE, "G_star": G_FREE, "n_grid": [80], "reps": 2, "k_list": [1, 100],
        "fit": {"family": FREE, "m": 2, "mode": "penalized"},
    })
    assert main(["--json", "experiment", "degeneracy", "--config", cfg]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["replications"] == 2 and rep["k_list"] == [1, 100]


def test_module_entry_point(tmp_path):
    g = _write(tmp_path / "g.json", {"atoms": [{"mean": 0.0}], "weights": [1.0]})
    proc = subprocess.run([sys.executable, "-m", "mixlab", "distance", g, g],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.strip() == "0.000000000000"
