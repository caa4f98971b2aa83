"""Chain/JSON serialization and the command-line driver."""

import json
import math

import numpy as np
import pytest

from wrgm import evaluation, io
from wrgm.cli import main
from wrgm.config import build_run_config
from wrgm.errors import ConfigError
from wrgm.sampler import Chain, ChainSample

QUICK = ["--n-iter", "30", "--burn-in", "10", "--thinning", "5", "--zk-draws", "200"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def sim(tmp_path, capsys):
    code, _, _ = run(capsys, "simulate", "--ks", 3, "--n", 60, "--seed", 11,
                     "--output-dir", tmp_path / "sim")
    assert code == 0
    return tmp_path / "sim"


# --- canonical formats -----------------------------------------------------

def test_canonical_json_examples():
    assert io.dumps_canonical({"b": 1, "a": [0.1, -0.0, np.int64(3)]}) == \
        '{"a":[0.10000000000000001,-0,3],"b":1}'
    assert io.dumps_canonical({"x": math.inf, "y": None, "z": True}) == \
        '{"x":Infinity,"y":null,"z":true}'
    with pytest.raises(TypeError):
        io.dumps_canonical(object())


def test_lower_tri_round_trip():
    a = np.array([[2.0, 0.5, 0.1], [0.5, 3.0, -0.2], [0.1, -0.2, 1.0]])
    np.testing.assert_array_equal(io.from_lower_tri(io.lower_tri(a), 3), a)


def test_chain_round_trip_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    samples = []
    for j in range(5):
        k = j % 3 + 1
        samples.append(ChainSample(
            sweep=j, t=k, weights=rng.dirichlet(np.ones(k)), means=rng.standard_normal((k, 2)),
            covs=np.array([np.eye(2) * rng.uniform(0.5, 2) for _ in range(k)]),
            assignments=rng.integers(0, k, 7), log_joint=float(rng.standard_normal())))
    path = tmp_path / "c.jsonl"
    io.write_chain(path, Chain(samples))
    text = path.read_text()
    assert io.rewrite_chain_text(path) == text
    back = io.read_chain(path)
    for a, b in zip(samples, back.samples):
        np.testing.assert_array_equal(a.means, b.means)
        np.testing.assert_array_equal(a.covs, b.covs)
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.assignments, b.assignments)
        assert a.log_joint == b.log_joint and a.t == b.t and a.sweep == b.sweep
    path2 = tmp_path / "c2.jsonl"
    io.write_chain(path2, back)
    assert path2.read_bytes() == path.read_bytes()


def test_malformed_chain_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text("{not json}\n")
    with pytest.raises(Exception, match="line 1"):
        io.read_chain(p)


# --- config precedence -----------------------------------------------------

def test_flags_override_file():
    run_cfg = build_run_config({"model": "rgm", "prior": {"g0": 3.0}, "sampler": {"seed": 4}},
                               {"g0": 7.0, "seed": None, "model": None})
    assert run_cfg.prior.g0 == 7.0 and run_cfg.sampler.seed == 4
    assert run_cfg.prior.repulsion_metric == "mean_euclidean"
    assert run_cfg.sampler.prior == run_cfg.prior


@pytest.mark.parametrize("cfg,field", [
    ({"prior": {"bogus": 1}}, "prior.bogus"),
    ({"sampler": {"bogus": 1}}, "sampler.bogus"),
    ({"model": "dpm"}, "model"),
    ({"chains": 0}, "chains"),
])
def test_config_errors_name_field(cfg, field):
    with pytest.raises(ConfigError) as exc:
        build_run_config(cfg)
    assert field in str(exc.value)


# --- distance --------------------------------------------------------------

def test_cli_distance_examples(capsys):
    code, out, _ = run(capsys, "distance", "--mean-a", "0,0", "--cov-a", "1,0,0,1",
                       "--mean-b", "9,9", "--cov-b", "1,0,0,1")
    assert code == 0
    lines = dict(line.split(" ", 1) for line in out.strip().splitlines())
    assert float(lines["W2^2"]) == pytest.approx(162.0, abs=1e-9)
    assert float(lines["Bures^2"]) == 0.0

    code, out, _ = run(capsys, "distance", "--mean-a", "0,0", "--cov-a", "1,0,1",
                       "--mean-b", "0,0", "--cov-b", "1,0,1")
    assert code == 0
    assert [float(v.split()[1]) for v in out.strip().splitlines()] == [0.0, 0.0, 0.0]

    code, out, _ = run(capsys, "distance", "--mean-a", "0,0", "--cov-a", "1,0,1",
                       "--mean-b", "3,1", "--cov-b", "1,0,1")
    assert float(out.split()[1]) == pytest.approx(10.0, abs=1e-9)


def test_cli_distance_bad_input(capsys):
    code, out, err = run(capsys, "distance", "--mean-a", "0,0", "--cov-a", "1,0",
                         "--mean-b", "0,0", "--cov-b", "1,0,1")
    assert code != 0 and out == ""
    assert len(err.strip().splitlines()) == 1 and err.startswith("E_")
    code, _, err = run(capsys, "distance", "--mean-a", "0", "--cov-a", "-1",
                       "--mean-b", "0", "--cov-b", "1")
    assert code != 0 and err.startswith("E_") and len(err.strip().splitlines()) == 1


def test_usage_error_single_line(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--model", "nope"])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert err.startswith("E_USAGE:") and len(err.strip().splitlines()) == 1


# --- simulate ----------------------------------------------------------------

def test_simulate_outputs(sim, tmp_path, capsys):
    rows = (sim / "data.csv").read_text().strip().splitlines()
    assert rows[0] == "y1,y2,label" and len(rows) == 61
    truth = json.loads((sim / "truth.json").read_text())
    assert len(truth["weights"]) == 5 and truth["ks"] == 3

    run(capsys, "simulate", "--ks", 3, "--n", 60, "--seed", 11, "--output-dir", tmp_path / "b")
    assert (tmp_path / "b" / "data.csv").read_bytes() == (sim / "data.csv").read_bytes()
    assert (tmp_path / "b" / "truth.json").read_bytes() == (sim / "truth.json").read_bytes()

    run(capsys, "simulate", "--ks", 0, "--n", 10, "--seed", 1, "--output-dir", tmp_path / "c")
    assert len(json.loads((tmp_path / "c" / "truth.json").read_text())["weights"]) == 2


# --- fit / evaluate ----------------------------------------------------------

def test_fit_evaluate_reproducible(sim, tmp_path, capsys):
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        code, _, err = run(capsys, "fit", "--data", sim / "data.csv", "--seed", 3,
                           "--output-dir", out, *QUICK)
        assert code == 0, err
        code, _, err = run(capsys, "evaluate", "--chain", out / "chain.jsonl",
                           "--data", sim / "data.csv", "--grid-resolution", 16,
                           "--output-dir", out)
        assert code == 0, err
        outs.append(out)
    for f in ("chain.jsonl", "report.json", "density_grid.csv", "map_assignments.csv",
              "min_distances.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f

    chain = io.read_chain(outs[0] / "chain.jsonl")
    assert len(chain) == 4  # sweeps 14, 19, 24, 29
    data = np.loadtxt(sim / "data.csv", delimiter=",", skiprows=1)[:, :2]
    report = json.loads((outs[0] / "report.json").read_text())
    assert report["log_cpo"] == evaluation.log_cpo(chain, data)
    assert report["n_samples"] == 4 and report["n_data"] == 60
    assert abs(sum(report["k_posterior"].values()) - 1) < 1e-12
    meta = json.loads((outs[0] / "meta.json").read_text())
    assert meta["run_config"]["model"] == "wrgm" and meta["chain_index"] == 0


def test_fit_mfm_and_config_file(sim, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "mfm", "prior": {"g0": 2.0},
                               "sampler": {"seed": 9}, "data": str(sim / "data.csv")}))
    out = tmp_path / "mfm"
    code, _, err = run(capsys, "fit", "--config", cfg, "--g0", 4.0, "--output-dir", out, *QUICK)
    assert code == 0, err
    meta = json.loads((out / "meta.json").read_text())
    assert meta["run_config"]["prior"]["repulsion_metric"] == "none"
    assert meta["run_config"]["prior"]["g0"] == 4.0
    assert meta["run_config"]["sampler"]["seed"] == 9


def test_fit_two_chains(sim, tmp_path, capsys):
    out = tmp_path / "two"
    code, _, err = run(capsys, "fit", "--data", sim / "data.csv", "--seed", 5, "--chains", 2,
                       "--model", "rgm", "--output-dir", out, *QUICK)
    assert code == 0, err
    a, b = (out / "chain_0.jsonl").read_text(), (out / "chain_1.jsonl").read_text()
    assert a and b and a != b


def test_evaluate_single_sample_grid(sim, tmp_path, capsys):
    out = tmp_path / "one"
    run(capsys, "fit", "--data", sim / "data.csv", "--seed", 1, "--output-dir", out,
        "--n-iter", "11", "--burn-in", "10", "--thinning", "1", "--zk-draws", "200")
    chain = io.read_chain(out / "chain.jsonl")
    assert len(chain) == 1
    code, _, err = run(capsys, "evaluate", "--chain", out / "chain.jsonl", "--data",
                       sim / "data.csv", "--grid-resolution", 8, "--output-dir", out)
    assert code == 0, err
    grid = np.loadtxt(out / "density_grid.csv", delimiter=",", skiprows=1)
    assert grid.shape == (64, 3)
    ref = evaluation.mixture_density_many(chain.samples[0], grid[:, :2])
    np.testing.assert_allclose(grid[:, 2], ref, rtol=1e-15)


# --- errors ------------------------------------------------------------------

def test_fit_missing_data(tmp_path, capsys):
    code, _, err = run(capsys, "fit", "--data", tmp_path / "nope.csv", "--output-dir", tmp_path)
    assert code != 0 and err.startswith("E_") and len(err.strip().splitlines()) == 1


def test_fit_without_data(tmp_path, capsys):
    code, _, err = run(capsys, "fit", "--output-dir", tmp_path)
    assert code != 0 and err.startswith("E_") and "data" in err


def test_unwritable_output(sim, tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = run(capsys, "fit", "--data", sim / "data.csv", "--output-dir", blocker,
                       *QUICK)
    assert code == 3 and err.startswith("E_IO:") and len(err.strip().splitlines()) == 1


def test_evaluate_dimension_mismatch(sim, tmp_path, capsys):
    out = tmp_path / "fit"
    run(capsys, "fit", "--data", sim / "data.csv", "--seed", 2, "--output-dir", out, *QUICK)
    code, _, err = run(capsys, "evaluate", "--chain", out / "chain.jsonl", "--data",
                       sim / "data.csv", "--columns", "y1", "--output-dir", out)
    assert code != 0 and err.startswith("E_") and "dimension" in err
