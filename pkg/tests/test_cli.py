import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from ganaudit.cli import config_hash, main, resolve_config
from ganaudit.density import log_obs
from ganaudit.models import random_mlp, sample_prior
from ganaudit.storage import read_gten, save_dataset, save_model


def run(args, env=None):
    return CliRunner().invoke(main, args, env=env, catch_exceptions=False)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def constant_setup(tmp_path):
    out = tmp_path / "m"
    r = run(["make-model", "--kind", "constant", "--params", '{"value": [0.5, -0.5, 1.0], "sigma2": 0.2}',
             "--out", str(out)])
    assert r.exit_code == 0, r.output
    xs = np.array([[0.0, 0.0, 0.0], [0.5, -0.5, 1.0], [1.0, 2.0, -1.0]])
    save_dataset(tmp_path / "x.gten", xs, group="test")
    return out / "model.json", tmp_path / "x.gten", xs


def test_ll_constant_model_closed_form(tmp_path, constant_setup):
    model, data, xs = constant_setup
    r = run(["ll", "--model", str(model), "--data", str(data), "--ais-steps", "5", "--ais-chains", "2",
             "--out", str(tmp_path / "o")])
    assert r.exit_code == 0, r.output
    got = rows(tmp_path / "o" / "ll.csv")
    assert list(got[0]) == ["sample_id", "group", "label", "ll_nats", "ll_bits_per_dim",
                            "chain_spread", "mean_acceptance", "divergences", "flagged"]
    for row, x in zip(got, xs):
        assert float(row["ll_nats"]) == pytest.approx(log_obs(x, [0.5, -0.5, 1.0], 0.2), abs=1e-9)
        assert row["group"] == "test"


def test_manifest_and_hash(tmp_path, constant_setup):
    model, data, _ = constant_setup
    args = ["ll", "--model", str(model), "--data", str(data), "--estimator", "exact"]
    run(args + ["--out", str(tmp_path / "a")])
    run(args + ["--out", str(tmp_path / "b"), "--workers", "2"])
    run(args + ["--out", str(tmp_path / "c"), "--seed", "3"])
    man = [json.loads((tmp_path / d / "manifest.json").read_text()) for d in "abc"]
    assert man[0]["command"] == "ll" and "ll.csv" in man[0]["outputs"]
    assert man[0]["config_hash"] == man[1]["config_hash"] != man[2]["config_hash"]
    assert (tmp_path / "a" / "ll.csv").read_bytes() == (tmp_path / "b" / "ll.csv").read_bytes()
    assert b"\r\n" not in (tmp_path / "a" / "ll.csv").read_bytes()


def test_config_precedence(tmp_path):
    cfg = resolve_config("sample", {"model": "a.json", "n": 5}, {"n": 7, "seed": None})
    assert cfg["n"] == 7 and cfg["model"] == "a.json" and cfg["seed"] == 0
    assert config_hash(cfg) == config_hash({**cfg, "out": "elsewhere", "workers": 4})


def test_unknown_key_exit_2(tmp_path, constant_setup):
    model, data, _ = constant_setup
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": str(model), "data": str(data), "ais": {"stpes": 3}}))
    r = CliRunner().invoke(main, ["ll", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert r.exit_code == 2
    err = json.loads((tmp_path / "o" / "error.json").read_text())
    assert err["status"] == "error" and "stpes" in err["message"]


def test_missing_file_names_field(tmp_path, constant_setup):
    model, _, _ = constant_setup
    r = CliRunner().invoke(main, ["ll", "--model", str(model), "--data", str(tmp_path / "nope.gten"),
                                  "--out", str(tmp_path / "o")])
    assert r.exit_code == 2
    assert json.loads((tmp_path / "o" / "error.json").read_text())["field"] == "data"


def test_missing_required_field(tmp_path):
    r = CliRunner().invoke(main, ["sample", "--out", str(tmp_path / "o")])
    assert r.exit_code == 2
    assert json.loads((tmp_path / "o" / "error.json").read_text())["field"] == "model"


def test_out_from_environment(tmp_path, constant_setup):
    model, data, _ = constant_setup
    r = run(["project", "--model", str(model), "--data", str(data), "--iterations", "5", "--restarts", "1"],
            env={"GANAUDIT_OUT": str(tmp_path / "env")})
    assert r.exit_code == 0, r.output
    assert (tmp_path / "env" / "project.csv").exists()


def test_project_mlp_samples(tmp_path):
    m = random_mlp(2, [16], 8, seed=3)
    save_model(m, tmp_path / "mlp.json")
    xs = m(sample_prior(m.prior, 5, 1))
    save_dataset(tmp_path / "x.gten", xs)
    r = run(["project", "--model", str(tmp_path / "mlp.json"), "--data", str(tmp_path / "x.gten"),
             "--out", str(tmp_path / "o")])
    assert r.exit_code == 0, r.output
    got = rows(tmp_path / "o" / "project.csv")
    assert list(got[0]) == ["sample_id", "group_label", "label", "error", "winner_restart"]
    assert all(float(row["error"]) <= 1e-3 for row in got)
    assert read_gten(tmp_path / "o" / "latents.gten").shape == (5, 2)


def test_workers_reproducible(tmp_path):
    m = random_mlp(2, [8], 4, seed=0)
    save_model(m, tmp_path / "m.json", sigma2=0.05)
    save_dataset(tmp_path / "x.gten", m(sample_prior(m.prior, 4, 2)))
    outs = []
    for w in ("1", "2"):
        run(["ll", "--model", str(tmp_path / "m.json"), "--data", str(tmp_path / "x.gten"),
             "--ais-steps", "20", "--ais-chains", "2", "--workers", w, "--trace", "--out", str(tmp_path / w)])
        outs.append((tmp_path / w / "ll.csv").read_bytes())
    assert outs[0] == outs[1]
    assert len(rows(tmp_path / "1" / "trace.csv")) == 4 * 20


def test_typicality_demo(tmp_path):
    assert run(["make-synthetic", "--kind", "two-class-ppca", "--params", '{"dim": 8, "n_train": 50}',
                "--out", str(tmp_path / "d")]).exit_code == 0
    assert run(["make-synthetic", "--kind", "shifted-cluster", "--params", '{"shape": [8], "shift": 2.0}',
                "--out", str(tmp_path / "d")]).exit_code == 0
    w = np.random.default_rng(0).standard_normal((8, 2)) * 0.5
    assert run(["make-model", "--kind", "linear", "--params", json.dumps({"weight": w.tolist()}),
                "--out", str(tmp_path / "m")]).exit_code == 0
    r = run(["typicality", "--model", str(tmp_path / "m" / "model.json"), "--sigma2", "0.1",
             "--estimator", "exact", "--pool", "500", "--resamples", "2000",
             "--group", str(tmp_path / "d" / "train.gten"), "--group", str(tmp_path / "d" / "shifted-cluster.gten"),
             "--out", str(tmp_path / "t")])
    assert r.exit_code == 0, r.output
    rep = json.loads((tmp_path / "t" / "typicality.json").read_text())
    member = {g["name"]: g["member"] for g in rep["groups"]}
    assert member == {"generated": True, "train": False, "shifted-cluster": False}
    r = run(["plot", "--csv", str(tmp_path / "t" / "typicality.csv"), "--report",
             str(tmp_path / "t" / "typicality.json"), "--out", str(tmp_path / "p")])
    assert r.exit_code == 0 and "eps-band" in (tmp_path / "p" / "plot.svg").read_text()


def test_classify_1nn_and_outlier(tmp_path):
    run(["make-synthetic", "--kind", "two-class-ppca", "--params", '{"dim": 4, "n_train": 30, "n_test": 10}',
         "--out", str(tmp_path / "d")])
    r = run(["classify", "--method", "1nn", "--train", str(tmp_path / "d" / "train.gten"),
             "--data", str(tmp_path / "d" / "test.gten"), "--out", str(tmp_path / "c")])
    assert r.exit_code == 0, r.output
    assert json.loads((tmp_path / "c" / "classify.json").read_text())["accuracy"] == 1.0
    run(["make-synthetic", "--kind", "shifted-cluster", "--params", '{"shape": [4], "shift": 20.0}',
         "--out", str(tmp_path / "d")])
    r = run(["outlier", "--method", "1nn", "--train", str(tmp_path / "d" / "train.gten"),
             "--inliers", str(tmp_path / "d" / "test.gten"),
             "--outliers", str(tmp_path / "d" / "shifted-cluster.gten"), "--out", str(tmp_path / "od")])
    assert r.exit_code == 0, r.output
    assert json.loads((tmp_path / "od" / "outlier.json").read_text())["auc"] == 1.0


def test_fit_ppca_and_sample(tmp_path):
    run(["make-synthetic", "--kind", "two-class-ppca", "--params", '{"dim": 6}', "--out", str(tmp_path / "d")])
    r = run(["fit-ppca", "--data", str(tmp_path / "d" / "train.gten"), "--k", "2", "--out", str(tmp_path / "f")])
    assert r.exit_code == 0, r.output
    fit = json.loads((tmp_path / "f" / "fit.json").read_text())
    assert fit["sigma2"] > 0
    r = run(["sample", "--model", str(tmp_path / "f" / "model.json"), "--n", "7", "--out", str(tmp_path / "s")])
    assert r.exit_code == 0
    assert read_gten(tmp_path / "s" / "samples.gten").shape == (7, 6)


def test_cv_with_lls(tmp_path):
    run(["make-synthetic", "--kind", "smooth-gradients", "--params", '{"n": 6}', "--out", str(tmp_path / "d")])
    data = tmp_path / "d" / "smooth-gradients.gten"
    (tmp_path / "ll.csv").write_text("sample_id,ll_nats\n" + "".join(f"{i},{-i * 1.5}\n" for i in range(6)))
    r = run(["cv", "--data", str(data), "--lls", str(tmp_path / "ll.csv"), "--out", str(tmp_path / "c")])
    assert r.exit_code == 0, r.output
    summary = json.loads((tmp_path / "c" / "cv.json").read_text())
    assert -1 <= summary["pearson"] <= 1 and summary["n"] == 6


def test_version():
    r = run(["--version"])
    assert r.exit_code == 0 and "0.1.0" in r.output
