import json
import warnings

import numpy as np
import pytest

from omerf.cli import main

FAST_FIT = {"num_trees": 40, "toll": 0.05, "itmax": 25}


def run(argv):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return main(argv)


def write_json(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def test_simulate_writes_expected_files(tmp_path):
    out = tmp_path / "sim"
    assert run(["simulate", "--dgp", "1", "--seed", "7", "--out", str(out)]) == 0
    rows = (out / "dataset.csv").read_text().strip().splitlines()
    assert len(rows) == 1001  # header + 1000 rows
    assert rows[0] == "group,y,x1,x2,x3,x4,x5,x6,x7"
    truth = json.loads((out / "truth.json").read_text())
    assert len(truth["b_true"]) == 10
    split = json.loads((out / "split.json").read_text())
    assert len(split["train_rows"]) == 800
    assert (out / "schema.json").exists()
    assert (out / "manifest.json").exists()


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(["simulate", "--dgp", "2", "--seed", "3", "--out", str(a)])
    run(["simulate", "--dgp", "2", "--seed", "3", "--out", str(b)])
    assert (a / "dataset.csv").read_bytes() == (b / "dataset.csv").read_bytes()
    assert (a / "truth.json").read_bytes() == (b / "truth.json").read_bytes()


def test_simulate_rejects_bad_dgp(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(["simulate", "--dgp", "11", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_manifest_reruns_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(["simulate", "--dgp", "3", "--seed", "5", "--out", str(a)])
    assert run(["simulate", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert (a / "dataset.csv").read_bytes() == (b / "dataset.csv").read_bytes()


def test_manifest_command_mismatch(tmp_path):
    run(["simulate", "--dgp", "3", "--seed", "5", "--out", str(tmp_path / "a")])
    code = run(["benchmark", "--config", str(tmp_path / "a" / "manifest.json"),
                "--out", str(tmp_path / "b")])
    assert code == 2


@pytest.fixture(scope="module")
def sim9(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim9")
    run(["simulate", "--dgp", "9", "--seed", "11", "--out", str(out)])
    return out


def test_fit_clmm_summary_fields(tmp_path, sim9):
    out = tmp_path / "fit"
    code = run(["fit", "--model", "clmm", "--data", str(sim9 / "dataset.csv"),
                "--schema", str(sim9 / "schema.json"), "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert "sigma2" in summary and "icc" in summary
    assert summary["converged"] is True
    model = json.loads((out / "model.json").read_text())
    assert model["kind"] == "clmm"


def test_fit_requires_known_model(tmp_path, sim9):
    code = run(["fit", "--model", "clm", "--data", str(sim9 / "dataset.csv"),
                "--schema", str(sim9 / "schema.json"), "--out", str(tmp_path)])
    assert code == 0
    with pytest.raises(SystemExit) as exc:
        run(["fit", "--model", "gbm", "--data", "x.csv", "--schema", "s.json"])
    assert exc.value.code == 2


def test_fit_single_category_exits_2(tmp_path):
    data = tmp_path / "one.csv"
    data.write_text("group,y,x1\ng1,2,0.1\ng1,2,0.4\ng2,2,0.2\n", encoding="utf-8")
    schema = write_json(tmp_path / "schema.json",
                        {"label": "y", "group": "group", "fixed": ["x1"]})
    code = run(["fit", "--model", "clm", "--data", str(data), "--schema", schema,
                "--out", str(tmp_path / "out")])
    assert code == 2


@pytest.fixture(scope="module")
def omerf_fit(tmp_path_factory):
    base = tmp_path_factory.mktemp("omerf_run")
    sim_dir = base / "sim"
    fit_dir = base / "fit"
    run(["simulate", "--dgp", "1", "--seed", "2", "--out", str(sim_dir)])
    cfg = base / "cfg.json"
    cfg.write_text(json.dumps(FAST_FIT), encoding="utf-8")
    code = main(["fit", "--model", "omerf", "--data", str(sim_dir / "dataset.csv"),
                 "--schema", str(sim_dir / "schema.json"), "--config", str(cfg),
                 "--seed", "4", "--out", str(fit_dir)])
    assert code == 0
    return sim_dir, fit_dir


def test_fit_omerf_summary(omerf_fit):
    _, fit_dir = omerf_fit
    summary = json.loads((fit_dir / "summary.json").read_text())
    assert "converged" in summary and "iterations" in summary
    assert len(summary["trace"]) == summary["iterations"]


def test_predict_probabilities_sum_to_one(tmp_path, omerf_fit):
    sim_dir, fit_dir = omerf_fit
    out = tmp_path / "pred"
    code = run(["predict", "--model-file", str(fit_dir / "model.json"),
                "--data", str(sim_dir / "dataset.csv"), "--out", str(out)])
    assert code == 0
    lines = (out / "predictions.csv").read_text().strip().splitlines()
    assert lines[0] == "row,class,pi1,pi2,pi3"
    assert len(lines) == 1001
    for line in lines[1:]:
        parts = line.split(",")
        probs = [float(v) for v in parts[2:]]
        assert abs(sum(probs) - 1.0) < 1e-9
        assert int(parts[1]) in (1, 2, 3)


def test_predict_handles_unseen_group(tmp_path, omerf_fit):
    sim_dir, fit_dir = omerf_fit
    rows = (sim_dir / "dataset.csv").read_text().strip().splitlines()
    extra = rows[1].split(",")
    extra[0] = "99"
    data = tmp_path / "new.csv"
    data.write_text("\n".join(rows[:3] + [",".join(extra)]) + "\n", encoding="utf-8")
    out = tmp_path / "pred"
    assert run(["predict", "--model-file", str(fit_dir / "model.json"),
                "--data", str(data), "--out", str(out)]) == 0
    assert len((out / "predictions.csv").read_text().strip().splitlines()) == 4


def test_evaluate_perfect_predictions(tmp_path):
    # strongly separated classes so the fitted model classifies its own
    # training file perfectly
    rows = ["group,y,x1"]
    for c, v in ((1, -8.0), (2, 0.0), (3, 8.0)):
        rows.extend(f"g{i % 2},{c},{v + 0.01 * i}" for i in range(8))
    data = tmp_path / "sep.csv"
    data.write_text("\n".join(rows) + "\n", encoding="utf-8")
    schema = write_json(tmp_path / "schema.json",
                        {"label": "y", "group": "group", "fixed": ["x1"]})
    fit_dir = tmp_path / "fit"
    assert run(["fit", "--model", "clm", "--data", str(data), "--schema", schema,
                "--out", str(fit_dir)]) == 0
    out = tmp_path / "eval"
    assert run(["evaluate", "--model-file", str(fit_dir / "model.json"),
                "--data", str(data), "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["accuracy"] == 1.0
    assert metrics["mse"] == 0.0


def test_benchmark_shape_and_determinism(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {"num_trees": 25})
    args = ["benchmark", "--dgps", "9", "--reps", "2",
            "--models", "clm,ordforest-init", "--seed", "6", "--config", cfg]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(args + ["--out", str(a)]) == 0
    assert run(args + ["--out", str(b)]) == 0
    agg = (a / "aggregate.csv").read_text().strip().splitlines()
    assert agg[0] == "dgp,model,metric,mean,variance,n_reps"
    assert len(agg) == 1 + 2 * 4  # two models, four metrics
    assert (a / "aggregate.csv").read_bytes() == (b / "aggregate.csv").read_bytes()
    assert (a / "replications.csv").read_bytes() == (b / "replications.csv").read_bytes()
    reps = (a / "replications.csv").read_text().strip().splitlines()
    assert len(reps) == 1 + 2 * 2
    # aggregation equals an independent recomputation from the on-disk rows
    per_cell = {}
    for line in reps[1:]:
        dgp, rep, model, acc, mse, ari, kappa, n = line.split(",")
        for metric, value in zip(("accuracy", "mse", "ari", "kappa"),
                                 (acc, mse, ari, kappa)):
            per_cell.setdefault((dgp, model, metric), []).append(float(value))
    for line in (a / "aggregate.csv").read_text().strip().splitlines()[1:]:
        dgp, model, metric, mean, var, n_reps = line.split(",")
        vals = per_cell[(dgp, model, metric)]
        assert abs(float(mean) - np.mean(vals)) < 1e-12
        assert abs(float(var) - np.var(vals, ddof=1)) < 1e-12
    # the manifest reproduces the run byte for byte
    c = tmp_path / "c"
    assert run(["benchmark", "--config", str(a / "manifest.json"),
                "--out", str(c)]) == 0
    assert (a / "aggregate.csv").read_bytes() == (c / "aggregate.csv").read_bytes()


def test_benchmark_requires_plan(tmp_path):
    assert run(["benchmark", "--out", str(tmp_path)]) == 2
    assert run(["benchmark", "--dgps", "12", "--reps", "1",
                "--out", str(tmp_path)]) == 2


def test_explain_outputs(tmp_path, omerf_fit):
    sim_dir, fit_dir = omerf_fit
    out = tmp_path / "explain"
    code = run(["explain", "--model-file", str(fit_dir / "model.json"),
                "--data", str(sim_dir / "dataset.csv"), "--seed", "1",
                "--out", str(out)])
    assert code == 0
    imp = (out / "importance.csv").read_text().strip().splitlines()
    assert len(imp) == 8  # header + 7 covariates
    assert imp[0] == "feature,importance,rank"
    re_rows = (out / "random_effects.csv").read_text().strip().splitlines()
    assert len(re_rows) == 11  # header + 10 groups
    for line in re_rows[1:]:
        parts = line.split(",")
        assert float(parts[4]) < float(parts[5])  # lo < hi
    pd_rows = (out / "partial_dependence.csv").read_text().strip().splitlines()
    assert pd_rows[0] == "feature,grid_value,pd_value"
    assert len(pd_rows) == 1 + 7 * 20


def test_explain_rejects_clm_model(tmp_path, sim9):
    fit_dir = tmp_path / "fit"
    run(["fit", "--model", "clm", "--data", str(sim9 / "dataset.csv"),
         "--schema", str(sim9 / "schema.json"), "--out", str(fit_dir)])
    code = run(["explain", "--model-file", str(fit_dir / "model.json"),
                "--data", str(sim9 / "dataset.csv"), "--out", str(tmp_path / "x")])
    assert code == 2


def test_explain_row_mismatch(tmp_path, omerf_fit):
    sim_dir, fit_dir = omerf_fit
    rows = (sim_dir / "dataset.csv").read_text().strip().splitlines()
    data = tmp_path / "short.csv"
    data.write_text("\n".join(rows[:5]) + "\n", encoding="utf-8")
    code = run(["explain", "--model-file", str(fit_dir / "model.json"),
                "--data", str(data), "--out", str(tmp_path / "x")])
    assert code == 2


def test_missing_data_file_is_io_error(tmp_path, omerf_fit):
    _, fit_dir = omerf_fit
    code = run(["predict", "--model-file", str(fit_dir / "model.json"),
                "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path)])
    assert code == 1


def test_unknown_config_key_rejected(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {"tres": 10})
    assert run(["simulate", "--dgp", "1", "--config", cfg,
                "--out", str(tmp_path / "o")]) == 2
