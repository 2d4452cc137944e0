import json
import math
import os

import numpy as np
import pytest

from vriwae.experiments import (ExperimentSpec, fit_gap_table, make_linear_gaussian,
                                make_toy, read_table, render_svg,
                                run_collapse_experiment, run_gap_experiment,
                                run_snr_experiment, run_train_experiment,
                                run_weights_experiment, selftest, write_table)


def small_gap_spec(**kw):
    base = dict(kind="gap", model="toy", alphas=(0.0, 0.5), ds=(2,),
                n_grid=(2, 4, 8), replicates=200, seed=1)
    base.update(kw)
    return ExperimentSpec(**base)


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(kind="gap", n_grid=(4, 2))
    with pytest.raises(ValueError):
        ExperimentSpec(kind="gap", alphas=(0.0, 1.5))
    with pytest.raises(ValueError):
        ExperimentSpec(kind="gap", format="xml")


def test_gap_experiment_columns_and_determinism():
    spec = small_gap_spec()
    rows1 = run_gap_experiment(spec)
    rows2 = run_gap_experiment(spec)
    assert write_table(rows1, spec) == write_table(rows2, spec)
    assert len(rows1) == 2 * 3  # alphas x n_grid
    for row in rows1:
        assert row["mean_bound"] == pytest.approx(row["mean_gap"])  # toy marginal is 0
        assert math.isfinite(row["se_gap"])


def test_gap_matched_params_all_zero():
    spec = small_gap_spec(theta_scale=1.0)  # theta = phi = u_d
    rows = run_gap_experiment(spec)
    for row in rows:
        assert row["mean_gap"] == 0.0
        assert row["c1"] == pytest.approx(0.0, abs=1e-12)


def test_gap_prediction_matches_one_over_n_formula():
    # d=1 toy at alpha=0.5: pred_1n at N=1024 is about -2.5109 for B^2=10;
    # here check the stored baseline columns are self-consistent instead
    spec = small_gap_spec()
    rows = run_gap_experiment(spec)
    for row in rows:
        if not math.isnan(row["pred_1n_fit"]):
            assert row["pred_1n_fit"] == pytest.approx(
                row["pred_1n"] + row["c1"] * row["shape_1n"], abs=1e-10)
        if row["N"] >= 3 and not math.isnan(row["pred_ev_fit"]):
            assert row["pred_ev_fit"] == pytest.approx(
                row["pred_ev"] + row["c2"] * row["shape_ev"], abs=1e-10)
        if row["N"] < 3:
            assert math.isnan(row["pred_ev"])


def test_gap_lingauss_runs_with_perturbations():
    spec = ExperimentSpec(kind="gap", model="lingauss", alphas=(0.0,), ds=(3,),
                          n_grid=(2, 4), replicates=100, seed=2,
                          sigma_perturbs=(0.0, 0.5))
    rows = run_gap_experiment(spec)
    assert len(rows) == 4
    sps = sorted({row["sigma_perturb"] for row in rows})
    assert sps == [0.0, 0.5]
    for row in rows:
        assert row["mean_bound"] == pytest.approx(row["mean_gap"] + row["log_marginal"])


def test_fit_gap_table_roundtrip(tmp_path):
    spec = small_gap_spec(out=str(tmp_path / "gap.csv"))
    rows = run_gap_experiment(spec)
    write_table(rows, spec, path=spec.out)
    read_rows, meta = read_table(spec.out)
    assert meta["schema_version"] == "1"
    fits = fit_gap_table(read_rows)
    by_alpha = {f["alpha"]: f for f in fits}
    for row in rows:
        f = by_alpha[row["alpha"]]
        assert f["c1"] == pytest.approx(row["c1"], rel=1e-9, abs=1e-12)
        assert f["c2"] == pytest.approx(row["c2"], rel=1e-9, abs=1e-12)


def test_csv_bytes_identical(tmp_path):
    spec = small_gap_spec(out=str(tmp_path / "a.csv"))
    write_table(run_gap_experiment(spec), spec, path=spec.out)
    spec2 = small_gap_spec(out=str(tmp_path / "b.csv"))
    write_table(run_gap_experiment(spec2), spec2, path=spec2.out)
    with open(spec.out, "rb") as f:
        a = f.read()
    with open(spec2.out, "rb") as f:
        b = f.read()
    assert a == b


def test_json_format():
    spec = small_gap_spec(format="json")
    text = write_table(run_gap_experiment(spec), spec)
    doc = json.loads(text)
    assert doc["schema_version"] == "1"
    assert doc["spec"]["kind"] == "gap"
    assert len(doc["rows"]) == 6


def test_snr_experiment_smoke():
    spec = ExperimentSpec(kind="snr", model="lingauss", alphas=(0.0, 0.5), ds=(4,),
                          n_grid=(2, 8, 32), replicates=200, seed=3,
                          sigma_perturbs=(0.01,), coordinate_sample=3)
    rows = run_snr_experiment(spec)
    # 2 alphas x 2 estimators x 2 blocks x 3 N values
    assert len(rows) == 24
    for row in rows:
        assert row["block"] in ("theta", "phi")
        assert row["estimator"] in ("rep", "drep")
        assert row["ref_slope"] in (0.5, -0.5)
        assert row["slope_lo"] <= row["slope"] <= row["slope_hi"]


def test_weights_experiment_rows():
    spec = ExperimentSpec(kind="weights", model="toy", ds=(5,), weight_samples=20_000,
                          seed=4)
    rows = run_weights_experiment(spec)
    assert len(rows) == 60  # one row per histogram bin
    total = sum(r["count"] for r in rows)
    assert total == 20_000
    # toy log-weights are exactly normal
    assert rows[0]["qq_corr"] > 0.999
    assert abs(rows[0]["log_std"] - math.sqrt(5.0)) < 0.05


def test_weights_experiment_lingauss_smoke():
    spec = ExperimentSpec(kind="weights", model="lingauss", ds=(4,),
                          sigma_perturbs=(0.5,), weight_samples=5_000, seed=5)
    rows = run_weights_experiment(spec)
    assert len(rows) == 60
    assert all(math.isfinite(r["log_mean"]) for r in rows)


def test_collapse_experiment_trends():
    spec = ExperimentSpec(kind="collapse", model="toy", alphas=(0.0,), ds=(1, 25),
                          n_grid=(64,), replicates=400, seed=6)
    rows = run_collapse_experiment(spec)
    assert len(rows) == 2
    small_d, large_d = rows[0], rows[1]
    # collapse strengthens with dimension: T falls, max share rises
    assert small_d["t_mean"] > large_d["t_mean"]
    assert small_d["max_share_mean"] < large_d["max_share_mean"]
    for row in rows:
        assert 1.0 <= row["ess_mean"] <= 64.0
        assert 0.0 < row["max_share_mean"] <= 1.0


def test_train_experiment_rows():
    spec = ExperimentSpec(kind="train", model="toy", alphas=(0.5,), ds=(3,),
                          n_importance=8, epochs=30, log_every=10, seed=7)
    rows = run_train_experiment(spec)
    assert rows[0]["epoch"] == 0
    assert rows[-1]["epoch"] == 30
    assert "bd2_over_d" in rows[0]


def test_render_svg(tmp_path):
    rows = [{"N": 2, "y": 1.0, "z": 2.0}, {"N": 4, "y": 2.0, "z": 1.0}]
    path = tmp_path / "plot.svg"
    render_svg(rows, "N", ["y", "z"], str(path))
    text = path.read_text()
    assert text.count("<polyline") == 2
    assert "log scale" in text


def test_render_svg_errors(tmp_path):
    path = tmp_path / "plot.svg"
    with pytest.raises(ValueError):
        render_svg([], "N", ["y"], str(path))
    with pytest.raises(ValueError):
        render_svg([{"N": 2}], "N", ["missing"], str(path))
    assert not path.exists()


def test_render_svg_gap_table(tmp_path):
    spec = small_gap_spec()
    rows = run_gap_experiment(spec)
    path = tmp_path / "gap.svg"
    rows0 = [r for r in rows if r["alpha"] == 0.0]
    render_svg(rows0, "N", ["mean_gap", "pred_ev_fit"], str(path))
    assert path.exists()


def test_selftest_passes():
    report = selftest(seed=0)
    for name, passed, detail in report.checks:
        assert passed, f"{name}: {detail}"
    assert report.ok


def test_selftest_seed_independent():
    assert selftest(seed=12345).ok


def test_selftest_catches_corrupted_h(monkeypatch):
    # dropping the alpha*s term must break the drep-vs-rep agreement check
    import vriwae.gradients as gradients_mod

    def broken(model, eps, alpha, kind):
        if kind != "drep":
            return real(model, eps, alpha, kind)
        z = model.reparam(eps)
        lw = model.log_unnormalized_weight(z)
        s = gradients_mod._softmax_last((1.0 - alpha) * lw)
        d_theta, _, d_phi_stopped = model.score_grads(eps, z)
        g_theta = np.einsum("...n,...nk->...k", s, d_theta)
        g_phi = np.einsum("...n,...nk->...k", (1.0 - alpha) * s * s, d_phi_stopped)
        return g_theta, g_phi

    real = gradients_mod.grad_samples_from_eps
    monkeypatch.setattr(gradients_mod, "grad_samples_from_eps", broken)
    report = selftest(seed=0)
    failed = {name for name, passed, _ in report.checks if not passed}
    assert "gradient_unbiasedness_reduced" in failed


def test_cli_gap_and_fit(tmp_path):
    from vriwae.cli import main
    out = tmp_path / "gap.csv"
    code = main(["gap", "--model", "toy", "--alpha", "0", "0.5", "--d", "2",
                 "--n-grid", "2", "4", "8", "--replicates", "100", "--seed", "1",
                 "--out", str(out)])
    assert code == 0
    assert out.exists()
    rows, meta = read_table(str(out))
    assert len(rows) == 6
    fit_out = tmp_path / "fit.json"
    assert main(["fit", str(out), "--out", str(fit_out)]) == 0
    fits = json.loads(fit_out.read_text())
    assert {f["alpha"] for f in fits} == {0.0, 0.5}


def test_cli_selftest_exit_code():
    from vriwae.cli import main
    assert main(["selftest", "--seed", "0"]) == 0


def test_cli_config_file(tmp_path):
    from vriwae.cli import main
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "toy", "alphas": [0.0], "ds": [2],
                               "n_grid": [2, 4], "replicates": 50, "seed": 9}))
    out = tmp_path / "gap.csv"
    assert main(["gap", "--config", str(cfg), "--out", str(out)]) == 0
    rows, _ = read_table(str(out))
    assert len(rows) == 2
