import json

import numpy as np
import pytest

from ordfrag.cli import main
from ordfrag.data import random_im, simulate_dataset, write_csv
from ordfrag.models import ParamSet, parse_model

from conftest import make_dataset

FAST = ["--chains", "2", "--warmup", "150", "--iters", "200"]


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "data.csv"
    write_csv(make_dataset(200, 3), path)
    return path


def run(tmp_path, *argv):
    out = tmp_path / "out"
    code = main([*argv, "--output", str(out)])
    return code, out


def read_csv_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ordfrag ")
    return [line.split(",") for line in lines[1:]]


def test_fit_mle_report(tmp_path, data_csv):
    code, out = run(tmp_path, "fit", "--input", str(data_csv), "--models", "cum", "--mode", "mle")
    assert code == 0
    rows = read_csv_rows(out / "fit_cum_table.csv")
    assert rows[0] == ["term", "estimate", "std.error", "z_value", "pr_z"]
    assert [r[0] for r in rows[1:]] == ["tau1", "tau2", "tau3", "tau4", "beta"]
    report = json.loads((out / "fit_cum.json").read_text())
    assert report["meta"]["engine"] == "ordfrag" and len(report["meta"]["config_hash"]) == 16
    assert set(report["fit"]["criteria"]) == {"aic", "bic", "mcfadden_r2", "coxsnell_r2"}
    summary = json.loads((out / "summary.json").read_text())
    assert "fit_cum.json" in summary["files"]


def test_fit_all_bayes(tmp_path, data_csv):
    code, out = run(tmp_path, "fit", "--input", str(data_csv), "--models", "all", "--mode", "bayes",
                    "--seed", "7", *FAST)
    assert code == 0
    assert len(list(out.glob("posterior_*.json"))) == 11
    assert len(list(out.glob("draws_*.csv"))) == 11
    draws = read_csv_rows(out / "draws_seq_vh_cs.csv")
    assert draws[0] == ["chain", "iter", "param", "value"]
    assert len(draws) == 1 + 2 * 200 * 9


def test_bayes_needs_seed(tmp_path, data_csv, capsys):
    code, _ = run(tmp_path, "fit", "--input", str(data_csv), "--mode", "bayes")
    assert code == 2
    assert "--seed" in capsys.readouterr().err


def test_missing_input(tmp_path, capsys):
    code, _ = run(tmp_path, "fit", "--input", str(tmp_path / "absent.csv"))
    assert code == 2
    assert "absent.csv" in capsys.readouterr().err


def test_unknown_model_lists_catalog(tmp_path, data_csv, capsys):
    code, _ = run(tmp_path, "fit", "--input", str(data_csv), "--models", "cumm")
    assert code == 2
    err = capsys.readouterr().err
    assert "seq+vh+cs" in err and "mlogit" in err


def test_compare_needs_two_models(tmp_path, data_csv):
    code, _ = run(tmp_path, "compare", "--input", str(data_csv), "--models", "cum", "--seed", "1", *FAST)
    assert code == 2


def test_compare_duplicate_model_has_zero_diff(tmp_path, data_csv):
    code, out = run(tmp_path, "compare", "--input", str(data_csv), "--models", "cum,cum,seq", "--seed", "1", *FAST)
    assert code == 0
    rows = json.loads((out / "comparison.json").read_text())["rows"]
    cums = [r for r in rows if r["model_name"] == "cum"]
    assert len(cums) == 2 and cums[0]["elpd_loo"] == cums[1]["elpd_loo"]
    assert abs(cums[0]["elpd_diff"] - cums[1]["elpd_diff"]) == 0
    header = read_csv_rows(out / "comparison.csv")[0]
    assert header[:6] == ["model", "n_params", "elpd_loo", "elpd_diff", "se_diff", "rank"]


def test_compare_catalog_recovers_generator(tmp_path):
    truth = ParamSet([-1.6, -1.2, -0.35, 0.0], [0.8, 1.6, 2.2, 2.8])
    path = tmp_path / "seqcs.csv"
    write_csv(simulate_dataset(parse_model("seq+cs"), truth, random_im(0, 442), 0), path)
    code, out = run(tmp_path, "compare", "--input", str(path), "--models", "all", "--seed", "0",
                    "--chains", "2", "--warmup", "500", "--iters", "1000")
    assert code == 0
    rows = json.loads((out / "comparison.json").read_text())["rows"]
    assert len(rows) == 11 and rows[0]["model_name"] == "seq+cs"
    assert all(r["significant"] for r in rows if r["model_name"] in ("cum", "seq", "acat"))


def test_diagnose_outputs(tmp_path, data_csv):
    code, out = run(tmp_path, "diagnose", "--input", str(data_csv), "--seed", "3")
    assert code == 0
    assert read_csv_rows(out / "residuals.csv")[0] == ["index", "ln_im", "ds", "residual", "replicate"]
    assert read_csv_rows(out / "qq.csv")[0] == ["theoretical_quantile", "sample_quantile"]
    assert len(read_csv_rows(out / "trend.csv")) == 11
    assert read_csv_rows(out / "dcheck.csv")[0] == ["ln_im", "D"]
    summary = json.loads((out / "diagnose.json").read_text())["parallel_check"]
    assert summary["p_value"] > 0.01


def test_diagnose_two_regime_detected(tmp_path):
    path = tmp_path / "two.csv"
    code = main(["simulate", "--model", "cum+cs", "--unsafe", "--params",
                 '{"tau": [-1.617, -1.0, -0.082, 0.623], "beta": [1.3, 1.3, 1.8, 1.8]}',
                 "--n", "2000", "--seed", "1", "--output", str(tmp_path), "--name", "two.csv"])
    assert code == 0
    code, out = run(tmp_path, "diagnose", "--input", str(path), "--seed", "1")
    assert code == 0
    assert json.loads((out / "diagnose.json").read_text())["parallel_check"]["p_value"] < 0.01


def test_diagnose_rejects_other_families(tmp_path, data_csv, capsys):
    code, _ = run(tmp_path, "diagnose", "--input", str(data_csv), "--model", "seq", "--seed", "1")
    assert code == 2
    assert "cumulative" in capsys.readouterr().err


def test_curves_mle(tmp_path, data_csv):
    code, out = run(tmp_path, "curves", "--input", str(data_csv), "--im-grid", "0.1:1.0:5")
    assert code == 0
    rows = read_csv_rows(out / "curves_exceedance.csv")
    assert rows[0] == ["im", "k", "exceedance_prob"] and len(rows) == 1 + 5 * 4
    facets = read_csv_rows(out / "facets.csv")
    assert sorted({float(r[0]) for r in facets[1:]}) == pytest.approx([0.2, 0.4, 0.6, 0.8, 1.0, 1.2])
    assert not (out / "bands_exceedance.csv").exists()


def test_curves_bayes_bands_and_geq(tmp_path, data_csv):
    code, out = run(tmp_path, "curves", "--input", str(data_csv), "--mode", "bayes", "--seed", "2",
                    "--im-grid", "0.2,0.5", "--convention", "geq", *FAST)
    assert code == 0
    rows = read_csv_rows(out / "bands_exceedance.csv")[1:]
    assert {r[2] for r in rows} == {"median", "lower", "upper"}
    assert {int(r[1]) for r in rows} == {2, 3, 4, 5}


def test_curves_empty_grid(tmp_path, data_csv):
    code, _ = run(tmp_path, "curves", "--input", str(data_csv), "--im-grid", ",")
    assert code == 2


def test_simulate_and_analytic(tmp_path):
    cfg = tmp_path / "analytic.json"
    cfg.write_text(json.dumps({"psdm": {"ln_a0": float(np.log(0.02)), "a1": 1.1, "beta_d": 0.35},
                               "capacity": {"ln_sc": np.log([0.004, 0.008, 0.015, 0.03]).tolist(),
                                            "beta_c": 0.3}}))
    code, out = run(tmp_path, "analytic", "--config", str(cfg), "--seed", "4", "--n", "300")
    assert code == 0
    data = read_csv_rows(out / "analytic_data.csv")
    assert data[0] == ["im", "ds"] and len(data) == 301
    assert read_csv_rows(out / "closed_form.csv")[0] == ["im", "k", "exceedance_prob"]


def test_output_dir_from_environment(tmp_path, data_csv, monkeypatch):
    target = tmp_path / "env-out"
    monkeypatch.setenv("ORDFRAG_OUTPUT_DIR", str(target))
    assert main(["fit", "--input", str(data_csv)]) == 0
    assert (target / "fit_cum.json").exists()


@pytest.mark.parametrize("argv", [
    ["simulate", "--model", "seq+cs", "--params", '{"tau": [-1, 0, 1, 2], "beta": [1, 1.5, 2, 1]}', "--n", "100"],
    ["diagnose", "--replicates", "2"],
    ["compare", "--models", "cum,acat", *FAST],
    ["curves", "--mode", "bayes", "--im-grid", "0.1:1:4", *FAST],
])
def test_byte_identical_reruns(tmp_path, data_csv, argv):
    argv = list(argv)
    if argv[0] != "simulate":
        argv[1:1] = ["--input", str(data_csv)]
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main([*argv, "--seed", "5", "--output", str(out)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]
    other = tmp_path / "c"
    assert main([*argv, "--seed", "6", "--output", str(other)]) == 0
    changed = {p.name: p.read_bytes() for p in sorted(other.iterdir())}
    assert changed != outs[0]
