import json
import os

import pytest

from coxhawkes.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from coxhawkes.io import read_events

SMALL_MCMC = {"n_chains": 2, "n_samples": 120, "n_warmup": 60, "n_leapfrog": 6}


def write_cfg(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def sim_dir(tmp_path):
    cfg = write_cfg(tmp_path / "sim.json", {
        "seed": 2, "domain": {"t_max": 20.0},
        "truth": {"a0": 1.0, "alpha": 0.5, "beta": 0.7, "sigma_x2": 0.05, "sigma_y2": 0.05},
    })
    out = tmp_path / "sim"
    assert run("simulate", "--config", cfg, "--out", out) == EXIT_OK
    return out


def test_simulate_writes_events_and_truths(sim_dir):
    ev = read_events(sim_dir / "events.csv")
    truth = json.loads((sim_dir / "truth.json").read_text())
    assert truth["n_events"] == ev.n > 0
    assert truth["n_background"] + truth["n_offspring"] == ev.n
    assert truth["trigger"]["alpha"] == 0.5 and len(truth["f_t"]) == 50 and len(truth["f_s"]) == 625
    assert truth["seed"] == 2
    assert "config_hash" in truth
    assert "finished with exit code 0" in (sim_dir / "run.log").read_text()


def test_simulate_missing_trigger_is_config_error(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", {"model": {"kind": "cox_hawkes"}, "truth": {"a0": 0.8}})
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG


def test_unknown_key_is_config_error(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", {"mcmc": {"chains": 3}})
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG


def test_malformed_events_is_data_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", {"model": {"kind": "poisson"}, "domain": {"t_max": 10.0}})
    (tmp_path / "e.csv").write_text("t,x,y\n1,0.5,0.5\n2,0.5\n")
    assert run("fit", "--config", cfg, "--events", tmp_path / "e.csv", "--out", tmp_path / "o") == EXIT_DATA
    assert "line 3" in capsys.readouterr().err


def test_events_outside_window_is_data_error(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", {"model": {"kind": "poisson"}, "domain": {"t_max": 10.0}})
    (tmp_path / "e.csv").write_text("t,x,y\n11,0.5,0.5\n")
    assert run("fit", "--config", cfg, "--events", tmp_path / "e.csv", "--out", tmp_path / "o") == EXIT_DATA


def test_fit_predict_diagnose_pipeline(tmp_path, sim_dir):
    ev = read_events(sim_dir / "events.csv")
    train = tmp_path / "train.csv"
    with open(train, "w") as fh:
        fh.write("t,x,y\n")
        for e in ev.before(16.0):
            fh.write(f"{e.t!r},{e.x!r},{e.y!r}\n")
    cfg = write_cfg(tmp_path / "fit.json", {
        "seed": 5, "domain": {"t_max": 16.0}, "grid": {"n_t": 16, "n_x": 8, "n_y": 8},
        "mcmc": SMALL_MCMC, "predict": {"k": 3, "n_replicates": 7, "n_draws": 4},
    })
    fit_out = tmp_path / "fit"
    assert run("fit", "--config", cfg, "--events", train, "--out", fit_out) == EXIT_OK
    summary = json.loads((fit_out / "summary.json").read_text())
    assert set(summary["params"]) == {"a0", "alpha", "beta", "sigma_x2", "sigma_y2"}
    assert {"r_hat", "ess", "mean", "sd", "q05", "q50", "q95"} <= set(summary["params"]["alpha"])
    assert "n_divergent" in summary
    trace_rows = (fit_out / "trace.csv").read_text().splitlines()
    assert trace_rows[1].startswith("chain,draw,a0,alpha,beta,sigma_x2,sigma_y2,z_t_0")
    assert len(trace_rows) == 2 + 2 * 60
    assert len((fit_out / "field_s.csv").read_text().splitlines()) == 2 + 64

    pred_out = tmp_path / "pred"
    args = ("predict", "--config", cfg, "--events", train, "--trace", fit_out / "trace.csv")
    assert run(*args, "--out", pred_out) == EXIT_OK
    assert not (pred_out / "score.json").exists()
    rows = (pred_out / "predictions.csv").read_text().splitlines()
    assert rows[1] == "replicate,rank,t,x,y" and len(rows) == 2 + 7 * 3
    assert run(*args, "--test", sim_dir / "events.csv", "--out", tmp_path / "pred2") == EXIT_OK
    score = json.loads((tmp_path / "pred2" / "score.json").read_text())
    assert len(score["rmse"]) == 7 and score["rmse_mean"] > 0
    # predictions identical with or without scoring
    assert (pred_out / "predictions.csv").read_bytes() == (tmp_path / "pred2" / "predictions.csv").read_bytes()

    diag_out = tmp_path / "diag"
    assert run("diagnose", "--config", cfg, "--events", train, "--trace", fit_out / "trace.csv",
               "--out", diag_out) == EXIT_OK
    diag = json.loads((diag_out / "diagnose.json").read_text())
    assert 0 <= diag["ks_pvalue"] <= 1
    assert diag["gradient_max_rel_error"] < 1e-4


def test_predict_two_thousand_rows(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", {"model": {"kind": "poisson"}, "domain": {"t_max": 10.0},
                                          "predict": {"k": 10, "n_replicates": 200}})
    (tmp_path / "e.csv").write_text("t,x,y\n1,0.5,0.5\n")
    (tmp_path / "trace.csv").write_text("chain,draw,a0\n0,0,1.0\n0,1,1.2\n")
    assert run("predict", "--config", cfg, "--events", tmp_path / "e.csv", "--trace", tmp_path / "trace.csv",
               "--out", tmp_path / "o") == EXIT_OK
    assert len((tmp_path / "o" / "predictions.csv").read_text().splitlines()) == 2 + 2000


def test_empty_events_lgcp_fit(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", {
        "model": {"kind": "lgcp"}, "domain": {"t_max": 10.0}, "grid": {"n_t": 10, "n_x": 5, "n_y": 5},
        "mcmc": {"n_chains": 2, "n_samples": 300, "n_warmup": 100, "n_leapfrog": 8},
    })
    (tmp_path / "e.csv").write_text("t,x,y\n")
    assert run("fit", "--config", cfg, "--events", tmp_path / "e.csv", "--out", tmp_path / "o") == EXIT_OK
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["n_events"] == 0
    # zero-data likelihood exp(-Lambda) pushes the intercept below its N(0, 2) prior mean
    assert summary["params"]["a0"]["mean"] < -0.5


def test_experiment_single_cell_and_resume(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", {
        "domain": {"t_max": 20.0},
        "experiment": {
            "generators": {"poisson": {"a0": 1.0}}, "inference_kinds": ["poisson"],
            "n_datasets": 2, "n_predictions": 4, "n_draws": 4,
            "mcmc": {"n_samples": 60, "n_warmup": 30, "n_leapfrog": 4},
        },
    })
    out = tmp_path / "exp"
    assert run("experiment", "--config", cfg, "--out", out) == EXIT_OK
    table = (out / "table.csv").read_text().splitlines()
    assert table[1] == "generator,poisson" and len(table) == 3 and table[2].startswith("poisson,")
    first = (out / "table.csv").read_bytes()
    cells = sorted(os.listdir(out / "cells"))
    assert len(cells) == 2
    os.remove(out / "cells" / cells[1])
    assert run("experiment", "--config", cfg, "--out", out) == EXIT_OK
    assert (out / "table.csv").read_bytes() == first


def test_experiment_without_generators_is_config_error(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", {})
    assert run("experiment", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG


def test_seed_override_changes_output(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", {"model": {"kind": "poisson"}, "truth": {"a0": 1.0}})
    run("simulate", "--config", cfg, "--out", tmp_path / "a")
    run("simulate", "--config", cfg, "--out", tmp_path / "b", "--seed", "9")
    a = (tmp_path / "a" / "events.csv").read_text()
    b = (tmp_path / "b" / "events.csv").read_text()
    assert a != b and "seed=9" in b.splitlines()[0]


def test_experiment_checkpoints_carry_provenance_and_go_stale(tmp_path):
    exp = {"generators": {"poisson": {"a0": 1.0}}, "inference_kinds": ["poisson"], "n_datasets": 1,
           "n_predictions": 2, "n_draws": 2, "k": 3, "mcmc": {"n_samples": 40, "n_warmup": 20, "n_leapfrog": 4}}
    cfg = write_cfg(tmp_path / "c.json", {"domain": {"t_max": 20.0}, "experiment": exp})
    out = tmp_path / "exp"
    assert run("experiment", "--config", cfg, "--out", out) == EXIT_OK
    (cell,) = os.listdir(out / "cells")
    first = json.loads((out / "cells" / cell).read_text())
    assert first["seed"] == 0 and len(first["config_hash"]) == 16
    assert run("experiment", "--config", cfg, "--out", out, "--seed", "1") == EXIT_OK
    second = json.loads((out / "cells" / cell).read_text())
    assert second["seed"] == 1 and second["errors"] != first["errors"]
