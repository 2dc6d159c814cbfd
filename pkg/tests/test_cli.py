import json
import os

import pandas as pd
import pytest

import main as entry
from main import EXTREMAL_COLUMNS, main
from utils.errors import EXIT_INTERNAL, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION

RUN = {
    "tree": {
        "alpha": 0.5,
        "children": [
            {"leaf": "Z1", "tau": 3.0, "alpha": 0.4},
            {"leaf": "Z2", "tau": 3.0, "alpha": 0.8},
        ],
    },
    "sites": {"points": [[0, 0], [6, 0], [0, 6], [6, 6]], "ids": ["a", "b", "c", "d"]},
    "grid": {"bounds": [0, 6, 0, 6], "nx": 2, "ny": 2, "anchor": "edge"},
    "simulation": {"n_rep": 5},
    "mcmc": {"iterations": 30, "burn_in": 10, "log_every": 0},
    "predict": {"n_sim": 5, "p_grid": [0.5, 0.917]},
    "seed": 42,
}


@pytest.fixture
def cli(tmp_path, monkeypatch, repo_root):
    monkeypatch.chdir(tmp_path)
    defaults = os.path.join(repo_root, "config.yaml")

    def run(command, payload=None, *extra):
        args = [command, "--defaults", defaults]
        if payload is not None:
            path = tmp_path / f"{command}_run.json"
            path.write_text(json.dumps(payload), encoding="utf-8")
            args += ["--config", str(path)]
        return main(args + list(extra))

    return run


def _read(path):
    with open(path, "rb") as f:
        return f.read()


def test_simulate_is_reproducible_across_workers(cli, tmp_path):
    assert cli("simulate", RUN, "--out", "one", "--workers", "1") == EXIT_OK
    assert cli("simulate", RUN, "--out", "two", "--workers", "3") == EXIT_OK
    assert _read(tmp_path / "one" / "sample.csv") == _read(tmp_path / "two" / "sample.csv")

    first = _read(tmp_path / "one" / "provenance_simulate.json")
    assert cli("simulate", RUN, "--out", "one", "--workers", "1") == EXIT_OK
    assert _read(tmp_path / "one" / "provenance_simulate.json") == first

    sample = pd.read_csv(tmp_path / "one" / "sample.csv")
    assert len(sample) == 2 * 4 * 5
    provenance = json.loads(first)
    assert provenance["seed"] == 42
    assert provenance["outputs"] == ["sample.csv"]


def test_invalid_tree_exits_with_validation_code(cli, tmp_path):
    bad = dict(RUN, tree={"alpha": 1.5, "children": [{"leaf": "X", "tau": -1.0}]})
    assert cli("simulate", bad, "--out", "bad") == EXIT_VALIDATION
    assert not (tmp_path / "bad" / "sample.csv").exists()


def test_unknown_config_key_exits_with_validation_code(cli):
    assert cli("simulate", dict(RUN, simulaton={})) == EXIT_VALIDATION


def test_missing_config_file_exits_with_io_code(cli, tmp_path):
    assert cli("simulate", None, "--config", str(tmp_path / "absent.json")) == EXIT_IO


def test_fit_diagnose_predict_pipeline(cli, tmp_path):
    assert cli("simulate", RUN, "--out", "sim") == EXIT_OK
    sample = str(tmp_path / "sim" / "sample.csv")
    assert cli("fit", RUN, "--out", "fit", "--data", sample, "--unit-frechet",
               "--chains", "2") == EXIT_OK

    summary = json.loads((tmp_path / "fit" / "summary.json").read_text(encoding="utf-8"))
    assert set(summary["rhat"]) == {"alpha_0", "alpha_1", "alpha_2", "tau_Z1", "tau_Z2"}
    chain = pd.read_csv(tmp_path / "fit" / "chain_0.csv")
    assert list(chain.columns) == ["iteration", "parameter_name", "value"]
    assert chain["iteration"].nunique() == 20
    missing = pd.read_csv(tmp_path / "fit" / "missing.csv")
    assert len(missing) == 2 * 4
    assert int(missing["missing"].sum()) == 0

    chains = ",".join(str(tmp_path / "fit" / f"chain_{i}.csv") for i in range(2))
    assert cli("diagnose", None, "--out", "diag", "--data", chains) == EXIT_OK
    ess = pd.read_csv(tmp_path / "diag" / "diagnostics" / "ess.csv")
    assert len(ess) == 2 * 6
    assert (tmp_path / "diag" / "diagnostics" / "rhat.csv").exists()
    assert (tmp_path / "diag" / "diagnostics" / "trace_chain0_alpha_0.csv").exists()

    chain_0 = str(tmp_path / "fit" / "chain_0.csv")
    assert cli("predict", RUN, "--out", "pred", "--data", chain_0) == EXIT_OK
    quantiles = pd.read_csv(tmp_path / "pred" / "quantiles.csv")
    assert list(quantiles["p"]) == [0.5, 0.917]
    assert quantiles["label"].fillna("").tolist() == ["", "1-year"]


def test_predict_on_gev_scale_needs_margins(cli, tmp_path):
    frame = pd.DataFrame({"iteration": [1, 1], "parameter_name": ["alpha_0", "tau_Z1"],
                          "value": [0.5, 3.0]})
    frame.to_csv(tmp_path / "chain.csv", index=False)
    payload = dict(RUN, predict={"gev": True, "n_sim": 5})
    assert cli("predict", payload, "--out", "pred", "--data", str(tmp_path / "chain.csv")) \
        == EXIT_VALIDATION


def test_empty_pair_list_gives_header_only(cli, tmp_path):
    payload = dict(RUN, extremal={"pairs": []})
    assert cli("extremal", payload, "--out", "ext") == EXIT_OK
    text = (tmp_path / "ext" / "extremal.csv").read_text(encoding="utf-8")
    assert text == ",".join(EXTREMAL_COLUMNS) + "\n"


def test_extremal_model_curve(cli, tmp_path):
    payload = dict(RUN, extremal={"leaf_pairs": [["Z1", "Z2"]]})
    assert cli("extremal", payload, "--out", "ext") == EXIT_OK
    frame = pd.read_csv(tmp_path / "ext" / "extremal.csv")
    assert len(frame) == 4 * 5 // 2
    assert frame["theta_model"].between(1.0, 2.0).all()
    assert frame["theta_empirical"].isna().all()


def test_fit_writes_missing_value_report(cli, tmp_path):
    assert cli("simulate", RUN, "--out", "sim") == EXIT_OK
    sample = pd.read_csv(tmp_path / "sim" / "sample.csv")
    holed = tmp_path / "holed.csv"
    sample.iloc[1:].to_csv(holed, index=False)
    assert cli("fit", RUN, "--out", "fit", "--data", str(holed), "--unit-frechet") == EXIT_OK

    missing = pd.read_csv(tmp_path / "fit" / "missing.csv")
    assert list(missing.columns) == ["leaf", "site_id", "missing", "n_rep"]
    assert len(missing) == 2 * 4
    assert int(missing["missing"].sum()) == 1
    first = sample.iloc[0]
    hit = missing[missing["missing"] == 1].iloc[0]
    assert (hit["leaf"], str(hit["site_id"])) == (first["leaf"], str(first["site_id"]))
    provenance = json.loads((tmp_path / "fit" / "provenance_fit.json").read_text(encoding="utf-8"))
    assert provenance["missing"] == 1


def test_default_pairs_include_coincident_site_ids(cli, tmp_path):
    payload = dict(RUN, sites={"points": [[1, 1], [1, 1], [5, 5]], "ids": ["e", "f", "g"]},
                   extremal={"leaf_pairs": [["Z1", "Z1"]]})
    assert cli("extremal", payload, "--out", "ext") == EXIT_OK
    frame = pd.read_csv(tmp_path / "ext" / "extremal.csv", dtype={"site_i": str, "site_j": str})
    assert len(frame) == 3
    row = frame[(frame["site_i"] == "e") & (frame["site_j"] == "f")].iloc[0]
    assert row["distance"] == 0.0
    assert row["theta_model"] == pytest.approx(2 ** (0.5 * 0.4), rel=1e-8)


def test_unexpected_errors_exit_with_internal_code(cli, monkeypatch):
    def broken(config, args):
        raise TypeError("bad argument")

    def overflow(config, args):
        raise OverflowError("too large")

    monkeypatch.setitem(entry.COMMANDS, "simulate", broken)
    assert cli("simulate", RUN, "--out", "x") == EXIT_INTERNAL
    monkeypatch.setitem(entry.COMMANDS, "simulate", overflow)
    assert cli("simulate", RUN, "--out", "x") == EXIT_NUMERICAL
