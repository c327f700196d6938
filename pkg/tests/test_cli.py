import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from pdediscovery.cli import DEFAULTS, main
from pdediscovery.select import CostGrid

FIXTURES = Path(__file__).parent / "fixtures"

TINY = {
    "simulate": {"nx": 16, "nt": 20, "t_end": 0.5},
    "surrogate": {"hidden": [6, 6], "max_iter": 40},
    "discover": {"rows": 2000},
    "gridsearch": {"m": [0, 1, 2], "k": [1, 2], "architectures": [[], [2, 2]], "arch_m": [0, 1],
                   "rows": 500, "max_iter": 30},
    "features": {"rows": 300, "n_subsamples": 5},
    "rollout": {"t_end": 0.8, "n_eval": 9},
}


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


def run(out, *args, config=None):
    argv = list(args) + ["--out", str(out)]
    if config is not None:
        argv += ["--config", str(config)]
    return main(argv)


@pytest.fixture
def tiny_run(tmp_path, tiny_config):
    out = tmp_path / "run"
    for stage in ("simulate", "fit", "discover"):
        assert run(out, stage, config=tiny_config) == 0
    return out


def test_usage_errors_exit_one(tmp_path, capsys):
    assert run(tmp_path, "discover") == 1
    assert "network.json" in capsys.readouterr().err
    assert main(["frobnicate"]) == 1
    assert run(tmp_path, "fit", "--max-iter", "many") == 1
    assert run(tmp_path, "simulate", config=tmp_path / "missing.json") == 1
    (tmp_path / "bad.json").write_text(json.dumps({"nonsense": {}}))
    assert run(tmp_path, "simulate", config=tmp_path / "bad.json") == 1
    assert run(tmp_path, "report") == 1


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "simulate" in capsys.readouterr().out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pdediscovery", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gridsearch" in res.stdout


def test_pipeline_artifacts_and_manifest(tiny_run):
    net = json.loads((tiny_run / "network.json").read_text())
    model = json.loads((tiny_run / "model.json").read_text())
    assert net["network"]["layer_dims"] == [2, 6, 6, 1]
    assert model["model"]["terms"] == ["u*u_x", "u_xx"]
    manifest = json.loads((tiny_run / "manifest.json").read_text())
    assert set(manifest["stages"]) == {"simulate", "fit", "discover"}
    assert manifest["stages"]["fit"]["parent_sha256"] == manifest["stages"]["simulate"]["artifacts"]["dataset.csv"]
    assert manifest["stages"]["discover"]["parent_sha256"] == manifest["stages"]["fit"]["artifacts"]["network.json"]
    assert {"numpy", "scipy", "python", "pdediscovery"} <= set(manifest["versions"])


def test_same_config_and_seed_give_byte_identical_model(tmp_path, tiny_config):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        for stage in ("simulate", "fit", "discover"):
            assert run(out, stage, config=tiny_config) == 0
        outs.append(out)
    for artifact in ("dataset.csv", "network.json", "model.json"):
        assert (outs[0] / artifact).read_bytes() == (outs[1] / artifact).read_bytes()
    c = tmp_path / "c"
    for stage in ("simulate", "fit"):
        assert run(c, stage, "--seed", "1", config=tiny_config) == 0
    assert (c / "network.json").read_bytes() != (outs[0] / "network.json").read_bytes()


def test_report_refuses_mismatched_artifacts(tiny_run, capsys):
    assert run(tiny_run, "report") == 0
    assert "u_t =" in capsys.readouterr().out
    doc = json.loads((tiny_run / "network.json").read_text())
    doc["fit"]["train_mse"] = 0.0
    (tiny_run / "network.json").write_text(json.dumps(doc))
    assert run(tiny_run, "report") == 2
    assert "not derived" in capsys.readouterr().err


def test_report_refuses_refit_on_other_data(tiny_run, tiny_config, capsys):
    assert run(tiny_run, "simulate", "--nx", "12", config=tiny_config) == 0
    assert run(tiny_run, "report") == 2
    assert "dataset.csv" in capsys.readouterr().err


def test_discover_options(tiny_run, tiny_config):
    assert run(tiny_run, "discover", "--terms", "all", "--alpha-q", "1e-3", "--prune", "1e-6",
               config=tiny_config) == 0
    model = json.loads((tiny_run / "model.json").read_text())["model"]
    assert len(model["terms"]) == 9
    assert run(tiny_run, "discover", "--terms", "u_xxx", config=tiny_config) == 1
    assert run(tiny_run, "discover", "--m", "0", "--terms", "all", "--coords", "--operator", "2x3",
               config=tiny_config) == 0
    model = json.loads((tiny_run / "model.json").read_text())["model"]
    assert model["kind"] == "operator-net" and model["inputs"] == ["u", "u^2", "t", "x"]
    assert model["network"]["layer_dims"] == [4, 3, 3, 1]
    assert run(tiny_run, "discover", "--operator", "2x", config=tiny_config) == 1


def test_transformed_fit_reports_physical_and_transformed_models(tmp_path, tiny_config):
    out = tmp_path / "tr"
    for stage in ("simulate", "fit --transform", "discover"):
        assert run(out, *stage.split(), config=tiny_config) == 0
    doc = json.loads((out / "model.json").read_text())
    assert doc["model"]["coordinates"] == "physical"
    assert doc["transformed_model"]["coordinates"] == "transformed"


def test_rollout_of_derivative_free_model(tiny_run, tiny_config):
    assert run(tiny_run, "discover", "--m", "0", "--terms", "all", config=tiny_config) == 0
    assert run(tiny_run, "rollout", config=tiny_config) == 0
    lines = (tiny_run / "rollout_mse.csv").read_text().splitlines()
    assert lines[0] == "t,mse" and len(lines) == 10
    t, mse = np.genfromtxt(tiny_run / "rollout_mse.csv", delimiter=",", skip_header=1, unpack=True)
    np.testing.assert_allclose(t, np.linspace(0.0, 0.8, 9))
    assert mse[0] == 0.0  # initial state is copied from the reference
    assert np.all(np.isnan(mse[t > 0.5])) and not np.any(np.isnan(mse[t <= 0.5]))  # reference ends at 0.5


def test_rollout_rejects_derivative_model(tiny_run, tiny_config):
    assert run(tiny_run, "rollout", config=tiny_config) == 1


def test_gridsearch_and_features(tiny_run, tiny_config):
    assert run(tiny_run, "gridsearch", "--threads", "2", config=tiny_config) == 0
    grid = CostGrid.from_csv(tiny_run / "grid_mk.csv")
    assert grid.row_labels == ["0", "1", "2"] and grid.col_labels == ["1", "2"]
    arch = CostGrid.from_csv(tiny_run / "grid_arch.csv")
    assert arch.row_labels == ["linear", "2x2"]
    assert run(tiny_run, "features", config=tiny_config) == 0
    header = (tiny_run / "features.csv").read_text().splitlines()[0]
    assert header == "term,variance,stability,rfe_rank"


def test_ingest_fit_gridsearch_smoke(tmp_path, tiny_config):
    out = tmp_path / "weather"
    assert run(out, "ingest", "--stations", str(FIXTURES / "stations_8x48.json"), "--grid", "12,6,8",
               config=tiny_config) == 0
    head = (out / "dataset.csv").read_text().splitlines()[0]
    assert head == "t,x1,x2,u1"
    assert run(out, "fit", "--hidden", "4", config=tiny_config) == 0
    assert json.loads((out / "network.json").read_text())["network"]["layer_dims"] == [3, 4, 1]
    assert run(out, "gridsearch", "--m", "0,1", "--k", "1", "--architectures", "linear",
               "--arch-m", "0", config=tiny_config) == 0
    grid = CostGrid.from_csv(out / "grid_mk.csv")
    assert not np.any(np.isnan(grid.values))


def test_ingest_from_service_uses_cache(tmp_path, tiny_config, monkeypatch):
    import pdediscovery.ingest as ingest

    doc = json.loads((FIXTURES / "stations_8x48.json").read_text())
    bodies = {s["id"]: json.dumps(s).encode() for s in doc["stations"]}
    calls = []

    def transport(url):
        calls.append(url)
        return bodies[url.split("/station/")[1].split("/")[0]]

    monkeypatch.setattr(ingest, "_urllib_transport", transport)
    ids = ",".join(bodies)
    args = ["ingest", "--base-url", "https://example.test/api", "--ids", ids, "--cache", str(tmp_path / "cache"),
            "--grid", "4,4,4"]
    assert run(tmp_path / "a", *args, config=tiny_config) == 0
    assert len(calls) == len(bodies)
    assert run(tmp_path / "b", *args, config=tiny_config) == 0
    assert len(calls) == len(bodies)
    assert (tmp_path / "a" / "dataset.csv").read_bytes() == (tmp_path / "b" / "dataset.csv").read_bytes()


def test_ingest_without_source_is_usage_error(tmp_path):
    assert run(tmp_path, "ingest") == 1


def test_defaults_cover_every_section():
    assert set(DEFAULTS) == {"seed", "simulate", "surrogate", "library", "residual", "discover", "gridsearch",
                             "features", "rollout", "ingest"}
    assert DEFAULTS["surrogate"]["hidden"] == [10] * 5 and DEFAULTS["simulate"]["nx"] == 256
