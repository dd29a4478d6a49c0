import json

import numpy as np
import pytest
from click.testing import CliRunner

from besselbmo.cli import EXIT_CONFIG, EXIT_NUMERICAL, main
from besselbmo.config import ExperimentConfig
from besselbmo.errors import ConfigError
from besselbmo.experiments import (REGISTRY, Report, band_drift, experiment_names, graded_grid, product_grid,
                                   split_atom, symbol_battery)
from besselbmo.atoms import rect_measure


def write(tmp_path, doc, name="c.json"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(p)


def test_list_names_every_experiment():
    res = CliRunner().invoke(main, ["list"])
    assert res.exit_code == 0
    for name in experiment_names():
        assert name in res.output
    assert len(experiment_names()) == 8


def test_validate(tmp_path):
    r = CliRunner()
    ok = r.invoke(main, ["validate", "--config", write(tmp_path, {"experiment": "kernel-bounds"})])
    assert ok.exit_code == 0 and "ok: kernel-bounds" in ok.output
    bad = r.invoke(main, ["validate", "--config", write(tmp_path, {"experiment": "nope"})])
    assert bad.exit_code == EXIT_CONFIG


@pytest.mark.parametrize("doc", [
    "{not json",
    {"experiment": "kernel-bounds", "colour": 1},
    {"experiment": "kernel-bounds", "params": {"unknown": 1}},
    {"experiment": "kernel-bounds", "lambda": -1},
    {"experiment": "kernel-bounds", "grid": {"cells": 4}},
    {"experiment": "upper-bound-iterated", "grid": {"cells": 128}},
    {"experiment": "upper-bound-iterated", "grid": {"spacing": "spiral"}},
    {"experiment": "paraproduct-bounds", "params": {"grid_1d": {"x_min": 0.2, "x_max": 5, "cells": 256,
                                                                "spacing": "geometric"}}},
    {"experiment": "kernel-bounds", "kernel": {"rel_tol": 0}},
    {"experiment": "kernel-bounds", "output": {"path": "x"}},
])
def test_config_errors_exit_2(tmp_path, doc):
    res = CliRunner().invoke(main, ["run", "--config", write(tmp_path, doc), "--out", str(tmp_path)])
    assert res.exit_code == EXIT_CONFIG, res.output


def test_missing_config_file(tmp_path):
    res = CliRunner().invoke(main, ["run", "--config", str(tmp_path / "none.json")])
    assert res.exit_code == EXIT_CONFIG


def test_numerical_failure_exit_3(tmp_path):
    doc = {"experiment": "kernel-bounds", "kernel": {"max_subdivisions": 1, "rel_tol": 1e-15},
           "params": {"lambdas": [1.0]}}
    res = CliRunner().invoke(main, ["run", "--config", write(tmp_path, doc), "--out", str(tmp_path)])
    assert res.exit_code == EXIT_NUMERICAL
    assert "numerical failure" in res.output


def test_run_writes_report_csv_and_timing(tmp_path):
    doc = {"experiment": "kernel-bounds", "params": {"lambdas": [1.0]}, "output": {"stem": "kb"}}
    res = CliRunner().invoke(main, ["run", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")])
    assert res.exit_code == 0, res.output
    rep = json.loads((tmp_path / "o" / "kb.json").read_text())
    assert rep["schema"] == "besselbmo-report/1" and rep["passed"]
    assert len(rep["metadata"]["config_hash"]) == 64
    assert "wall" not in json.dumps(rep)
    for s in rep["series"].values():
        assert s["op"]
    for s in rep["scalars"].values():
        assert s["op"]
    csv = (tmp_path / "o" / "kb.lambda_1_far.csv").read_text().splitlines()
    assert csv[0] == "x,y,tag" and len(csv) > 10
    timing = json.loads((tmp_path / "o" / "kb.timing.json").read_text())
    assert timing["wall_seconds"] > 0


def test_seed_override_changes_hash_not_content_of_deterministic_runs(tmp_path):
    cfg = ExperimentConfig.from_dict({"experiment": "kernel-bounds"})
    assert cfg.with_seed(3).hash() != cfg.hash()
    same = ExperimentConfig.from_dict({"experiment": "kernel-bounds", "output": {"dir": "elsewhere"}})
    assert same.hash() == cfg.hash()


def test_config_defaults_and_round_trip():
    for name in experiment_names():
        cfg = ExperimentConfig.from_dict({"experiment": name})
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again.hash() == cfg.hash()
        assert cfg.output == {"dir": "reports", "stem": name}
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict([1, 2])
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "kernel-bounds", "seed": "x"})


def test_shipped_configs_validate():
    import pathlib
    files = sorted(pathlib.Path(__file__).parents[1].joinpath("configs").glob("*.json"))
    assert {json.loads(f.read_text())["experiment"] for f in files} == set(REGISTRY)
    for f in files:
        ExperimentConfig.load(f)


def test_report_maps_non_finite_to_null():
    rep = Report()
    rep.scalar("x", float("nan"), "op")
    rep.add_series("s", "op", [(1, float("inf"), "t")])
    rep.check("a", True)
    assert rep.scalars["x"]["value"] is None and rep.series["s"]["rows"][0][1] is None and rep.passed
    rep.check("b", False)
    assert not rep.passed


def test_graded_grid_contains_refinement_points():
    g = graded_grid(1.0, 0.5, 2.5, 0.125, 1.0, 6)
    for j in range(4, 8):
        assert np.any(np.isclose(g.boundaries, 1 - 2.0 ** -j))
        assert np.any(np.isclose(g.boundaries, 1 + 2.0 ** -j))
    assert g.boundaries[0] == 0.5 and g.boundaries[-1] == 2.5


def test_band_drift():
    assert band_drift(1.0, 2.0, 1.1, 2.0) == pytest.approx(0.1)
    assert band_drift(1.0, 2.0, 1.0, 1.5) == pytest.approx(0.25)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_split_atom_is_an_atom(lam):
    a = split_atom(lam, (1.0, 2.0), (0.1, 0.3))
    f = a.f
    assert abs(f.integral()) <= 1e-12 * f.l1()
    assert f.linf() == pytest.approx(1.0 / rect_measure(lam, a.support))


def test_symbol_battery_composition(rng):
    pg = product_grid(1.0, {"x_min": 0.2, "x_max": 5.0, "cells": 16, "spacing": "geometric"})
    bat = symbol_battery(pg, rng, {"haar": 2, "log": 3, "indicator": 4})
    kinds = [s.kind for s in bat]
    assert kinds.count("haar") == 2 and kinds.count("log") == 3 and kinds.count("indicator") == 4
    fine = pg.refine()
    for s in bat:
        v = s.on(fine).values
        assert v.shape == fine.shape and np.all(np.isfinite(v))
