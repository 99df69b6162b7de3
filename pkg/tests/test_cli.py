import csv
import json
import math

import numpy as np
import pytest

from polyharm import cli
from polyharm.experiment import (ConfigError, ExperimentConfig, build_trace, bundled_names, load_bundled,
                                 resolve_config, run_experiment)

SMALL = {
    "name": "small_disk",
    "seed": 1,
    "domain": {"kind": "flat", "r": 1.0, "h": 0.1},
    "target": {"kind": "euclidean", "m": 1},
    "trace": {"name": "linear", "gradient": [1.0, 0.0]},
    "solver": {"tol": 1e-10, "omega": 1.8},
    "analytics": {"profile": {"sigma_max": 0.9, "octaves": 0, "min_cells": 4},
                  "holder": {"pairs": 2000}},
    "acceptance": {"gamma": [0.9, 1.1]},
}


def test_bundled_configs_load():
    names = bundled_names()
    assert {"flat_disk_linear", "cone_4pi", "cone_3pi", "book3_arc"} <= set(names)
    for n in names:
        cfg = load_bundled(n)
        assert cfg.name == n
        json.loads(cfg.to_json())


def test_ball_radius_rejected_at_load():
    d = dict(SMALL, target={"kind": "sphere", "m": 2}, ball={"center": [0, 0, 1], "radius": 1.0})
    with pytest.raises(ConfigError, match="pi/4"):
        ExperimentConfig.from_dict(d)


@pytest.mark.parametrize("bad", [
    {"trace": {"name": "nonexistent"}},
    {"target": {"kind": "hyperbolic"}},
    {"domain": {"kind": "torus", "h": 0.1}},
    {"schema_version": 99},
    {"unknown_key": 1},
])
def test_unresolvable_components_rejected(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(SMALL, **bad))


def test_missing_section_rejected():
    d = dict(SMALL)
    del d["trace"]
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(d)


def test_flag_defaults_do_not_override_config():
    cfg = ExperimentConfig.from_dict(SMALL, {"domain.h": 0.05, "domain.grading": 2.0, "seed": 9})
    assert cfg.domain["h"] == 0.1 and cfg.domain["grading"] == 2.0 and cfg.seed == 1


def test_resolve_config_from_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(SMALL))
    assert resolve_config(str(p)).name == "small_disk"
    with pytest.raises(ConfigError):
        resolve_config(str(tmp_path / "missing.json"))


def test_run_writes_artifacts_deterministically(tmp_path):
    cfg = ExperimentConfig.from_dict(SMALL)
    res = run_experiment(cfg, tmp_path / "a")
    assert res.passed
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert {"mesh.txt", "checkpoint.txt", "energy.csv", "profile.csv", "holder.csv", "summary.csv"} <= set(files)
    run_experiment(cfg, tmp_path / "b")
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    with open(tmp_path / "a" / "summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(r["status"] in ("PASS", "FAIL") and r["band"] for r in rows)


def test_tangent_trace_is_on_sphere():
    cfg = load_bundled("flat_disk_sphere")
    from polyharm.domain import triangulate
    mesh = triangulate(cfg.model(), 1.0, 0.2)
    tr = build_trace(mesh, cfg.trace, cfg.space())
    np.testing.assert_allclose(np.linalg.norm(tr, axis=1), 1.0, atol=1e-14)


# -- command line ----------------------------------------------------------

def _config_file(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return str(p)


def test_cli_solve_analyze_report(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("POLYHARM_OUTPUT_ROOT", str(tmp_path / "runs"))
    cfg = _config_file(tmp_path)
    assert cli.main(["solve", cfg]) == 0
    assert (tmp_path / "runs" / "small_disk" / "checkpoint.txt").exists()
    assert cli.main(["analyze", cfg]) == 0
    summary = (tmp_path / "runs" / "small_disk" / "summary.csv").read_text()
    assert "solver_converged" in summary and "holder_gamma" in summary
    assert cli.main(["report"]) == 0
    assert "PASS holder_gamma" in capsys.readouterr().out


def test_cli_run_with_out_and_flags(tmp_path):
    cfg = _config_file(tmp_path)
    assert cli.main(["run", cfg, "--out", str(tmp_path / "o"), "--grading", "1.5"]) == 0
    assert "1.5" in (tmp_path / "o" / "mesh.txt").read_text().splitlines()[3]


def test_cli_analyze_without_checkpoint(tmp_path):
    assert cli.main(["analyze", _config_file(tmp_path), "--out", str(tmp_path / "none")]) == 2


def test_cli_rejects_bad_ball(tmp_path, capsys):
    d = dict(SMALL, target={"kind": "sphere", "m": 2}, ball={"center": [0, 0, 1], "radius": 1.0})
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    assert cli.main(["run", str(p)]) == 2
    assert "pi/4" in capsys.readouterr().err


def test_cli_oracles(tmp_path, capsys):
    assert cli.main(["oracles", "--samples", "0", "--out", str(tmp_path / "o0")]) == 0
    assert "vacuous" in capsys.readouterr().out
    assert cli.main(["oracles", "--samples", "500", "--scale-samples", "200", "--out", str(tmp_path / "o1")]) == 0
    assert (tmp_path / "o1" / "oracles.csv").exists() and (tmp_path / "o1" / "scale_family.csv").exists()
    assert cli.main(["oracles", "--samples", "500", "--adversarial", "1e-3", "--out", str(tmp_path / "o2")]) == 1


def test_cli_link(tmp_path, capsys):
    out = tmp_path / "eig.csv"
    assert cli.main(["link", "--kind", "cone", "--angle-over-pi", "4", "--subdivision", "128",
                     "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "predicted exponent 0.5" in text
    assert out.read_text().startswith("link,target")


def test_sphere_target_without_ball_is_config_error(tmp_path):
    cfg = json.loads(load_bundled("flat_disk_sphere").to_json())
    del cfg["ball"]
    path = tmp_path / "noball.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["solve", str(path), "--out", str(tmp_path / "o")]) == 2
