import csv
import io
import json

import numpy as np
import pytest

from posereg import documents as docs
from posereg.cli import main
from posereg.errors import InvalidConfig, SchemaError
from posereg.geometry import Pose
from posereg.residuals import RobustBetas, RobustParams

from _util import random_scene


@pytest.fixture
def files(tmp_path, model):
    scene = random_scene(model, 0)
    m, s = tmp_path / "model.json", tmp_path / "scene.json"
    docs.write_json(m, docs.model_to_doc(model))
    docs.save_scene(s, scene)
    return tmp_path, m, s, scene


def _solve(*argv):
    return main(["solve", *map(str, argv)])


# --- documents ------------------------------------------------------------------------------

def test_model_round_trip(model, tmp_path):
    docs.write_json(tmp_path / "m.json", docs.model_to_doc(model))
    back = docs.load_model(tmp_path / "m.json")
    assert np.array_equal(back.keypoints, model.keypoints)
    assert np.array_equal(back.surface_samples, model.surface_samples)
    assert np.array_equal(back.edges, model.edges)
    assert back.diameter == model.diameter and back.name == model.name


def test_scene_round_trip(model, tmp_path):
    s = random_scene(model, 3, sigma=0.01)
    docs.save_scene(tmp_path / "s.json", s)
    back = docs.load_scene(tmp_path / "s.json", model)
    for name in ("keypoints", "edges", "sym_q1", "sym_q2"):
        assert np.max(np.abs(getattr(back, name) - getattr(s, name))) <= 1e-12
    assert np.max(np.abs(back.gt_pose.R - s.gt_pose.R)) <= 1e-12


def test_config_round_trip():
    betas = RobustBetas(RobustParams(1.0, 0.1), RobustParams(0.3, 0.01), RobustParams(2.0, 1 / 3))
    back = docs.config_from_doc(json.loads(docs.dumps(docs.config_to_doc(0.1, 1 / 7, betas))))
    assert back["betas"] == betas and back["alpha_s"] == 1 / 7


def test_floats_keep_seventeen_digits():
    x = [0.1 + 0.2, 1 / 3, np.pi * 1e-300, 2.0 ** -1074]
    assert json.loads(docs.dumps({"x": x}))["x"] == x
    assert "0.30000000000000004" in docs.dumps({"x": 0.1 + 0.2})


def test_non_finite_written_as_null():
    assert json.loads(docs.dumps({"a": float("nan"), "b": np.inf})) == {"a": None, "b": None}


def test_normal_renormalized_or_rejected(model):
    doc = json.loads(docs.dumps(docs.model_to_doc(model)))
    doc["symmetry"]["normal"] = [1 + 5e-7, 0.0, 0.0]
    assert np.array_equal(docs.model_from_doc(doc).symmetry.normal, [1.0, 0.0, 0.0])
    doc["symmetry"]["normal"] = [1.01, 0.0, 0.0]
    with pytest.raises(SchemaError):
        docs.model_from_doc(doc)


def test_model_schema_errors(model):
    doc = json.loads(docs.dumps(docs.model_to_doc(model)))
    with pytest.raises(SchemaError):
        docs.model_from_doc(dict(doc, colour="red"))
    with pytest.raises(SchemaError):
        docs.model_from_doc(dict(doc, diameter=1e3))
    with pytest.raises(SchemaError):
        docs.model_from_doc({k: v for k, v in doc.items() if k != "keypoints"})


def test_missing_edges_means_complete_graph(model):
    doc = json.loads(docs.dumps(docs.model_to_doc(model)))
    del doc["edges"]
    assert len(docs.model_from_doc(doc).edges) == 28


def test_invalid_json(tmp_path):
    (tmp_path / "bad.json").write_text("{nope", encoding="utf-8")
    with pytest.raises(SchemaError):
        docs.read_json(tmp_path / "bad.json")


def test_bad_config():
    with pytest.raises(InvalidConfig):
        docs.config_from_doc({"betas": {"k": [1.0]}})


def test_pose_from_any():
    p = Pose(np.eye(3), np.array([0.0, 0.0, 2.0]))
    d = docs.pose_to_doc(p)
    assert np.array_equal(docs.pose_from_any(d).t, p.t)
    assert np.array_equal(docs.pose_from_any({"init_pose": d, "refined_pose": None}).t, p.t)
    with pytest.raises(SchemaError):
        docs.pose_from_any({"x": 1})


# --- CLI --------------------------------------------------------------------------------------

def test_cli_solve_noiseless(files):
    tmp, m, s, scene = files
    out = tmp / "result.json"
    assert _solve("--model", m, "--scene", s, "--out", out) == 0
    res = json.loads(out.read_text())
    assert res["metrics"]["rotation_error"] < 1e-5
    assert res["metrics"]["add_s_correct"] is True
    R = np.array(res["refined_pose"]["R"]).reshape(3, 3)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-9)
    for key in ("init_pose", "iterations", "objective_trace", "timing_ms", "solver_config", "tool_version"):
        assert key in res


def test_cli_keypoint_only_flags(files):
    tmp, m, s, _ = files
    out = tmp / "r.json"
    assert _solve("--model", m, "--scene", s, "--no-edges", "--no-symmetry", "--out", out) == 0
    cfg = json.loads(out.read_text())["solver_config"]
    assert cfg["alpha_e"] == 0.0 and cfg["alpha_s"] == 0.0
    assert cfg["use_edges"] is False and cfg["use_symmetry"] is False


def test_cli_beta_flags_and_no_refine(files):
    tmp, m, s, _ = files
    out = tmp / "r.json"
    assert _solve("--model", m, "--scene", s, "--beta-s", "1,0.01", "--no-refine", "--out", out) == 0
    res = json.loads(out.read_text())
    assert res["iterations"] == 0 and res["init_pose"] == res["refined_pose"]
    assert res["solver_config"]["betas"]["s"] == [1.0, 0.01]


def test_cli_config_file(files):
    tmp, m, s, _ = files
    docs.write_json(tmp / "cfg.json", docs.config_to_doc(0.5, 0.25, RobustBetas()))
    out = tmp / "r.json"
    assert _solve("--model", m, "--scene", s, "--config", tmp / "cfg.json", "--out", out) == 0
    assert json.loads(out.read_text())["solver_config"]["alpha_s"] == 0.25


def test_cli_missing_file(files, capsys):
    tmp, m, _, _ = files
    assert _solve("--model", m, "--scene", tmp / "absent.json") == 2
    assert "not found" in capsys.readouterr().err


def test_cli_usage_errors(files):
    _, m, _, _ = files
    assert _solve("--model", m) == 1
    assert main(["frobnicate"]) == 1
    assert main(["solve", "--model", str(m), "--scene", "x", "--beta-k", "abc"]) == 1


def test_cli_schema_error(files):
    tmp, m, _, _ = files
    (tmp / "bad.json").write_text('{"keypoints_2d": []}', encoding="utf-8")
    assert _solve("--model", m, "--scene", tmp / "bad.json") == 2


def test_cli_numerical_failure(files, model):
    tmp, m, _, scene = files
    flat = scene.replace(keypoints=np.tile([0.1, 0.05], (8, 1)), edges=np.zeros((28, 2)))
    docs.save_scene(tmp / "flat.json", flat)
    assert _solve("--model", m, "--scene", tmp / "flat.json", "--no-symmetry") == 3


def test_cli_metrics(files):
    tmp, m, s, _ = files
    out = tmp / "met.json"
    assert main(["metrics", "--model", str(m), "--pose-a", str(s), "--pose-b", str(s), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["rotation_error"] == 0.0 and doc["add_s"] == 0.0


def test_cli_generate_and_tune(tmp_path):
    gen = tmp_path / "scenes"
    assert main(["generate", "--n", "3", "--seed", "1", "--sigma", "0.002", "--out", str(gen)]) == 0
    assert len(list(gen.glob("scene_*.json"))) == 3
    out = tmp_path / "cfg.json"
    assert main(["tune", "--model", str(gen / "model.json"), "--scenes", str(gen), "--what", "alphas",
                 "--max-iters", "3", "--out", str(out)]) == 0
    cfg = docs.config_from_doc(json.loads(out.read_text()))
    assert cfg["alpha_e"] > 0 and cfg["alpha_s"] > 0


def test_cli_bench_is_byte_identical(tmp_path):
    argv = ["bench", "--n", "4", "--seed", "42"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main([*argv, "--csv", str(a)]) == 0
    assert main([*argv, "--csv", str(b), "--threads", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.DictReader(io.StringIO(a.read_text())))
    assert len(rows) == 12


def test_cli_stability_tables(tmp_path):
    sq = tmp_path / "sq.csv"
    assert main(["stability", "square", "--delta", "0.25", "0.5", "--corr-grid", "100", "--csv", str(sq)]) == 0
    rows = list(csv.DictReader(io.StringIO(sq.read_text())))
    assert len(rows) == 216
    a8 = tmp_path / "a8.csv"
    assert main(["stability", "a8", "--grid", "21", "--csv", str(a8)]) == 0
    assert len(a8.read_text().splitlines()) == 22
    cov = tmp_path / "cov.csv"
    assert main(["stability", "covariance", "--sigma-k", "1e-3", "--sigma-e", "1e-3", "--trials", "100",
                 "--csv", str(cov)]) == 0
    rows = list(csv.DictReader(io.StringIO(cov.read_text())))
    assert len(rows) == 6 and all(float(r["empirical"]) > 0 for r in rows)
