import json

import numpy as np
import pytest
from click.testing import CliRunner

from planewarp.cli import main
from planewarp.validation import load_image, save_image


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    runner = CliRunner()
    result = runner.invoke(main, ["fixture", "--seed", "9", "--width", "320",
                                  "--height", "240", "--out-dir", str(out)])
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture(scope="module")
def stitched_dir(scene_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("stitched")
    runner = CliRunner()
    result = runner.invoke(main, [
        "stitch", str(scene_dir / "target.png"), str(scene_dir / "reference.png"),
        "--matches", str(scene_dir / "matches.json"),
        "--out", str(out / "st.png"), "--report", str(out / "rep.json"),
    ])
    assert result.exit_code == 0, result.output
    return out


class TestFixture:
    def test_outputs_exist(self, scene_dir):
        for name in ("target.png", "reference.png", "matches.json", "homography.json"):
            assert (scene_dir / name).exists()

    def test_matches_align_with_homography(self, scene_dir):
        data = json.loads((scene_dir / "matches.json").read_text())
        H = np.array(json.loads((scene_dir / "homography.json").read_text())["matrix"])
        for px, py, qx, qy in data["points"][:10]:
            v = H @ [px, py, 1.0]
            assert abs(v[0] / v[2] - qx) < 1e-9
            assert abs(v[1] / v[2] - qy) < 1e-9


class TestStitch:
    def test_artifacts_written(self, stitched_dir):
        assert (stitched_dir / "st.png").exists()
        assert (stitched_dir / "st.mesh.json").exists()
        assert (stitched_dir / "st.matches.json").exists()
        rep = json.loads((stitched_dir / "rep.json").read_text())
        assert rep["metrics"]["rmse"] <= 0.5
        assert "fold_count" in rep["diagnostics"]

    def test_deterministic_reruns(self, scene_dir, tmp_path):
        runner = CliRunner()
        outputs = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            out.mkdir()
            result = runner.invoke(main, [
                "stitch", str(scene_dir / "target.png"), str(scene_dir / "reference.png"),
                "--matches", str(scene_dir / "matches.json"),
                "--out", str(out / "st.png"), "--report", str(out / "rep.json"),
            ])
            assert result.exit_code == 0, result.output
            outputs.append(out)
        a, b = outputs
        assert (a / "st.mesh.json").read_bytes() == (b / "st.mesh.json").read_bytes()
        assert (a / "rep.json").read_bytes() == (b / "rep.json").read_bytes()

    def test_missing_file_fails(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, ["stitch", str(tmp_path / "nope.png"),
                                      str(tmp_path / "nope2.png")])
        assert result.exit_code != 0

    def test_blank_images_structured_error(self, tmp_path):
        blank = np.full((150, 150), 90, dtype=np.uint8)
        save_image(tmp_path / "a.png", blank)
        save_image(tmp_path / "b.png", blank)
        runner = CliRunner()
        result = runner.invoke(main, ["stitch", str(tmp_path / "a.png"),
                                      str(tmp_path / "b.png"), "--json-errors",
                                      "--out", str(tmp_path / "o.png")])
        assert result.exit_code == 1
        payload = json.loads(result.output.strip().splitlines()[-1])
        assert payload["stage"] == "feature-pipeline"
        assert payload["code"] == "insufficient-features"

    def test_flag_overrides_config_file(self, scene_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"grid_size": 60.0}))
        runner = CliRunner()
        result = runner.invoke(main, [
            "stitch", str(scene_dir / "target.png"), str(scene_dir / "reference.png"),
            "--matches", str(scene_dir / "matches.json"),
            "--config", str(cfg), "--grid-size", "80",
            "--out", str(tmp_path / "st.png"), "--report", str(tmp_path / "rep.json"),
        ])
        assert result.exit_code == 0, result.output
        mesh = json.loads((tmp_path / "st.mesh.json").read_text())
        assert mesh["cell_w"] == 80.0


class TestEval:
    def test_replay_matches_stitch_metrics(self, stitched_dir, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, [
            "eval", str(stitched_dir / "st.mesh.json"), str(stitched_dir / "st.matches.json"),
            "--report", str(tmp_path / "rep_eval.json"),
        ])
        assert result.exit_code == 0, result.output
        stitch_metrics = json.loads((stitched_dir / "rep.json").read_text())["metrics"]
        eval_metrics = json.loads((tmp_path / "rep_eval.json").read_text())["metrics"]
        assert json.dumps(stitch_metrics) == json.dumps(eval_metrics)

    def test_identity_mesh_zero_metrics(self, scene_dir, tmp_path):
        from planewarp.geometry import build_mesh, mesh_to_json

        img = load_image(scene_dir / "target.png")
        mesh = build_mesh(img.shape[1], img.shape[0], 40)
        mesh_path = tmp_path / "mesh.json"
        mesh_path.write_text(json.dumps(mesh_to_json(mesh, mesh.original_vertices())))
        matches = tmp_path / "matches.json"
        matches.write_text(json.dumps({
            "points": [[50, 50, 50, 50], [120, 80, 120, 80]],
            "lines": [[20, 20, 280, 30, 20, 20, 280, 30]],
        }))
        runner = CliRunner()
        result = runner.invoke(main, ["eval", str(mesh_path), str(matches),
                                      "--report", str(tmp_path / "rep.json")])
        assert result.exit_code == 0, result.output
        metrics = json.loads((tmp_path / "rep.json").read_text())["metrics"]
        assert metrics["rmse"] == 0.0
        assert metrics["d_dis"] == 0.0
        assert metrics["d_dir"] == 0.0

    def test_missing_mesh_errors(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, ["eval", str(tmp_path / "a.json"),
                                      str(tmp_path / "b.json")])
        assert result.exit_code != 0


class TestFeatures:
    def test_single_image_segments(self, tmp_path):
        img = np.full((120, 200), 255, dtype=np.uint8)
        img[40:60, :] = 0
        save_image(tmp_path / "bar.png", img)
        runner = CliRunner()
        result = runner.invoke(main, ["features", str(tmp_path / "bar.png"),
                                      "--out", str(tmp_path / "f.json")])
        assert result.exit_code == 0, result.output
        data = json.loads((tmp_path / "f.json").read_text())
        assert len(data["segments"]) >= 2
        assert len(data["groups"]) >= 1

    def test_constant_image_empty(self, tmp_path):
        save_image(tmp_path / "flat.png", np.full((100, 100), 44, dtype=np.uint8))
        runner = CliRunner()
        result = runner.invoke(main, ["features", str(tmp_path / "flat.png"),
                                      "--out", str(tmp_path / "f.json")])
        assert result.exit_code == 0, result.output
        data = json.loads((tmp_path / "f.json").read_text())
        assert data["segments"] == []

    def test_pair_lists_extended_points(self, scene_dir, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, [
            "features", str(scene_dir / "target.png"), str(scene_dir / "reference.png"),
            "--matches", str(scene_dir / "matches.json"),
            "--out", str(tmp_path / "f.json"),
        ])
        assert result.exit_code == 0, result.output
        data = json.loads((tmp_path / "f.json").read_text())
        assert len(data["extended_points"]) > 0
        assert len(data["stars"]) > 0
