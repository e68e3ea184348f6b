import json

import numpy as np
import pytest

from sgw.cli import main
from sgw.cloud import load_ply
from sgw.garment_init import INIT_OPACITY
from sgw.images import save_png


@pytest.fixture(scope="module")
def body_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "body.sgbm"
    assert main(["body", "make-test", "--out", str(path)]) == 0
    return str(path)


@pytest.fixture(scope="module")
def target_png(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "target.png"
    rng = np.random.default_rng(0)
    save_png(rng.uniform(0.0, 0.4, size=(48, 48, 3)), path)
    return str(path)


@pytest.fixture(scope="module")
def garment_path(tmp_path_factory, body_path, target_png):
    path = tmp_path_factory.mktemp("cli") / "garment.ply"
    rc = main(["generate", "--body", body_path, "--region", "chest,abdomen",
               "--guidance", "mock", "--target", target_png,
               "--iterations", "3", "--seed", "5", "--out", str(path)])
    assert rc == 0
    return str(path)


class TestBodyMakeTest:
    def test_writes_loadable_body(self, body_path):
        from sgw.body import load_body

        body = load_body(body_path)
        assert body.num_vertices > 0

    def test_byte_deterministic(self, tmp_path, body_path):
        other = tmp_path / "again.sgbm"
        assert main(["body", "make-test", "--out", str(other)]) == 0
        with open(body_path, "rb") as f1, open(other, "rb") as f2:
            assert f1.read() == f2.read()


class TestGenerate:
    def test_output_is_a_valid_cloud(self, garment_path):
        cloud = load_ply(garment_path)
        assert len(cloud) > 0
        cloud.validate()

    def test_init_only_run_has_exact_opacity(self, tmp_path, body_path, target_png):
        # a zero-motion run: freeze every rate via config
        cfg = tmp_path / "frozen.json"
        cfg.write_text(json.dumps({
            "lr_position": 0.0, "lr_scale": 0.0, "lr_color": 0.0,
            "lr_opacity": 0.0, "lr_rotation": 0.0, "densify_enabled": False,
        }))
        out = tmp_path / "init.ply"
        rc = main(["generate", "--body", body_path, "--region", "chest,abdomen",
                   "--guidance", "mock", "--target", target_png,
                   "--iterations", "1", "--seed", "5", "--config", str(cfg),
                   "--out", str(out)])
        assert rc == 0
        cloud = load_ply(out)
        assert np.all(cloud.opacities == np.float32(INIT_OPACITY))

    def test_byte_deterministic_with_seed(self, tmp_path, body_path, target_png):
        outs = []
        for name in ("a.ply", "b.ply"):
            out = tmp_path / name
            rc = main(["generate", "--body", body_path, "--region", "chest,abdomen",
                       "--guidance", "mock", "--target", target_png,
                       "--iterations", "2", "--seed", "9", "--out", str(out)])
            assert rc == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_unknown_label_exits_nonzero(self, tmp_path, body_path, target_png, capsys):
        rc = main(["generate", "--body", body_path, "--region", "chest,cape",
                   "--guidance", "mock", "--target", target_png,
                   "--out", str(tmp_path / "x.ply")])
        assert rc != 0
        assert "cape" in capsys.readouterr().err

    def test_missing_body_file_is_io_error(self, tmp_path, target_png):
        rc = main(["generate", "--body", str(tmp_path / "nope.sgbm"),
                   "--region", "chest", "--guidance", "mock",
                   "--target", target_png, "--out", str(tmp_path / "x.ply")])
        assert rc == 3

    def test_mock_without_target_is_usage_error(self, tmp_path, body_path):
        rc = main(["generate", "--body", body_path, "--region", "chest,abdomen",
                   "--guidance", "mock", "--out", str(tmp_path / "x.ply")])
        assert rc == 2

    def test_toml_config_overrides(self, tmp_path, body_path, target_png):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text("lr_color = 0.0\nlr_position = 0.0\nlr_scale = 0.0\n"
                       "lr_opacity = 0.0\nlr_rotation = 0.0\ndensify_enabled = false\n")
        out = tmp_path / "g.ply"
        rc = main(["generate", "--body", body_path, "--region", "chest,abdomen",
                   "--guidance", "mock", "--target", target_png,
                   "--iterations", "1", "--seed", "5", "--config", str(cfg),
                   "--out", str(out)])
        assert rc == 0
        cloud = load_ply(out)
        assert np.all(cloud.opacities == np.float32(INIT_OPACITY))  # nothing moved

    def test_unknown_config_key_is_usage_error(self, tmp_path, body_path, target_png):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"learning_rate": 0.1}))
        rc = main(["generate", "--body", body_path, "--region", "chest,abdomen",
                   "--guidance", "mock", "--target", target_png,
                   "--config", str(cfg), "--out", str(tmp_path / "x.ply")])
        assert rc == 2

    def test_report_csv_written(self, tmp_path, body_path, target_png):
        out = tmp_path / "g.ply"
        csv = tmp_path / "report.csv"
        rc = main(["generate", "--body", body_path, "--region", "chest,abdomen",
                   "--guidance", "mock", "--target", target_png,
                   "--iterations", "2", "--seed", "1", "--out", str(out),
                   "--report-csv", str(csv)])
        assert rc == 0
        lines = csv.read_text().splitlines()
        assert lines[0] == "iter,loss_image,grad_norm,points,ms"
        assert len(lines) == 3


class TestEdit:
    def test_shape_round_trip(self, tmp_path, body_path, garment_path):
        out = tmp_path / "shaped.ply"
        rc = main(["edit", "shape", "--cloud", garment_path, "--body", body_path,
                   "--beta-dst", "1.0,0.0", "--out", str(out)])
        assert rc == 0
        before = load_ply(garment_path)
        after = load_ply(str(out))
        assert len(before) == len(after)
        assert not np.array_equal(before.positions, after.positions)
        assert np.array_equal(before.colors, after.colors)

    def test_texture_preserves_geometry(self, tmp_path, body_path, garment_path, target_png):
        out = tmp_path / "tex.ply"
        rc = main(["edit", "texture", "--cloud", garment_path, "--body", body_path,
                   "--guidance", "mock", "--target", target_png,
                   "--iterations", "2", "--seed", "4", "--out", str(out)])
        assert rc == 0
        before = load_ply(garment_path)
        after = load_ply(str(out))
        assert np.array_equal(before.positions, after.positions)
        assert np.array_equal(before.scales, after.scales)

    def test_local_edit_runs(self, tmp_path, body_path, garment_path, target_png):
        out = tmp_path / "local.ply"
        rc = main(["edit", "local", "--cloud", garment_path, "--body", body_path,
                   "--region", "chest_pattern", "--guidance", "mock",
                   "--target", target_png, "--iterations", "2", "--seed", "4",
                   "--out", str(out)])
        assert rc == 0
        assert len(load_ply(str(out))) > 0


class TestOcclusionFix:
    def test_report_and_cloud(self, tmp_path, body_path, garment_path):
        report = tmp_path / "report.json"
        out = tmp_path / "fixed.ply"
        rc = main(["occlusion-fix", "--cloud", garment_path, "--body", body_path,
                   "--region", "torso_side_l,torso_side_r", "--rho", "0.08",
                   "--report", str(report), "--out", str(out)])
        assert rc == 0
        data = json.loads(report.read_text())
        assert set(data) == {"pruned", "d_total", "d_avg", "iters", "final_sums"}
        assert out.exists()

    def test_deterministic_report(self, tmp_path, body_path, garment_path):
        r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
        for r in (r1, r2):
            rc = main(["occlusion-fix", "--cloud", garment_path, "--body", body_path,
                       "--region", "torso_side_l,torso_side_r", "--rho", "0.08",
                       "--report", str(r)])
            assert rc == 0
        assert r1.read_bytes() == r2.read_bytes()


class TestAnimate:
    def test_frames_written(self, tmp_path, body_path, garment_path):
        seq = tmp_path / "seq.json"
        theta = np.zeros((17, 3))
        theta[1, 0] = 0.3
        seq.write_text(json.dumps([
            {"frame": 0},
            {"frame": 1, "theta": theta.tolist()},
        ]))
        out_dir = tmp_path / "frames"
        rc = main(["animate", "--cloud", garment_path, "--body", body_path,
                   "--poses", str(seq), "--out-dir", str(out_dir)])
        assert rc == 0
        f0 = load_ply(out_dir / "frame_0000.ply")
        f1 = load_ply(out_dir / "frame_0001.ply")
        rest = load_ply(garment_path)
        assert np.array_equal(f0.positions, rest.positions)
        assert not np.array_equal(f1.positions, rest.positions)


class TestRender:
    def test_empty_cloud_background_png(self, tmp_path):
        from sgw.cloud import GaussianCloud, save_ply

        cloud_path = tmp_path / "empty.ply"
        save_ply(GaussianCloud.empty(), cloud_path)
        cam = tmp_path / "cam.json"
        cam.write_text(json.dumps({"azimuth_deg": 0, "elevation_deg": 0, "radius": 2.0,
                                   "width": 32, "height": 32}))
        out = tmp_path / "img.png"
        rc = main(["render", "--cloud", str(cloud_path), "--camera", str(cam),
                   "--out", str(out), "--bg", "0.5,0.5,0.5"])
        assert rc == 0
        from sgw.images import load_png

        img = load_png(out)
        assert np.allclose(img, 0.5, atol=5e-3)  # 8-bit sRGB quantization

    def test_render_with_mask_deterministic(self, tmp_path, garment_path):
        cam = tmp_path / "cam.json"
        cam.write_text(json.dumps({"azimuth_deg": 30, "elevation_deg": 10, "radius": 2.0,
                                   "target": [0.0, 1.3, 0.0], "width": 64, "height": 64}))
        pngs = []
        for name in ("r1", "r2"):
            out = tmp_path / f"{name}.png"
            mask = tmp_path / f"{name}_mask.png"
            rc = main(["render", "--cloud", garment_path, "--camera", str(cam),
                       "--out", str(out), "--mask", str(mask)])
            assert rc == 0
            pngs.append(out.read_bytes() + mask.read_bytes())
        assert pngs[0] == pngs[1]

    def test_render_pfm_is_linear(self, tmp_path, garment_path):
        from sgw.images import load_pfm

        cam = tmp_path / "cam.json"
        cam.write_text(json.dumps({"azimuth_deg": 0, "elevation_deg": 0, "radius": 2.0,
                                   "target": [0.0, 1.3, 0.0], "width": 32, "height": 32}))
        out = tmp_path / "img.png"
        pfm = tmp_path / "img.pfm"
        rc = main(["render", "--cloud", garment_path, "--camera", str(cam),
                   "--out", str(out), "--pfm", str(pfm), "--bg", "0.25,0.25,0.25"])
        assert rc == 0
        img = load_pfm(pfm)
        assert img.shape == (32, 32, 3)
        corner = img[0, 0]  # garment never covers the corner at this framing
        assert np.allclose(corner, 0.25, atol=1e-6)

    def test_bad_camera_json_is_usage_error(self, tmp_path, garment_path):
        cam = tmp_path / "cam.json"
        cam.write_text(json.dumps({"radius": 2.0}))
        rc = main(["render", "--cloud", garment_path, "--camera", str(cam),
                   "--out", str(tmp_path / "x.png")])
        assert rc == 2


class TestConfigPrecedence:
    def test_config_file_iterations_respected(self, tmp_path, body_path, target_png):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"iterations": 2}))
        out = tmp_path / "g.ply"
        csv = tmp_path / "r.csv"
        rc = main(["generate", "--body", body_path, "--region", "chest,abdomen",
                   "--guidance", "mock", "--target", target_png, "--seed", "1",
                   "--config", str(cfg), "--out", str(out), "--report-csv", str(csv)])
        assert rc == 0
        # 2 iterations from the config file, not the 300-iteration mock default
        assert len(csv.read_text().splitlines()) == 3

    def test_cli_flag_beats_config_file(self, tmp_path, body_path, target_png):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"iterations": 50}))
        out = tmp_path / "g.ply"
        csv = tmp_path / "r.csv"
        rc = main(["generate", "--body", body_path, "--region", "chest,abdomen",
                   "--guidance", "mock", "--target", target_png, "--seed", "1",
                   "--iterations", "4", "--config", str(cfg), "--out", str(out),
                   "--report-csv", str(csv)])
        assert rc == 0
        assert len(csv.read_text().splitlines()) == 5
