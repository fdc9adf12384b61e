"""
End-to-end tests for the command line, run in-process.

Every command prints one JSON document on stdout; the tests parse it and
inspect the files the command wrote.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.metrics import Alignment, apply_alignment
from src.models import DepthMap, ImageGeometry, Intrinsics
from src.raster_io import intrinsics_json, read_map, write_map
from src.recon import read_ply, reproject


pytestmark = pytest.mark.e2e


@pytest.fixture
def camera():
    return Intrinsics(fx=150.0, fy=158.5, bx=61.25, by=50.5), ImageGeometry(width=128, height=96)


@pytest.fixture
def camera_json(tmp_path, camera):
    path = tmp_path / "camera.json"
    path.write_text(intrinsics_json(*camera))
    return path


@pytest.fixture
def centered_json(tmp_path):
    path = tmp_path / "centered.json"
    path.write_text(intrinsics_json(Intrinsics(fx=150.0, fy=150.0, bx=64.0, by=48.0), ImageGeometry(width=128, height=96)))
    return path


@pytest.fixture
def imap(cli, tmp_path, camera_json):
    path = tmp_path / "m.imap"
    assert cli("synth", "--intrinsics-json", camera_json, "--out", path).status == 0
    return path


class TestSynth:

    def test_scannet_center_rays(self, cli, tmp_path):
        path = tmp_path / "scannet.imap"
        result = cli("synth", "--fixture", "scannet", "--size", "1296x968", "--out", path)
        assert result.status == 0
        assert result.json["fx"] == 1165.72
        m = read_map(path)
        assert abs(m.data[485, 649, 0]) < 1e-3
        assert abs(m.data[485, 649, 1]) < 1e-3

    def test_unknown_fixture(self, cli, tmp_path):
        result = cli("synth", "--fixture", "nosuch", "--out", tmp_path / "x.imap")
        assert result.status == 1
        assert result.json["kind"] == "UnknownFixture"
        assert "scannet" in result.json["message"]

    def test_bad_size(self, cli, tmp_path):
        result = cli("synth", "--fixture", "nyu", "--size", "640by480", "--out", tmp_path / "x.imap")
        assert result.status == 2

    def test_byte_identical_reruns(self, cli, tmp_path, camera_json):
        a, b = tmp_path / "a.imap", tmp_path / "b.imap"
        cli("synth", "--intrinsics-json", camera_json, "--out", a)
        cli("synth", "--intrinsics-json", camera_json, "--out", b)
        assert a.read_bytes() == b.read_bytes()

    def test_needs_exactly_one_source(self, cli, tmp_path, camera_json):
        result = cli("synth", "--fixture", "nyu", "--intrinsics-json", camera_json, "--out", tmp_path / "x.imap")
        assert result.status == 2
        assert result.json["code"] == "CLI_001"


class TestPerturb:

    def test_zero_amounts_copy_bits(self, cli, tmp_path, imap):
        out = tmp_path / "p.imap"
        result = cli("perturb", "--in", imap, "--out", out, "--seed", 3)
        assert result.status == 0
        assert out.read_bytes() == imap.read_bytes()

    def test_full_outliers_move_every_ray(self, cli, tmp_path, imap):
        out = tmp_path / "p.imap"
        cli("perturb", "--in", imap, "--out", out, "--outlier-frac", 1, "--seed", 3)
        moved = np.abs(read_map(out).data - read_map(imap).data).max(axis=-1)
        assert (moved > 1e-6).all()

    def test_seeded(self, cli, tmp_path, imap):
        a, b = tmp_path / "a.imap", tmp_path / "b.imap"
        for path in (a, b):
            cli("perturb", "--in", imap, "--out", path, "--angle-noise", 0.01, "--outlier-frac", 0.2, "--seed", 9)
        assert a.read_bytes() == b.read_bytes()

    def test_fraction_out_of_range(self, cli, tmp_path, imap):
        result = cli("perturb", "--in", imap, "--out", tmp_path / "p.imap", "--outlier-frac", 1.5, "--seed", 1)
        assert result.status == 2

    def test_seed_is_required(self, cli, tmp_path, imap):
        assert cli("perturb", "--in", imap, "--out", tmp_path / "p.imap").status == 2


class TestCalibrate:

    def test_clean_map_against_ground_truth(self, cli, imap, camera_json, camera):
        result = cli("calibrate", "--in", imap, "--gt", camera_json)
        assert result.status == 0
        doc = result.json
        assert doc["e_f"] < 1e-6
        assert doc["e_b"] < 1e-6
        assert doc["inlier_ratio"] == 1.0
        assert doc["method"] == "ransac"
        assert doc["intrinsics"]["fx"] == pytest.approx(camera[0].fx, rel=1e-6)

    def test_assume_centered(self, cli, tmp_path, centered_json):
        path = tmp_path / "c.imap"
        cli("synth", "--intrinsics-json", centered_json, "--out", path)
        doc = cli("calibrate", "--in", path, "--asm").json
        assert doc["method"] == "enumerate"
        assert (doc["intrinsics"]["bx"], doc["intrinsics"]["by"]) == (64.0, 48.0)
        assert doc["intrinsics"]["fx"] == doc["intrinsics"]["fy"]

    def test_ground_truth_geometry_must_match(self, cli, tmp_path, imap):
        other = tmp_path / "other.json"
        other.write_text(intrinsics_json(Intrinsics(fx=150, fy=150, bx=32, by=32), ImageGeometry(width=64, height=64)))
        result = cli("calibrate", "--in", imap, "--gt", other)
        assert result.status == 1
        assert result.json["code"] == "CLI_002"

    def test_depth_file_is_rejected(self, cli, tmp_path, ramp_depth):
        path = tmp_path / "d.dmap"
        write_map(path, ramp_depth)
        result = cli("calibrate", "--in", path)
        assert result.status == 1
        assert result.json["kind"] == "MalformedFile"

    def test_solver_overrides(self, cli, imap):
        doc = cli("calibrate", "--in", imap, "--iters", 70, "--threshold", 0.001, "--seed", 4).json
        assert doc["trials"] <= 70


class TestReconstruct:

    @pytest.fixture
    def plane(self, tmp_path):
        path = tmp_path / "plane.dmap"
        write_map(path, DepthMap.from_array(np.full((96, 128), 2.0)))
        return path

    def test_constant_depth(self, cli, tmp_path, plane, camera_json, camera):
        out = tmp_path / "cloud.ply"
        result = cli("reconstruct", "--depth", plane, "--intrinsics", camera_json, "--out", out)
        assert result.status == 0
        assert result.json["points"] == 128 * 96
        assert "shift assumed to be 0" in result.json["note"]

        cloud = read_ply(out)
        assert (cloud.points[:, 2] == 2.0).all()
        pixels = reproject(cloud, camera[0]).pixels
        ys, xs = np.mgrid[0:96, 0:128]
        assert_allclose(pixels, np.stack([xs.ravel(), ys.ravel()], axis=1), atol=1e-9)

    def test_from_incident_map(self, cli, tmp_path, plane, imap, camera):
        out = tmp_path / "cloud.ply"
        doc = cli("reconstruct", "--depth", plane, "--from-imap", imap, "--out", out).json
        assert doc["calibration"]["inlier_ratio"] == 1.0
        assert doc["intrinsics"]["fx"] == pytest.approx(camera[0].fx, rel=1e-6)

    def test_reference_alignment(self, cli, tmp_path, ramp_depth):
        k = Intrinsics(fx=40, fy=40, bx=16, by=12)
        cam = tmp_path / "ramp.json"
        cam.write_text(intrinsics_json(k, ramp_depth.geometry))
        depth, reference = tmp_path / "d.dmap", tmp_path / "ref.dmap"
        write_map(depth, ramp_depth)
        write_map(reference, apply_alignment(ramp_depth, Alignment(3.0, 0.5)))

        doc = cli(
            "reconstruct", "--depth", depth, "--intrinsics", cam,
            "--reference", reference, "--out", tmp_path / "c.ply",
        ).json
        assert doc["alignment"]["scale"] == pytest.approx(3.0, rel=1e-5)
        assert doc["alignment"]["shift"] == pytest.approx(0.5, abs=1e-4)
        assert "note" not in doc

    def test_geometry_mismatch(self, cli, tmp_path, ramp_depth, camera_json):
        path = tmp_path / "d.dmap"
        write_map(path, ramp_depth)
        result = cli("reconstruct", "--depth", path, "--intrinsics", camera_json, "--out", tmp_path / "c.ply")
        assert result.status == 1
        assert result.json["code"] == "CLI_002"


class TestBenchmark:

    def run(self, cli, out, *extra):
        return cli(
            "benchmark", "--fixtures", "scannet,kitti", "--noise-grid", "0:0",
            "--trials", 2, "--seed", 7, "--max-side", 48, "--out", out, *extra,
        )

    def test_zero_noise_rows(self, cli, tmp_path):
        out = tmp_path / "report.json"
        result = self.run(cli, out)
        assert result.status == 0
        assert result.json["summary"]["trials"] == 4
        assert result.json["summary"]["failures"] == 0
        assert result.json["summary"]["median_e_f"] < 1e-6
        assert (tmp_path / "report.csv").exists()

    def test_same_seed_same_scores(self, cli, tmp_path):
        from src.batch import BenchmarkReport

        a, b = tmp_path / "a.json", tmp_path / "b.json"
        self.run(cli, a)
        self.run(cli, b, "--workers", 2)
        rows = [
            [r.model_dump(exclude={"runtime_ms"}) for r in BenchmarkReport.model_validate_json(p.read_text()).rows]
            for p in (a, b)
        ]
        assert rows[0] == rows[1]

    def test_unknown_fixture(self, cli, tmp_path):
        result = cli("benchmark", "--fixtures", "nosuch", "--seed", 1, "--out", tmp_path / "r.json")
        assert result.status == 1


class TestOtherCommands:

    def test_fixtures(self, cli):
        doc = cli("fixtures").json
        assert len(doc) == 13
        assert doc["hypersim"]["fx"] == 889.0
        assert doc["hypersim"]["width"] == 1024

    def test_evaluate_depth(self, cli, tmp_path, ramp_depth):
        pred, gt = tmp_path / "pred.dmap", tmp_path / "gt.dmap"
        write_map(pred, ramp_depth)
        write_map(gt, apply_alignment(ramp_depth, Alignment(2.0, 1.0)))
        doc = cli("evaluate-depth", "--pred", pred, "--gt", gt).json
        assert doc["abs_rel"] < 1e-6
        assert doc["delta1"] == 1.0
        assert doc["alignment"]["scale"] == pytest.approx(2.0, rel=1e-5)

    def test_simulate_with_oracle(self, cli, camera_json):
        result = cli("simulate", "--intrinsics-json", camera_json, "--ensemble", 2, "--steps", 5, "--seed", 0)
        assert result.status == 0
        assert result.json["e_f"] < 1e-6
        assert result.json["e_b"] < 1e-6
        assert result.json["ensemble_size"] == 2
        assert result.json["mean_stddev"] < 1e-9
        assert result.json["depth_abs_rel"] < 1e-6
        assert result.json["depth_delta1"] == 1.0

    def test_simulate_generates_given_depth(self, cli, tmp_path, camera_json, ramp_depth):
        depth, out = tmp_path / "scene.dmap", tmp_path / "generated.dmap"
        write_map(depth, ramp_depth)
        result = cli(
            "simulate", "--intrinsics-json", camera_json, "--size", "32x24",
            "--depth", depth, "--depth-out", out, "--ensemble", 2, "--steps", 5, "--seed", 0,
        )
        assert result.status == 0
        assert result.json["e_f"] < 1e-6
        assert result.json["depth_abs_rel"] < 1e-6

        generated = read_map(out)
        assert isinstance(generated, DepthMap)
        assert_allclose(generated.values[ramp_depth.mask], ramp_depth.values[ramp_depth.mask], atol=1e-5)
        assert abs(generated.values[3, 4]) < 1e-5
        assert abs(generated.values[10, 20]) < 1e-5

    def test_simulate_depth_must_match_camera(self, cli, tmp_path, camera_json, ramp_depth):
        depth = tmp_path / "scene.dmap"
        write_map(depth, ramp_depth)
        result = cli(
            "simulate", "--intrinsics-json", camera_json, "--depth", depth,
            "--ensemble", 1, "--steps", 2, "--seed", 0,
        )
        assert result.status == 1
        assert result.json["kind"] == "GeometryMismatch"

    def test_export(self, cli, tmp_path, imap):
        doc = cli("export", "--in", imap, "--out", tmp_path / "viz").json
        assert doc["kind"] == "incident"
        assert len(doc["channels"]) == 2
        assert all((tmp_path / c["file"]).exists() for c in doc["channels"])

    def test_no_command(self, cli):
        result = cli()
        assert result.status == 2
        assert result.json["kind"] == "UsageError"

    def test_unknown_command(self, cli):
        assert cli("frobnicate").status == 2

    def test_debug_logs_stay_off_stdout(self, cli):
        result = cli("--json-logs", "--log-level", "DEBUG", "fixtures")
        assert result.status == 0
        assert len(result.json) == 13
