import json
import subprocess
import sys

import numpy as np
import pytest

from poserefine.cli import build_parser, main
from poserefine.field import TemplateFrame, rasterize_lines, standard_pitch
from poserefine.geometry import Intrinsics, NoiseModel, perturb_pose
from poserefine.imaging import read_png, write_png
from poserefine.synthetic import halfway_sites, render_camera_mask

TINY = ["--image", "384x216", "--scenarios", "1", "--mu", "4", "--lam", "8", "--generations", "2", "--workers", "1"]


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"cameras": [{"position": [-4, 42], "height": 6}], "noise": [[0.015, 0.3]], "sgd": {"steps": 2}}))
    return path


def test_help_lists_subcommands():
    out = subprocess.run([sys.executable, "-m", "poserefine", "--help"], capture_output=True, text=True, check=True).stdout
    for cmd in ("calibrate", "experiment", "ablate-blur", "render-template"):
        assert cmd in out


def test_every_subcommand_accepts_seed():
    parser = build_parser()
    for cmd in ("calibrate", "experiment", "ablate-blur", "render-template"):
        assert parser.parse_args([cmd, "--seed", "5"]).seed == 5


def test_render_template(tmp_path, capsys):
    out = tmp_path / "t.png"
    assert main(["render-template", "--kernel-count", "0", "--margin", "5", "-o", str(out)]) == 0
    frame = TemplateFrame.for_field(standard_pitch(), 10.0, 5.0)
    img = read_png(out)
    assert img.shape == (frame.height_px, frame.width_px)
    np.testing.assert_allclose(img, rasterize_lines(standard_pitch(), frame), atol=0.5 / 65535 + 1e-12)
    meta = json.loads(out.with_suffix(".json").read_text())
    assert meta["blur_sizes"] == []
    assert "wrote" in capsys.readouterr().out


def test_experiment_subcommand(tmp_path, config_file, capsys):
    argv = ["experiment", "--config", str(config_file), "--out", str(tmp_path), "--run-id", "x", "--seed", "1", *TINY]
    assert main(argv) == 0
    text = capsys.readouterr().out
    assert "start" in text and "es" in text and "sgd" in text
    echo = json.loads((tmp_path / "x" / "config.json").read_text())
    assert echo["seed"] == 1 and echo["image"] == {"width": 384, "height": 216} and echo["es"]["generations"] == 2
    assert echo["cameras"][0]["position"] == [-4, 42]


def test_experiment_determinism_via_cli(tmp_path, config_file):
    for run in ("p", "q"):
        argv = ["experiment", "--config", str(config_file), "--out", str(tmp_path), "--run-id", run, "--methods", "start", "es", *TINY]
        assert main(argv) == 0

    def strip(path):
        lines = path.read_text().splitlines()
        return [line.rsplit(",", 1)[0] for line in lines]  # runtime_s is the last column

    assert strip(tmp_path / "p" / "report.csv") == strip(tmp_path / "q" / "report.csv")


def test_bad_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"methods": ["nope"]}))
    assert main(["experiment", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["experiment", "--config", str(tmp_path / "missing.json")]) == 2


def test_calibrate_synthetic(tmp_path, config_file, capsys):
    argv = ["calibrate", "--config", str(config_file), "--out", str(tmp_path), "--run-id", "c", "--methods", "start", "es", *TINY]
    assert main(argv) == 0
    report = json.loads((tmp_path / "c" / "report.json").read_text())
    assert [r["method"] for r in report["results"]] == ["start", "es"]
    assert "RWE mean" in capsys.readouterr().out


def test_calibrate_rejects_file_flags_without_mask(tmp_path):
    (tmp_path / "k.json").write_text("{}")
    assert main(["calibrate", "--intrinsics", str(tmp_path / "k.json")]) == 2


def test_calibrate_from_files(tmp_path, capsys):
    w, h = 384, 216
    model = standard_pitch()
    k = Intrinsics.for_image(w, h, 90.0)
    gt = halfway_sites(model)[1].pose()
    start = perturb_pose(gt, NoiseModel(0.005, 0.1), np.random.default_rng(3))
    write_png(tmp_path / "mask.png", render_camera_mask(model, k, gt, w, h))
    (tmp_path / "k.json").write_text(json.dumps(k.to_dict()))
    (tmp_path / "start.json").write_text(json.dumps(start.to_dict()))
    argv = [
        "calibrate",
        "--mask", str(tmp_path / "mask.png"),
        "--intrinsics", str(tmp_path / "k.json"),
        "--start", str(tmp_path / "start.json"),
        "--out", str(tmp_path),
        "--run-id", "f",
        "--diagnostics",
        *TINY,
    ]
    assert main(argv) == 0
    result = json.loads((tmp_path / "f" / "result.json").read_text())
    assert result["refinement"]["best_fitness"] <= result["start_fitness"]
    assert result["refinement"]["evaluations"] == 4 + 2 * 8
    assert (tmp_path / "f" / "diagnostics" / "template.png").exists()
    assert "->" in capsys.readouterr().out


def test_ablate_blur_subcommand(tmp_path, config_file, capsys):
    argv = ["ablate-blur", "--config", str(config_file), "--out", str(tmp_path), "--run-id", "b", "--kernel-counts", "0", "3", *TINY]
    assert main(argv) == 0
    lines = (tmp_path / "b" / "ablation.csv").read_text().splitlines()
    assert lines[0].startswith("kernel_count,base_size,sizes") and len(lines) == 3
    assert "wrote" in capsys.readouterr().out
