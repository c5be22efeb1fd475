import csv
import subprocess
import sys

import numpy as np
import pytest

from volsynth.camera import FrustumSpec, Intrinsics, sphere_poses, turntable_poses
from volsynth.cli import main
from volsynth.metrics import binarize_alpha, miou, occupancy_resample
from volsynth.scene import ProceduralSpec, generate_scene, read_image, render_dataset
from volsynth.volume import read_voxl, write_voxl

GEOM = ["--intrinsics", "16,16,8,8,16,16", "--frustum", "2,6,12"]


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    vol = generate_scene(ProceduralSpec.random(4, 2, (12, 12, 12)))
    write_voxl(d / "vol.voxl", vol)
    write_voxl(d / "empty.voxl", np.zeros_like(vol))
    k, f = Intrinsics.centered(16, 16, 16.0), FrustumSpec(2.0, 6.0, 12)
    render_dataset(vol, sphere_poses(8, 4.0, seed=1), k, f, None, d / "data")
    return d, vol


def run(*argv):
    return main([str(a) for a in argv])


def test_render_empty_volume_is_white(files, capsys):
    d, _ = files
    assert run("render", "--volume", d / "empty.voxl", "--out", d / "e.ppm", *GEOM) == 0
    np.testing.assert_array_equal(read_image(d / "e.ppm"), 1.0)
    assert "render_ms" in capsys.readouterr().out


def test_render_engines_agree(files, tmp_path):
    d, _ = files
    pose = ",".join(str(x) for x in turntable_poses(5, 4.0, 15.0)[2].matrix().ravel())
    for eng in ("amortized", "reference"):
        assert run("render", "--volume", d / "vol.voxl", "--out", tmp_path / f"{eng}.ppm",
                   "--engine", eng, f"--pose={pose}", "--background", "0,0,0", *GEOM) == 0
    a = read_image(tmp_path / "amortized.ppm")
    b = read_image(tmp_path / "reference.ppm")
    # both routes quantize the same float image; allow one 8-bit step at rounding ties
    assert np.abs(a - b).max() <= 1 / 255 + 1e-12
    assert np.mean(a != b) < 0.01


def test_render_manifest_view_and_errors(files, tmp_path, capsys):
    d, _ = files
    assert run("render", "--volume", d / "vol.voxl", "--out", tmp_path / "m.ppm",
               "--manifest-view", d / "data" / "manifest.txt", "0003") == 0
    np.testing.assert_array_equal(read_image(tmp_path / "m.ppm"), read_image(d / "data" / "view_0003.ppm"))
    capsys.readouterr()
    assert run("render", "--volume", tmp_path / "missing.voxl", "--out", tmp_path / "x.ppm") == 1
    assert "missing.voxl" in capsys.readouterr().err
    assert run("render", "--volume", d / "vol.voxl", "--out", tmp_path / "x.ppm", "--samples", "8") == 2
    with pytest.raises(SystemExit) as exc:
        run("render", "--volume", d / "vol.voxl", "--out", tmp_path / "x.ppm", "--pose", "1,2", "--manifest-view", "a", "b")
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run("render", "--volume", d / "vol.voxl", "--out", tmp_path / "x.ppm", "--bogus")
    assert exc.value.code == 2


def test_turntable_names_and_single_view(files, tmp_path, capsys):
    d, _ = files
    assert run("turntable", "--volume", d / "vol.voxl", "--n-views", 3, "--out-dir", tmp_path / "tt", *GEOM) == 0
    assert sorted(p.name for p in (tmp_path / "tt").iterdir()) == ["view_0000.ppm", "view_0001.ppm", "view_0002.ppm"]
    out = capsys.readouterr().out
    assert "total_ms" in out and "per_view_ms" in out
    assert run("turntable", "--volume", d / "vol.voxl", "--n-views", 1, "--out-dir", tmp_path / "one", *GEOM) == 0
    assert run("render", "--volume", d / "vol.voxl", "--out", tmp_path / "r.ppm", *GEOM) == 0
    assert (tmp_path / "one" / "view_0000.ppm").read_bytes() == (tmp_path / "r.ppm").read_bytes()
    with pytest.raises(SystemExit):
        run("turntable", "--volume", d / "vol.voxl", "--n-views", 0, "--out-dir", tmp_path)


def test_fit_outputs_and_determinism(files, tmp_path, capsys):
    d, _ = files
    args = ["fit", "--manifest", d / "data" / "manifest.txt", "--dims", "12", "--iters", 200,
            "--seed", 5, "--holdout", 2, "--threads", 1]
    assert run(*args, "--out-volume", tmp_path / "a.voxl") == 0
    assert run(*args, "--out-volume", tmp_path / "b.voxl") == 0
    assert (tmp_path / "a.voxl").read_bytes() == (tmp_path / "b.voxl").read_bytes()
    with open(tmp_path / "a_loss.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 200
    assert float(rows[-1]["total"]) < float(rows[0]["total"])
    with open(tmp_path / "a_heldout.csv") as fh:
        held = list(csv.DictReader(fh))
    assert [r["view_id"] for r in held] == ["0006", "0007"]
    assert "heldout 0006 psnr" in capsys.readouterr().out


def test_fit_usage_errors(files, tmp_path):
    d, _ = files
    m = d / "data" / "manifest.txt"
    assert run("fit", "--manifest", m, "--holdout", 9, "--out-volume", tmp_path / "x.voxl") == 2
    assert run("fit", "--manifest", m, "--holdout", 7, "--out-volume", tmp_path / "x.voxl") == 2
    assert run("fit", "--manifest", tmp_path / "none.txt", "--out-volume", tmp_path / "x.voxl") == 1


def test_eval_miou(files, tmp_path, capsys):
    d, vol = files
    assert run("eval", "--pred-volume", d / "vol.voxl", "--gt-volume", d / "vol.voxl", "--csv", tmp_path / "s.csv") == 0
    assert "miou 1.000000" in capsys.readouterr().out
    assert (tmp_path / "s.csv").read_text().splitlines() == ["miou,threshold", "1.000000,0.05"]
    with pytest.raises(SystemExit) as exc:
        run("eval", "--pred-volume", d / "vol.voxl", "--gt-volume", d / "vol.voxl", "--tau", "1.5")
    assert exc.value.code == 2


def test_eval_resample_matches_manual_pipeline(tmp_path, capsys):
    gt = generate_scene(ProceduralSpec.random(9, 2, (32, 32, 32)))
    pred = generate_scene(ProceduralSpec.random(9, 2, (64, 64, 64)))
    pred[3, 30:40] *= 0.02
    write_voxl(tmp_path / "gt.voxl", gt)
    write_voxl(tmp_path / "pred.voxl", pred)
    assert run("eval", "--pred-volume", tmp_path / "pred.voxl", "--gt-volume", tmp_path / "gt.voxl") == 1
    capsys.readouterr()
    assert run("eval", "--pred-volume", tmp_path / "pred.voxl", "--gt-volume", tmp_path / "gt.voxl", "--resample") == 0
    expected = miou(binarize_alpha(pred, 0.05), occupancy_resample(binarize_alpha(gt, 0.05), (64, 64, 64)))
    assert f"miou {expected:.6f}" in capsys.readouterr().out
    assert 0.0 < expected < 1.0


def test_eval_psnr_against_manifest(files, capsys):
    d, _ = files
    assert run("eval", "--pred-volume", d / "vol.voxl", "--metrics", "psnr,ssim",
               "--manifest", d / "data" / "manifest.txt") == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("view")]
    assert len(lines) == 8
    assert all(float(ln.split()[3]) > 40 for ln in lines)
    assert run("eval", "--pred-volume", d / "vol.voxl", "--metrics", "psnr") == 2


def test_bench_csv(files, tmp_path):
    d, _ = files
    assert run("bench", "--volume", d / "vol.voxl", "--resolutions", "8,12", "--depth-samples", "4",
               "--views", 2, "--repeats", 1, "--csv", tmp_path / "b.csv") == 0
    rows = (tmp_path / "b.csv").read_text().splitlines()
    assert rows[0] == "engine,resolution,depth,views,per_view_ms,per_object_ms"
    assert len(rows) == 1 + 2 * 2


def test_gradcheck_exit_codes(capsys):
    assert run("gradcheck") == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 4 and all("max_rel_err" in ln for ln in out)
    assert run("gradcheck", "--corrupt-vjp") == 1


def test_threads_env_validation(monkeypatch):
    monkeypatch.setenv("VOLSYNTH_THREADS", "abc")
    assert run("gradcheck", "--size", "4,3,3,3") == 2
    monkeypatch.setenv("VOLSYNTH_THREADS", "1")
    assert run("gradcheck", "--size", "4,3,3,3") == 0


def test_console_script_usage_error():
    proc = subprocess.run([sys.executable, "-m", "volsynth.cli", "render"], capture_output=True, text=True)
    assert proc.returncode == 2 and "--volume" in proc.stderr
