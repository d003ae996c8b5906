import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from diffcurve.cli import main
from diffcurve.fixtures import sharp_corner_scene, random_scene
from diffcurve.render import decode_png
from diffcurve.scene import save_scene


@pytest.fixture(scope="module")
def scene_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("scenes") / "scene.json"
    path.write_text(save_scene(random_scene(4, seed=2)))
    return str(path)


def test_render_command_writes_png(tmp_path, scene_file):
    out = tmp_path / "out.png"
    runner = CliRunner()
    res = runner.invoke(main, ["render", scene_file, "-o", str(out), "--res", "32",
                               "--no-adaptive", "--no-aa"])
    assert res.exit_code == 0, res.output
    img = decode_png(str(out))
    assert img.shape == (32, 32, 3)
    info = json.loads(res.output.strip().splitlines()[-1])
    assert "solve_s" in info and "eval_s" in info


def test_render_deterministic(tmp_path, scene_file):
    runner = CliRunner()
    outs = []
    for name in ("a.png", "b.png"):
        out = tmp_path / name
        res = runner.invoke(main, ["render", scene_file, "-o", str(out), "--res", "32",
                                   "--no-adaptive"])
        assert res.exit_code == 0, res.output
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_render_bad_scene_reports_json_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"curves": [{"spans": "nope"}]}')
    out = tmp_path / "out.png"
    runner = CliRunner()
    res = runner.invoke(main, ["render", str(bad), "-o", str(out)])
    assert res.exit_code == 1
    err = json.loads(res.stderr.strip().splitlines()[-1])
    assert err["error"] == "SceneParseError"
    assert "spans" in err["path"]


def test_usage_error_exit_code(tmp_path, scene_file):
    runner = CliRunner()
    res = runner.invoke(main, ["render", scene_file, "-o", str(tmp_path / "x.png"),
                               "--viewport", "1,2,3"])
    assert res.exit_code == 2


def test_zoom_command_reuses_session(tmp_path, scene_file):
    outdir = tmp_path / "frames"
    runner = CliRunner()
    res = runner.invoke(main, [
        "zoom", scene_file, "-o", str(outdir), "--res", "32", "--frames", "2",
        "--factor", "1.0", "--no-aa",
    ])
    assert res.exit_code == 0, res.output
    recs = json.load(open(outdir / "stats.json"))
    assert len(recs) == 2
    # identical consecutive viewports: second frame re-solves nothing
    assert recs[1]["resolved"] == 0
    assert os.path.exists(outdir / "frame001.png")


def test_no_adaptive_reproduces_bleeding(tmp_path):
    # the sharp-corner fixture renders visibly differently without adaptivity
    scn = tmp_path / "corner.json"
    scn.write_text(save_scene(sharp_corner_scene()))
    runner = CliRunner()
    out_fixed = tmp_path / "adaptive.png"
    out_bleed = tmp_path / "bleed.png"
    r1 = runner.invoke(main, ["render", str(scn), "-o", str(out_fixed), "--res", "64", "--no-aa"])
    r2 = runner.invoke(main, ["render", str(scn), "-o", str(out_bleed), "--res", "64",
                              "--no-aa", "--no-adaptive"])
    assert r1.exit_code == 0 and r2.exit_code == 0
    a = decode_png(str(out_fixed))
    b = decode_png(str(out_bleed))
    assert np.abs(a - b).max() > 10.0 / 255.0  # the bleeding artifact regression guard


def test_verify_subset(capsys):
    runner = CliRunner()
    res = runner.invoke(main, ["verify", "--suite", "gauss"])
    assert res.exit_code == 0, res.output
    assert "[PASS] gauss" in res.output


def test_bench_small(tmp_path):
    out = tmp_path / "bench.csv"
    runner = CliRunner()
    res = runner.invoke(main, ["bench", "--sizes", "250,500", "-o", str(out)])
    assert res.exit_code == 0, res.output
    rows = out.read_text().strip().splitlines()
    assert rows[0].startswith("segments")
    assert len(rows) == 3
    fit = json.loads(res.output.strip().splitlines()[-1])
    assert "brute_exponent" in fit


@pytest.mark.slow
def test_deep_zoom_resolve_cheaper_than_initial_solve(tmp_path):
    # a scene big enough that the initial solve dominates; zooming 10^4x onto
    # the sharp corner re-solves only a handful of curves per frame
    from diffcurve.fixtures import grid_scene, sharp_corner_scene
    from diffcurve.scene import Scene

    corner = sharp_corner_scene()
    grid = grid_scene(150, seed=3)
    shifted = [c for c in grid.curves]
    scene = Scene(corner.curves + shifted)
    scn = tmp_path / "deep.json"
    scn.write_text(save_scene(scene))
    outdir = tmp_path / "frames"
    runner = CliRunner()
    res = runner.invoke(main, [
        "zoom", str(scn), "-o", str(outdir), "--res", "64", "--frames", "5",
        "--factor", "10.0", "--center", "0.0,0.0", "--no-aa",
    ])
    assert res.exit_code == 0, res.output
    recs = json.load(open(outdir / "stats.json"))
    assert len(recs) == 5  # 10^4x total zoom across frames
    for rec in recs[1:]:
        assert rec["resolve_s"] < rec["initial_solve_s"]
