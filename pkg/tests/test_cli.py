"""End-to-end smoke tests of the command-line interface: a tiny
synth -> fit -> optimize -> render -> export pipeline plus the standalone
gradcheck and bench subcommands."""

import json

import pytest

from planesoup.cli import main


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """Run the full CLI pipeline once on a tiny scene and share the outputs."""
    root = tmp_path_factory.mktemp("cli")
    bundle = root / "bundle"
    main(["--seed", "0", "synth", "--scene", "flatland", "--out", str(bundle),
          "--frames", "3", "--width", "64", "--height", "36", "--gt"])
    cfg = root / "config.json"
    cfg.write_text(json.dumps({
        "fit": {"max_points": 4000},
        "train": {"texture_size": 32, "disp_size": 8, "log_every": 10},
    }))
    fit_ckpt = root / "fit.psck"
    main(["--config", str(cfg), "--seed", "0", "fit", "--bundle", str(bundle),
          "--out", str(fit_ckpt), "--planes", "4", "--iterations", "150"])
    opt_ckpt = root / "opt.psck"
    main(["--config", str(cfg), "--seed", "0", "optimize", "--bundle",
          str(bundle), "--init", str(fit_ckpt), "--out", str(opt_ckpt),
          "--iterations", "20"])
    return root, bundle, fit_ckpt, opt_ckpt


def test_synth_writes_bundle_and_groundtruth(pipeline_dir):
    root, bundle, _, _ = pipeline_dir
    manifest = json.loads((bundle / "manifest.json").read_text())
    assert manifest["n_frames"] == 3
    assert (bundle / "groundtruth").is_dir()


def test_synth_rejects_unknown_scene(tmp_path):
    with pytest.raises(SystemExit):
        main(["synth", "--scene", "nope", "--out", str(tmp_path / "x")])


def test_fit_checkpoint_loads(pipeline_dir):
    root, _, fit_ckpt, _ = pipeline_dir
    from planesoup.bundle_io import load_checkpoint

    ckpt = load_checkpoint(fit_ckpt)
    assert len(ckpt.planes) == 4
    assert "intrinsics" in ckpt.metadata


def test_optimize_checkpoint_improves_and_records(pipeline_dir):
    root, _, _, opt_ckpt = pipeline_dir
    from planesoup.bundle_io import load_checkpoint

    ckpt = load_checkpoint(opt_ckpt)
    assert ckpt.metadata.get("metrics"), "final loss breakdown is stored"


def test_render_writes_images(pipeline_dir, tmp_path):
    root, _, _, opt_ckpt = pipeline_dir
    out = tmp_path / "renders"
    main(["render", "--checkpoint", str(opt_ckpt), "--out", str(out)])
    pngs = sorted(out.glob("render_*.png"))
    assert len(pngs) == 3
    from PIL import Image

    img = Image.open(pngs[0])
    assert img.size == (64, 36)


def test_render_with_camera_path_file(pipeline_dir, tmp_path):
    root, _, _, opt_ckpt = pipeline_dir
    from planesoup.bundle_io import load_checkpoint

    ckpt = load_checkpoint(opt_ckpt)
    pose = ckpt.metadata["poses"][0]
    path = tmp_path / "path.txt"
    path.write_text("# timestamp then 3x4 pose\n"
                    "0.0 " + " ".join(f"{v:.9f}" for v in pose) + "\n")
    out = tmp_path / "renders"
    main(["render", "--checkpoint", str(opt_ckpt), "--out", str(out),
          "--path", str(path)])
    assert (out / "render_0000.png").exists()


def test_render_rejects_malformed_path(pipeline_dir, tmp_path):
    root, _, _, opt_ckpt = pipeline_dir
    path = tmp_path / "bad.txt"
    path.write_text("0.0 1 2 3\n")
    with pytest.raises(SystemExit):
        main(["render", "--checkpoint", str(opt_ckpt),
              "--out", str(tmp_path / "r"), "--path", str(path)])


def test_export_writes_viewer_bundle(pipeline_dir, tmp_path):
    root, _, _, opt_ckpt = pipeline_dir
    out = tmp_path / "viewer"
    main(["export", "--checkpoint", str(opt_ckpt), "--out", str(out)])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n_planes"] == 4
    for name in ("planes.bin", "color_sh.bin", "alpha.bin"):
        assert (out / name).exists()


def test_gradcheck_exits_zero_on_pass(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gradcheck", "--samples", "2"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out and "[FAIL]" not in out


def test_bench_prints_report(capsys):
    main(["--threads", "1", "bench", "--planes", "4", "--width", "64",
          "--height", "36", "--texture-size", "16", "--frames", "3"])
    report = json.loads(capsys.readouterr().out)
    assert report["n_planes"] == 4
    assert report["total"]["fps_median"] > 0
    assert set(report["stages"]) >= {"rasterize", "sort", "composite"}


def test_unknown_config_key_is_rejected(pipeline_dir, tmp_path):
    root, bundle, _, _ = pipeline_dir
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"fit": {"not_a_key": 1}}))
    with pytest.raises(SystemExit):
        main(["--config", str(cfg), "fit", "--bundle", str(bundle),
              "--out", str(tmp_path / "c.psck"), "--iterations", "5"])
