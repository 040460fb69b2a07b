import json

import numpy as np
import pytest

from twsar.cli import main
from twsar.cli.config import ConfigError, ExperimentConfig, load_config, packaged_config, packaged_names
from twsar.cli.experiments import add_noise, background_fraction
from twsar.cli.io import (
    AmbiguousPeakError,
    colourize_overlay,
    export_image,
    peak_sidelobe,
    read_pnm,
    sidelobe_profile,
)
from twsar.geometry import make_image_grid


def test_add_noise_exact_fraction_and_seed():
    d = np.arange(1, 41) * (1 + 0.5j)
    n1 = add_noise(d, 0.2, seed=7)
    assert np.linalg.norm(n1 - d) == pytest.approx(0.2 * np.linalg.norm(d), rel=1e-12)
    assert np.array_equal(n1, add_noise(d, 0.2, seed=7))
    assert not np.array_equal(n1, add_noise(d, 0.2, seed=8))
    assert np.array_equal(add_noise(d, 0.0, seed=7), d)
    with pytest.raises(ValueError):
        add_noise(d, -0.1, seed=0)


def test_export_image(tmp_path):
    grid = make_image_grid(0.2, 0.1)
    img = np.zeros(grid.shape)
    img[0, 2] = 1.0
    img[1, 1] = 0.1
    pix = export_image(img, tmp_path / "a.pgm", grid)
    back = read_pnm(tmp_path / "a.pgm")
    assert np.array_equal(back, pix)
    # the first grid row (lowest y) is written last
    assert back[-1, 2] == 255
    assert back[1, 1] == round(255 * 20 / 40)
    meta = json.loads((tmp_path / "a.pgm.json").read_text())
    assert meta["x"] == pytest.approx(list(grid.x))
    assert np.all(export_image(np.zeros((2, 3)), tmp_path / "z.pgm") == 0)
    assert np.all(export_image(np.ones((2, 3)), tmp_path / "c.pgm") == 255)
    with pytest.raises(ValueError):
        export_image(np.array([1.0, np.nan]).reshape(1, 2), tmp_path / "n.pgm")


def test_export_image_readable_by_pillow(tmp_path):
    Image = pytest.importorskip("PIL.Image")
    export_image(np.random.default_rng(0).random((4, 5)), tmp_path / "p.pgm")
    with Image.open(tmp_path / "p.pgm") as im:
        assert im.size == (5, 4)


def test_overlay(tmp_path):
    a = np.ones((2, 2))
    rgb = colourize_overlay([a, a, a], tmp_path / "g.ppm")
    assert np.all(rgb == 255)
    rgb = colourize_overlay([2 * a, a, a], tmp_path / "r.ppm")
    assert np.all(rgb[..., 0] == 255) and np.all(rgb[..., 1] == 128)
    rgb = colourize_overlay([a, np.zeros((2, 2)), a], tmp_path / "z.ppm")
    assert np.all(rgb[..., 1] == 0)
    assert np.array_equal(read_pnm(tmp_path / "z.ppm"), rgb)
    with pytest.raises(ValueError):
        colourize_overlay([a, a, np.ones((3, 2))], tmp_path / "m.ppm")


def test_sidelobe_profile():
    grid = make_image_grid(1.0, 0.05)
    x = grid.points[:, 0]
    img = np.abs(np.sinc(x / 0.15)) + 0 * grid.points[:, 1]
    img = img * np.exp(-grid.points[:, 1] ** 2)
    t, db = sidelobe_profile(img, grid, (1.0, 0.0))
    assert db.max() == 0.0 and t[np.argmax(db)] == 0.0
    assert np.allclose(10 ** (db / 20), 10 ** (db[::-1] / 20), atol=1e-9)
    psl = peak_sidelobe(t, db)
    assert psl == pytest.approx(20 * np.log10(abs(np.sinc(1.5))), abs=1.0)
    with pytest.raises(AmbiguousPeakError):
        sidelobe_profile(np.ones(grid.n_pixels), grid, (1.0, 0.0))


def test_background_fraction():
    grid = make_image_grid(1.0, 0.1)
    v = np.zeros(grid.n_pixels)
    centre = int(np.argmin(np.linalg.norm(grid.points, axis=1)))
    v[centre] = 1.0
    assert background_fraction(v, grid, np.zeros((1, 3)), 0.3) == 0.0
    v[0] = 1.0
    assert background_fraction(v, grid, np.zeros((1, 3)), 0.3) == pytest.approx(0.5)


def test_config_validation(tmp_path):
    assert {"known-wall", "unknown-permittivity", "approximate-wall", "smoke"} <= set(packaged_names())
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"grid": {"bogus": 1}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"experiment": {"name": "nope"}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"outer": {"m0": [9.0]}})
    p = tmp_path / "c.toml"
    p.write_text('[experiment]\nname = "known-wall"\n[grid]\nspacing = 0.1\n')
    assert load_config(p)["grid.spacing"] == 0.1
    cfg = packaged_config("smoke")
    assert cfg.override(**{"noise.seed": 9})["noise.seed"] == 9


def test_cli_errors(capsys, tmp_path):
    assert main(["experiment", "--list"]) == 0
    assert "known-wall" in capsys.readouterr().out
    assert main(["experiment", "--out", str(tmp_path)]) == 1
    assert main(["reconstruct", "--config", str(tmp_path / "missing.toml")]) == 1
    assert "error" in capsys.readouterr().err


def test_smoke_experiment_outputs(smoke_runs):
    out = smoke_runs[0]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["varpro"]["m"][0] == pytest.approx(2.6, abs=0.15)
    acc = summary["varpro"]["accepted_objectives"]
    assert all(b < a for a, b in zip(acc, acc[1:]))
    for name in ("data.twsr", "recon_tw.twsr", "recon_tw.pgm", "outer_trace.csv", "rom/manifest.json"):
        assert (out / name).exists(), name
