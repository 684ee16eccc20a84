import numpy as np
import pytest
from scipy.stats import spearmanr

from mediasplat import io
from mediasplat.errors import IoFailure, ShapeMismatch
from mediasplat.render import render_vanilla
from mediasplat.scene import project_scene
from mediasplat.sim import (LEVEL_SCALE, MediumPreset, blend_presets, camera_path, degrade, make_dataset,
                            make_toy_scene, preset, restore_analytic)


def test_presets_ordered():
    for name in ("fog", "water"):
        e, m, h = (preset(name, lvl) for lvl in ("easy", "medium", "hard"))
        for f in ("sigma_att", "sigma_bs"):
            assert np.all(np.array(getattr(e, f)) <= getattr(m, f))
            assert np.all(np.array(getattr(m, f)) <= getattr(h, f))
    w = preset("water", "medium")
    np.testing.assert_allclose(w.sigma_att, np.array([0.45, 0.15, 0.10]) * LEVEL_SCALE["medium"])
    with pytest.raises(KeyError):
        preset("lava")


def test_preset_dict_round_trip():
    p = preset("water", "hard")
    assert MediumPreset.from_dict(p.as_dict()) == p


def test_degrade_examples(rng):
    clean = rng.uniform(0, 1, (4, 4, 3))
    z = rng.uniform(1, 9, (4, 4))
    np.testing.assert_array_equal(degrade(clean, z, preset("clear")), clean)
    far = degrade(clean, np.full((4, 4), 1e6), preset("fog", "easy"))
    np.testing.assert_allclose(far, 0.7, atol=1e-6)
    s = np.log(2.0)
    p = MediumPreset("t", "x", (0.8,) * 3, (s,) * 3, (s,) * 3)
    np.testing.assert_allclose(degrade(np.ones((1, 1, 3)), np.ones((1, 1)), p), 0.9)
    with pytest.raises(ShapeMismatch):
        degrade(clean, z[:2], p)


def test_degrade_monotone_toward_medium():
    p = preset("water", "hard")
    z = np.linspace(0.5, 10, 20)[None, :]
    dark = degrade(np.zeros((1, 20, 3)), z, p)
    bright = degrade(np.ones((1, 20, 3)), z, p)
    assert np.all(np.diff(dark[0], axis=0) >= 0)
    assert np.all(np.diff(bright[0], axis=0) <= 0)


def test_analytic_inverse(rng):
    p = preset("water", "medium")
    clean = rng.uniform(0.05, 0.95, (8, 8, 3))
    z = rng.uniform(1, 10, (8, 8))
    assert np.max(np.abs(restore_analytic(degrade(clean, z, p), z, p) - clean)) < 1e-6


def test_blend_endpoints():
    a, b = preset("water", "medium"), preset("fog", "medium")
    assert blend_presets(a, b, 0).c_med == a.c_med
    np.testing.assert_allclose(blend_presets(a, b, 1).sigma_bs, b.sigma_bs)


def test_toy_scene_contract():
    s1, b1 = make_toy_scene(3)
    s2, _ = make_toy_scene(3)
    for k in s1.PARAM_NAMES:
        assert np.array_equal(getattr(s1, k), getattr(s2, k))
    assert 200 <= len(s1) <= 2000
    assert np.all((s1.color_sh[:, 0] != 0))
    for cam in camera_path(16)[0]:
        d = project_scene(cam, s1).depth
        assert d.min() >= 1 and d.max() <= 10
        out = render_vanilla(s1, cam)
        assert np.mean(out.transmittance < 0.1) >= 0.8


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    make_dataset(root, seed=1, n_views=4, resolution=32)
    return root


def test_dataset_files(dataset_dir):
    man = io.read_manifest(dataset_dir / "manifest.json")
    assert len(man.views) == 4 and man.preset["name"] == "water"
    assert {v.split for v in man.views} == {"train", "test"}
    ds = io.load_dataset(dataset_dir)
    assert ds.points is not None and len(ds.points) > 0
    scene, _ = make_toy_scene(1)
    for v in ds.views:
        assert (dataset_dir / f"views/{v.id}_degraded.png").exists()
        covered = render_vanilla(scene, v.camera).transmittance < 0.5
        rho = spearmanr(v.depth[covered], v.pseudo_depth[covered]).correlation
        assert rho > 0.99
    assert io.read_manifest(dataset_dir / "manifest.json").to_json() == man.to_json()


def test_dataset_deterministic(dataset_dir, tmp_path):
    make_dataset(tmp_path, seed=1, n_views=4, resolution=32)
    for f in sorted(p.relative_to(dataset_dir) for p in dataset_dir.rglob("*") if p.is_file()):
        assert (dataset_dir / f).read_bytes() == (tmp_path / f).read_bytes(), f


def test_clear_preset_degraded_equals_clean(tmp_path):
    make_dataset(tmp_path, seed=0, medium=preset("clear"), n_views=2, resolution=16)
    for vid in ("000", "001"):
        assert (tmp_path / f"views/{vid}_degraded.pfm").read_bytes() == \
            (tmp_path / f"views/{vid}_clean.pfm").read_bytes()


def test_omit_near(tmp_path):
    make_dataset(tmp_path, seed=0, n_views=2, resolution=16, omit_near=True)
    pts, _ = io.read_ply(tmp_path / "points.ply")
    assert pts[:, 2].min() > 3.3


def test_bad_inputs(tmp_path):
    with pytest.raises(ValueError):
        make_dataset(tmp_path, n_views=1)
    (tmp_path / "file").write_text("x")
    with pytest.raises(IoFailure):
        make_dataset(tmp_path / "file" / "sub", n_views=2, resolution=8)
