import numpy as np
import pytest

from mediasplat.errors import EmptyDataset, NonFiniteLoss, ShapeMismatch
from mediasplat.io import Dataset, load_dataset
from mediasplat.scene import Bounds, Scene, logit, sigmoid
from mediasplat.sim import make_dataset
from mediasplat.trainer import (AdamState, DensifyStats, TrainConfig, adam_step, densify_and_prune,
                                format_log, initial_state, train)


BOUNDS = Bounds([-2, -2, -1], [2, 2, 6])


def test_adam_zero_gradient():
    p = {"a": np.array([1.0, -2.0])}
    st = AdamState()
    adam_step(p, {"a": np.zeros(2)}, st, 0.1)
    np.testing.assert_array_equal(p["a"], [1.0, -2.0])
    assert st.step == 1


def test_adam_first_step_sign(rng):
    x = rng.normal(size=20)
    g = rng.normal(size=20) * 10 ** rng.uniform(-4, 4, 20)
    p = {"a": x.copy()}
    adam_step(p, {"a": g}, AdamState(), 0.01)
    np.testing.assert_allclose(p["a"] - x, -0.01 * np.sign(g), rtol=1e-9)


def test_adam_second_step_not_larger(rng):
    g = rng.normal(size=10)
    p = {"a": np.zeros(10)}
    st = AdamState()
    adam_step(p, {"a": g}, st, 0.01)
    first = p["a"].copy()
    adam_step(p, {"a": g}, st, 0.01)
    second = p["a"] - first
    # identical gradients: bias-corrected moments are again exactly g and |g|
    assert np.all(np.abs(second) <= np.abs(first) + 1e-6)


def test_adam_quaternion_renormalized(rng):
    q = rng.normal(size=(5, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    p = {"rotations": q}
    adam_step(p, {"rotations": rng.normal(size=(5, 4))}, AdamState(), 0.3)
    np.testing.assert_allclose(np.linalg.norm(p["rotations"], axis=1), 1.0)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adam_step({"a": np.zeros(3)}, {"a": np.zeros(4)}, AdamState(), 0.1)


def test_adam_remap():
    st = AdamState({"x": np.array([[1.0], [2.0], [3.0]])}, {"x": np.ones((3, 1))})
    st.remap("x", np.array([2, 0, -1]))
    np.testing.assert_array_equal(st.m["x"].ravel(), [3.0, 1.0, 0.0])


def small_scene(n, log_scale):
    s = Scene.empty(BOUNDS)
    for i in range(n):
        s = s.extend(Scene([[0.1 * i, 0, 3]], [[1, 0, 0, 0]], np.full((1, 3), log_scale), [3.0],
                           np.zeros((1, 16, 3)), BOUNDS))
    return s


def config(**kw):
    return TrainConfig(**{"split_scale_frac": 0.01, **kw})


def test_densify_no_stats_only_prunes(rng):
    s = small_scene(4, -3.0)
    s.opacity_logits[1] = float(logit(1e-3))
    out, src = densify_and_prune(s, DensifyStats.zeros(4), config(), rng, 1.0)
    assert len(out) == 3
    np.testing.assert_array_equal(src, [0, 2, 3])


def test_densify_clone(rng):
    s = small_scene(3, np.log(0.001))
    stats = DensifyStats.zeros(3)
    stats.grad_accum[1], stats.count[1] = 1.0, 2
    out, src = densify_and_prune(s, stats, config(), rng, 1.0)
    assert len(out) == 4
    np.testing.assert_array_equal(src, [0, 1, 2, 1])
    np.testing.assert_array_equal(out.positions[3], s.positions[1])


def test_densify_split(rng):
    s = small_scene(3, np.log(0.5))
    stats = DensifyStats.zeros(3)
    stats.grad_accum[2], stats.count[2] = 1.0, 1
    out, src = densify_and_prune(s, stats, config(), rng, 1.0)
    assert len(out) == 4
    np.testing.assert_array_equal(src, [0, 1, 2, 2])
    np.testing.assert_allclose(np.exp(out.log_scales[2:]), 0.5 / 1.6)
    assert not np.any(np.all(out.positions == s.positions[2], axis=1))
    assert np.all(stats.count == 0) and len(stats.count) == 4


def test_densify_respects_cap(rng):
    s = small_scene(5, np.log(0.001))
    stats = DensifyStats(np.arange(5.0), np.ones(5))
    out, src = densify_and_prune(s, stats, config(max_primitives=7), rng, 1.0)
    assert len(out) == 7
    np.testing.assert_array_equal(src[5:], [3, 4])


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(densify_interval=0)
    with pytest.raises(ValueError):
        TrainConfig(sh_degree=4)
    c = TrainConfig(steps=10, loss={"lambda_l1": 0.5})
    assert TrainConfig.from_dict(c.to_dict()) == c


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    make_dataset(root, seed=2, n_views=4, resolution=16)
    return load_dataset(root)


def test_zero_steps_is_init(tiny):
    cfg = TrainConfig(steps=0)
    res = train(tiny, cfg)
    scene, medium = initial_state(tiny, cfg)
    assert np.array_equal(res.checkpoint.scene.positions, scene.positions)
    assert np.array_equal(res.checkpoint.medium.c_med, medium.c_med)
    assert res.log == []


def tiny_config(**kw):
    base = dict(steps=40, densify_from=10, densify_interval=10, densify_until_frac=0.8,
                pdgc_step=15, opacity_reset_interval=30, eval_interval=20)
    base.update(kw)
    return TrainConfig(**base)


def test_train_deterministic_and_logged(tiny):
    a = train(tiny, tiny_config())
    b = train(tiny, tiny_config())
    assert format_log(a.log) == format_log(b.log)
    assert a.log[-1]["step"] == 40 and "test_psnr" in a.log[-1]
    for name in a.checkpoint.scene.PARAM_NAMES:
        assert np.array_equal(getattr(a.checkpoint.scene, name), getattr(b.checkpoint.scene, name))
    counts = [r["primitives"] for r in a.log]
    for prev, cur, rec in zip(counts, counts[1:], a.log[1:]):
        if cur != prev:
            assert "densified" in a.log[a.log.index(rec) - 1] or "pdgc_inserted" in a.log[a.log.index(rec) - 1]


def test_opacity_reset(tiny):
    seen = []

    def cb(rec):
        seen.append(rec["step"])

    train(tiny, tiny_config(steps=31, densify_from=100, pdgc_step=None, opacity_reset_interval=31), cb)
    assert seen == list(range(1, 32))
    # reset happens only before the last step; step 31 is the last one so opacities are untouched
    res2 = train(tiny, tiny_config(steps=30, densify_from=100, pdgc_step=None, opacity_reset_interval=29))
    assert np.all(sigmoid(res2.checkpoint.scene.opacity_logits) <= 0.2)


def test_loss_decreases(tiny):
    res = train(tiny, tiny_config(steps=120, pdgc_step=None, opacity_reset_interval=1000, densify_from=1000))
    first = np.mean([r["loss"] for r in res.log[:8]])
    last = np.mean([r["loss"] for r in res.log[-8:]])
    assert last < first


def test_empty_dataset(tiny):
    with pytest.raises(EmptyDataset):
        train(Dataset([v for v in tiny.views if v.split == "test"], tiny.bounds, tiny.points,
                      tiny.point_colors), TrainConfig(steps=1))


def test_non_finite_loss(tiny):
    views = [v for v in tiny.views]
    bad = Dataset([type(v)(v.id, v.camera, np.full_like(v.image, np.nan), v.split) for v in views],
                  tiny.bounds, tiny.points, tiny.point_colors)
    with pytest.raises(NonFiniteLoss) as e:
        train(bad, TrainConfig(steps=3))
    assert e.value.step == 1


def test_workers_bit_identical(tiny):
    a = train(tiny, tiny_config(steps=25, workers=1))
    b = train(tiny, tiny_config(steps=25, workers=3))
    assert format_log(a.log) == format_log(b.log)
