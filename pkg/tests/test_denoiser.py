from dataclasses import replace

import numpy as np
import pytest

from ha2ha.autodiff import NoRunningStatsError, ParamStore, Tensor
from ha2ha.denoiser import (
    AdamW,
    PairedPatchSet,
    PlateauSchedule,
    TrainConfig,
    TrainingDivergedError,
    UNetConfig,
    adamw_update,
    apply_transform,
    augment,
    build_pairs,
    denoise_ensemble,
    denoise_frame,
    denoise_frames,
    ha2ha_loss,
    init_unet,
    mae,
    param_count,
    plateau_schedule,
    recalibrate_batch_norm,
    shared_scale,
    tile_offsets,
    total_loss,
    train,
    unet_forward,
)
from ha2ha.pipeline import RfEnsemble

SMALL = UNetConfig(levels=2, base=4)


def _t(a):
    return Tensor(np.asarray(a, dtype=np.float64))


# model


def test_zero_input_zero_output():
    for zero_head in (True, False):
        cfg = replace(SMALL, zero_head=zero_head)
        p = init_unet(cfg, seed=1, dtype=np.float64)
        out = unet_forward(cfg, p, np.zeros((2, 1, 16, 16)), "train").data
        assert np.all(out == 0)


def test_output_shape_full_size():
    cfg = UNetConfig()
    p = init_unet(cfg, seed=0)
    x = np.random.default_rng(0).standard_normal((1, 1, 64, 64)).astype(np.float32)
    assert unet_forward(cfg, p, x, "train").shape == (1, 1, 64, 64)
    with pytest.raises(ValueError):
        unet_forward(cfg, p, np.zeros((1, 1, 40, 64), np.float32), "train")
    with pytest.raises(ValueError):
        unet_forward(cfg, p, x, "eval")


def test_param_count_hand_derived():
    # widths 16, 32, 64, 128, 256; per block two 3x3 convs (+bias) and two BNs
    blocks = [(1, 16), (16, 32), (32, 64), (64, 128), (128, 256), (384, 128), (192, 64), (96, 32), (48, 16)]
    n = sum(9 * i * o + o + 2 * o + 9 * o * o + o + 2 * o for i, o in blocks) + 16 + 1
    assert n == 1_965_281
    assert param_count(UNetConfig()) == n
    assert init_unet(UNetConfig()).count() == n
    assert init_unet(SMALL).count() == param_count(SMALL)


def test_zero_head_init():
    p = init_unet(SMALL, seed=0)
    assert np.all(p["head.w"].data == 0)
    q = init_unet(replace(SMALL, zero_head=False), seed=0)
    assert np.any(q["head.w"].data != 0)
    assert "head.w" in p.regularized and "enc0.bn1.gamma" not in p.regularized


def test_unet_config_validation():
    with pytest.raises(ValueError):
        UNetConfig(levels=0)
    with pytest.raises(ValueError):
        UNetConfig(slope=1.0)


# loss


def test_loss_perfect_cross_prediction():
    y = np.random.default_rng(0).standard_normal((1, 1, 4, 4))
    assert ha2ha_loss(_t(y), _t(y), _t(y), _t(y)).item() == 0.0


def test_loss_hand_value():
    z, o = np.zeros((2, 1, 4, 4)), np.ones((2, 1, 4, 4))
    assert ha2ha_loss(_t(z), _t(z), _t(o), _t(o), 0.5).item() == 0.8


def test_loss_lambda_zero_reduction():
    rng = np.random.default_rng(1)
    o1, o2, y1, y2 = (rng.standard_normal((1, 1, 4, 4)) for _ in range(4))
    ref = (np.mean(np.abs(o1 - y2)) + np.mean(np.abs(o2 - y1))) / 2
    assert np.isclose(ha2ha_loss(_t(o1), _t(o2), _t(y1), _t(y2), 0.0).item(), ref)
    with pytest.raises(ValueError):
        ha2ha_loss(_t(o1), _t(o2), _t(y1), _t(y2), -0.1)
    with pytest.raises(ValueError):
        mae(_t(o1), _t(np.zeros(3)))


def test_loss_consistency_gradient_reaches_both():
    o1 = Tensor(np.zeros((1, 1, 2, 2)), requires_grad=True)
    o2 = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    y = _t(np.full((1, 1, 2, 2), 0.5))
    ha2ha_loss(o1, o2, y, y, 0.5).backward()
    # d/do1 = (-1 + 0.5 * -1) / 2.5 / 4 per element
    np.testing.assert_allclose(o1.grad, -1.5 / 2.5 / 4)
    np.testing.assert_allclose(o2.grad, 1.5 / 2.5 / 4)


def test_total_loss():
    p = ParamStore(np.float64)
    p.add("w", np.array([2.0]), regularized=True)
    p.add("g", np.array([7.0]))
    h = _t(0.5)
    assert np.isclose(total_loss(h, p, 1e-5).item(), 0.50002, rtol=0, atol=1e-15)
    assert total_loss(h, p, 0.0).item() == 0.5
    p["w"].data[...] = 0
    assert total_loss(h, p, 1e-5).item() == 0.5


# optimizer and schedule


def test_adamw_zero_gradient_unchanged():
    th = np.array([1.0, -2.0])
    out, _, _ = adamw_update(th, np.zeros(2), np.zeros(2), np.zeros(2), 1, 1e-3, 0.5, 0.999)
    np.testing.assert_array_equal(out, th)


def test_adamw_hand_step():
    out, m, v = adamw_update(np.array(1.0), np.array(1.0), 0.0, 0.0, 1, 1e-4, 0.5, 0.999)
    assert out == 1 - 1e-4 * (1 / (1 + 1e-8))
    assert np.isclose(m, 0.5) and np.isclose(v, 0.001)


def test_adamw_decoupled_decay():
    th = np.array([3.0])
    out, _, _ = adamw_update(th, np.zeros(1), np.zeros(1), np.zeros(1), 1, 1e-2, 0.9, 0.999, wd=0.1)
    assert out[0] == 3.0 - 1e-2 * 0.1 * 3.0


def test_adamw_class_matches_function():
    p = ParamStore(np.float64)
    t = p.add("w", np.array([1.0, 2.0]))
    opt = AdamW(p, lr=1e-2, betas=(0.5, 0.999), weight_decay=0.01)
    th, m, v = t.data.copy(), np.zeros(2), np.zeros(2)
    for step in range(1, 4):
        g = np.array([0.3, -0.7]) * step
        t.grad = g.copy()
        opt.step()
        th, m, v = adamw_update(th, g, m, v, step, 1e-2, 0.5, 0.999, 0.01)
    np.testing.assert_allclose(t.data, th, rtol=1e-14)
    with pytest.raises(ValueError):
        adamw_update(th, th, m, v, 0, 1e-2, 0.5, 0.999)


def test_plateau_decreasing_constant_lr():
    assert plateau_schedule(np.linspace(1, 0.1, 40), 1e-4, patience=10) == 1e-4


def test_plateau_ten_flat_halves():
    assert plateau_schedule([1.0] * 10, 1e-4, patience=10) == 1e-4  # first epoch sets the reference
    assert plateau_schedule([1.0] * 11, 1e-4, patience=10) == 5e-5


def test_plateau_twenty_five_flat_two_halvings():
    assert plateau_schedule([1.0] * 26, 1e-4, patience=10) == 2.5e-5


def test_plateau_state_walk():
    s = PlateauSchedule(1.0, 0.5, 2)
    lrs = [s.step(x) for x in (3, 2, 2, 2, 1, 1, 1)]
    assert lrs == [1, 1, 1, 0.5, 0.5, 0.5, 0.25]
    with pytest.raises(ValueError):
        PlateauSchedule(1.0, patience=0)


# data


def _ens(shape, seed=0):
    return RfEnsemble(np.random.default_rng(seed).standard_normal(shape))


def test_tiling_arithmetic():
    assert len(tile_offsets(256, 256, 128, 128)) == 4
    # full-scale setting: 1280x1024 interpolated frames, 128 patches
    assert len(tile_offsets(1280, 1024, 128, 128)) == 80
    with pytest.raises(ValueError):
        tile_offsets(10, 10, 16, 16)


def test_build_pairs_counts_and_equal_inputs():
    y = _ens((4, 256, 256))
    ds = build_pairs(y, y, patch=128, frame_subsample=2, augment_seed=5)
    assert len(ds) == 8
    np.testing.assert_array_equal(ds.a, ds.b)
    assert ds.a.dtype == np.float32
    assert {p.frame for p in ds.provenance} == {0, 2}


def test_build_pairs_shared_scale():
    y1, y2 = _ens((1, 32, 32), 1), _ens((1, 32, 32), 2)
    ds = build_pairs(y1, y2, patch=16)
    s = shared_scale(y1.samples[0, :16, :16], y2.samples[0, :16, :16])
    np.testing.assert_allclose(ds.a[0] * s, y1.samples[0, :16, :16], rtol=1e-6)
    np.testing.assert_allclose(ds.b[0] * s, y2.samples[0, :16, :16], rtol=1e-6)
    assert shared_scale(np.zeros(4)) == 1e-12
    with pytest.raises(ValueError):
        build_pairs(y1, _ens((1, 32, 16)), patch=16)


def test_augment_contracts():
    a = np.arange(16.0).reshape(4, 4)
    b = a + 100
    assert np.array_equal(apply_transform(a, "identity"), a)
    assert np.array_equal(apply_transform(apply_transform(a, "hflip"), "hflip"), a)
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(40):
        ta, tb, name = augment((a, b), rng, allow_rot90=True)
        seen.add(name)
        # marked corner (value 0 in a, 100 in b) lands in the same place
        assert np.argwhere(ta == 0).tolist() == np.argwhere(tb == 100).tolist()
        np.testing.assert_array_equal(ta, apply_transform(a, name))
    assert len(seen) == 6
    with pytest.raises(ValueError):
        augment((np.zeros((2, 4)), np.zeros((2, 4))), rng, allow_rot90=True)
    with pytest.raises(ValueError):
        apply_transform(a, "shear")


def test_paired_set_validation():
    with pytest.raises(ValueError):
        PairedPatchSet(np.zeros((2, 4, 4)), np.zeros((2, 4, 5)), np.ones(2))
    with pytest.raises(ValueError):
        PairedPatchSet(np.zeros((2, 4, 4)), np.zeros((2, 4, 4)), np.array([1.0, 0.0]))


# training and inference

TINY = TrainConfig(batch_size=4, lr=1e-2, max_epochs=6, patch=16, seed=3, plateau_patience=10)


def _constant_set(c=0.7, n=8):
    a = np.full((n, 16, 16), c, np.float32)
    return PairedPatchSet(a, a.copy(), np.ones(n))


def test_train_constant_target():
    _, hist = train(_constant_set(), SMALL, TINY)
    losses = [h.loss for h in hist]
    assert losses[-1] < losses[0]
    assert all(b <= a * 1.05 for a, b in zip(losses[1:], losses[2:]))


def test_train_deterministic():
    ds = PairedPatchSet(*(np.random.default_rng(i).standard_normal((8, 16, 16)).astype(np.float32) for i in (1, 2)), np.ones(8))
    cfg = replace(TINY, max_epochs=2)
    p1, h1 = train(ds, SMALL, cfg)
    p2, h2 = train(ds, SMALL, cfg)
    assert h1 == h2
    assert p1.to_bytes() == p2.to_bytes()


def test_train_divergence_detected():
    a = np.full((4, 16, 16), np.nan, np.float32)
    with pytest.raises(TrainingDivergedError):
        train(PairedPatchSet(a, a, np.ones(4)), SMALL, replace(TINY, max_epochs=1))
    with pytest.raises(ValueError):
        train(PairedPatchSet(np.zeros((0, 16, 16)), np.zeros((0, 16, 16)), np.ones(0)), SMALL, TINY)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lambda_c=1.5)
    with pytest.raises(ValueError):
        TrainConfig(beta1=1.0)
    full = TrainConfig.full_scale()
    assert (full.batch_size, full.patch, full.lr, full.beta1) == (256, 128, 1e-4, 0.5)


def test_recalibrate_batch_norm_averages_batch_statistics(monkeypatch):
    import ha2ha.denoiser.model as model_mod

    rng = np.random.default_rng(8)
    ds = PairedPatchSet(rng.standard_normal((10, 16, 16)), rng.standard_normal((10, 16, 16)) * 2 + 0.3, np.ones(10))
    params, _ = train(ds, SMALL, replace(TINY, max_epochs=1, precise_bn=False))
    weights = {k: v.data.copy() for k, v in params}
    seen = {}
    real_bn = model_mod.batch_norm

    def recording_bn(x, gamma, beta, buffers, prefix, training):
        d = np.asarray(x.data, dtype=np.float64)
        n = d.shape[0] * d.shape[2] * d.shape[3]
        seen.setdefault(prefix, []).append((d.mean(axis=(0, 2, 3)), d.var(axis=(0, 2, 3)) * n / (n - 1)))
        return real_bn(x, gamma, beta, buffers, prefix, training)

    monkeypatch.setattr(model_mod, "batch_norm", recording_bn)
    recalibrate_batch_norm(SMALL, params, ds, batch_size=4)  # batches of 4, 4, 2 pairs
    assert all(len(v) == 3 for v in seen.values())
    for prefix, stats in seen.items():
        np.testing.assert_allclose(params.buffers[prefix + "running_mean"], np.mean([m for m, _ in stats], 0), rtol=1e-4, atol=1e-6)
        np.testing.assert_allclose(params.buffers[prefix + "running_var"], np.mean([v for _, v in stats], 0), rtol=1e-4)
    for k, v in params:
        np.testing.assert_array_equal(v.data, weights[k])


def test_precise_bn_flag_changes_only_buffers():
    ds = PairedPatchSet(*(np.random.default_rng(i).standard_normal((8, 16, 16)).astype(np.float32) for i in (6, 7)), np.ones(8))
    p1, h1 = train(ds, SMALL, replace(TINY, max_epochs=1, precise_bn=True))
    p0, h0 = train(ds, SMALL, replace(TINY, max_epochs=1, precise_bn=False))
    assert h1 == h0
    for (k1, v1), (k0, v0) in zip(p1, p0):
        np.testing.assert_array_equal(v1.data, v0.data)
    assert any(not np.allclose(p1.buffers[k], p0.buffers[k]) for k in p1.buffers if k.endswith("running_var"))


@pytest.fixture(scope="module")
def tiny_model():
    ds = PairedPatchSet(*(np.random.default_rng(i).standard_normal((8, 16, 16)).astype(np.float32) for i in (4, 5)), np.ones(8))
    params, _ = train(ds, SMALL, replace(TINY, max_epochs=1))
    return params


def test_infer_needs_training():
    with pytest.raises(NoRunningStatsError):
        denoise_frame(SMALL, init_unet(SMALL), np.zeros((16, 16)))


def test_denoise_zero_frame(tiny_model):
    out = denoise_frame(SMALL, tiny_model, np.zeros((16, 16)))
    ref = unet_forward(SMALL, tiny_model, np.zeros((1, 1, 16, 16), np.float32), "infer").data[0, 0]
    assert np.max(np.abs(out)) <= np.max(np.abs(ref)) + 1e-6


@pytest.mark.parametrize("shape", [(16, 16), (17, 23), (31, 16), (40, 57)])
def test_denoise_shape_contract(tiny_model, shape):
    frame = np.random.default_rng(0).standard_normal(shape)
    assert denoise_frame(SMALL, tiny_model, frame).shape == shape


def test_denoise_ensemble_framewise(tiny_model):
    ens = _ens((3, 20, 24))
    out = denoise_ensemble(SMALL, tiny_model, ens, batch=2)
    assert out.shape == ens.shape
    np.testing.assert_allclose(out.samples[1], denoise_frame(SMALL, tiny_model, ens.samples[1]), rtol=1e-5, atol=1e-6)
    np.testing.assert_array_equal(denoise_frames(SMALL, tiny_model, ens.samples[0]), denoise_frame(SMALL, tiny_model, ens.samples[0]))
