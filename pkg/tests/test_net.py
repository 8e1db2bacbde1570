import numpy as np
import pytest

from haze_lab.dcp import DcpParams, estimate_airlight
from haze_lab.loss import build_loss_context, energy
from haze_lab.net import layers
from haze_lab.net.adam import Adam
from haze_lab.net.model import (CanConfig, backward, buffer_shapes, forward, init_model,
                                parameter_shapes, predict_transmission, receptive_field,
                                update_running_stats)
from haze_lab.net.predict import predict_and_dehaze
from haze_lab.net.train import NonFiniteLossError, TrainConfig, batch_loss, corpus_loss, train
from haze_lab.synthetic import natural_scene

DCP3 = DcpParams(3)


def _zero_model(cfg, out_bias=1.0):
    model = init_model(cfg, np.random.default_rng(0))
    for k, v in model.params.items():
        if k.endswith(".weight") or k.endswith(".bias") or k.endswith(".beta"):
            v[...] = 0.0
    model.params["out.bias"][...] = out_bias
    return model


def test_config_validation():
    with pytest.raises(ValueError):
        CanConfig(blocks=0, dilations=())
    with pytest.raises(ValueError):
        CanConfig(kernel=2)
    with pytest.raises(ValueError):
        CanConfig(blocks=2, dilations=(1,))
    with pytest.raises(ValueError):
        CanConfig(blocks=1, dilations=(0,))
    assert CanConfig.with_blocks(3, 4).dilations == (1, 2, 4)


def test_parameter_count_is_function_of_config():
    a, b = CanConfig.with_blocks(2, 8), CanConfig.with_blocks(2, 8)
    assert parameter_shapes(a) == parameter_shapes(b)
    count = sum(np.prod(s) for s in parameter_shapes(a).values())
    # lift 3*8*9+8+16, 6 block convs of 8*8*9+8+16, out 8+1
    assert count == (216 + 24) + 6 * (576 + 24) + 9
    assert len(buffer_shapes(a)) == 2 * 7


@pytest.mark.parametrize("shape", [(1, 3, 5, 7), (2, 3, 12, 9)])
def test_output_resolution(rng, shape):
    model = init_model(CanConfig.with_blocks(2, 4), rng)
    t, _ = forward(model, rng.random(shape), train=True)
    assert t.shape == (shape[0],) + shape[2:]


def test_forward_rejects_bad_batch(rng):
    model = init_model(CanConfig.with_blocks(1, 2), rng)
    with pytest.raises(ValueError):
        forward(model, rng.random((3, 5, 5)))
    with pytest.raises(ValueError):
        forward(model, rng.random((1, 4, 5, 5)))


def test_zero_weights_give_output_bias(rng):
    model = _zero_model(CanConfig.with_blocks(2, 4), out_bias=0.7)
    t = predict_transmission(model, rng.random((9, 8, 3)))
    assert np.array_equal(t, np.full((9, 8), 0.7))


def test_receptive_field_formula():
    assert receptive_field(CanConfig()) == 153
    assert receptive_field(CanConfig.with_blocks(1, 2)) == 1 + 2 + (2 + 2 + 2)


def test_receptive_field_by_perturbation():
    cfg = CanConfig(width=2)
    model = init_model(cfg, np.random.default_rng(1))
    for k, v in model.params.items():
        if k.endswith(".weight"):
            v[...] = 0.1  # positive everywhere so no contribution can cancel
        elif k.endswith(".bias") or k.endswith(".beta"):
            v[...] = 0.0
    size, c = 161, 80
    base = np.zeros((size, size, 3))
    bumped = base.copy()
    bumped[c, c] = 1.0
    diff = predict_transmission(model, bumped) - predict_transmission(model, base)
    ys, xs = np.nonzero(diff)
    rf = receptive_field(cfg)
    assert ys.max() - ys.min() + 1 == rf
    assert xs.max() - xs.min() + 1 == rf
    assert ys.min() == c - rf // 2 and xs.max() == c + rf // 2


def test_conv_matches_direct_loops(rng):
    x = rng.random((1, 2, 6, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    d = 2
    y, _ = layers.conv_forward(x, w, b, d)
    pad = np.pad(x, ((0, 0), (0, 0), (d, d), (d, d)))
    ref = np.empty((1, 3, 6, 5))
    for o in range(3):
        for i in range(6):
            for j in range(5):
                acc = b[o]
                for ci in range(2):
                    for ky in range(3):
                        for kx in range(3):
                            acc += w[o, ci, ky, kx] * pad[0, ci, i + ky * d, j + kx * d]
                ref[0, o, i, j] = acc
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_bn_inference_is_affine(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    g, b = rng.random(3) + 0.5, rng.normal(size=3)
    rm, rv = rng.normal(size=3), rng.random(3) + 0.1
    y, _ = layers.bn_forward(x, g, b, rm, rv, train=False)
    ref = (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5)
    np.testing.assert_allclose(y, ref * g[None, :, None, None] + b[None, :, None, None], atol=1e-12)


def _tiny_problem(rng):
    cfg = CanConfig.with_blocks(1, 2)
    model = init_model(cfg, rng)
    for k in model.params:
        if k.endswith(".bias") or k.endswith(".beta") or k.endswith(".gamma"):
            model.params[k] = model.params[k] + rng.normal(0, 0.1, model.params[k].shape)
    imgs = [rng.random((6, 6, 3)) for _ in range(2)]
    ctxs = [build_loss_context(im, DCP3) for im in imgs]
    batch = np.stack([im.transpose(2, 0, 1) for im in imgs])
    return model, batch, ctxs


def _analytic(model, batch, ctxs):
    from haze_lab.loss import energy_gradient
    _, _, t, cache = batch_loss(model, batch, ctxs)
    up = np.stack([energy_gradient(c, ti) for c, ti in zip(ctxs, t)]) / len(ctxs)
    return backward(model, cache, up)


def test_parameter_gradients_match_finite_differences(rng):
    model, batch, ctxs = _tiny_problem(rng)
    grads = _analytic(model, batch, ctxs)
    h = 1e-3
    worst = 0.0
    for name, p in model.params.items():
        for k in range(p.size):
            old = p.flat[k]
            p.flat[k] = old + h
            lp = batch_loss(model, batch, ctxs)[0]
            p.flat[k] = old - h
            lm = batch_loss(model, batch, ctxs)[0]
            p.flat[k] = old
            num = (lp - lm) / (2 * h)
            a = grads[name].flat[k]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-6))
    assert worst <= 1e-3


def test_backward_linear_and_zero(rng):
    model, batch, _ = _tiny_problem(rng)
    t, cache = forward(model, batch, train=True)
    up = rng.normal(size=t.shape)
    g1 = backward(model, cache, up)
    g2 = backward(model, cache, 2 * up)
    g0 = backward(model, cache, np.zeros_like(up))
    for k in g1:
        np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-14)
        assert not np.any(g0[k])


def test_backward_needs_cache(rng):
    model = init_model(CanConfig.with_blocks(1, 2), rng)
    with pytest.raises(RuntimeError):
        backward(model, {}, np.zeros((1, 4, 4)))


def test_inference_forward_deterministic(rng):
    model = init_model(CanConfig.with_blocks(2, 4), rng)
    img = rng.random((10, 10, 3))
    assert np.array_equal(predict_transmission(model, img), predict_transmission(model, img))


def test_running_stats_update(rng):
    model = init_model(CanConfig.with_blocks(1, 2), rng)
    _, cache = forward(model, rng.random((2, 3, 5, 5)), train=True)
    mean = cache["lift"][1][3]
    update_running_stats(model, cache)
    np.testing.assert_allclose(model.buffers["lift.bn.running_mean"], 0.01 * mean)
    assert np.all(model.buffers["lift.bn.running_var"] >= 0)


def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    opt = Adam(p)
    opt.step(p, {"w": np.array([0.5, -4.0, 0.0])}, lr=0.1)
    np.testing.assert_allclose(p["w"], [0.9, -1.9, 3.0], atol=1e-7)


def test_train_config_schedule():
    cfg = TrainConfig(lr=1.0, lr_decay=0.5, decay_epochs=3)
    assert [cfg.lr_at(e) for e in range(7)] == [1, 1, 1, 0.5, 0.5, 0.5, 0.25]
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_decay=0)


def test_lr_zero_keeps_parameters(rng):
    img = natural_scene(rng, size=16).hazy
    cfg = CanConfig.with_blocks(1, 2)
    res = train([img], cfg, TrainConfig(lr=0.0, epochs=1, seed=3), DCP3)
    init = init_model(cfg, np.random.default_rng(3))
    for k in init.params:
        assert np.array_equal(res.model.params[k], init.params[k])
    init_loss = batch_loss(init, img.transpose(2, 0, 1)[None],
                           [build_loss_context(img, DCP3)])[0]
    assert res.epochs[0].train_loss == init_loss


def test_training_leaves_contexts_untouched(rng):
    imgs = [natural_scene(rng, size=16).hazy for _ in range(2)]
    before = [build_loss_context(im, DCP3) for im in imgs]
    copies = [(c.weights.weights.copy(), c.coarse.copy()) for c in before]
    train(imgs, CanConfig.with_blocks(1, 2), TrainConfig(lr=1e-2, epochs=2, batch_size=2), DCP3)
    corpus_loss(init_model(CanConfig.with_blocks(1, 2), rng), imgs, DCP3, contexts=before)
    for c, (w, t) in zip(before, copies):
        assert np.array_equal(c.weights.weights, w) and np.array_equal(c.coarse, t)


def test_train_is_deterministic(rng):
    imgs = [natural_scene(rng, size=16).hazy for _ in range(3)]
    cfg = CanConfig.with_blocks(1, 3)
    tc = TrainConfig(lr=1e-2, epochs=3, batch_size=2, seed=7)
    a, b = train(imgs, cfg, tc, DCP3), train(imgs, cfg, tc, DCP3)
    assert a.step_losses == b.step_losses
    assert [e.to_line() for e in a.epochs] == [e.to_line() for e in b.epochs]
    for k in a.model.params:
        assert np.array_equal(a.model.params[k], b.model.params[k])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_max_steps_and_errors(rng):
    imgs = [natural_scene(rng, size=16).hazy for _ in range(4)]
    res = train(imgs, CanConfig.with_blocks(1, 2),
                TrainConfig(lr=1e-3, epochs=10, batch_size=1, max_steps=6), DCP3)
    assert len(res.step_losses) == 6
    with pytest.raises(ValueError):
        train([], CanConfig.with_blocks(1, 2))
    with pytest.raises(NonFiniteLossError, match="bad"):
        train([imgs[0]], CanConfig.with_blocks(1, 2), TrainConfig(lr=1e300, epochs=3), DCP3,
              names=["bad"])


def test_identity_model_dehaze_returns_input(rng):
    img = rng.random((12, 12, 3))
    model = _zero_model(CanConfig.with_blocks(1, 2), out_bias=1.0)
    assert np.array_equal(predict_and_dehaze(model, img, DCP3), img)


def test_dehaze_finite_for_any_output(rng):
    img = rng.random((8, 8, 3))
    out = predict_and_dehaze(lambda im: np.full(im.shape[:2], -5.0), img, DCP3)
    a = estimate_airlight(img, 3)
    np.testing.assert_allclose(out, (img - a) / 0.1 + a)


def test_training_on_one_image_beats_coarse(rng):
    img = natural_scene(rng, size=24).hazy
    ctx = build_loss_context(img, DCP3)
    res = train([img], CanConfig.with_blocks(2, 6),
                TrainConfig(lr=1e-2, epochs=150, batch_size=1, seed=0), DCP3)
    learned = energy(ctx, predict_transmission(res.model, img))
    assert learned <= energy(ctx, ctx.coarse)
