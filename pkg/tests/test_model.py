import math

import numpy as np
import numpy.testing as npt
import pytest

from kanrec.model import ModelConfig, build_model, kan_param_count, layer_widths

from oracles import central_difference, l1_entropy_loops, layer_forward_scalar, rel_err


def tiny(kind="kan", loss="mse", lam=0.0, layers=1, n_items=6, latent=3, seed=0, **kw):
    return build_model(ModelConfig(n_items=n_items, latent=latent, layers=layers, kind=kind, loss=loss, lam=lam, seed=seed, **kw))


def users(n, items, seed=0, p=0.5):
    return (np.random.default_rng(seed).random((n, items)) < p).astype(float)


def test_single_layer_widths():
    m = build_model(ModelConfig(n_items=2810, latent=512, layers=1))
    assert [(l.n_in, l.n_out) for l in m.encoder] == [(2810, 512)]
    assert [(l.n_in, l.n_out) for l in m.decoder] == [(512, 2810)]


def test_two_layer_widths():
    assert layer_widths(100, 16, 2) == [100, 58, 16]
    m = tiny(n_items=100, latent=16, layers=2)
    assert [(l.n_in, l.n_out) for l in m.encoder] == [(100, 58), (58, 16)]
    assert [(l.n_in, l.n_out) for l in m.decoder] == [(16, 58), (58, 100)]


@pytest.mark.parametrize("n_items,latent,layers,G", [(100, 16, 1, 2), (100, 16, 2, 3), (2810, 512, 1, 2), (300, 32, 3, 5)])
def test_mlp_parameter_count_matched(n_items, latent, layers, G):
    kan_cfg = ModelConfig(n_items=n_items, latent=latent, layers=layers, grids=G)
    mlp = build_model(ModelConfig(n_items=n_items, latent=latent, layers=layers, grids=G, kind="mlp"))
    assert kan_param_count(kan_cfg) == build_model(kan_cfg).n_params
    assert abs(mlp.n_params / kan_param_count(kan_cfg) - 1) < 0.05


def test_invalid_config():
    with pytest.raises(ValueError):
        build_model(ModelConfig(n_items=0))
    with pytest.raises(ValueError):
        build_model(ModelConfig(n_items=5, kind="rnn"))
    with pytest.raises(ValueError):
        build_model(ModelConfig(n_items=5, lam=-1))


def test_zero_decoder_gives_zero_scores():
    m = tiny()
    m.decoder[0].scales[...] = 0
    scores, _ = m.predict(np.zeros((2, 6)))
    npt.assert_array_equal(scores, 0)


def test_identical_users_identical_rows():
    m = tiny(layers=2, n_items=8, latent=2)
    U = np.tile(users(1, 8), (3, 1))
    scores, _ = m.predict(U)
    npt.assert_array_equal(scores[0], scores[1])
    npt.assert_array_equal(scores[1], scores[2])


def test_predict_is_layer_composition():
    m = tiny(layers=2, n_items=7, latent=2, seed=3)
    U = users(3, 7, seed=1)
    scores, _ = m.predict(U)
    h = U
    for layer in m.layers:
        h, _ = layer_forward_scalar(layer, h)
    npt.assert_allclose(scores, h, atol=1e-12)


def test_predict_shape_check():
    with pytest.raises(ValueError):
        tiny().predict(np.zeros((2, 5)))


def test_perfect_reconstruction_and_lambda_zero():
    m = tiny()
    U = users(4, 6)
    recon, _ = m.reconstruction(U, U.copy())
    assert recon == 0.0
    scores, recs = m.predict(U)
    total, recon, _ = m.loss(U, scores, recs)
    assert total == recon


@pytest.mark.parametrize("loss", ["mse", "bce"])
def test_loss_matches_scalar_loop(loss):
    lam = 0.05
    m = tiny(loss=loss, lam=lam, layers=2, n_items=5, latent=2, seed=2)
    U = users(3, 5, seed=4)
    scores, recs = m.predict(U)
    total, recon, reg = m.loss(U, scores, recs)

    h = U
    reg_ref = 0.0
    for layer in m.layers:
        h, l1 = layer_forward_scalar(layer, h)
        s, e = l1_entropy_loops(l1)
        reg_ref += s + e
    per_user = []
    for b in range(U.shape[0]):
        acc = 0.0
        for i in range(U.shape[1]):
            y, s = U[b, i], h[b, i]
            if loss == "mse":
                acc += (s - y) ** 2
            else:
                p = 1 / (1 + math.exp(-s))
                acc += -(y * math.log(p) + (1 - y) * math.log(1 - p))
        per_user.append(acc)
    recon_ref = sum(per_user) / len(per_user)
    assert recon == pytest.approx(recon_ref, rel=1e-12)
    assert reg == pytest.approx(reg_ref, rel=1e-12)
    assert total == recon + lam * reg


def test_mlp_has_no_regularizer():
    m = tiny(kind="mlp", lam=0.5)
    U = users(3, 6)
    total, recon, reg = m.loss(U, *m.predict(U))
    assert reg == 0.0 and total == recon


def test_loss_permutation_equivariant():
    m = tiny(lam=0.01, n_items=6)
    U = users(5, 6, seed=7)
    a = m.loss(U, *m.predict(U))
    perm = [3, 0, 4, 1, 2]
    b = m.loss(U[perm], *m.predict(U[perm]))
    npt.assert_allclose(a, b, rtol=1e-13)


def _check_grads(m, U, tol, kink=1e-6):
    grads, _ = m.gradients(U)
    f = lambda: m.loss(U, *m.predict(U))[0]
    worst = 0.0
    for name, arr in m.parameters().items():
        for idx in np.ndindex(arr.shape):
            fd = central_difference(f, arr, idx)
            worst = max(worst, rel_err(fd, grads[name][idx]))
    assert worst < tol
    return worst


@pytest.mark.parametrize("loss", ["mse", "bce"])
@pytest.mark.parametrize("kind", ["kan", "mlp"])
def test_gradients_lambda_zero(kind, loss):
    m = tiny(kind=kind, loss=loss, n_items=6, latent=3, seed=5)
    _check_grads(m, users(4, 6, seed=5), 1e-4)


@pytest.mark.parametrize("loss", ["mse", "bce"])
def test_gradients_with_regularization(loss):
    m = tiny(loss=loss, lam=0.01, n_items=6, latent=3, seed=6)
    _check_grads(m, users(4, 6, seed=6), 1e-3)


def test_zero_scales_zero_regularization_gradient_on_coeffs():
    m = tiny(lam=0.1)
    for layer in m.layers:
        layer.scales[...] = 0
    U = users(3, 6)
    grads, _ = m.gradients(U)
    for name, g in grads.items():
        if name.endswith("coeffs"):
            npt.assert_array_equal(g, 0)


def test_predict_deterministic():
    m = tiny(layers=2, n_items=9, latent=2)
    U = users(4, 9)
    npt.assert_array_equal(m.predict(U)[0], m.predict(U)[0])
