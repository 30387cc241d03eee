import math

import numpy as np
import numpy.testing as npt
import pytest

from kanrec.kan_layer import KanLayer, layer_entropy, layer_l1
from kanrec.spline import make_grid

from oracles import central_difference, l1_entropy_loops, layer_forward_scalar, rel_err


def random_layer(n_in, n_out, G=2, k=3, act="silu", seed=0):
    return KanLayer.init_he(n_in, n_out, make_grid(-1, 1, G, k), act, rng_seed=seed)


def test_init_is_deterministic_and_shaped():
    a = random_layer(7, 3, seed=11)
    b = random_layer(7, 3, seed=11)
    npt.assert_array_equal(a.coeffs, b.coeffs)
    npt.assert_array_equal(a.scales, b.scales)
    assert a.coeffs.shape == (3, 7, 5)
    assert a.scales.shape == (3, 7)


def test_init_scale_statistics():
    layer = random_layer(1024, 64, seed=1)
    target = math.sqrt(2 / 1024)
    assert abs(layer.scales.std() / target - 1) < 0.1
    assert abs(layer.coeffs.std() / (target / math.sqrt(5)) - 1) < 0.1


def test_zero_scales_give_zero_output():
    layer = random_layer(4, 3)
    layer.scales[...] = 0
    Y, _ = layer.forward(np.random.default_rng(0).normal(size=(5, 4)))
    npt.assert_array_equal(Y, 0.0)


def test_relu_identity_with_zero_spline():
    layer = random_layer(4, 3, act="relu")
    layer.coeffs[...] = 0
    layer.scales[...] = 1
    X = np.random.default_rng(0).uniform(0, 3, size=(6, 4))
    Y, _ = layer.forward(X)
    npt.assert_allclose(Y, np.repeat(X.sum(axis=1, keepdims=True), 3, axis=1))


@pytest.mark.parametrize("act", ["silu", "elu", "tanh", "relu"])
def test_forward_matches_scalar_loop(act):
    layer = random_layer(5, 3, G=3, act=act, seed=4)
    X = np.random.default_rng(1).uniform(-1.5, 1.5, size=(4, 5))
    Y, rec = layer.forward(X)
    Y_ref, l1_ref = layer_forward_scalar(layer, X)
    npt.assert_allclose(Y, Y_ref, atol=1e-12)
    npt.assert_allclose(rec.edge_outputs_l1, l1_ref, atol=1e-12)
    assert (rec.edge_outputs_l1 >= 0).all()


def test_shape_mismatch():
    layer = random_layer(5, 3)
    with pytest.raises(ValueError):
        layer.forward(np.zeros((2, 4)))
    _, rec = layer.forward(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        layer.backward(rec, np.zeros((2, 4)))


def test_zero_upstream_gives_zero_gradients():
    layer = random_layer(5, 3)
    _, rec = layer.forward(np.random.default_rng(0).normal(size=(3, 5)))
    dX, g = layer.backward(rec, np.zeros((3, 3)))
    npt.assert_array_equal(dX, 0)
    npt.assert_array_equal(g["scales"], 0)
    npt.assert_array_equal(g["coeffs"], 0)


def test_l1_and_entropy():
    layer = random_layer(2, 2)
    _, rec = layer.forward(np.zeros((1, 2)))
    rec.edge_outputs_l1 = np.full((2, 2), 0.3)
    assert layer_entropy(rec) == pytest.approx(math.log(4))
    assert layer_l1(rec) == pytest.approx(1.2)

    layer.scales[...] = 0
    _, rec = layer.forward(np.ones((3, 2)))
    assert layer_l1(rec) == 0.0
    assert layer_entropy(rec) == 0.0


def test_l1_entropy_match_double_loop():
    layer = random_layer(6, 4, seed=9)
    _, rec = layer.forward(np.random.default_rng(2).normal(size=(5, 6)))
    total, ent = l1_entropy_loops(rec.edge_outputs_l1)
    assert layer_l1(rec) == pytest.approx(total, rel=1e-13)
    assert layer_entropy(rec) == pytest.approx(ent, rel=1e-13)
    assert 0 <= layer_entropy(rec) <= math.log(24)


def test_batch_independence_and_permutation():
    layer = random_layer(5, 4, seed=3)
    X = np.random.default_rng(5).normal(size=(6, 5))
    Y, rec = layer.forward(X)
    rows = np.vstack([layer.forward(X[i : i + 1])[0] for i in range(6)])
    npt.assert_allclose(Y, rows, atol=1e-14)
    perm = np.random.default_rng(0).permutation(6)
    _, rec_p = layer.forward(X[perm])
    npt.assert_allclose(rec.edge_outputs_l1, rec_p.edge_outputs_l1, atol=1e-15)


def _loss(layer, X, W, edge_w):
    Y, rec = layer.forward(X)
    return float((W * Y).sum() + (edge_w * rec.edge_outputs_l1).sum())


@pytest.mark.parametrize("act", ["silu", "elu", "tanh", "relu"])
@pytest.mark.parametrize("seed", range(3))
def test_backward_matches_finite_differences(act, seed):
    rng = np.random.default_rng(seed)
    n_in, n_out, b = rng.integers(1, 9), rng.integers(1, 9), rng.integers(1, 5)
    layer = random_layer(n_in, n_out, G=int(rng.integers(1, 6)), act=act, seed=seed)
    X = rng.uniform(-0.95, 0.95, size=(b, n_in))
    X[np.abs(X) < 1e-3] = 0.5  # keep ReLU away from its kink
    W = rng.normal(size=(b, n_out))
    edge_w = rng.uniform(0, 1, size=(n_out, n_in))
    Y, rec = layer.forward(X)
    dX, grads = layer.backward(rec, W, edge_coef=edge_w)

    f = lambda: _loss(layer, X, W, edge_w)
    for name, arr in layer.params.items():
        for idx in np.ndindex(arr.shape):
            fd = central_difference(f, arr, idx)
            assert rel_err(fd, grads[name][idx], floor=1e-6) < 1e-4, (name, idx)
    for idx in np.ndindex(X.shape):
        fd = central_difference(f, X, idx)
        assert rel_err(fd, dX[idx], floor=1e-6) < 1e-4, ("x", idx)
