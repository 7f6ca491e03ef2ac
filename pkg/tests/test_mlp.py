import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pirl import mlp
from pirl.errors import DivergenceError, UsageError


def fd_param_grad(net, x, g_out, h=1e-6):
    """Central differences of sum(g_out * net(x)) w.r.t. every parameter."""
    out = np.empty(net.n_params)
    for i in range(net.n_params):
        old = net.params[i]
        net.params[i] = old + h
        up = np.sum(g_out * net(x))
        net.params[i] = old - h
        dn = np.sum(g_out * net(x))
        net.params[i] = old
        out[i] = (up - dn) / (2 * h)
    return out


def fd_input_grad(net, x, g_out, h=1e-6):
    out = np.empty_like(x)
    for idx in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        out[idx] = (np.sum(g_out * net(xp)) - np.sum(g_out * net(xm))) / (2 * h)
    return out


def layer_slices(net):
    return [(o, o + nw + nb) for o, nw, nb in net._offsets()]


# the configurations the agent builds: actor/critic for both plants, with and
# without the integral observation
AGENT_CONFIGS = [
    ((3, 64, 64, 1), "tanh", (-3.0, 2.0)),
    ((5, 64, 64, 1), "tanh", (-3.0, 2.0)),
    ((6, 64, 64, 1), "tanh", (-0.0873, 0.0873)),
    ((8, 64, 64, 1), "tanh", (-0.0873, 0.0873)),
    ((4, 64, 64, 1), "identity", None),
    ((6, 64, 64, 1), "identity", None),
    ((7, 64, 64, 1), "identity", None),
    ((9, 64, 64, 1), "identity", None),
    ((2, 5, 3), "identity", None),
]


@pytest.mark.parametrize("hidden", ["relu", "tanh"])
@pytest.mark.parametrize("sizes, output, bounds", AGENT_CONFIGS)
def test_backward_matches_finite_differences(sizes, output, bounds, hidden):
    net = mlp.init(7, sizes, output, bounds, final_scale=0.3, hidden=hidden)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, sizes[0]))
    g_out = rng.normal(size=(4, sizes[-1]))
    y, cache = net.forward(x)
    grad, gx = net.backward(cache, g_out)
    fd = fd_param_grad(net, x, g_out)
    for a, b in layer_slices(net):
        err = np.linalg.norm(grad[a:b] - fd[a:b])
        assert err <= 1e-4 * np.linalg.norm(fd[a:b])
    fdx = fd_input_grad(net, x, g_out)
    assert np.linalg.norm(gx - fdx) <= 1e-4 * np.linalg.norm(fdx)


def test_init_deterministic_and_seed_dependent():
    a = mlp.init(3, (4, 8, 1))
    b = mlp.init(3, (4, 8, 1))
    c = mlp.init(4, (4, 8, 1))
    assert np.array_equal(a.params, b.params)
    assert not np.array_equal(a.params, c.params)


@pytest.mark.parametrize("sizes", [(3, 64, 64, 1), (2, 1), (5, 7, 3, 2)])
def test_parameter_count(sizes):
    expected = sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))
    assert mlp.init(0, sizes).n_params == expected


def test_invalid_layer_sizes():
    with pytest.raises(ValueError):
        mlp.MLP((3, 0, 1))
    with pytest.raises(ValueError):
        mlp.MLP((3,))


def test_forward_zero_weights_gives_zero():
    net = mlp.MLP((3, 4, 2))
    assert np.array_equal(net(np.ones((5, 3))), np.zeros((5, 2)))


def test_single_linear_layer_matches_matvec():
    net = mlp.init(1, (3, 2))
    x = np.array([0.5, -1.0, 2.0])
    assert np.allclose(net(x)[0], x @ net.W[0] + net.b[0], rtol=0, atol=1e-15)


def test_forward_shape_mismatch():
    with pytest.raises(ValueError):
        mlp.init(0, (3, 4, 1)).forward(np.ones((2, 4)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
def test_tanh_head_within_bounds(x):
    net = mlp.init(2, (3, 16, 1), "tanh", (-3.0, 2.0), final_scale=5.0)
    y = net(np.array(x))[0, 0]
    assert -3.0 <= y <= 2.0


def test_zero_output_gradient_gives_zero_parameter_gradient():
    net = mlp.init(0, (3, 8, 1))
    _, cache = net.forward(np.ones((2, 3)))
    grad, gx = net.backward(cache, np.zeros((2, 1)))
    assert not grad.any() and not gx.any()


def test_linear_gradient_is_input():
    net = mlp.init(0, (4, 1))
    x = np.array([[1.0, -2.0, 3.0, 0.5]])
    _, cache = net.forward(x)
    grad, _ = net.backward(cache, np.ones((1, 1)))
    assert np.array_equal(grad[:4], x[0]) and grad[4] == 1.0


def test_stale_cache_rejected():
    net = mlp.init(0, (2, 3, 1))
    _, cache = net.forward(np.ones((1, 2)))
    mlp.apply_gradients(mlp.Adam(net.n_params), net, np.ones(net.n_params))
    with pytest.raises(UsageError):
        net.backward(cache, np.ones((1, 1)))


def test_adam_zero_gradient_leaves_parameters():
    net = mlp.init(0, (2, 3, 1))
    before = net.params.copy()
    mlp.apply_gradients(mlp.Adam(net.n_params), net, np.zeros(net.n_params))
    assert np.array_equal(net.params, before)


def test_adam_descends_on_square():
    net = mlp.MLP((1, 1), params=[1.0, 0.0])
    opt = mlp.Adam(2, lr=0.1)
    mlp.apply_gradients(opt, net, np.array([2 * net.params[0], 0.0]))
    assert net.params[0] ** 2 < 1.0


def test_adam_matches_hand_stepped_scalar():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    net = mlp.MLP((1, 1), params=[1.0, 0.0])
    opt = mlp.Adam(2, lr=lr, beta1=b1, beta2=b2, eps=eps)
    w, m, v = 1.0, 0.0, 0.0
    for t in range(1, 4):
        g = 2 * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
        mlp.apply_gradients(opt, net, np.array([2 * net.params[0], 0.0]))
        assert net.params[0] == pytest.approx(w, rel=1e-14)


def test_adam_rejects_non_finite():
    net = mlp.init(0, (2, 1))
    with pytest.raises(DivergenceError):
        mlp.apply_gradients(mlp.Adam(net.n_params), net, np.array([np.nan, 0, 0]))


def test_soft_update():
    online = mlp.init(1, (2, 3, 1))
    target = mlp.init(2, (2, 3, 1))
    before = target.params.copy()
    mlp.soft_update(target, online, 0.0)
    assert np.array_equal(target.params, before)
    mlp.soft_update(target, online, 1.0)
    assert np.array_equal(target.params, online.params)
    a = mlp.MLP((1, 1), params=[0.0, 2.0])
    b = mlp.MLP((1, 1), params=[4.0, 6.0])
    mlp.soft_update(a, b, 0.5)
    assert list(a.params) == [2.0, 4.0]
    with pytest.raises(ValueError):
        mlp.soft_update(a, online, 0.5)


def test_soft_update_contracts_geometrically():
    online = mlp.init(1, (2, 3, 1))
    target = mlp.init(2, (2, 3, 1))
    d0 = np.linalg.norm(target.params - online.params)
    tau = 0.05
    for k in range(1, 30):
        mlp.soft_update(target, online, tau)
        d = np.linalg.norm(target.params - online.params)
        assert d == pytest.approx(d0 * (1 - tau) ** k, rel=1e-9)


@pytest.mark.parametrize("hidden", ["relu", "tanh"])
def test_checkpoint_round_trip_is_bitwise(tmp_path, hidden):
    net = mlp.init(5, (3, 8, 8, 1), "tanh", (-3.0, 2.0), hidden=hidden)
    net.params[0] = 1 / 3
    net.save(tmp_path / "ck")
    back = mlp.MLP.load(tmp_path / "ck")
    assert back.sizes == net.sizes and back.output == net.output and back.bounds == net.bounds
    assert back.hidden == hidden
    x = np.linspace(-2, 2, 9).reshape(3, 3)
    assert np.array_equal(back(x), net(x))
    assert np.array_equal(back.params, net.params)
    back.save(tmp_path / "ck2")
    assert (tmp_path / "ck").read_bytes() == (tmp_path / "ck2").read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    (tmp_path / "x").write_text("hello\n")
    with pytest.raises(ValueError):
        mlp.MLP.load(tmp_path / "x")


def test_tanh_hidden_matches_hand_forward():
    net = mlp.init(3, (2, 4, 1), hidden="tanh")
    x = np.array([[0.3, -1.2]])
    W0, b0 = net.params[:8].reshape(2, 4), net.params[8:12]
    W1, b1 = net.params[12:16].reshape(4, 1), net.params[16:]
    assert np.allclose(net(x), np.tanh(x @ W0 + b0) @ W1 + b1, rtol=1e-14)


def test_unknown_hidden_activation():
    with pytest.raises(ValueError):
        mlp.MLP((2, 3, 1), hidden="sigmoid")
