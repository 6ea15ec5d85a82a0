import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from codmtl import nn
from codmtl.errors import ConfigError, DataError
from oracles import dense_forward, numeric_grad


def test_init_deterministic_and_bounded():
    spec = nn.NetSpec.mlp([2, 3], seed=7)
    a, b = nn.init_params(spec), nn.init_params(spec)
    np.testing.assert_array_equal(a.weights[0], b.weights[0])
    assert all((bb == 0).all() for bb in a.biases)
    assert np.abs(a.weights[0]).max() <= np.sqrt(6 / 5)


def test_spec_validation():
    with pytest.raises(ConfigError):
        nn.NetSpec((3,), ())
    with pytest.raises(ConfigError):
        nn.NetSpec((3, 2), ("tanh",))


def test_forward_identity_and_relu():
    spec = nn.NetSpec((3, 3), ("identity",))
    p = nn.NetParams([np.eye(3)], [np.zeros(3)])
    np.testing.assert_array_equal(nn.forward(p, spec, np.array([1.0, -2.0, 3.0]))[-1], [1.0, -2.0, 3.0])
    spec = nn.NetSpec((2, 2), ("relu",))
    p = nn.NetParams([np.eye(2)], [np.zeros(2)])
    np.testing.assert_array_equal(nn.forward(p, spec, np.array([-1.0, 2.0]))[-1], [0.0, 2.0])


def test_forward_matches_loop_oracle_and_sparse():
    rng = np.random.default_rng(0)
    spec = nn.NetSpec((5, 4, 3, 2), ("relu", "sigmoid", "identity"))
    p = nn.init_params(spec, rng)
    for b in p.biases:
        b[:] = rng.normal(size=b.shape)
    X = rng.normal(size=(6, 5))
    ref = dense_forward(p.weights, p.biases, spec.activations, X)
    np.testing.assert_allclose(nn.forward(p, spec, X)[-1], ref, atol=1e-12)
    np.testing.assert_allclose(nn.forward(p, spec, sp.csr_matrix(X))[-1], ref, atol=1e-12)


def test_forward_width_check():
    spec = nn.NetSpec.mlp([3, 2])
    with pytest.raises(DataError):
        nn.forward(nn.init_params(spec), spec, np.zeros(4))


def test_linear_layer_closed_form_grad():
    spec = nn.NetSpec((3, 2), ("identity",))
    p = nn.init_params(spec, np.random.default_rng(1))
    x = np.array([1.0, 2.0, -1.0])
    u = np.array([0.5, -2.0])
    g = nn.grad(p, spec, x, u)
    np.testing.assert_allclose(g.weights[0], np.outer(u, x))
    np.testing.assert_allclose(g.biases[0], u)
    np.testing.assert_allclose(g.input, p.weights[0].T @ u)
    z = nn.grad(p, spec, x, np.zeros(2))
    assert all((a == 0).all() for a in z.arrays()) and (z.input == 0).all()


def _relerr(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


LOSSES = ("cross_entropy", "soft_target", "mse")


def _loss_setup(rng, kind):
    depth = int(rng.integers(1, 4))
    sizes = [int(rng.integers(1, 5))] + [int(rng.integers(1, 5)) for _ in range(depth)]
    acts = ["sigmoid" if rng.random() < 0.3 else "relu" for _ in range(depth - 1)]
    acts.append("sigmoid" if kind == "cross_entropy" else "identity")
    spec = nn.NetSpec(tuple(sizes), tuple(acts))
    p = nn.init_params(spec, rng)
    for b in p.biases:
        b[:] = 0.1 * rng.normal(size=b.shape)
    n = int(rng.integers(1, 6))
    X = rng.normal(size=(n, sizes[0]))
    if kind == "mse":
        T = rng.normal(size=(n, sizes[-1]))
    else:
        T = rng.random(size=(n, sizes[-1]))
        if kind == "cross_entropy":
            T = (T > 0.5).astype(float)

    def loss(out):
        if kind == "cross_entropy":
            return nn.cross_entropy(out, T)
        if kind == "soft_target":
            return nn.soft_target_cross_entropy(out, T)
        return nn.mse(out, T)

    return spec, p, X, loss


def _grad_check(seed: int, kind: str) -> float:
    """Worst relative error between analytic and finite-difference gradients."""
    rng = np.random.default_rng(seed)
    spec, p, X, loss = _loss_setup(rng, kind)
    outs = nn.forward(p, spec, X)
    _, up = loss(outs[-1])
    g = nn.grad(p, spec, X, up, outputs=outs)

    def f():
        return loss(nn.forward(p, spec, X)[-1])[0]

    worst = 0.0
    for a, ga in zip(p.arrays(), g.arrays()):
        worst = max(worst, _relerr(ga, numeric_grad(f, a)))
    worst = max(worst, _relerr(g.input, numeric_grad(f, X)))
    return worst


def _has_kink(seed: int, kind: str) -> bool:
    # finite differences are meaningless within h of a relu kink
    rng = np.random.default_rng(seed)
    spec, p, X, _ = _loss_setup(rng, kind)
    h = X
    for W, b, act in zip(p.weights, p.biases, spec.activations):
        z = h @ W.T + b
        if act == "relu" and (np.abs(z) < 1e-4).any():
            return True
        h = nn._activate(act, z)
    return False


@pytest.mark.parametrize("kind", LOSSES)
def test_gradient_check(kind):
    checked = 0
    for seed in range(200):
        if _has_kink(seed, kind):
            continue
        assert _grad_check(seed, kind) <= 1e-4, seed
        checked += 1
        if checked == 100:
            break
    assert checked == 100


def test_loss_values():
    assert nn.mse(np.zeros(2), np.ones(2))[0] == 1.0
    assert nn.soft_target_cross_entropy(np.zeros(3), np.full(3, 0.5))[0] == pytest.approx(np.log(2))
    assert nn.cross_entropy(np.array([0.5]), np.array([1.0]))[0] == pytest.approx(np.log(2))


def test_adamw_zero_grad_zero_decay():
    p = [np.array([1.0, -2.0])]
    nn.adamw_step(p, [np.zeros(2)], nn.OptimizerState(lr=0.1, weight_decay=0.0))
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adamw_decay_only():
    p = [np.array([[2.0, -4.0]])]
    nn.adamw_step(p, [np.zeros((1, 2))], nn.OptimizerState(lr=0.1, weight_decay=0.5))
    np.testing.assert_allclose(p[0], [[2.0 * 0.95, -4.0 * 0.95]], rtol=0, atol=1e-15)


def test_adamw_first_steps_scalar_oracle():
    lr, wd, b1, b2, eps = 0.01, 0.1, 0.9, 0.999, 1e-8
    theta, m, v = 0.7, 0.0, 0.0
    p = [np.array([theta])]
    state = nn.OptimizerState(lr=lr, weight_decay=wd)
    for t, g in enumerate([0.3, -1.2, 0.05], start=1):
        theta *= 1 - lr * wd
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat, vhat = m / (1 - b1 ** t), v / (1 - b2 ** t)
        theta -= lr * mhat / (np.sqrt(vhat) + eps)
        nn.adamw_step(p, [np.array([g])], state)
        assert p[0][0] == pytest.approx(theta, abs=1e-12)
    # first step moves by ~lr in the direction of -sign(g)
    q = [np.array([0.0])]
    nn.adamw_step(q, [np.array([3.0])], nn.OptimizerState(lr=0.01, weight_decay=0.0))
    assert q[0][0] == pytest.approx(-0.01, rel=1e-6)


def test_adamw_shape_checks():
    with pytest.raises(DataError):
        nn.adamw_step([np.zeros(2)], [np.zeros(3)], nn.OptimizerState())
    with pytest.raises(DataError):
        nn.adamw_step([np.zeros((3, 2)).T], [np.zeros((2, 3))], nn.OptimizerState())


def test_params_round_trip():
    spec = nn.NetSpec.mlp([4, 3, 2], seed=3)
    p = nn.init_params(spec)
    q = nn.NetParams.from_dict(p.to_dict())
    for a, b in zip(p.arrays(), q.arrays()):
        np.testing.assert_array_equal(a, b)
    assert nn.NetSpec.from_dict(spec.to_dict()) == spec


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 300), st.integers(1, 64))
def test_minibatches_partition(n, bs):
    idx = np.concatenate(list(nn.minibatches(n, bs, np.random.default_rng(0))))
    assert sorted(idx.tolist()) == list(range(n))
