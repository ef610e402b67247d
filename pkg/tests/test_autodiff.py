import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from riskfusion import autodiff as ad
from riskfusion.autodiff import Adam, Tensor
from riskfusion.errors import NumericError, ShapeError

from gradcheck import grad_mismatch, numeric_grad


def _check(build, *arrays_in):
    """Compare backward() against central differences for a scalar-valued graph."""
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays_in]
    out = build(*leaves)
    out.backward()
    for leaf in leaves:
        f = lambda: float(build(*[Tensor(l.value) for l in leaves]).value)
        num = numeric_grad(f, leaf.value)
        np.testing.assert_allclose(leaf.grad, num, rtol=1e-5, atol=1e-7)


finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (4,), elements=finite))
def test_broadcast_arithmetic_grads(a, b):
    _check(lambda x, y: ad.reduce_sum((x + y) * (x - y) - x * 0.5), a, b)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 5), elements=finite))
def test_softmax_cross_entropy_grad(z):
    y = np.array([1, 4])
    _check(lambda t: ad.cross_entropy(ad.softmax(t), y), z)


def test_matmul_linear_diag_grads():
    rng = np.random.default_rng(0)
    a, b, v = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=4)
    _check(lambda x, y: ad.reduce_sum(ad.matmul(x, y)), a, b)
    _check(lambda x, w: ad.reduce_sum(ad.linear(x, w) * ad.linear(x, w)), a, b.T.copy())
    _check(lambda x: ad.reduce_sum(ad.matmul(ad.diag(x), ad.diag(x))), v)
    _check(lambda x, w: ad.reduce_sum(ad.linear(x, w)), v, rng.normal(size=(3, 4)))
    _check(lambda m, x: ad.reduce_sum(ad.matmul(m, x)), a, v)


def test_division_log_concat_mean_grads():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(0.5, 2, (2, 3)), rng.uniform(0.5, 2, (2, 3))
    _check(lambda x, y: ad.mean(ad.log(x / y) + ad.log1p(x)), a, b)
    _check(lambda x, y: ad.reduce_sum(ad.concat([x, y * x]) * ad.concat([y, x])), a, b)
    _check(lambda x: ad.reduce_sum(ad.reduce_sum(x, axis=0) * ad.reduce_sum(x, axis=0)), a)
    _check(lambda x: ad.reduce_sum(x / ad.reduce_sum(x, axis=-1, keepdims=True) * x), a)


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    ad.reduce_sum(ad.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x
    ad.reduce_sum(y + y).backward()
    np.testing.assert_allclose(x.grad, [12.0])


def test_cross_entropy_clamps_probabilities():
    p = Tensor(np.array([[1.0, 0.0]]), requires_grad=True)
    loss = ad.cross_entropy(p, [1])
    assert loss.value == pytest.approx(-np.log(ad.PROB_FLOOR))
    loss.backward()
    np.testing.assert_array_equal(p.grad, 0.0)


def test_errors():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 2, 2)))
    with pytest.raises(NumericError):
        Tensor(np.array([np.nan]))
    with pytest.raises(NumericError):
        ad.div(Tensor([1.0]), Tensor([0.0]))
    with pytest.raises(NumericError):
        ad.log(Tensor([0.0]))
    with pytest.raises(ShapeError):
        ad.backward(Tensor(np.ones(2), requires_grad=True))
    with pytest.raises(ShapeError):
        ad.cross_entropy(Tensor(np.ones((2, 3)) / 3), [0, 3])


def test_dropout_modes():
    x = Tensor(np.ones((200, 50)))
    assert ad.dropout(x, 0.4, None, training=False) is x
    out = ad.dropout(x, 0.4, np.random.default_rng(0), training=True).value
    assert set(np.unique(out)) <= {0.0, 1.0 / 0.6}
    assert out.mean() == pytest.approx(1.0, abs=0.03)
    with pytest.raises(ValueError):
        ad.dropout(x, 1.0, None, training=True)
    with pytest.raises(ValueError):
        ad.dropout(x, 0.5, None, training=True)


def test_adam_first_steps_match_hand_computation():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    g1, g2 = np.array([0.5, -1.0]), np.array([0.1, 0.3])
    p.grad = g1
    opt.step()
    # bias-corrected first step moves each coordinate by lr * sign(g)
    np.testing.assert_allclose(p.value, [0.9, -1.9], rtol=1e-7)
    after_one = np.array([1.0, -2.0]) - 0.1 * g1 / (np.abs(g1) + 1e-8)
    np.testing.assert_allclose(p.value, after_one, rtol=1e-12)
    p.grad = g2
    opt.step()
    m = 0.9 * 0.1 * g1 + 0.1 * g2
    v = 0.999 * 0.001 * g1 ** 2 + 0.001 * g2 ** 2
    step = 0.1 * (m / (1 - 0.9 ** 2)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    np.testing.assert_allclose(p.value, after_one - step, rtol=1e-12)


def test_adam_rejects_non_finite_gradient():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([np.inf, 0.0])
    with pytest.raises(NumericError):
        Adam([p]).step()


def test_adam_minimises_quadratic():
    p = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    opt = Adam([p], lr=0.05)
    for _ in range(2000):
        opt.zero_grad()
        ad.reduce_sum(p * p).backward()
        opt.step()
    np.testing.assert_allclose(p.value, 0.0, atol=1e-3)


def test_checkpoint_round_trip(tmp_path):
    tensors = {"w": np.arange(6.0).reshape(2, 3), "b": np.array([1.5, -2.25]),
               "s": np.array(3.0)}
    manifest = {"kind": "fcn", "dims": [7, 5]}
    path = tmp_path / "m.ckpt"
    ad.save_checkpoint(path, tensors, manifest)
    loaded, man = ad.load_checkpoint(path)
    assert man == manifest
    assert set(loaded) == set(tensors)
    for k in tensors:
        np.testing.assert_array_equal(loaded[k], tensors[k])
    first = path.read_bytes()
    ad.save_checkpoint(path, dict(reversed(list(tensors.items()))), manifest)
    assert path.read_bytes() == first


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        ad.load_checkpoint(path)


def test_forward_examples():
    np.testing.assert_array_equal(ad.relu(Tensor([1.0, -1.0, 0.0])).value, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0, 0.0])).value, [1 / 3] * 3)
    e = np.e
    np.testing.assert_allclose(ad.softmax(Tensor([1.0, 0.0])).value, [e / (e + 1), 1 / (e + 1)],
                               atol=1e-12)
    np.testing.assert_allclose(ad.softmax(Tensor([1.0, 0.0])).value, [0.73106, 0.26894], atol=1e-5)


def test_cross_entropy_examples():
    assert ad.cross_entropy(Tensor([0.0, 1.0, 0.0]), 1).value == pytest.approx(0.0, abs=1e-15)
    assert ad.cross_entropy(Tensor([1 / 3] * 3), 2).value == pytest.approx(np.log(3))
    assert ad.cross_entropy(Tensor([1 - 1e-9, 1e-9]), 1).value == pytest.approx(-np.log(1e-7))


def test_softmax_cross_entropy_gradient_is_p_minus_onehot():
    z = Tensor(np.array([[0.3, -1.2, 2.0]]), requires_grad=True)
    ad.cross_entropy(ad.softmax(z), [2]).backward()
    p = ad.softmax(Tensor(z.value)).value
    np.testing.assert_allclose(z.grad, p - np.array([[0.0, 0.0, 1.0]]), atol=1e-12)


def test_dropout_rate_zero_and_expectation():
    x = Tensor(np.array([1.0, 2.0, -3.0]))
    rng = np.random.default_rng(0)
    assert ad.dropout(x, 0.0, rng, training=True) is x
    trials = np.array([ad.dropout(x, 0.4, rng, training=True).value for _ in range(10_000)])
    np.testing.assert_allclose(trials.mean(axis=0), x.value, rtol=0.02)


def test_adam_examples():
    p = Tensor(np.array([0.5]), requires_grad=True)
    opt = Adam([p], lr=1e-3)
    p.grad = np.zeros(1)
    opt.step()
    assert p.value[0] == 0.5
    q = Tensor(np.array([0.5]), requires_grad=True)
    opt = Adam([q], lr=1e-3)
    q.grad = np.ones(1)
    opt.step()
    assert q.value[0] == pytest.approx(0.5 - 1e-3 / (1 + 1e-8), abs=1e-15)


def test_adam_trajectories_are_deterministic():
    def run():
        rng = np.random.default_rng(5)
        p = Tensor(rng.normal(size=4), requires_grad=True)
        opt = Adam([p], lr=0.01)
        for _ in range(50):
            opt.zero_grad()
            ad.reduce_sum(p * p * p * p).backward()
            opt.step()
        return p.value
    assert run().tobytes() == run().tobytes()
