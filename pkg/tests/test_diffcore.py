import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqreason import diffcore as dc
from seqreason.diffcore import OptState, ParamSet, Tensor
from seqreason.diffcore.layers import _pool_scatter, _pool_scatter_py


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0, scale, size=shape), requires_grad=True)


def _check(build, params, tol=1e-6):
    """Compare backward against central differences for a scalar-valued build()."""
    for p in params:
        p.grad = None
    loss = build()
    dc.backward(loss)
    analytic = [p.grad.copy() for p in params]
    numeric = dc.finite_diff_grad(lambda: build().data, [p.data for p in params])
    for a, n in zip(analytic, numeric):
        floor = 1e-6 * max(np.abs(n).max(), 1e-12)
        assert dc.max_relative_error(a, n, floor=floor) < tol


# shapes ---------------------------------------------------------------------


def test_conv_size_formula():
    assert dc.conv_out_size(224, 2, 1, 1) == 225
    assert dc.conv_out_size(225, 4) == 222


def test_conv_identity_kernel():
    x = Tensor(np.arange(9.0).reshape(1, 1, 3, 3))
    out = dc.conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)), pad=0)
    assert np.array_equal(out.data, x.data)
    one = dc.conv2d(Tensor(np.full((1, 1, 1, 1), 4.0)), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)), pad=0)
    assert one.data.item() == 4.0


def test_conv_against_direct_loops():
    rng = np.random.default_rng(0)
    x, w, b = rng.normal(size=(2, 3, 5, 6)), rng.normal(size=(4, 3, 2, 2)), rng.normal(size=4)
    out = dc.conv2d(Tensor(x), Tensor(w), Tensor(b), pad=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 6, 7))
    for n in range(2):
        for o in range(4):
            for i in range(6):
                for j in range(7):
                    ref[n, o, i, j] = np.sum(xp[n, :, i : i + 2, j : j + 2] * w[o]) + b[o]
    assert np.allclose(out, ref, atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(ValueError):
        dc.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((3, 1, 2, 2))), Tensor(np.zeros(3)))
    with pytest.raises(ValueError):
        dc.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((3, 1, 2, 2))), Tensor(np.zeros(2)))


def test_pool_constant_and_too_large():
    x = Tensor(np.full((1, 2, 6, 6), 0.3))
    out = dc.maxpool2d(x, 4)
    assert out.shape == (1, 2, 3, 3) and np.all(out.data == 0.3)
    with pytest.raises(ValueError):
        dc.maxpool2d(x, 7)


def test_pool_tie_goes_to_first_element():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    out = dc.maxpool2d(x, 2)
    dc.backward(out.sum())
    assert x.grad.tolist() == [[[[1.0, 0.0], [0.0, 0.0]]]]


@pytest.mark.parametrize("stride", [1, 2])
def test_pool_compiled_and_reference_scatter_agree(stride):
    rng = np.random.default_rng(1)
    x = np.round(rng.normal(size=(2, 3, 9, 9)), 1)  # rounding forces ties
    out = dc.maxpool2d(Tensor(x), 3, stride=stride).data
    g = rng.normal(size=out.shape)
    a, b = np.zeros_like(x), np.zeros_like(x)
    _pool_scatter(x, out, g, a, 3, stride)
    _pool_scatter_py(x, out, g, b, 3, stride)
    assert np.allclose(a, b, atol=1e-13)


def test_affine_identity_and_errors():
    x = Tensor(np.array([[1.0, -2.0, 3.0]]))
    out = dc.affine(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
    assert np.array_equal(out.data, x.data)
    with pytest.raises(ValueError):
        dc.affine(x, Tensor(np.eye(2)), Tensor(np.zeros(2)))


def test_affine_composition():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 5))
    w1, b1, w2, b2 = rng.normal(size=(4, 5)), rng.normal(size=4), rng.normal(size=(2, 4)), rng.normal(size=2)
    chained = dc.affine(dc.affine(Tensor(x), Tensor(w1), Tensor(b1)), Tensor(w2), Tensor(b2)).data
    single = dc.affine(Tensor(x), Tensor(w2 @ w1), Tensor(w2 @ b1 + b2)).data
    assert np.max(np.abs(chained - single)) < 1e-12


def test_activation_values():
    r = dc.relu(Tensor(np.array([-1.0, 0.0, 2.0])))
    assert r.data.tolist() == [0.0, 0.0, 2.0]
    assert dc.tanh(Tensor(np.zeros(1))).data.item() == 0.0
    x = Tensor(np.array([0.0]), requires_grad=True)
    dc.backward(dc.relu(x).sum())
    assert x.grad.item() == 0.0
    with pytest.raises(ValueError):
        dc.activation(x, "gelu")


# finite differences ---------------------------------------------------------


def test_finite_diff_oracle_itself():
    p = np.array([3.0])
    assert abs(dc.finite_diff_grad(lambda: p[0] ** 2, [p])[0][0] - 6.0) < 1e-8
    q = np.array([1.0, 2.0])
    assert np.all(np.abs(dc.finite_diff_grad(lambda: 7.0, [q])[0]) < 1e-10)
    assert p[0] == 3.0


def test_gradcheck_conv():
    rng = np.random.default_rng(3)
    x, w, b = _param(rng, 2, 2, 5, 5), _param(rng, 3, 2, 2, 2), _param(rng, 3)
    _check(lambda: (dc.conv2d(x, w, b) * dc.conv2d(x, w, b)).sum(), [x, w, b])


def test_gradcheck_conv_k3_stride2():
    rng = np.random.default_rng(4)
    x, w, b = _param(rng, 1, 2, 7, 7), _param(rng, 2, 2, 3, 3), _param(rng, 2)
    _check(lambda: dc.conv2d(x, w, b, stride=2).square().sum(), [x, w, b])


def test_gradcheck_pool():
    rng = np.random.default_rng(5)
    # well separated values: no ties, no finite-difference step crosses an argmax
    x = Tensor(rng.permutation(150).reshape(1, 2, 5, 15) * 0.01, requires_grad=True)
    c = Tensor(rng.normal(size=(1, 2, 3, 13)))
    _check(lambda: (dc.maxpool2d(x, 3) * c).sum(), [x])


def test_gradcheck_affine_and_activations():
    rng = np.random.default_rng(6)
    x, w, b = _param(rng, 4, 6), _param(rng, 5, 6), _param(rng, 5)
    _check(lambda: dc.tanh(dc.affine(x, w, b)).square().sum(), [x, w, b])
    # relu away from the kink
    y = Tensor(np.array([[-1.3, 0.4, 2.2, -0.7]]), requires_grad=True)
    _check(lambda: dc.relu(y).square().sum(), [y])


def test_gradcheck_elementwise_ops():
    rng = np.random.default_rng(7)
    a, b = _param(rng, 3, 4), _param(rng, 4)
    s = Tensor(np.array(0.7), requires_grad=True)
    _check(lambda: ((a - b + s) * (a + 2.0)).square().mean(), [a, b, s])
    _check(lambda: (dc.concat([a[0:2], a[1:3]], axis=0) * b).sum(), [a, b])


def test_sum_of_params_gives_unit_gradients():
    p = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    dc.backward(p.sum())
    assert np.array_equal(p.grad, np.ones((2, 3)))


def test_backward_needs_scalar_and_finite():
    p = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        dc.backward(p * 2.0)
    with pytest.raises(dc.PoisonedGradientError):
        dc.backward((p * np.nan).sum())


def test_frozen_tensors_get_no_gradient():
    ps = ParamSet()
    w = ps.add("w", np.ones((2, 2)), "conv")
    v = ps.add("v", np.ones((1, 2)), "fc")
    ps.set_frozen({"conv"})
    x = Tensor(np.ones((1, 2)))
    dc.backward(dc.affine(dc.affine(x, w, Tensor(np.zeros(2))), v, Tensor(np.zeros(1))).sum())
    assert w.grad is None and v.grad is not None
    assert ps.grads().keys() == {"v"}


# rmsprop ----------------------------------------------------------------------


def _scalar_set(p0: float) -> ParamSet:
    ps = ParamSet()
    ps.add("p", np.array([p0]), "fc")
    return ps


def test_rmsprop_first_step_oracle():
    ps, st_ = _scalar_set(1.0), OptState()
    dc.rmsprop_step(ps, st_, {"p": np.array([1.0])})
    # 1 - 0.99 is not exactly 0.01 in binary
    assert abs(st_.square_avg["p"][0] - 0.01) < 1e-15
    assert abs((ps["p"].data[0] - 1.0) - (-9.999999e-5)) < 1e-12
    assert abs((ps["p"].data[0] - 1.0) + 1e-5 / (0.1 + 1e-8)) < 1e-15


@pytest.mark.parametrize("fused", [True, False])
def test_rmsprop_hundred_step_recurrence(fused):
    # gradient sequence depends on the current p so errors would compound
    ps, st_ = _scalar_set(0.3), OptState()
    p, s = 0.3, 0.0
    for k in range(100):
        g = math.sin(3.0 * p + k) + 0.1 * k
        dc.rmsprop_step(ps, st_, {"p": np.array([g])}, fused=fused)
        s = 0.99 * s + 0.01 * g * g
        p = p - 1e-5 * g / (math.sqrt(s) + 1e-8)
        assert abs(ps["p"].data[0] - p) < 1e-12
        assert abs(st_.square_avg["p"][0] - s) < 1e-12


def test_rmsprop_zero_grad_decays_state():
    ps, st_ = _scalar_set(2.0), OptState()
    dc.rmsprop_step(ps, st_, {"p": np.array([1.0])})
    p1, s1 = ps["p"].data.copy(), st_.square_avg["p"].copy()
    dc.rmsprop_step(ps, st_, {"p": np.array([0.0])})
    assert np.array_equal(ps["p"].data, p1)
    assert st_.square_avg["p"][0] == pytest.approx(0.99 * s1[0], rel=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 20))
def test_rmsprop_lr_zero_is_identity(seed, n):
    rng = np.random.default_rng(seed)
    ps = ParamSet()
    ps.add("a", rng.normal(size=(3, 4)), "fc")
    before = ps["a"].data.copy()
    state = OptState(lr=0.0)
    for _ in range(n):
        dc.rmsprop_step(ps, state, {"a": rng.normal(size=(3, 4))})
    assert np.array_equal(ps["a"].data, before)
    assert np.all(state.square_avg["a"] >= 0)


def test_rmsprop_frozen_and_shape_errors():
    ps = ParamSet()
    ps.add("a", np.ones(3), "conv")
    ps.add("b", np.ones(3), "fc")
    ps.set_frozen({"conv"})
    state = OptState()
    for _ in range(5):
        dc.rmsprop_step(ps, state, {"a": np.ones(3), "b": np.ones(3)})
    assert np.array_equal(ps["a"].data, np.ones(3))
    assert not np.array_equal(ps["b"].data, np.ones(3))
    with pytest.raises(ValueError):
        dc.rmsprop_step(ps, state, {"b": np.ones(4)})


def test_rmsprop_deterministic():
    def run():
        rng = np.random.default_rng(9)
        ps = ParamSet()
        ps.add("a", rng.normal(size=50), "fc")
        state = OptState()
        for _ in range(20):
            dc.rmsprop_step(ps, state, {"a": rng.normal(size=50)})
        return ps["a"].data.tobytes()

    assert run() == run()
