"""Gradient checks for the tape engine.

First order: every primitive against central finite differences.
Second order: nested tapes against analytic Hessians of known functions.
"""

import numpy as np
import pytest

from oslab import autodiff as ad
from oslab.autodiff import Tape, Tensor


def fd_grad(f, xs, eps=1e-5):
    """Central finite differences of a pure-numpy scalar function."""
    grads = []
    for i, x in enumerate(xs):
        x = np.asarray(x, dtype=np.float64)
        g = np.zeros_like(x)
        flat = g.reshape(-1)
        for j in range(x.size):
            bump = np.zeros_like(x).reshape(-1)
            bump[j] = eps
            bump = bump.reshape(x.shape)
            hi = [np.asarray(v, dtype=np.float64) for v in xs]
            lo = [np.asarray(v, dtype=np.float64) for v in xs]
            hi[i] = x + bump
            lo[i] = x - bump
            flat[j] = (f(*hi) - f(*lo)) / (2 * eps)
        grads.append(g)
    return grads


def tape_grad(f, xs):
    ts = [Tensor(x) for x in xs]
    with Tape() as t:
        y = f(*ts)
    return [g.value for g in t.gradient(y, ts)]


def assert_matches_fd(tape_f, np_f, xs, rtol=1e-4, atol=1e-7):
    got = tape_grad(tape_f, xs)
    want = fd_grad(np_f, xs)
    for g, w in zip(got, want):
        np.testing.assert_allclose(g, w, rtol=rtol, atol=atol)


def test_square_gradient():
    (g,) = tape_grad(lambda x: ad.mul(x, x), [np.array(3.0)])
    assert g == pytest.approx(6.0)


def test_second_order_cubic():
    x = Tensor(np.array(2.0))
    with Tape() as outer:
        with Tape() as inner:
            y = ad.mul(ad.mul(x, x), x)
        (dx,) = inner.gradient(y, [x])
    (ddx,) = outer.gradient(dx, [x])
    assert dx.value == pytest.approx(12.0)
    assert ddx.value == pytest.approx(12.0)


def test_elementwise_primitives_match_fd():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4))
    b = np.abs(rng.normal(size=(3, 4))) + 0.5  # strictly positive for log/div

    cases = [
        (lambda x, y: ad.tsum(ad.mul(ad.add(x, y), ad.sub(x, y))), lambda x, y: np.sum((x + y) * (x - y))),
        (lambda x, y: ad.tsum(ad.div(x, y)), lambda x, y: np.sum(x / y)),
        (lambda x, y: ad.tsum(ad.exp(ad.mul(0.3, x))), lambda x, y: np.sum(np.exp(0.3 * x))),
        (lambda x, y: ad.tsum(ad.log(y)), lambda x, y: np.sum(np.log(y))),
        (lambda x, y: ad.tsum(ad.tanh(x)), lambda x, y: np.sum(np.tanh(x))),
        (lambda x, y: ad.tsum(ad.sigmoid(x)), lambda x, y: np.sum(0.5 * (1 + np.tanh(0.5 * x)))),
        (lambda x, y: ad.tsum(ad.power(y, 2.5)), lambda x, y: np.sum(y**2.5)),
        (lambda x, y: ad.tmean(ad.neg(x)), lambda x, y: np.mean(-x)),
    ]
    for tape_f, np_f in cases:
        assert_matches_fd(tape_f, np_f, [a, b])


def test_broadcasting_bias_add_matches_fd():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 3))
    bias = rng.normal(size=(3,))
    assert_matches_fd(
        lambda a, b: ad.tsum(ad.tanh(ad.add(a, b))),
        lambda a, b: np.sum(np.tanh(a + b)),
        [x, bias],
    )


def test_axis_sum_and_mean_match_fd():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 3))
    assert_matches_fd(
        lambda a: ad.tsum(ad.mul(ad.tsum(a, axis=1), ad.tsum(a, axis=1))),
        lambda a: np.sum(a.sum(axis=1) ** 2),
        [x],
    )
    assert_matches_fd(
        lambda a: ad.tsum(ad.exp(ad.tsum(a, axis=0, keepdims=True))),
        lambda a: np.sum(np.exp(a.sum(axis=0, keepdims=True))),
        [x],
    )


def test_matmul_matches_fd():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    assert_matches_fd(
        lambda x, y: ad.tsum(ad.tanh(ad.matmul(x, y))),
        lambda x, y: np.sum(np.tanh(x @ y)),
        [a, b],
    )


@pytest.mark.parametrize("stack", [1, 6])
def test_bmm_and_bouter_match_fd(stack):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(6, 3))
    w = rng.normal(size=(stack, 3, 2))
    assert_matches_fd(
        lambda a, b: ad.tsum(ad.sigmoid(ad.bmm(a, b))),
        lambda a, b: np.sum(
            0.5 * (1 + np.tanh(0.5 * (a @ b[0] if b.shape[0] == 1 else np.einsum("bi,bio->bo", a, b))))
        ),
        [x, w],
    )


@pytest.mark.parametrize("stack", [1, 5])
def test_take_rows_matches_fd(stack):
    rng = np.random.default_rng(5)
    w = rng.normal(size=(stack, 4, 3))
    codes = np.array([0, 3, 1, 1, 2])

    def np_take(wv):
        rows = wv[0][codes] if wv.shape[0] == 1 else wv[np.arange(5), codes]
        return np.sum(np.tanh(rows) * np.arange(1, 4))

    assert_matches_fd(
        lambda wv: ad.tsum(ad.mul(ad.tanh(ad.take_rows(wv, codes)), np.arange(1.0, 4.0))),
        np_take,
        [w],
    )


def test_piecewise_ops_match_fd_away_from_kinks():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(10,))
    b = rng.normal(size=(10,)) + 0.05  # avoid exact ties
    assert_matches_fd(
        lambda x, y: ad.tsum(ad.maximum(x, y)), lambda x, y: np.sum(np.maximum(x, y)), [a, b]
    )
    assert_matches_fd(
        lambda x, y: ad.tsum(ad.minimum(ad.mul(x, x), y)),
        lambda x, y: np.sum(np.minimum(x * x, y)),
        [a, b],
    )
    assert_matches_fd(
        lambda x, y: ad.tsum(ad.clip(x, -0.5, 0.77)), lambda x, y: np.sum(np.clip(x, -0.5, 0.77)), [a, b]
    )


def test_detach_blocks_gradient():
    (g,) = tape_grad(lambda x: ad.tsum(ad.mul(ad.detach(x), x)), [np.array([2.0, 3.0])])
    np.testing.assert_allclose(g, [2.0, 3.0])  # only the live factor contributes


def test_reshape_gradient_round_trips():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 6))
    assert_matches_fd(
        lambda a: ad.tsum(ad.mul(ad.reshape(a, (3, 4)), np.arange(12.0).reshape(3, 4))),
        lambda a: np.sum(a.reshape(3, 4) * np.arange(12.0).reshape(3, 4)),
        [x],
    )


def test_gradient_requires_scalar_output():
    x = Tensor(np.ones(3))
    with Tape() as t:
        y = ad.mul(x, 2.0)
    with pytest.raises(ValueError):
        t.gradient(y, [x])


def test_gradient_of_unrelated_source_is_zero():
    x, z = Tensor(np.array(1.0)), Tensor(np.array(5.0))
    with Tape() as t:
        y = ad.mul(x, x)
    gx, gz = t.gradient(y, [x, z])
    assert gx.value == pytest.approx(2.0)
    assert gz.value == 0.0


# ---------------------------------------------------------------------------
# Second order
# ---------------------------------------------------------------------------


def hessian_vector(f, x, v):
    """H(x) @ v via tape-of-tape."""
    xt = Tensor(x)
    with Tape() as outer:
        with Tape() as inner:
            y = f(xt)
        (gx,) = inner.gradient(y, [xt])
        gv = ad.tsum(ad.mul(gx, v))
    return outer.gradient(gv, [xt])[0].value


def test_second_order_quadratic_form():
    rng = np.random.default_rng(8)
    A = rng.normal(size=(4, 4))
    A = 0.5 * (A + A.T)
    x = rng.normal(size=(4, 1))
    v = rng.normal(size=(4, 1))

    def f(t):
        return ad.tsum(ad.mul(t, ad.matmul(A, t)))

    np.testing.assert_allclose(hessian_vector(f, x, v), 2 * A @ v, atol=1e-6)


def test_second_order_softmax_cross_entropy():
    rng = np.random.default_rng(9)
    z = rng.normal(size=(5,))
    v = rng.normal(size=(5,))
    target = 2

    def f(t):
        lse = ad.log(ad.tsum(ad.exp(t)))
        onehot = np.eye(5)[target]
        return ad.sub(lse, ad.tsum(ad.mul(t, onehot)))

    p = np.exp(z) / np.exp(z).sum()
    analytic = (np.diag(p) - np.outer(p, p)) @ v
    np.testing.assert_allclose(hessian_vector(f, z, v), analytic, atol=1e-6)


def test_second_order_through_take_rows_and_bmm():
    # d^2/dw^2 of a composite using the batched primitives, vs finite
    # differences of the first-order tape gradient.
    rng = np.random.default_rng(10)
    w = rng.normal(size=(1, 3, 2))
    codes = np.array([1, 2, 0, 1])
    h = rng.normal(size=(4, 2))
    v = rng.normal(size=(1, 3, 2))

    def f(t):
        rows = ad.take_rows(t, codes)  # (4, 2)
        mixed = ad.bmm(ad.tanh(rows), ad.btranspose(t))  # (4, 3) via (1, 2, 3)
        return ad.tsum(ad.mul(mixed, mixed))

    got = hessian_vector(f, w, v)

    def first_grad(wv):
        return tape_grad(f, [wv])[0]

    eps = 1e-6
    fd = (first_grad(w + eps * v) - first_grad(w - eps * v)) / (2 * eps)
    np.testing.assert_allclose(got, fd, rtol=1e-4, atol=1e-6)


def test_magic_box_style_value_and_gradient():
    # exp(t - detach(t)) has value 1 and d/dx [exp(logx - c)] = value * dlog/dx.
    x = Tensor(np.array([0.4, 1.7]))
    with Tape() as t:
        tau = ad.tsum(ad.log(x))
        box = ad.exp(ad.sub(tau, ad.detach(tau)))
        y = ad.mul(box, 5.0)
    assert box.value == pytest.approx(1.0)
    (g,) = t.gradient(y, [x])
    np.testing.assert_allclose(g.value, 5.0 / x.value)
