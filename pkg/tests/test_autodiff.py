import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oaag import autodiff as ad
from oaag.autodiff import Tape, Tensor, grad_check


def _t(x, rg=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=rg)


def _fd_grad(f, arr, eps=1e-6):
    """Independent central-difference gradient of f(arr) -> float."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for j in range(flat.size):
        o = flat[j]
        flat[j] = o + eps
        fp = f(arr)
        flat[j] = o - eps
        fm = f(arr)
        flat[j] = o
        gflat[j] = (fp - fm) / (2 * eps)
    return g


class TestForward:
    def test_softmax_uniform(self):
        y = ad.softmax(_t([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(y.data, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_softmax_mask(self):
        y = ad.softmax(_t([0.3, -1.2, 5.0]), mask=np.array([1, 1, 0]))
        assert y.data[2] == 0.0
        assert abs(y.data[:2].sum() - 1.0) < 1e-15

    def test_softmax_fully_masked(self):
        with pytest.raises(ValueError, match="all positions masked"):
            ad.softmax(_t([1.0, 2.0]), mask=np.array([0, 0]))

    def test_softmax_large_logits_stable(self):
        y = ad.softmax(_t([1000.0, 1000.0]))
        np.testing.assert_allclose(y.data, [0.5, 0.5])

    def test_fixed_points(self):
        assert ad.tanh(_t(0.0)).item() == 0.0
        assert ad.sigmoid(_t(0.0)).item() == 0.5

    def test_shape_mismatch_names_both(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
            ad.matmul(_t(np.ones((2, 3))), _t(np.ones((4, 5))))
        with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
            ad.add(_t(np.ones(2)), _t(np.ones(3)))

    def test_max_ties_route_to_lowest_index(self):
        x = _t([[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]])
        with Tape() as tape:
            loss = ad.sum(ad.max(x, axis=1))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [[0, 1, 0], [1, 0, 0]])

    def test_dropout_identity_cases(self):
        x = _t(np.arange(6.0))
        assert ad.dropout(x, 0.5, train=False) is x
        assert ad.dropout(x, 0.0, train=True) is x
        y = ad.dropout(x, 0.5, train=True, rng=np.random.default_rng(0))
        assert set(np.unique(y.data / np.where(x.data == 0, 1, x.data))) <= {0.0, 2.0}

    def test_nonfinite_is_rejected(self):
        with pytest.raises(FloatingPointError):
            ad.div(_t(1.0), _t(0.0))

    def test_reweight_constant_weights_is_identity(self):
        x = np.random.default_rng(1).dirichlet(np.ones(7))
        for c in (0.3, 1.0, 1e-5):
            assert np.array_equal(ad.reweight(_t(x), _t(np.full(7, c))).data, x)
        y = ad.reweight(_t([0.5, 0.5]), _t([1.0, 3.0])).data
        np.testing.assert_allclose(y, [0.25, 0.75])
        with pytest.raises(ValueError, match="non-positive"):
            ad.reweight(_t([1.0, 0.0]), _t([0.0, 1.0]))

    def test_scatter_add_sums_duplicates(self):
        y = ad.scatter_add(_t([0.2, 0.3, 0.5]), [1, 3, 1], 4)
        np.testing.assert_allclose(y.data, [0, 0.7, 0, 0.3])


class TestBackward:
    def test_square(self):
        x = _t(3.0)
        with Tape():
            y = x * x
        ad.backward(y)
        assert x.grad == 6.0

    def test_sum_matmul(self):
        rng = np.random.default_rng(1)
        A, B = _t(rng.normal(size=(3, 4))), _t(rng.normal(size=(4, 2)))
        with Tape():
            loss = ad.sum(A @ B)
        ad.backward(loss)
        np.testing.assert_allclose(A.grad, np.ones((3, 2)) @ B.data.T, atol=1e-14)

    def test_accumulates_without_reset(self):
        x = _t(2.0)
        with Tape():
            y = x * x
        ad.backward(y)
        ad.backward(y)
        assert x.grad == 8.0

    def test_non_scalar_loss(self):
        x = _t([1.0, 2.0])
        with Tape():
            y = x * 2.0
        with pytest.raises(ValueError):
            ad.backward(y)

    def test_tape_is_execution_ordered(self):
        x = _t(1.0)
        with Tape() as tape:
            a = ad.tanh(x)
            b = a * 2.0
            c = ad.sigmoid(b)
        assert [n[0] for n in tape.nodes] == ["tanh", "mul", "sigmoid"]
        assert tape.nodes[-1][2][0] is c

    def test_no_recording_without_tape(self):
        x = _t(1.0)
        y = ad.tanh(x)
        assert not y.requires_grad and y.tape is None

    def test_three_layer_composition_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        W1, W2, W3 = (rng.normal(size=s) * 0.7 for s in [(4, 5), (5, 3), (3, 1)])
        x = rng.normal(size=4)

        def fwd_np(w1):
            h = np.tanh(x @ w1)
            h = 1 / (1 + np.exp(-(h @ W2)))
            return float(np.sum(h @ W3))

        t1 = _t(W1.copy())
        with Tape():
            h = ad.tanh(ad.matmul(_t(x, False), t1))
            h = ad.sigmoid(ad.matmul(h, _t(W2, False)))
            loss = ad.sum(ad.matmul(h, _t(W3, False)))
        ad.backward(loss)
        num = _fd_grad(fwd_np, W1.copy())
        rel = np.abs(t1.grad - num) / np.maximum(np.maximum(np.abs(t1.grad), np.abs(num)), 1e-8)
        assert rel.max() < 1e-5


class TestGradCheck:
    def test_sum_of_squares(self):
        x = _t(np.random.default_rng(0).normal(size=(3, 4)))
        assert grad_check(lambda a: ad.sum(a * a), [x]) < 1e-7

    def test_constant(self):
        x = _t(np.ones(3))
        assert grad_check(lambda a: ad.sum(_t(np.ones(3), False)), [x]) == 0.0

    def test_detects_perturbed_rule(self):
        x = _t(np.random.default_rng(0).normal(size=5))
        with ad.perturb_backward("tanh", 1.5):
            assert grad_check(lambda a: ad.sum(ad.tanh(a)), [x]) > 0.1

    def test_five_point_stencil(self):
        x = _t(np.random.default_rng(2).normal(size=4))
        assert grad_check(lambda a: ad.sum(ad.tanh(a) * a), [x], eps=1e-2, stencil=5) < 1e-7
        with pytest.raises(ValueError, match="stencil"):
            grad_check(lambda a: ad.sum(a), [x], stencil=4)

    def test_nonfinite_output(self):
        x = _t(np.array([1.0]))
        with pytest.raises(FloatingPointError):
            grad_check(lambda a: ad.div(a, _t(0.0, False)), [x])


dims = st.integers(1, 8)


def _rand(rng, shape, lo=None, hi=None):
    if lo is not None:
        return _t(rng.uniform(lo, hi, size=shape))
    # magnitudes kept away from 0 so no coordinate's true gradient sits in the
    # finite-difference roundoff floor (~1e-11 at eps=1e-5)
    return _t(rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape))


@settings(max_examples=15, deadline=None)
@given(m=dims, n=dims, k=dims, seed=st.integers(0, 10_000))
def test_primitive_gradients(m, n, k, seed):
    rng = np.random.default_rng(seed)
    w = _rand(rng, (m, n)).data
    w_mk, w_cat, w_kn = (_t(_rand(rng, s).data, False) for s in [(m, k), (m, n + k), (k, n)])
    rows, slots = rng.integers(0, m, size=k), rng.integers(0, m, size=n)
    cases = [
        (lambda a, b: ad.sum(ad.matmul(a, b) * w_mk),
         [_rand(rng, (m, n)), _rand(rng, (n, k))]),
        (lambda a, b: ad.sum((a + b) * (a - b) * _t(w, False)), [_rand(rng, (m, n)), _rand(rng, (n,))]),
        (lambda a, b: ad.sum(a / b), [_rand(rng, (m, n)), _rand(rng, (m, n), 0.5, 2.0)]),
        (lambda a: ad.sum(ad.tanh(a) * _t(w, False)), [_rand(rng, (m, n))]),
        (lambda a: ad.sum(ad.sigmoid(a) * _t(w, False)), [_rand(rng, (m, n))]),
        (lambda a: ad.sum(ad.log(a) * _t(w, False)), [_rand(rng, (m, n), 0.5, 2.0)]),
        (lambda a: ad.sum(ad.softmax(a, axis=1) * _t(w, False)), [_rand(rng, (m, n))]),
        (lambda a: ad.sum(ad.softmax(a, axis=0) * _t(w, False)), [_rand(rng, (m, n))]),
        (lambda a: ad.sum(ad.mean(a, axis=0) * _t(w[0], False)), [_rand(rng, (m, n))]),
        (lambda a: ad.sum(ad.max(a, axis=1) * _t(w[:, 0], False)), [_rand(rng, (m, n))]),
        (lambda a: ad.sum(ad.max(a, axis=0) * _t(w[0], False)), [_rand(rng, (m, n))]),
        (lambda a, b: ad.sum(ad.concat([a, b], axis=1) * w_cat),
         [_rand(rng, (m, n)), _rand(rng, (m, k))]),
        (lambda a: ad.sum(ad.take(a, rows) * w_kn),
         [_rand(rng, (m, n))]),
        (lambda a: ad.sum(ad.scatter_add(a, slots, m) * _t(w[:, 0], False)),
         [_rand(rng, (n,))]),
        (lambda a: ad.sum(ad.transpose(a) * _t(w.T, False)), [_rand(rng, (m, n))]),
        # a single entry normalizes to the constant 1, whose zero gradient FD cannot resolve
        (lambda a, b: ad.sum(ad.reweight(a, b) * _t(np.append(w[0], 1.0), False)),
         [_rand(rng, (n + 1,), 0.1, 1.0), _rand(rng, (n + 1,), 0.1, 1.0)]),
    ]
    for f, inputs in cases:
        assert grad_check(f, inputs) < 1e-6


# Derandomized: ~1.5% of random draws put some gate derivative near 1e-7, where
# central differences at eps=1e-5 carry ~1e-6 relative roundoff.
@settings(max_examples=15, deadline=None, derandomize=True)
@given(d=dims, n=dims, seed=st.integers(0, 10_000))
def test_lstm_cell_gradients(d, n, seed):
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d + n)  # fan-in scaling keeps the gates out of saturation
    args = [_rand(rng, (d,)), _rand(rng, (n,)), _rand(rng, (n,)),
            _rand(rng, (d, 4 * n)) * scale, _rand(rng, (n, 4 * n)) * scale, _rand(rng, (4 * n,))]
    args = [_t(a.data) for a in args]
    wh, wc = _rand(rng, (n,)).data, _rand(rng, (n,)).data

    def f(*a):
        h, c = ad.lstm_cell(*a)
        return ad.sum(h * _t(wh, False)) + ad.sum(c * _t(wc, False))

    assert grad_check(f, args) < 1e-6


@settings(max_examples=15, deadline=None, derandomize=True)
@given(L=st.integers(1, 6), d=dims, n=st.integers(1, 5), seed=st.integers(0, 10_000),
       reverse=st.booleans())
def test_lstm_sequence_gradients(L, d, n, seed, reverse):
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d + n)
    args = [_rand(rng, (L, d)), _t(_rand(rng, (d, 4 * n)).data * scale),
            _t(_rand(rng, (n, 4 * n)).data * scale), _rand(rng, (4 * n,))]
    w = _t(_rand(rng, (L, n)).data, False)
    assert grad_check(lambda X, a, b, c: ad.sum(ad.lstm_sequence(X, a, b, c, reverse=reverse) * w),
                      args) < 1e-6


def test_lstm_sequence_equals_unrolled_cells():
    rng = np.random.default_rng(3)
    L, d, n = 5, 4, 3
    X = _t(rng.normal(size=(L, d)))
    Wx, Wh, b = _t(rng.normal(size=(d, 4 * n))), _t(rng.normal(size=(n, 4 * n))), _t(rng.normal(size=4 * n))
    H = ad.lstm_sequence(X, Wx, Wh, b).data
    Hr = ad.lstm_sequence(X, Wx, Wh, b, reverse=True).data
    h = c = _t(np.zeros(n))
    for t in range(L):
        h, c = ad.lstm_cell(_t(X.data[t]), h, c, Wx, Wh, b)
        np.testing.assert_allclose(H[t], h.data, atol=1e-14)
    h = c = _t(np.zeros(n))
    for t in reversed(range(L)):
        h, c = ad.lstm_cell(_t(X.data[t]), h, c, Wx, Wh, b)
        np.testing.assert_allclose(Hr[t], h.data, atol=1e-14)


def test_float32_mode():
    with ad.precision("float32"):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape():
            y = ad.sum(ad.tanh(x))
        ad.backward(y)
    assert x.data.dtype == np.float32 and x.grad.dtype == np.float32
    assert ad.get_dtype() == np.float64


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    params = {"a": _t(rng.normal(size=(3, 2))), "b": _t(rng.normal(size=4))}
    ad.save_params(tmp_path / "p.json", params, meta={"epoch": 2})
    arrays, meta = ad.load_params(tmp_path / "p.json")
    assert meta == {"epoch": 2}
    for k in params:
        assert np.array_equal(arrays[k], params[k].data)
        assert arrays[k].dtype == np.float64
