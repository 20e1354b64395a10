import mpmath
import numpy as np
import pytest

from floydnet import nn
from floydnet.nn import (
    NonFiniteError,
    Tensor,
    broadcast_to,
    concat,
    ffn,
    gelu,
    grad_check,
    init_ffn,
    init_linear,
    init_norm,
    layer_norm,
    linear,
    load_params,
    reshape,
    restore_params,
    rms_norm,
    save_params,
    softmax,
    take_slice,
    tensor,
    tsum,
)


def quad_loss(t):
    return tsum(nn.mul(t, t))


class TestLinear:
    def test_identity_weight(self):
        p = nn.LinearParams(weight=tensor(np.eye(4)), bias=tensor(np.zeros(4)))
        x = tensor(np.random.default_rng(0).standard_normal((3, 4)))
        assert np.array_equal(linear(x, p).data, x.data)

    def test_zero_input_gives_bias(self):
        rng = np.random.default_rng(1)
        b = rng.standard_normal(4)
        p = nn.LinearParams(weight=tensor(rng.standard_normal((5, 4))), bias=tensor(b))
        y = linear(tensor(np.zeros((2, 5))), p)
        assert np.allclose(y.data, np.tile(b, (2, 1)), atol=0, rtol=0)

    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((4, 2))
        b = rng.standard_normal(2)
        expect = np.zeros((3, 2))
        for i in range(3):
            for o in range(2):
                expect[i, o] = b[o]
                for j in range(4):
                    expect[i, o] += x[i, j] * w[j, o]
        p = nn.LinearParams(weight=tensor(w), bias=tensor(b))
        assert np.abs(linear(tensor(x), p).data - expect).max() < 1e-12

    def test_additivity(self):
        rng = np.random.default_rng(3)
        p = init_linear(rng, 6, 3)
        a = rng.standard_normal((4, 6))
        b = rng.standard_normal((4, 6))
        ya = linear(tensor(a), p).data
        yb = linear(tensor(b), p).data
        yab = linear(tensor(a + b), p).data
        assert np.abs(yab - (ya + yb - p.bias.data)).max() < 1e-12

    def test_shape_mismatch(self):
        p = init_linear(np.random.default_rng(0), 5, 3)
        with pytest.raises(ValueError):
            linear(tensor(np.zeros((2, 4))), p)


class TestLayerNorm:
    def test_constant_input_zeroed(self):
        p = init_norm(6, epsilon=1e-6)
        y = layer_norm(tensor(np.full((2, 6), 3.5)), p)
        assert np.abs(y.data).max() < 1e-12

    def test_already_normalized(self):
        eps = 1e-6
        p = init_norm(2, epsilon=eps)
        y = layer_norm(tensor(np.array([[1.0, -1.0]])), p)
        expect = np.array([[1.0, -1.0]]) / np.sqrt(1.0 + eps)
        assert np.abs(y.data - expect).max() < 1e-12

    def test_output_statistics(self):
        rng = np.random.default_rng(4)
        p = init_norm(8, epsilon=1e-12)
        y = layer_norm(tensor(rng.standard_normal((1, 8))), p).data
        assert abs(y.mean()) < 1e-12
        assert abs(y.var() - 1.0) < 1e-6

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((3, 7))
        p = init_norm(7)
        a = layer_norm(tensor(x), p).data
        b = layer_norm(tensor(x + 11.25), p).data
        assert np.abs(a - b).max() < 1e-10


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        y = softmax(tensor(np.full((2, 5), 3.0)), axis=-1).data
        assert np.abs(y - 0.2).max() < 1e-15

    def test_overflow_stability(self):
        y = softmax(tensor(np.array([1000.0, 0.0])), axis=0).data
        assert np.isfinite(y).all()
        assert abs(y[0] - 1.0) < 1e-12

    def test_matches_extended_precision(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal(5) * 3
        mpmath.mp.dps = 50
        exps = [mpmath.exp(mpmath.mpf(v)) for v in x]
        total = sum(exps)
        expect = np.array([float(e / total) for e in exps])
        y = softmax(tensor(x), axis=0).data
        assert np.abs(y - expect).max() < 1e-15

    def test_sums_to_one(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            x = rng.standard_normal((3, 4, 5)) * rng.uniform(0.1, 50)
            axis = int(rng.integers(0, 3))
            y = softmax(tensor(x), axis=axis).data
            assert np.abs(y.sum(axis=axis) - 1.0).max() < 1e-12

    def test_invalid_axis(self):
        with pytest.raises(ValueError):
            softmax(tensor(np.zeros((2, 2))), axis=5)


class TestGelu:
    def test_zero_fixed_point(self):
        assert gelu(tensor(np.array([0.0]))).data[0] == 0.0

    def test_known_value(self):
        # gelu(1) = 1 * Phi(1) with the exact normal CDF
        mpmath.mp.dps = 30
        expect = float(0.5 * (1 + mpmath.erf(mpmath.mpf(1) / mpmath.sqrt(2))))
        assert abs(gelu(tensor(np.array([1.0]))).data[0] - expect) < 1e-15


class TestFFN:
    def test_zero_weights_propagate_outer_bias(self):
        rng = np.random.default_rng(8)
        p = init_ffn(rng, 4, 6)
        p.inner.weight.data[...] = 0.0
        p.inner.bias.data[...] = 0.0
        p.outer.weight.data[...] = 0.0
        y = ffn(tensor(rng.standard_normal((3, 4))), p).data
        assert np.allclose(y, np.tile(p.outer.bias.data, (3, 1)), rtol=0, atol=0)

    def test_matches_composition(self):
        rng = np.random.default_rng(9)
        p = init_ffn(rng, 4, 6)
        x = tensor(rng.standard_normal((5, 4)))
        direct = ffn(x, p).data
        composed = linear(gelu(linear(x, p.inner)), p.outer).data
        assert np.array_equal(direct, composed)


class TestShapeOps:
    def test_concat_split_backward(self):
        rng = np.random.default_rng(10)
        a = tensor(rng.standard_normal((2, 3)))
        b = tensor(rng.standard_normal((2, 5)))
        out = quad_loss(concat([a, b], axis=1))
        out.backward()
        assert a.grad.shape == (2, 3) and b.grad.shape == (2, 5)
        assert np.abs(a.grad - 2 * a.data).max() < 1e-12

    def test_broadcast_backward_sums(self):
        a = tensor(np.array([1.0, 2.0]))
        y = broadcast_to(a, (3, 2))
        tsum(y).backward()
        assert np.array_equal(a.grad, np.array([3.0, 3.0]))

    def test_take_slice_scatter(self):
        a = tensor(np.arange(12.0).reshape(3, 4))
        tsum(take_slice(a, (slice(0, 2), 1))).backward()
        expect = np.zeros((3, 4))
        expect[0, 1] = expect[1, 1] = 1.0
        assert np.array_equal(a.grad, expect)

    def test_reshape_round_trip(self):
        a = tensor(np.arange(6.0))
        y = reshape(a, (2, 3))
        tsum(nn.mul(y, y)).backward()
        assert np.array_equal(a.grad, 2 * a.data)


class TestFiniteGuard:
    def test_overflow_trips(self):
        with pytest.raises(NonFiniteError):
            nn.mul(tensor(np.array([1e308])), tensor(np.array([1e308])))

    def test_nan_leaf_rejected(self):
        with pytest.raises(NonFiniteError):
            tensor(np.array([np.nan]))


class TestGradCheck:
    def test_quadratic_exact(self):
        x = tensor(np.array([1.0, 2.0]))
        rep = grad_check(lambda: quad_loss(x), [("x", x)], eps=1e-5, tol=1e-9)
        assert rep.passed
        x.zero_grad()
        quad_loss(x).backward()
        assert np.allclose(x.grad, [2.0, 4.0], atol=1e-12)

    def test_layer_norm_random(self):
        rng = np.random.default_rng(11)
        x = tensor(rng.standard_normal((4, 6)))
        p = init_norm(6)
        rep = grad_check(
            lambda: quad_loss(layer_norm(x, p)),
            [("x", x), ("gain", p.gain), ("offset", p.offset)],
            tol=1e-6,
        )
        assert rep.passed, str(rep)

    @pytest.mark.parametrize("op_name", ["linear", "layer_norm", "rms_norm", "softmax", "gelu", "ffn"])
    def test_primitives_on_random_shapes(self, op_name):
        # backward-of-forward consistency over 20 random shapes per primitive
        rng = np.random.default_rng(hash(op_name) % 2**32)
        for trial in range(20):
            lead = tuple(int(s) for s in rng.integers(1, 4, size=int(rng.integers(1, 3))))
            # keep norm inputs off the epsilon-regularized zero-vector point
            d = int(rng.integers(2, 7)) if op_name in ("layer_norm", "rms_norm") else int(rng.integers(1, 7))
            x = tensor(rng.standard_normal(lead + (d,)))
            params = []
            if op_name == "linear":
                p = init_linear(rng, d, int(rng.integers(1, 6)))
                f = lambda: quad_loss(linear(x, p))
                params = list(p.named("p"))
            elif op_name == "layer_norm":
                p = init_norm(d)
                f = lambda: quad_loss(layer_norm(x, p))
                params = list(p.named("p"))
            elif op_name == "rms_norm":
                p = init_norm(d)
                f = lambda: quad_loss(rms_norm(x, p))
                params = list(p.named("p"))
            elif op_name == "softmax":
                axis = int(rng.integers(0, x.ndim))
                f = lambda: quad_loss(softmax(x, axis))
            elif op_name == "gelu":
                f = lambda: quad_loss(gelu(x))
            else:
                p = init_ffn(rng, d, int(rng.integers(1, 8)))
                f = lambda: quad_loss(ffn(x, p))
                params = list(p.named("p"))
            rep = grad_check(f, [("x", x)] + params, eps=1e-5, tol=1e-6)
            assert rep.passed, f"{op_name} trial {trial}: {rep}"


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        named = [
            ("a.weight", tensor(rng.standard_normal((3, 4)))),
            ("b.bias", tensor(rng.standard_normal(7))),
            ("c.scalar", tensor(np.array(2.5))),
            ("d.empty", tensor(np.zeros(0))),
        ]
        path = tmp_path / "params.ckpt"
        save_params(named, path)
        loaded = load_params(path)
        for name, t in named:
            assert loaded[name].shape == t.shape
            assert np.array_equal(loaded[name], t.data)
        fresh = [(name, tensor(np.zeros_like(t.data))) for name, t in named]
        restore_params(fresh, loaded)
        for (_, a), (_, b) in zip(named, fresh):
            assert a.data.tobytes() == b.data.tobytes()

    def test_name_mismatch_rejected(self, tmp_path):
        named = [("a", tensor(np.zeros(2)))]
        path = tmp_path / "p.ckpt"
        save_params(named, path)
        with pytest.raises(ValueError):
            restore_params([("b", tensor(np.zeros(2)))], load_params(path))
