import numpy as np
import pytest

from rulkit import autodiff as ad
from rulkit.autodiff import Parameter, ShapeMismatchError, Tape, TapeError
from rulkit.gradcheck import check_gradients


def const(tape, arr):
    return tape.constant(np.asarray(arr, dtype=np.float64))


class TestMatmul:
    def test_identity(self):
        tape = Tape(np.float64)
        m = np.array([[2.0, -1.0], [0.5, 3.0]])
        out = ad.matmul(const(tape, np.eye(2)), const(tape, m))
        np.testing.assert_allclose(out.data, m)

    def test_hand_product(self):
        # [[1,2],[3,4]] @ [[5],[6]] = [[1*5+2*6],[3*5+4*6]] = [[17],[39]]
        tape = Tape(np.float64)
        out = ad.matmul(const(tape, [[1, 2], [3, 4]]), const(tape, [[5], [6]]))
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_shape_mismatch_names_both_shapes(self):
        tape = Tape(np.float64)
        a = const(tape, np.zeros((2, 3)))
        b = const(tape, np.zeros((4, 2)))
        with pytest.raises(ShapeMismatchError, match=r"\(2, 3\).*\(4, 2\)"):
            ad.matmul(a, b)

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 4, 5))
        w = rng.normal(size=(5, 2))
        tape = Tape(np.float64)
        out = ad.matmul(const(tape, a), const(tape, w))
        expected = np.stack([a[i] @ w for i in range(3)])
        np.testing.assert_allclose(out.data, expected, atol=1e-12)


class TestSoftmax:
    def test_symmetry(self):
        tape = Tape(np.float64)
        out = ad.softmax(const(tape, [0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_large_logits_no_overflow(self):
        tape = Tape(np.float64)
        out = ad.softmax(const(tape, [1000.0, 1000.0]), axis=0)
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_values_against_direct_evaluation(self):
        # exp([0,1,2]) / sum = [0.09003057, 0.24472847, 0.66524096]
        e = np.exp(np.array([0.0, 1.0, 2.0]))
        expected = e / e.sum()
        tape = Tape(np.float64)
        out = ad.softmax(const(tape, [0.0, 1.0, 2.0]), axis=0)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)
        np.testing.assert_allclose(out.data, [0.09003, 0.24473, 0.66524], atol=5e-6)

    def test_invalid_axis(self):
        tape = Tape(np.float64)
        with pytest.raises(ShapeMismatchError):
            ad.softmax(const(tape, [[1.0, 2.0]]), axis=2)

    def test_rows_nonnegative_sum_to_one(self):
        rng = np.random.default_rng(3)
        tape = Tape(np.float64)
        out = ad.softmax(const(tape, rng.normal(size=(6, 5)) * 10), axis=-1)
        assert np.all(out.data >= 0)
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(6), atol=1e-6)


class TestBackward:
    def test_sum_gives_ones(self):
        tape = Tape(np.float64)
        w = Parameter("w", np.random.default_rng(0).normal(size=(2, 3)))
        tape.backward(ad.tsum(tape.leaf(w)))
        np.testing.assert_array_equal(w.grad, np.ones((2, 3)))

    def test_square_sum(self):
        # d/dw sum(w*w) = 2w; at w=[3] that is [6]
        tape = Tape(np.float64)
        w = Parameter("w", np.array([3.0]))
        lw = tape.leaf(w)
        tape.backward(ad.tsum(ad.multiply(lw, lw)))
        np.testing.assert_array_equal(w.grad, [6.0])

    def test_non_scalar_root_rejected(self):
        tape = Tape(np.float64)
        w = Parameter("w", np.ones(3))
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(tape.leaf(w))

    def test_stale_tape_rejected(self):
        tape = Tape(np.float64)
        w = Parameter("w", np.ones(()))
        root = ad.tsum(tape.leaf(w))
        tape.backward(root)
        with pytest.raises(TapeError, match="consumed"):
            tape.backward(root)
        with pytest.raises(TapeError, match="consumed"):
            tape.constant([1.0])

    def test_unused_leaf_gets_zeros(self):
        tape = Tape(np.float64)
        used = Parameter("used", np.ones(2))
        unused = Parameter("unused", np.ones((2, 2)))
        lu = tape.leaf(used)
        tape.leaf(unused)
        tape.backward(ad.tsum(lu))
        np.testing.assert_array_equal(unused.grad, np.zeros((2, 2)))

    def test_reuse_sums_both_contributions(self):
        # y = w + w => dy/dw = 2
        tape = Tape(np.float64)
        w = Parameter("w", np.array([1.5, -2.0]))
        lw = tape.leaf(w)
        tape.backward(ad.tsum(ad.add(lw, lw)))
        np.testing.assert_array_equal(w.grad, [2.0, 2.0])

    def test_cross_tape_operands_rejected(self):
        t1, t2 = Tape(np.float64), Tape(np.float64)
        a = t1.constant([1.0])
        b = t2.constant([1.0])
        with pytest.raises(TapeError, match="different tapes"):
            ad.add(a, b)


def _fd_case(name, shapes, build, positive=False, avoid_zero=False):
    """One finite-difference scenario: params with given shapes feed build()."""
    rng = np.random.default_rng(hash(name) % (2**32))
    params = []
    for i, shape in enumerate(shapes):
        data = rng.normal(size=shape)
        if positive:
            data = np.abs(data) + 0.5
        if avoid_zero:
            data = np.where(np.abs(data) < 0.05, 0.3, data)
        params.append(Parameter(f"{name}.{i}", data.astype(np.float64)))
    return params, build


FD_CASES = {
    "matmul": ([(3, 4), (4, 2)], lambda t, p: ad.matmul(t.leaf(p[0]), t.leaf(p[1]))),
    "matmul_batched": ([(2, 3, 4), (4, 2)], lambda t, p: ad.matmul(t.leaf(p[0]), t.leaf(p[1]))),
    "add": ([(3, 4), (3, 4)], lambda t, p: ad.add(t.leaf(p[0]), t.leaf(p[1]))),
    "add_bias": ([(2, 3, 4), (4,)], lambda t, p: ad.add(t.leaf(p[0]), t.leaf(p[1]))),
    "sub": ([(4, 3), (4, 3)], lambda t, p: ad.sub(t.leaf(p[0]), t.leaf(p[1]))),
    "multiply": ([(3, 5), (3, 5)], lambda t, p: ad.multiply(t.leaf(p[0]), t.leaf(p[1]))),
    "mul_rowvec": ([(2, 3, 4), (4,)], lambda t, p: ad.mul_rowvec(t.leaf(p[0]), t.leaf(p[1]))),
    "scale": ([(3, 4)], lambda t, p: ad.scale(t.leaf(p[0]), -2.5)),
    "transpose2d": ([(2, 3, 4)], lambda t, p: ad.transpose2d(t.leaf(p[0]))),
    "reshape": ([(2, 6)], lambda t, p: ad.reshape(t.leaf(p[0]), (3, 4))),
    "concat": ([(2, 3), (2, 2), (2, 4)],
               lambda t, p: ad.concat([t.leaf(q) for q in p], axis=1)),
    "slice_axis": ([(4, 6)], lambda t, p: ad.slice_axis(t.leaf(p[0]), 1, 2, 5)),
    "mean": ([(3, 4)], lambda t, p: ad.mean(t.leaf(p[0]))),
    "tsum": ([(3, 4)], lambda t, p: ad.tsum(t.leaf(p[0]))),
    "tanh": ([(3, 4)], lambda t, p: ad.tanh(t.leaf(p[0]))),
    "sigmoid": ([(3, 4)], lambda t, p: ad.sigmoid(t.leaf(p[0]))),
    "softmax_rows": ([(4, 5)], lambda t, p: ad.softmax(t.leaf(p[0]), axis=-1)),
    "softmax_cols": ([(4, 5)], lambda t, p: ad.softmax(t.leaf(p[0]), axis=0)),
    "layer_norm": ([(4, 6)], lambda t, p: ad.layer_norm(t.leaf(p[0]))),
}


@pytest.mark.parametrize("name", sorted(FD_CASES))
def test_op_gradients_match_finite_differences(name):
    shapes, op = FD_CASES[name]
    params, _ = _fd_case(name, shapes, op)

    def build(tape):
        out = op(tape, params)
        rng = np.random.default_rng(99)
        proj = rng.normal(size=out.shape)
        return ad.tsum(ad.multiply(out, tape.constant(proj)))

    assert check_gradients(params, build, eps=1e-4, floor=1e-3) < 1e-4


def test_sqrt_gradient():
    params, _ = _fd_case("sqrt", [(3, 4)], None, positive=True)

    def build(tape):
        out = ad.sqrt(tape.leaf(params[0]))
        proj = np.random.default_rng(99).normal(size=out.shape)
        return ad.tsum(ad.multiply(out, tape.constant(proj)))

    assert check_gradients(params, build, eps=1e-5, floor=1e-3) < 1e-4


def test_relu_gradient_away_from_kink():
    params, _ = _fd_case("relu", [(4, 5)], None, avoid_zero=True)

    def build(tape):
        out = ad.relu(tape.leaf(params[0]))
        proj = np.random.default_rng(99).normal(size=out.shape)
        return ad.tsum(ad.multiply(out, tape.constant(proj)))

    assert check_gradients(params, build, eps=1e-4, floor=1e-3) < 1e-4


def test_dropout_gradient_with_frozen_mask():
    params, _ = _fd_case("dropout", [(5, 6)], None)

    def build(tape):
        rng = np.random.default_rng(17)  # same mask on every call
        out = ad.dropout(tape.leaf(params[0]), 0.4, True, rng)
        proj = np.random.default_rng(99).normal(size=out.shape)
        return ad.tsum(ad.multiply(out, tape.constant(proj)))

    assert check_gradients(params, build, eps=1e-4, floor=1e-3) < 1e-4


def test_shared_leaf_gradient_matches_finite_differences():
    # One tensor feeding two branches must sum both contributions.
    params, _ = _fd_case("shared", [(3, 3), (3, 3)], None)

    def build(tape):
        w = tape.leaf(params[0])
        a = tape.leaf(params[1])
        out = ad.add(ad.matmul(w, a), ad.matmul(a, w))
        proj = np.random.default_rng(99).normal(size=out.shape)
        return ad.tsum(ad.multiply(out, tape.constant(proj)))

    assert check_gradients(params, build, eps=1e-4, floor=1e-3) < 1e-4


class TestShapeAndPolicy:
    def test_concat_then_slice_is_identity(self):
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
        tape = Tape(np.float64)
        merged = ad.concat([const(tape, a), const(tape, b)], axis=0)
        back = ad.slice_axis(merged, 0, 0, 3)
        np.testing.assert_array_equal(back.data, a)
        tail = ad.slice_axis(merged, 0, 3, 8)
        np.testing.assert_array_equal(tail.data, b)

    def test_add_rejects_general_broadcast(self):
        tape = Tape(np.float64)
        a = const(tape, np.zeros((3, 4)))
        b = const(tape, np.zeros((1, 4)))
        with pytest.raises(ShapeMismatchError):
            ad.add(a, b)

    def test_multiply_rejects_broadcast(self):
        tape = Tape(np.float64)
        with pytest.raises(ShapeMismatchError):
            ad.multiply(const(tape, np.zeros((3, 4))), const(tape, np.zeros(4)))

    def test_slice_out_of_bounds(self):
        tape = Tape(np.float64)
        with pytest.raises(ShapeMismatchError):
            ad.slice_axis(const(tape, np.zeros((3, 4))), 0, 1, 5)

    def test_dropout_eval_is_identity(self):
        tape = Tape(np.float32)
        x = const(tape, np.ones((4, 4)))
        rng = np.random.default_rng(0)
        out = ad.dropout(x, 0.5, False, rng)
        assert out is x
        # eval mode must not consume randomness
        assert rng.random() == np.random.default_rng(0).random()

    def test_dropout_train_scales_survivors(self):
        tape = Tape(np.float64)
        x = const(tape, np.ones((100, 100)))
        out = ad.dropout(x, 0.25, True, np.random.default_rng(11))
        values = np.unique(out.data)
        np.testing.assert_allclose(sorted(values), [0.0, 1.0 / 0.75])
        drop_rate = np.mean(out.data == 0.0)
        assert abs(drop_rate - 0.25) < 0.02

    def test_finite_outputs_on_valid_inputs(self):
        rng = np.random.default_rng(8)
        tape = Tape(np.float32)
        x = const(tape, rng.normal(size=(5, 6)))
        for out in (ad.tanh(x), ad.sigmoid(x), ad.relu(x), ad.softmax(x, -1),
                    ad.layer_norm(x), ad.mean(x), ad.tsum(x)):
            assert np.all(np.isfinite(out.data))
