"""Numeric core: op semantics, stability, and finite-difference agreement."""

import math

import numpy as np
import pytest

from slmkit import autograd as ag
from slmkit.autograd import Tape, Tensor, finite_diff_grad
from slmkit.errors import ContractError, DimensionError, FullyMaskedRowError


def fd_check(build_loss, params, tol=1e-4, h=1e-5):
    """Assert backprop gradients match central differences for every coordinate."""
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    numeric = finite_diff_grad(lambda: float(build_loss().data), params, h=h)
    for got, want in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(got), np.abs(want)), 1e-6)
        assert float((np.abs(got - want) / denom).max()) < tol


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 0.0], [0.0, 1.0]])
        b = Tensor([[2.0, 3.0], [4.0, 5.0]])
        assert np.array_equal(ag.matmul(a, b).data, b.data)

    def test_hand_computed(self):
        out = ag.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(5, 6))
        want = np.zeros((4, 6))
        for i in range(4):
            for j in range(6):
                for k in range(5):
                    want[i, j] += a[i, k] * b[k, j]
        got = ag.matmul(Tensor(a), Tensor(b)).data
        assert np.abs(got - want).max() < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        fd_check(lambda: ag.sum_all(ag.square(ag.matmul(a, b))), [a, b])

    def test_reused_operand(self):
        # same tensor on both sides: gradients from both paths accumulate
        x = Tensor(np.random.default_rng(2).normal(size=(3, 3)), requires_grad=True)
        fd_check(lambda: ag.sum_all(ag.square(ag.matmul(x, x))), [x])


class TestMaskedSoftmax:
    def test_uniform(self):
        out = ag.masked_softmax(Tensor([0.0, 0.0, 0.0]), np.array([True, True, True]))
        assert np.allclose(out.data, [1 / 3] * 3)

    def test_single_allowed(self):
        out = ag.masked_softmax(Tensor([5.0, 5.0]), np.array([True, False]))
        assert out.data.tolist() == [1.0, 0.0]

    def test_partial_row(self):
        out = ag.masked_softmax(Tensor([1.0, 2.0, 3.0]), np.array([True, False, True]))
        z = math.exp(1.0) + math.exp(3.0)
        assert out.data[1] == 0.0
        assert abs(out.data[0] - math.exp(1.0) / z) < 1e-12
        assert abs(out.data[2] - math.exp(3.0) / z) < 1e-12

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            scores = Tensor(rng.normal(size=(6, 9)) * 10)
            allow = rng.random((6, 9)) < 0.6
            allow[:, 0] = True  # keep rows non-empty
            out = ag.masked_softmax(scores, allow)
            assert np.abs(out.data.sum(axis=1) - 1.0).max() < 1e-6
            assert np.all(out.data[~allow] == 0.0)

    def test_huge_scores_stable(self):
        out = ag.masked_softmax(Tensor([[1e4, 1e4 + 1.0]]), np.array([[True, True]]))
        assert np.all(np.isfinite(out.data))
        assert abs(out.data.sum() - 1.0) < 1e-12

    def test_fully_masked_row_names_index(self):
        allow = np.ones((3, 3), dtype=bool)
        allow[2] = False
        with pytest.raises(FullyMaskedRowError, match="row 2"):
            ag.masked_softmax(Tensor(np.zeros((3, 3))), allow)

    def test_gradient(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        allow = rng.random((4, 5)) < 0.7
        allow[:, 2] = True
        w = rng.normal(size=(4, 5))
        fd_check(lambda: ag.sum_all(ag.mul_const(ag.masked_softmax(x, allow), w)), [x])


class TestLayerNorm:
    def _params(self, d):
        return Tensor(np.ones(d), requires_grad=True), Tensor(np.zeros(d), requires_grad=True)

    def test_constant_row(self):
        gain, bias = self._params(4)
        out = ag.layer_norm(Tensor([[1.0, 1.0, 1.0, 1.0]]), gain, bias)
        assert np.allclose(out.data, 0.0)

    def test_already_normalized(self):
        gain, bias = self._params(2)
        out = ag.layer_norm(Tensor([[1.0, -1.0]]), gain, bias)
        assert np.abs(out.data - [[1.0, -1.0]]).max() < 1e-4  # up to the 1e-5 epsilon

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(5)
        row = rng.normal(size=8) * 3
        gain = rng.normal(size=8)
        bias = rng.normal(size=8)
        mu = sum(row) / 8
        var = sum((v - mu) ** 2 for v in row) / 8
        want = [(v - mu) / math.sqrt(var + 1e-5) * g + b for v, g, b in zip(row, gain, bias)]
        out = ag.layer_norm(Tensor([row]), Tensor(gain), Tensor(bias))
        assert np.abs(out.data[0] - want).max() < 1e-10

    def test_gradient(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
        gain = Tensor(rng.normal(size=6), requires_grad=True)
        bias = Tensor(rng.normal(size=6), requires_grad=True)
        w = rng.normal(size=(3, 6))
        fd_check(lambda: ag.sum_all(ag.mul_const(ag.layer_norm(x, gain, bias), w)),
                 [x, gain, bias])

    def test_needs_two_features(self):
        with pytest.raises(DimensionError):
            ag.layer_norm(Tensor([[1.0]]), Tensor([1.0]), Tensor([0.0]))


class TestCrossEntropy:
    def test_uniform_logits(self):
        out = ag.cross_entropy(Tensor(np.zeros((3, 8))), [0, 5, 7])
        assert abs(float(out.data) - math.log(8)) < 1e-12

    def test_saturated(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 100.0
        out = ag.cross_entropy(Tensor(logits), [2])
        assert float(out.data) < 1e-40

    def test_matches_direct_normalization_oracle(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(size=(3, 5)) * 4
        targets = [4, 0, 2]
        want = 0.0
        for row, t in zip(logits, targets):
            p = np.exp(row) / np.exp(row).sum()
            want -= math.log(p[t])
        want /= 3
        out = ag.cross_entropy(Tensor(logits), targets)
        assert abs(float(out.data) - want) < 1e-10

    def test_out_of_range_target(self):
        with pytest.raises(IndexError):
            ag.cross_entropy(Tensor(np.zeros((2, 4))), [0, 4])

    @pytest.mark.parametrize("reduction", ["mean", "sum"])
    def test_gradient(self, reduction):
        rng = np.random.default_rng(8)
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        fd_check(lambda: ag.cross_entropy(x, [1, 0, 5, 3], reduction=reduction), [x])


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape() as tape:
            loss = ag.sum_all(x)
        tape.backward(loss)
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_sum_of_squares_gradient(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape() as tape:
            loss = ag.sum_all(ag.square(x))
        tape.backward(loss)
        assert np.array_equal(x.grad, 2 * x.data)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            y = ag.square(x)
            with pytest.raises(ContractError):
                tape.backward(y)

    def test_loss_from_other_tape_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as t1:
            loss = ag.sum_all(x)
        with Tape() as t2:
            with pytest.raises(ContractError):
                t2.backward(loss)

    def test_no_tape_means_no_recording(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        out = ag.sum_all(ag.square(x))
        assert out.tape is None and not out.requires_grad

    def test_gradients_accumulate_across_paths(self):
        x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        with Tape() as tape:
            loss = ag.sum_all(ag.add_n([ag.square(x), x, x]))
        tape.backward(loss)
        assert np.allclose(x.grad, 2 * x.data + 2.0)


class TestSmallOps:
    def test_add_bias_broadcast(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=4), requires_grad=True)
        fd_check(lambda: ag.sum_all(ag.square(ag.add(x, b))), [x, b])

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ag.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))

    def test_relu_and_transpose_gradients(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        fd_check(lambda: ag.sum_all(ag.square(ag.transpose(ag.relu(x)))), [x])

    def test_gather_scatter_gradient(self):
        rng = np.random.default_rng(11)
        table = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        idx = [0, 2, 2, 4]  # repeated rows must accumulate
        fd_check(lambda: ag.sum_all(ag.square(ag.gather_rows(table, idx))), [table])

    def test_gather_out_of_range(self):
        with pytest.raises(IndexError):
            ag.gather_rows(Tensor(np.ones((3, 2))), [0, 3])

    def test_concat_and_slice_gradients(self):
        rng = np.random.default_rng(12)
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        c = Tensor(rng.normal(size=(3, 3)), requires_grad=True)

        def loss():
            cat = ag.concat_cols([a, b])
            piece = ag.slice_cols(cat, 1, 4)
            rows = ag.concat_rows(piece, c)
            return ag.sum_all(ag.square(rows))

        fd_check(loss, [a, b, c])

    def test_dropout_identity_when_off(self):
        x = Tensor(np.ones((2, 2)))
        assert ag.dropout(x, 0.0, np.random.default_rng(0)) is x
        assert ag.dropout(x, 0.5, None) is x

    def test_dropout_scales_survivors(self):
        x = Tensor(np.ones((100, 100)))
        out = ag.dropout(x, 0.25, np.random.default_rng(0))
        kept = out.data != 0.0
        assert np.allclose(out.data[kept], 1.0 / 0.75)
        assert abs(kept.mean() - 0.75) < 0.02


class TestTensorInvariants:
    def test_non_finite_rejected(self):
        with pytest.raises(ContractError):
            Tensor([1.0, float("nan")])
        with pytest.raises(ContractError):
            Tensor([float("inf")])

    def test_dtype_flag(self):
        t = Tensor([1.0, 2.0], dtype=np.float32)
        assert t.data.dtype == np.float32

    def test_ops_deterministic(self):
        rng = np.random.default_rng(13)
        a = rng.normal(size=(8, 8))
        b = rng.normal(size=(8, 8))
        first = ag.matmul(Tensor(a), Tensor(b)).data
        second = ag.matmul(Tensor(a), Tensor(b)).data
        assert np.array_equal(first, second)


class TestFiniteDiff:
    def test_square_function(self):
        p = Tensor(np.array(3.0))
        (g,) = finite_diff_grad(lambda: float(p.data) ** 2, [p])
        assert abs(float(g) - 6.0) < 1e-8

    def test_sine_at_zero(self):
        p = Tensor(np.array(0.0))
        (g,) = finite_diff_grad(lambda: math.sin(float(p.data)), [p])
        assert abs(float(g) - 1.0) < 1e-9
