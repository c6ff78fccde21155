from unittest import TestCase

import numpy as np

from contextnmt.nmtTensor import (
    ComputationTape,
    Tensor,
    backward,
    concat,
    elementwise,
    expand,
    get_default_dtype,
    layer_norm,
    log_softmax,
    matmul,
    numerical_gradient,
    pick,
    precision,
    relative_error,
    reshape,
    set_default_dtype,
    softmax,
    take,
    tanh,
)
from contextnmt.nmtUtils import (
    ContractError,
    DimensionError,
    EmptySupportError,
    OutsideOfTapeError,
)


class TestTensor(TestCase):
    def test_creation(self):
        a = Tensor([[1, 2], [3, 4]])
        self.assertEqual(a.shape, (2, 2))
        self.assertEqual(a.dtype, np.float32)
        self.assertFalse(a.requires_grad)
        self.assertIsNone(a.grad)
        with precision(np.float64):
            self.assertEqual(Tensor([1.0]).dtype, np.float64)
        self.assertEqual(get_default_dtype(), np.float32)

    def test_unsupported_precision(self):
        with self.assertRaises(ValueError):
            set_default_dtype(np.float16)
        self.assertEqual(get_default_dtype(), np.float32)

    def test_matmul(self):
        a = Tensor([[1.0, 2.0]])
        b = Tensor([[1.0, 0.0, 2.0], [0.0, 1.0, 3.0]])
        np.testing.assert_allclose((a @ b).data, [[1.0, 2.0, 8.0]])
        with self.assertRaises(DimensionError):
            matmul(b, a)

    def test_elementwise_shapes(self):
        a = Tensor(np.ones((2, 3)))
        np.testing.assert_allclose(elementwise("add", a, 1.0).data, 2 * np.ones((2, 3)))
        np.testing.assert_allclose(
            elementwise("scale", a, 3.0).data, 3 * np.ones((2, 3))
        )
        with self.assertRaises(DimensionError):
            elementwise("mul", a, Tensor(np.ones((3, 2))))
        with self.assertRaises(ValueError):
            elementwise("relu", a)

    def test_shapes(self):
        a = Tensor(np.arange(6).reshape(2, 3))
        self.assertEqual(reshape(a, (3, 2)).shape, (3, 2))
        with self.assertRaises(DimensionError):
            reshape(a, (4, 2))
        self.assertEqual(expand(Tensor([1.0, 2.0]), 0, 5).shape, (5, 2))
        self.assertEqual(concat([a, a], axis=0).shape, (4, 3))
        with self.assertRaises(DimensionError):
            concat([a, Tensor(np.ones((3, 3)))], axis=1)
        np.testing.assert_equal(pick(a, [2, 0]).data, [2.0, 3.0])

    def test_take(self):
        table = Tensor(np.arange(8).reshape(4, 2))
        np.testing.assert_equal(take(table, [3, 0]).data, [[6, 7], [0, 1]])
        with self.assertRaises(ContractError):
            take(table, [4])
        with self.assertRaises(ContractError):
            take(table, [-1])


class TestSoftmax(TestCase):
    def test_rows_sum_to_one(self):
        x = Tensor([[1.0, 2.0, 3.0], [1000.0, 1000.0, 1000.0]])
        p = softmax(x)
        np.testing.assert_allclose(p.data.sum(axis=1), [1.0, 1.0], rtol=1e-6)
        np.testing.assert_allclose(p.data[1], [1 / 3] * 3, rtol=1e-6)
        self.assertTrue(np.all(np.isfinite(log_softmax(x).data)))

    def test_mask(self):
        x = Tensor([[1.0, 5.0, 2.0]])
        p = softmax(x, mask=[[True, False, True]])
        self.assertEqual(p.data[0, 1], 0.0)
        expected = np.exp([1.0, 2.0]) / np.exp([1.0, 2.0]).sum()
        np.testing.assert_allclose(p.data[0, [0, 2]], expected, rtol=1e-6)

    def test_empty_support(self):
        with self.assertRaises(EmptySupportError):
            softmax(Tensor([[1.0, 2.0]]), mask=[[False, False]])
        with self.assertRaises(DimensionError):
            softmax(Tensor([[1.0, 2.0]]), mask=[[True, False, True]])

    def test_log_softmax(self):
        x = Tensor([[0.5, -1.0, 2.0]])
        np.testing.assert_allclose(
            np.exp(log_softmax(x).data), softmax(x).data, rtol=1e-6
        )


class TestBackward(TestCase):
    def test_matmul_tanh(self):
        w = Tensor(np.eye(2), requires_grad=True)
        x = Tensor([[0.5, -1.0]])
        with ComputationTape():
            loss = tanh(matmul(x, w)).sum()
        backward(loss)
        y = np.tanh(np.array([[0.5, -1.0]]))
        expected = np.array([[0.5], [-1.0]]) @ (1 - y * y)
        np.testing.assert_allclose(w.grad, expected, rtol=1e-5)

    def test_accumulates(self):
        w = Tensor([2.0], requires_grad=True)
        for _ in range(2):
            with ComputationTape():
                loss = (w * w).sum()
            backward(loss)
        np.testing.assert_allclose(w.grad, [8.0])
        w.zero_grad()
        self.assertIsNone(w.grad)

    def test_outside_of_tape(self):
        w = Tensor([2.0], requires_grad=True)
        loss = (w * Tensor([3.0])).sum()
        self.assertEqual(loss.item(), 6.0)
        with self.assertRaises(OutsideOfTapeError):
            backward(loss)

    def test_scalar_loss_only(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        with ComputationTape():
            y = tanh(w)
        with self.assertRaises(ContractError):
            backward(y)

    def test_no_gradient_through_constants(self):
        w = Tensor([1.0], requires_grad=True)
        c = Tensor([4.0])
        with ComputationTape():
            loss = (w * c).sum()
        backward(loss)
        self.assertIsNone(c.grad)
        np.testing.assert_allclose(w.grad, [4.0])


class TestGradientCheck(TestCase):
    def _check(self, f, tensors):
        for t in tensors:
            t.zero_grad()
        with ComputationTape():
            loss = f()
        backward(loss)
        for t in tensors:
            numeric = numerical_gradient(f, t)
            self.assertLess(relative_error(t.grad, numeric), 1e-4)

    def test_layer_norm(self):
        with precision(np.float64):
            rng = np.random.default_rng(0)
            x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            gain = Tensor(rng.normal(size=4), requires_grad=True)
            bias = Tensor(rng.normal(size=4), requires_grad=True)
            weights = Tensor(rng.normal(size=(3, 4)))
            self._check(
                lambda: (layer_norm(x, gain, bias) * weights).sum(), [x, gain, bias]
            )

    def test_masked_softmax(self):
        with precision(np.float64):
            rng = np.random.default_rng(1)
            x = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
            weights = Tensor(rng.normal(size=(2, 5)))
            mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
            self._check(lambda: (softmax(x, mask) * weights).sum(), [x])

    def test_log_softmax_pick(self):
        with precision(np.float64):
            rng = np.random.default_rng(2)
            x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
            self._check(lambda: pick(log_softmax(x), [0, 5, 2]).sum(), [x])

    def test_embedding_and_concat(self):
        with precision(np.float64):
            rng = np.random.default_rng(3)
            table = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
            w = Tensor(rng.normal(size=(6, 2)), requires_grad=True)

            def f():
                rows = take(table, [1, 1, 4])
                both = concat([rows, tanh(rows)], axis=-1)
                return tanh(matmul(both, w)).sum()

            self._check(f, [table, w])
