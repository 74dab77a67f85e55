import numpy as np
from django.test import SimpleTestCase

from choreo import tensor as T
from choreo.exceptions import ConfigError, NumericalError, ShapeError
from choreo.layers import BatchNorm, Conv2d, ConvTranspose2d
from choreo.tensor import Tensor

TOLERANCE = 1e-4


def leaf(rng, *shape, offset=0.0):
    return Tensor(rng.standard_normal(shape) + offset, requires_grad=True)


def projected(out: Tensor, weights: np.ndarray) -> Tensor:
    """Projection scalaire aléatoire ; une somme simple annulerait le gradient de batch_norm"""
    return T.tsum(T.mul(out, weights))


class ElementwiseGradientTests(SimpleTestCase):
    def test_unary_ops(self):
        rng = np.random.default_rng(0)
        ops = {
            'relu': T.relu,
            'leaky_relu': lambda x: T.leaky_relu(x, 0.2),
            'tanh': T.tanh,
            'sigmoid': T.sigmoid,
            'tabs': T.tabs,
            'neg': T.neg,
        }
        for name, op in ops.items():
            for trial in range(5):
                shape = tuple(rng.integers(1, 4, size=trial % 3 + 1))
                x = leaf(rng, *shape)
                # loin des points anguleux
                x.data[np.abs(x.data) < 1e-2] = 0.5
                weights = rng.standard_normal(shape)
                with self.subTest(op=name, shape=shape):
                    self.assertLess(T.gradcheck(lambda: projected(op(x), weights), [x]), TOLERANCE)

    def test_log_on_positive_inputs(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
        self.assertLess(T.gradcheck(lambda: T.tsum(T.log(x)), [x]), TOLERANCE)

    def test_binary_ops_with_broadcast(self):
        rng = np.random.default_rng(2)
        for trial in range(5):
            a = leaf(rng, 2, 3, 4)
            b = leaf(rng, 3, 1) if trial % 2 else leaf(rng, 2, 3, 4)
            weights = rng.standard_normal((2, 3, 4))
            for op in (T.add, T.sub, T.mul):
                with self.subTest(op=op.__name__, trial=trial):
                    self.assertLess(T.gradcheck(lambda: projected(op(a, b), weights), [a, b]), TOLERANCE)

    def test_elementwise_dispatch(self):
        x = Tensor([-1.0, 2.0])
        np.testing.assert_allclose(T.elementwise('relu', x).data, [0.0, 2.0])
        np.testing.assert_allclose(T.elementwise('add', x, x).data, [-2.0, 4.0])
        with self.assertRaises(ValueError):
            T.elementwise('add', x)

    def test_clip_passes_gradient_only_inside(self):
        x = Tensor([-2.0, 0.5, 3.0], requires_grad=True)
        T.backward(T.tsum(T.clip(x, 0.0, 1.0)))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


class ContractionGradientTests(SimpleTestCase):
    def test_tensordot(self):
        rng = np.random.default_rng(3)
        cases = [
            ((3, 4), (4, 5), 1),
            ((2, 3, 4), (4, 2), ([2], [0])),
            ((2, 3, 4, 5), (3, 5, 2), ([1, 3], [0, 1])),
            ((4, 3), (4, 3), 2),
            ((2, 2, 3), (3, 6), ([2], [0])),
        ]
        for shape_a, shape_b, axes in cases:
            a, b = leaf(rng, *shape_a), leaf(rng, *shape_b)
            out_shape = np.tensordot(a.data, b.data, axes=axes).shape
            weights = rng.standard_normal(out_shape)
            with self.subTest(a=shape_a, b=shape_b):
                self.assertLess(T.gradcheck(lambda: projected(T.tensordot(a, b, axes), weights), [a, b]),
                                TOLERANCE)

    def test_reductions_and_reshapes(self):
        rng = np.random.default_rng(4)
        x = leaf(rng, 2, 3, 4)
        weights = rng.standard_normal((3, 2))
        fn = lambda: projected(T.transpose(T.mean(x, axis=2), (1, 0)), weights)  # noqa: E731
        self.assertLess(T.gradcheck(fn, [x]), TOLERANCE)
        weights_concat = rng.standard_normal((4, 3, 4))
        fn = lambda: projected(T.reshape(T.concat([x, x], axis=1), (4, 3, 4)), weights_concat)  # noqa: E731
        self.assertLess(T.gradcheck(fn, [x]), TOLERANCE)

    def test_take_accumulates_repeated_rows(self):
        table = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
        T.backward(T.tsum(T.take(table, np.array([0, 0, 2]), axis=0)))
        np.testing.assert_array_equal(table.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])

    def test_tensordot_shape_error(self):
        with self.assertRaises(ShapeError):
            T.tensordot(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), axes=([1], [0]))


class ConvolutionGradientTests(SimpleTestCase):
    def test_conv2d(self):
        rng = np.random.default_rng(5)
        for batch, c_in, c_out, length, vertices, kernel, stride, pad in [
            (1, 2, 3, 6, 2, 3, 1, 1),
            (2, 1, 2, 8, 3, 4, 2, 1),
            (2, 3, 2, 5, 1, 1, 1, 0),
            (1, 2, 2, 9, 2, 9, 1, 4),
            (3, 2, 1, 7, 2, 3, 2, 0),
        ]:
            x = leaf(rng, batch, c_in, length, vertices)
            w = leaf(rng, c_out, c_in, kernel, 1)
            b = leaf(rng, c_out)
            out_len = (length + 2 * pad - kernel) // stride + 1
            weights = rng.standard_normal((batch, c_out, out_len, vertices))
            fn = lambda: projected(T.conv2d(x, w, b, stride, pad), weights)  # noqa: E731
            with self.subTest(kernel=kernel, stride=stride):
                self.assertEqual(T.conv2d(x, w, b, stride, pad).shape, weights.shape)
                self.assertLess(T.gradcheck(fn, [x, w, b]), TOLERANCE)

    def test_transposed_conv2d_doubles_time(self):
        rng = np.random.default_rng(6)
        for batch, c_in, c_out, length, vertices in [(1, 2, 3, 1, 1), (2, 3, 2, 2, 3), (1, 1, 1, 4, 2),
                                                     (2, 2, 2, 3, 1), (1, 3, 1, 5, 2)]:
            x = leaf(rng, batch, c_in, length, vertices)
            w = leaf(rng, c_in, c_out, 4, 1)
            b = leaf(rng, c_out)
            weights = rng.standard_normal((batch, c_out, 2 * length, vertices))
            fn = lambda: projected(T.transposed_conv2d(x, w, b, 2, 1), weights)  # noqa: E731
            with self.subTest(length=length):
                self.assertEqual(T.transposed_conv2d(x, w, b, 2, 1).shape, weights.shape)
                self.assertLess(T.gradcheck(fn, [x, w, b]), TOLERANCE)

    def test_conv_accepts_unbatched_input(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 5, 3))
        w = rng.standard_normal((4, 2, 3, 1))
        batched = T.conv2d(x[None], w, pad_t=1).data[0]
        np.testing.assert_allclose(T.conv2d(x, w, pad_t=1).data, batched)

    def test_conv_hand_example(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1)
        w = np.ones((1, 1, 3, 1))
        np.testing.assert_allclose(T.conv2d(x, w, pad_t=1).data.ravel(), [3.0, 6.0, 9.0, 7.0])

    def test_conv_channel_mismatch(self):
        with self.assertRaises(ShapeError):
            T.conv2d(np.ones((1, 3, 4, 2)), np.ones((2, 2, 1, 1)))

    def test_transposed_layer_rejects_other_ratios(self):
        with self.assertRaises(ConfigError):
            ConvTranspose2d(2, 2, kernel_t=3, stride_t=2, pad_t=1)


class NormalizationTests(SimpleTestCase):
    def test_batch_norm_gradients(self):
        rng = np.random.default_rng(8)
        for batch, channels, length, vertices in [(2, 2, 3, 2), (3, 1, 4, 1), (2, 3, 2, 3), (4, 2, 1, 2),
                                                  (2, 1, 5, 3)]:
            x = leaf(rng, batch, channels, length, vertices)
            gamma = Tensor(rng.uniform(0.5, 1.5, channels), requires_grad=True)
            beta = leaf(rng, channels)
            weights = rng.standard_normal(x.shape)
            running_mean, running_var = np.zeros(channels), np.ones(channels)
            fn = lambda: projected(T.batch_norm(x, gamma, beta, running_mean, running_var, True), weights)  # noqa
            with self.subTest(shape=x.shape):
                self.assertLess(T.gradcheck(fn, [x, gamma, beta], h=1e-6), TOLERANCE)

    def test_batch_norm_eval_uses_running_statistics(self):
        layer = BatchNorm(2).eval()
        x = np.arange(16.0).reshape(2, 2, 2, 2)
        np.testing.assert_allclose(layer(x).data, x / np.sqrt(1.0 + 1e-5))

    def test_batch_norm_updates_running_statistics(self):
        layer = BatchNorm(1, momentum=0.5)
        layer(np.full((2, 1, 2, 2), 4.0))
        self.assertAlmostEqual(float(layer.running_mean[0]), 2.0)

    def test_cross_entropy_gradient(self):
        rng = np.random.default_rng(9)
        logits = leaf(rng, 4, 3)
        labels = np.array([0, 2, 1, 2])
        self.assertLess(T.gradcheck(lambda: T.cross_entropy(logits, labels), [logits]), TOLERANCE)

    def test_dropout_requires_rng_in_training(self):
        with self.assertRaises(ValueError):
            T.dropout(Tensor(np.ones(3)), 0.5, training=True)
        x = Tensor(np.ones(3))
        self.assertIs(T.dropout(x, 0.5, training=False), x)


class EngineTests(SimpleTestCase):
    def test_no_grad_skips_graph(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with T.no_grad():
            y = T.mul(x, 2.0)
        self.assertFalse(y.requires_grad)
        self.assertTrue(T.is_grad_enabled())

    def test_gradients_accumulate_through_shared_nodes(self):
        x = Tensor(3.0, requires_grad=True)
        y = T.mul(x, x)
        T.backward(T.add(y, y))
        self.assertAlmostEqual(float(x.grad), 12.0)

    def test_check_finite(self):
        self.assertEqual(T.check_finite(1.5, 'perte'), 1.5)
        with self.assertRaises(NumericalError) as ctx:
            T.check_finite(float('nan'), 'perte', {'step': 3})
        self.assertEqual(ctx.exception.diagnostics, {'step': 3})

    def test_conv_layer_parameter_shapes(self):
        layer = Conv2d(3, 5, 9, pad_t=4, rng=np.random.default_rng(0))
        self.assertEqual(layer.weight.shape, (5, 3, 9, 1))
        self.assertEqual(layer(np.zeros((1, 3, 16, 25))).shape, (1, 5, 16, 25))
