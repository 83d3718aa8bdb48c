# -*- coding: utf-8 -*-
"""
测试numerics模块：张量运算、反向规则与梯度校验
"""

import os
import sys
import unittest

import numpy as np
from scipy import ndimage

# 添加项目根目录到系统路径
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from flowcrypt.errors import InvalidArgumentError, UnsupportedOperationError
from flowcrypt.numerics import (
    BACKWARD_RULES,
    GradientTape,
    Tensor,
    absolute,
    amax,
    amin,
    block_dct_filter,
    clip_min,
    concat,
    conv2d,
    dct_matrix,
    depthwise_conv2d,
    exp,
    finite_difference_check,
    gather,
    get_default_dtype,
    leaky_relu,
    log,
    mean,
    median_filter,
    pearson,
    precision,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    soft_histogram,
    square,
)

# 原语梯度校验的相对误差上限
PRIMITIVE_TOLERANCE = 1e-4


def weighted(out, rng):
    """用随机权重把输出收缩为标量，保证各坐标梯度量级为 O(1)"""
    return reduce_sum(out * Tensor(rng.standard_normal(out.shape)))


class TestTensor(unittest.TestCase):
    """
    测试Tensor基础行为
    """

    def test_default_dtype_and_precision_context(self):
        """默认float32，precision 上下文内切换并在退出后恢复"""
        self.assertEqual(Tensor([1, 2, 3]).dtype, np.float32)
        with precision(np.float64):
            self.assertEqual(get_default_dtype(), np.float64)
            self.assertEqual(Tensor([1, 2, 3]).dtype, np.float64)
        self.assertEqual(get_default_dtype(), np.float32)

    def test_operators_forward(self):
        """运算符重载与 numpy 结果一致"""
        a = Tensor(np.array([1.0, 2.0, 4.0]))
        b = Tensor(np.array([2.0, 2.0, 2.0]))
        np.testing.assert_allclose((a + b).data, [3, 4, 6])
        np.testing.assert_allclose((a - b).data, [-1, 0, 2])
        np.testing.assert_allclose((a * b).data, [2, 4, 8])
        np.testing.assert_allclose((a / b).data, [0.5, 1, 2])
        np.testing.assert_allclose((-a).data, [-1, -2, -4])
        np.testing.assert_allclose((1.0 - a).data, [0, -1, -3])

    def test_no_tape_no_record(self):
        """没有激活的梯度带时不记录任何运算"""
        with GradientTape() as tape:
            pass
        a = Tensor(np.ones(3), requires_grad=True)
        exp(a)
        self.assertEqual(len(tape.entries), 0)

    def test_constant_inputs_not_recorded(self):
        """输入都不需要梯度时不记录"""
        with GradientTape() as tape:
            exp(Tensor(np.ones(3)))
        self.assertEqual(len(tape.entries), 0)

    def test_backward_requires_scalar(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with GradientTape() as tape:
            out = exp(a)
        with self.assertRaises(InvalidArgumentError):
            tape.backward(out)

    def test_unregistered_operation(self):
        """梯度带上出现未注册的运算时报错"""
        a = Tensor(np.ones(2), requires_grad=True)
        with GradientTape() as tape:
            out = reduce_sum(a)
            out._tracked = True
            tape.record('mystery_op', (a,), out, {})
        self.assertNotIn('mystery_op', BACKWARD_RULES)
        with self.assertRaises(UnsupportedOperationError):
            tape.backward(out)

    def test_unused_parameter_gets_zero_gradient(self):
        a = Tensor(np.ones(3), requires_grad=True)
        b = Tensor(np.ones(2), requires_grad=True)
        with GradientTape() as tape:
            loss = reduce_sum(a)
        grad_a, grad_b = tape.gradient(loss, [a, b])
        np.testing.assert_array_equal(grad_a, np.ones(3))
        np.testing.assert_array_equal(grad_b, np.zeros(2))

    def test_broadcast_gradient(self):
        """广播相加时梯度按被广播的轴求和"""
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones((1, 3)), requires_grad=True)
        with GradientTape() as tape:
            loss = reduce_sum(a + b)
        _, grad_b = tape.gradient(loss, [a, b])
        np.testing.assert_array_equal(grad_b, np.full((1, 3), 2.0))


class TestForward(unittest.TestCase):
    """
    测试各运算的前向取值
    """

    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_conv2d_matches_direct_loop(self):
        """conv2d 与直接循环求和一致"""
        x = self.rng.standard_normal((2, 5, 6))
        w = self.rng.standard_normal((3, 2, 3, 3))
        b = self.rng.standard_normal(3)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        expected = np.zeros((3, 5, 6))
        for o in range(3):
            for yy in range(5):
                for xx in range(6):
                    expected[o, yy, xx] = b[o] + np.sum(w[o] * padded[:, yy:yy + 3, xx:xx + 3])
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_conv2d_linear_without_bias(self):
        """偏置为0时 conv(a·x + b·y) = a·conv(x) + b·conv(y)"""
        x = self.rng.standard_normal((4, 6, 5))
        y = self.rng.standard_normal((4, 6, 5))
        w = Tensor(self.rng.standard_normal((3, 4, 3, 3)))
        bias = Tensor(np.zeros(3))
        a, b = 1.7, -0.6
        combined = conv2d(Tensor(a * x + b * y), w, bias).data
        separate = a * conv2d(Tensor(x), w, bias).data + b * conv2d(Tensor(y), w, bias).data
        np.testing.assert_allclose(combined, separate, atol=1e-5)

    def test_conv2d_validation(self):
        x = Tensor(np.zeros((2, 4, 4)))
        with self.assertRaises(InvalidArgumentError):
            conv2d(x, Tensor(np.zeros((3, 1, 3, 3))), Tensor(np.zeros(3)))
        with self.assertRaises(InvalidArgumentError):
            conv2d(x, Tensor(np.zeros((3, 2, 2, 2))), Tensor(np.zeros(3)))
        with self.assertRaises(InvalidArgumentError):
            conv2d(x, Tensor(np.zeros((3, 2, 3, 3))), Tensor(np.zeros(2)))

    def test_leaky_relu(self):
        out = leaky_relu(Tensor(np.array([-1.0, 0.0, 2.0])), 0.2).data
        np.testing.assert_allclose(out, [-0.2, 0.0, 2.0])

    def test_sigmoid_extremes_finite(self):
        out = sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0])

    def test_gather_and_concat(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        np.testing.assert_array_equal(gather(x, np.array([[5, 0], [2, 2]])).data, [[5, 0], [2, 2]])
        joined = concat([x, x], axis=1)
        self.assertEqual(joined.shape, (2, 6))

    def test_dct_matrix_orthogonal(self):
        d = dct_matrix(8)
        np.testing.assert_allclose(d @ d.T, np.eye(8), atol=1e-12)

    def test_block_dct_filter_full_keep_is_identity(self):
        """保留全部系数时分块DCT滤波为恒等变换（含非8整除尺寸）"""
        x = self.rng.random((3, 10, 12))
        out = block_dct_filter(Tensor(x), np.ones((8, 8))).data
        np.testing.assert_allclose(out, x, atol=1e-10)

    def test_median_filter_matches_scipy(self):
        x = self.rng.random((3, 7, 8))
        out = median_filter(Tensor(x), 3).data
        expected = ndimage.median_filter(x, size=(1, 3, 3), mode='reflect')
        np.testing.assert_array_equal(out, expected)

    def test_soft_histogram_mass(self):
        """软直方图总质量等于元素个数，取值恰好在电平上时落在单个箱"""
        x = self.rng.random((3, 4, 4))
        hist = soft_histogram(Tensor(x)).data
        self.assertAlmostEqual(float(hist.sum()), 48.0, places=4)
        levels = Tensor(np.array([0.0, 1.0, 128 / 255]))
        hist = soft_histogram(levels).data
        self.assertAlmostEqual(float(hist[0]), 1.0, places=5)
        self.assertAlmostEqual(float(hist[255]), 1.0, places=5)
        self.assertAlmostEqual(float(hist[128]), 1.0, places=5)

    def test_pearson(self):
        x = self.rng.standard_normal(100)
        r = pearson(Tensor(x), Tensor(2 * x + 3)).item()
        self.assertAlmostEqual(r, 1.0, places=6)
        self.assertEqual(pearson(Tensor(np.ones(10)), Tensor(x[:10])).item(), 0.0)
        with self.assertRaises(InvalidArgumentError):
            pearson(Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_pearson_degenerate_zero_gradient(self):
        a = Tensor(np.ones(10), requires_grad=True)
        b = Tensor(np.arange(10.0), requires_grad=True)
        with GradientTape() as tape:
            r = pearson(a, b)
        grad_a, grad_b = tape.gradient(r, [a, b])
        np.testing.assert_array_equal(grad_a, 0)
        np.testing.assert_array_equal(grad_b, 0)


class TestGradients(unittest.TestCase):
    """
    每个已注册原语的中心差分梯度校验（float64）
    """

    def setUp(self):
        self.rng = np.random.default_rng(42)

    def check(self, build, *shapes, positive=False):
        with precision(np.float64):
            params = []
            for shape in shapes:
                data = self.rng.standard_normal(shape)
                if positive:
                    data = np.abs(data) + 0.5
                params.append(Tensor(data, requires_grad=True))
            weights_rng = np.random.default_rng(1)
            w = None

            def f():
                nonlocal w
                out = build(*params)
                if w is None:
                    w = Tensor(weights_rng.standard_normal(out.shape))
                return reduce_sum(out * w)

            error = finite_difference_check(f, params, eps=1e-6, rng=np.random.default_rng(3))
        self.assertLessEqual(error, PRIMITIVE_TOLERANCE)

    def test_elementwise(self):
        self.check(lambda a, b: a + b, (3, 4), (3, 4))
        self.check(lambda a, b: a - b, (3, 4), (1, 4))
        self.check(lambda a, b: a * b, (3, 4), (3, 4))
        self.check(lambda a, b: a / b, (3, 4), (3, 4), positive=True)
        self.check(lambda a: -a, (5,))
        self.check(exp, (3, 4))
        self.check(log, (3, 4), positive=True)
        self.check(sigmoid, (3, 4))
        self.check(lambda a: leaky_relu(a, 0.2), (3, 4))
        self.check(square, (3, 4))
        self.check(absolute, (3, 4))
        self.check(relu, (3, 4))
        self.check(lambda a: clip_min(a, 0.1), (3, 4))

    def test_reductions_and_shapes(self):
        self.check(lambda a: reduce_sum(a) * 1.0, (3, 4))
        self.check(mean, (3, 4))
        self.check(amin, (3, 4))
        self.check(amax, (3, 4))
        self.check(lambda a: reshape(a, (4, 3)), (3, 4))
        self.check(lambda a, b: concat([a, b], axis=1), (2, 3), (2, 5))
        index = np.array([[0, 5, 5], [11, 2, 0]])
        self.check(lambda a: gather(a, index), (3, 4))

    def test_convolutions(self):
        self.check(conv2d, (2, 4, 5), (3, 2, 3, 3), (3,))
        self.check(lambda a: depthwise_conv2d(a, np.arange(9.0).reshape(3, 3) / 36), (2, 5, 4))

    def test_filters_and_statistics(self):
        keep = np.zeros((8, 8))
        keep[:3, :3] = 1
        self.check(lambda a: block_dct_filter(a, keep), (2, 8, 8))
        self.check(lambda a, b: pearson(a, b), (20,), (20,))

    def test_soft_histogram_gradient(self):
        with precision(np.float64):
            x = Tensor(self.rng.uniform(0.05, 0.95, size=(2, 3, 3)), requires_grad=True)
            w = Tensor(np.random.default_rng(5).standard_normal(256))
            error = finite_difference_check(lambda: reduce_sum(soft_histogram(x) * w), [x], eps=1e-7)
        self.assertLessEqual(error, PRIMITIVE_TOLERANCE)

    def test_median_straight_through(self):
        """中值滤波的反向为恒等梯度"""
        x = Tensor(self.rng.random((1, 4, 4)), requires_grad=True)
        with GradientTape() as tape:
            loss = reduce_sum(median_filter(x, 3))
        (grad,) = tape.gradient(loss, [x])
        np.testing.assert_array_equal(grad, np.ones((1, 4, 4)))

    def test_invalid_eps(self):
        with self.assertRaises(InvalidArgumentError):
            finite_difference_check(lambda: Tensor(0.0), [], eps=0)


if __name__ == '__main__':
    unittest.main()
