# -*- coding: utf-8 -*-
"""
测试splitmerge模块：掩码驱动的划分与合并
"""

import os
import sys
import unittest

import numpy as np

# 添加项目根目录到系统路径
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from flowcrypt.errors import InvalidArgumentError
from flowcrypt.keygen import BalancedMask, KeyMaterial, balanced_mask, chessboard_mask
from flowcrypt.numerics import GradientTape, Tensor, finite_difference_check, precision, reduce_sum, square
from flowcrypt.splitmerge import SplitLayout, extract, place


class TestSplitLayout(unittest.TestCase):
    """
    测试划分布局
    """

    def test_hand_example(self):
        """掩码 [[1,0],[0,1]]：X 行优先取 a,d；Y 列优先取 c,b"""
        layout = SplitLayout(BalancedMask([[1, 0], [0, 1]]))
        a, b, c, d = 1.0, 2.0, 3.0, 4.0
        canvas = np.array([[[a, b], [c, d]]])
        x, y = extract(canvas, layout)
        np.testing.assert_array_equal(x.data, [[[a], [d]]])
        np.testing.assert_array_equal(y.data, [[[c], [b]]])

    def test_column_major_fill(self):
        """Y 按列优先填充：第k个值落在 (k % H, k // H)"""
        bits = np.zeros((2, 4), dtype=np.uint8)
        bits[:, :2] = 1
        layout = SplitLayout(BalancedMask(bits))
        canvas = np.arange(8.0).reshape(1, 2, 4)
        x, y = extract(canvas, layout)
        np.testing.assert_array_equal(x.data[0], [[0, 1], [4, 5]])
        # mask==0 的列优先顺序为 2,6,3,7
        np.testing.assert_array_equal(y.data[0], [[2, 3], [6, 7]])

    def test_unbalanced_mask_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            SplitLayout(BalancedMask([[1, 1], [1, 0]]))
        with self.assertRaises(InvalidArgumentError):
            SplitLayout(BalancedMask([[1, 0, 1]]))

    def test_channels_share_mask(self):
        layout = SplitLayout(chessboard_mask(4, 2))
        plane = np.arange(8.0).reshape(2, 4)
        canvas = np.stack([plane, plane + 100, plane + 200])
        x, y = extract(canvas, layout)
        np.testing.assert_array_equal(x.data[1], x.data[0] + 100)
        np.testing.assert_array_equal(y.data[2], y.data[0] + 200)


class TestRoundTrip(unittest.TestCase):
    """
    测试 place(extract(·)) 逐位还原
    """

    def test_exact_round_trip_random_masks(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            width = 2 * int(rng.integers(1, 9))
            height = int(rng.integers(1, 9))
            mask = balanced_mask(KeyMaterial.from_master(rng.bytes(32)), width, height)
            layout = SplitLayout(mask)
            canvas = rng.random((3, height, width)).astype(np.float32)
            x, y = extract(canvas, layout)
            self.assertEqual(x.shape, (3, height, width // 2))
            self.assertEqual(y.shape, (3, height, width // 2))
            restored = place(x, y, layout)
            np.testing.assert_array_equal(restored.data, canvas)

    def test_extract_of_place(self):
        """反方向同样逐位还原"""
        rng = np.random.default_rng(1)
        layout = SplitLayout(balanced_mask(KeyMaterial.from_master(bytes(32)), 6, 4))
        x = rng.random((3, 4, 3))
        y = rng.random((3, 4, 3))
        x2, y2 = extract(place(x, y, layout), layout)
        np.testing.assert_array_equal(x2.data, x)
        np.testing.assert_array_equal(y2.data, y)

    def test_every_position_written_once(self):
        layout = SplitLayout(balanced_mask(KeyMaterial.from_master(b'\x01' * 32), 8, 5))
        self.assertEqual(sorted(layout.merge_index.reshape(-1)), list(range(40)))
        both = np.concatenate([layout.x_index.reshape(-1), layout.y_index.reshape(-1)])
        self.assertEqual(sorted(both), list(range(40)))

    def test_shape_mismatch(self):
        layout = SplitLayout(chessboard_mask(4, 2))
        with self.assertRaises(InvalidArgumentError):
            extract(np.zeros((3, 2, 6)), layout)
        with self.assertRaises(InvalidArgumentError):
            place(np.zeros((3, 2, 2)), np.zeros((3, 2, 3)), layout)

    def test_gradient_flows_through_round_trip(self):
        """合并后的梯度按位置回传到原画布"""
        layout = SplitLayout(chessboard_mask(4, 2))
        canvas = Tensor(np.arange(24.0).reshape(3, 2, 4), requires_grad=True)
        weights = np.arange(24.0).reshape(3, 2, 4) + 1
        with GradientTape() as tape:
            x, y = extract(canvas, layout)
            loss = reduce_sum(place(x, y, layout) * weights)
        grads = tape.gradient(loss, [canvas])
        np.testing.assert_allclose(grads[0], weights)

    def test_bijection_over_random_triples(self):
        """1000组随机（图像、口令、尺寸）上两个方向都逐位还原，且值的多重集合不变"""
        rng = np.random.default_rng(3)
        for _ in range(1000):
            width = 2 * int(rng.integers(1, 9))
            height = int(rng.integers(1, 9))
            material = KeyMaterial.from_password(rng.bytes(8), iterations=10)
            layout = SplitLayout(balanced_mask(material, width, height))
            canvas = rng.random((3, height, width)).astype(np.float32)
            x, y = extract(canvas, layout)
            np.testing.assert_array_equal(place(x, y, layout).data, canvas)
            halves = np.concatenate([x.data.reshape(-1), y.data.reshape(-1)])
            np.testing.assert_array_equal(np.sort(halves), np.sort(canvas.reshape(-1)))
            x2, y2 = extract(place(y, x, layout), layout)
            np.testing.assert_array_equal(x2.data, y.data)
            np.testing.assert_array_equal(y2.data, x.data)

    def test_mask_dependence(self):
        """掩码相差一对比特时，取值互异的画布得到不同的划分结果"""
        mask = balanced_mask(KeyMaterial.from_master(bytes(32)), 6, 4)
        ones = np.argwhere(mask.bits == 1)
        zeros = np.argwhere(mask.bits == 0)
        canvas = np.arange(72.0).reshape(3, 4, 6)
        base = extract(canvas, SplitLayout(mask))
        for (y1, x1), (y0, x0) in zip(ones[:4], zeros[:4]):
            bits = mask.bits.copy()
            bits[y1, x1], bits[y0, x0] = 0, 1
            other = extract(canvas, SplitLayout(BalancedMask(bits)))
            self.assertFalse(np.array_equal(base[0].data, other[0].data)
                             and np.array_equal(base[1].data, other[1].data))

    def test_gradient_finite_difference(self):
        with precision(np.float64):
            layout = SplitLayout(balanced_mask(KeyMaterial.from_master(b'\x02' * 32), 6, 4))
            canvas = Tensor(np.random.default_rng(4).random((3, 4, 6)), requires_grad=True)
            wx = Tensor(np.random.default_rng(5).standard_normal((3, 4, 3)))
            wy = Tensor(np.random.default_rng(6).standard_normal((3, 4, 3)))

            def f():
                x, y = extract(canvas, layout)
                return reduce_sum(x * wx) + reduce_sum(square(y) * wy)

            error = finite_difference_check(f, [canvas], eps=1e-6, num_samples=30)
        self.assertLess(error, 1e-6)


if __name__ == '__main__':
    unittest.main()
