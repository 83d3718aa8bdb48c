# -*- coding: utf-8 -*-
"""
测试fed模块：可逆块、模型序列化、密文容器与加解密
"""

import os
import shutil
import sys
import tempfile
import unittest

import numpy as np

# 添加项目根目录到系统路径
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from flowcrypt.errors import FormatError, IncompatibleModelError, InvalidArgumentError
from flowcrypt.fed import (
    CIPHER_MAGIC,
    CipherContainer,
    FedModel,
    ModelArch,
    decrypt,
    decrypt_canvas,
    encrypt,
    encrypt_canvas,
    inb_forward,
    inb_inverse,
    load_model,
    read_cipher,
    save_model,
    subnet_forward,
    write_cipher,
)
from flowcrypt.keygen import derive_keys
from flowcrypt.losses import mse
from flowcrypt.metrics import psnr
from flowcrypt.numerics import Tensor, finite_difference_check, precision
from flowcrypt.splitmerge import SplitLayout

FAST_ITERATIONS = 1000
PASSWORD = b'correct horse'


def small_model(seed=0, blocks=2, growth=8):
    return FedModel.randomize(ModelArch(blocks=blocks, growth=growth), rng=np.random.default_rng(seed))


def random_image(height=8, width=8, seed=0):
    return np.random.default_rng(seed).random((3, height, width)).astype(np.float32)


class TestModel(unittest.TestCase):
    """
    测试模型结构与权重文件
    """

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_default_parameter_count(self):
        """N=4、g=32 的参数量为 1,017,584"""
        model = FedModel.zeros()
        self.assertEqual(model.parameter_count(), 1017584)
        self.assertEqual(len(model.named_parameters()), 4 * 4 * 5 * 2)

    def test_layer_shapes_dense(self):
        shapes = ModelArch(blocks=1, growth=32).layer_shapes()
        self.assertEqual([w[1] for w, _ in shapes], [4, 36, 68, 100, 132])
        self.assertEqual(shapes[-1][0], (3, 132, 3, 3))

    def test_initialize_statistics(self):
        model = FedModel.initialize(ModelArch(blocks=1, growth=32), rng=np.random.default_rng(0))
        hidden = model.subnet(0, 'eta')[2][0].data
        final = model.subnet(0, 'eta')[4][0].data
        self.assertAlmostEqual(float(hidden.std()), 0.02, delta=0.002)
        self.assertAlmostEqual(float(final.std()), 0.002, delta=0.0005)
        self.assertTrue(all(not p.data.any() for name, p in model.named_parameters() if name.endswith('bias')))

    def test_save_and_load(self):
        model = small_model()
        path = os.path.join(self.temp_dir, 'model.fcw')
        save_model(model, path)
        loaded = load_model(path)
        self.assertEqual(loaded.arch, model.arch)
        self.assertEqual(loaded.architecture_hash(), model.architecture_hash())
        for (name, a), (_, b) in zip(model.named_parameters(), loaded.named_parameters()):
            np.testing.assert_array_equal(a.data, b.data, err_msg=name)

    def test_weight_file_errors(self):
        raw = small_model().to_bytes()
        with self.assertRaises(FormatError):
            FedModel.from_bytes(b'XXXX' + raw[4:])
        with self.assertRaises(FormatError):
            FedModel.from_bytes(raw[:-4])
        with self.assertRaises(FormatError):
            FedModel.from_bytes(raw[:6])

    def test_hash_changes_with_parameters(self):
        model = small_model()
        other = model.copy()
        other.parameters()[0].data = other.parameters()[0].data + 1e-3
        self.assertNotEqual(model.architecture_hash(), other.architecture_hash())
        self.assertEqual(model.architecture_hash(), model.copy().architecture_hash())

    def test_invalid_arch(self):
        with self.assertRaises(InvalidArgumentError):
            ModelArch(blocks=0)


class TestInvertibleBlock(unittest.TestCase):
    """
    测试可逆块
    """

    def setUp(self):
        rng = np.random.default_rng(3)
        self.model = small_model(blocks=1)
        self.x = Tensor(rng.random((3, 4, 3)).astype(np.float32))
        self.y = Tensor(rng.random((3, 4, 3)).astype(np.float32))
        self.k = Tensor(rng.random((1, 4, 3)).astype(np.float32))

    def test_subnet_output_shape(self):
        inputs = Tensor(np.zeros((4, 4, 3), dtype=np.float32))
        self.assertEqual(subnet_forward(inputs, self.model.subnet(0, 'rho')).shape, (3, 4, 3))
        with self.assertRaises(InvalidArgumentError):
            subnet_forward(Tensor(np.zeros((3, 4, 3))), self.model.subnet(0, 'rho'))

    def test_block_inverse(self):
        block = self.model.block(0)
        x1, y1 = inb_forward(self.x, self.y, self.k, block)
        x0, y0 = inb_inverse(x1, y1, self.k, block)
        np.testing.assert_allclose(x0.data, self.x.data, atol=1e-5)
        np.testing.assert_allclose(y0.data, self.y.data, atol=1e-5)

    def test_zero_model_scales_by_sqrt_e(self):
        """全零参数：σ(0)=0.5，两路都乘以 e^0.5"""
        block = FedModel.zeros(ModelArch(blocks=1, growth=4)).block(0)
        x1, y1 = inb_forward(self.x, self.y, self.k, block)
        np.testing.assert_allclose(x1.data, self.x.data * np.exp(0.5), rtol=1e-6)
        np.testing.assert_allclose(y1.data, self.y.data * np.exp(0.5), rtol=1e-6)

    def test_secret_map_shape_checked(self):
        with self.assertRaises(InvalidArgumentError):
            inb_forward(self.x, self.y, Tensor(np.zeros((1, 4, 4))), self.model.block(0))


class TestEncryptDecrypt(unittest.TestCase):
    """
    测试完整加解密
    """

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.model = small_model()
        self.image = random_image()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_round_trip_above_90db(self):
        container = encrypt(self.image, PASSWORD, self.model, FAST_ITERATIONS)
        recovered = decrypt(container, PASSWORD, self.model, FAST_ITERATIONS)
        value, _ = psnr(self.image, np.clip(recovered.data, 0, 1))
        self.assertGreaterEqual(value, 90.0)

    def test_default_architecture_round_trip(self):
        model = FedModel.initialize(rng=np.random.default_rng(1))
        image = random_image(6, 10, seed=2)
        container = encrypt(image, PASSWORD, model, FAST_ITERATIONS)
        recovered = decrypt(container, PASSWORD, model, FAST_ITERATIONS)
        value, _ = psnr(image, np.clip(recovered.data, 0, 1))
        self.assertGreaterEqual(value, 90.0)

    def test_deterministic(self):
        a = encrypt(self.image, PASSWORD, self.model, FAST_ITERATIONS)
        b = encrypt(self.image, PASSWORD, self.model, FAST_ITERATIONS)
        self.assertEqual(a.to_bytes(), b.to_bytes())

    def test_wrong_password_gives_wrong_image(self):
        container = encrypt(self.image, PASSWORD, self.model, FAST_ITERATIONS)
        recovered = decrypt(container, b'correct horsf', self.model, FAST_ITERATIONS)
        value, _ = psnr(self.image, np.clip(recovered.data, 0, 1))
        self.assertLess(value, 30.0)

    def test_block_order_matters(self):
        """逆向块顺序颠倒时无法恢复"""
        _, mask, key_map = derive_keys(PASSWORD, 8, 8, FAST_ITERATIONS)
        layout = SplitLayout(mask)
        canvas = encrypt_canvas(self.image, layout, key_map, self.model)
        good = decrypt_canvas(canvas, layout, key_map, self.model)
        bad = decrypt_canvas(canvas, layout, key_map, self.model, order=[0, 1])
        np.testing.assert_allclose(good.data, self.image, atol=1e-4)
        self.assertGreater(float(np.abs(bad.data - self.image).max()), 1e-3)

    def test_model_hash_mismatch(self):
        container = encrypt(self.image, PASSWORD, self.model, FAST_ITERATIONS)
        with self.assertRaises(IncompatibleModelError):
            decrypt(container, PASSWORD, small_model(seed=9), FAST_ITERATIONS)

    def test_image_validation(self):
        with self.assertRaises(InvalidArgumentError):
            encrypt(random_image(8, 7), PASSWORD, self.model, FAST_ITERATIONS)
        with self.assertRaises(InvalidArgumentError):
            encrypt(self.image * 2.0, PASSWORD, self.model, FAST_ITERATIONS)
        with self.assertRaises(InvalidArgumentError):
            encrypt(self.image[:2], PASSWORD, self.model, FAST_ITERATIONS)


class TestCipherContainer(unittest.TestCase):
    """
    测试 .fcf 密文容器
    """

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.container = encrypt(random_image(), PASSWORD, small_model(), FAST_ITERATIONS)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_layout(self):
        raw = self.container.to_bytes()
        self.assertEqual(raw[:4], CIPHER_MAGIC)
        self.assertEqual(raw[4], 1)
        self.assertEqual(len(raw), 4 + 1 + 4 + 4 + 32 + 4 * 3 * 8 * 8)

    def test_write_and_read(self):
        path = os.path.join(self.temp_dir, 'image.fcf')
        write_cipher(self.container, path)
        loaded = read_cipher(path)
        self.assertEqual((loaded.width, loaded.height), (8, 8))
        self.assertEqual(loaded.model_hash, self.container.model_hash)
        np.testing.assert_array_equal(loaded.payload, self.container.payload)

    def test_format_errors(self):
        raw = self.container.to_bytes()
        with self.assertRaises(FormatError):
            CipherContainer.from_bytes(raw[:-1])
        with self.assertRaises(FormatError):
            CipherContainer.from_bytes(raw[:10])
        with self.assertRaises(FormatError):
            CipherContainer.from_bytes(b'FCW1' + raw[4:])
        with self.assertRaises(FormatError):
            CipherContainer.from_bytes(raw[:4] + b'\x02' + raw[5:])

    def test_no_plaintext_statistics(self):
        """容器中只有文件头和密文载荷"""
        raw = self.container.to_bytes()
        payload = np.frombuffer(raw, dtype='<f4', offset=len(raw) - 4 * 3 * 64)
        np.testing.assert_array_equal(payload, self.container.payload.reshape(-1))


class TestFedGradients(unittest.TestCase):
    """
    子网与单个可逆块接均方误差输出头的中心差分梯度校验（float64）
    """

    def setUp(self):
        self.rng = np.random.default_rng(11)
        self.model = FedModel.randomize(ModelArch(blocks=1, growth=4), rng=np.random.default_rng(5),
                                        dtype=np.float64)

    def test_subnet_with_mse_head(self):
        with precision(np.float64):
            inputs = Tensor(self.rng.random((4, 4, 2)))
            target = Tensor(self.rng.random((3, 4, 2)))
            layers = self.model.subnet(0, 'eta')
            params = [p for pair in layers for p in pair]
            # 部分梯度只有1e-8量级，步长取1e-5
            error = finite_difference_check(lambda: mse(subnet_forward(inputs, layers), target), params,
                                             eps=1e-5, rng=np.random.default_rng(0))
        self.assertLess(error, 1e-4)

    def test_block_with_mse_head(self):
        with precision(np.float64):
            x = Tensor(self.rng.random((3, 4, 2)), requires_grad=True)
            y = Tensor(self.rng.random((3, 4, 2)), requires_grad=True)
            k = Tensor(self.rng.random((1, 4, 2)))
            target_x = Tensor(self.rng.random((3, 4, 2)))
            target_y = Tensor(self.rng.random((3, 4, 2)))
            block = self.model.block(0)

            def f():
                x_next, y_next = inb_forward(x, y, k, block)
                return mse(x_next, target_x) + mse(y_next, target_y)

            error = finite_difference_check(f, [x, y] + self.model.parameters(), eps=1e-5,
                                            num_samples=4, rng=np.random.default_rng(1))
        self.assertLess(error, 1e-4)


if __name__ == '__main__':
    unittest.main()
