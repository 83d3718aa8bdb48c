# -*- coding: utf-8 -*-
"""
测试格式稳定性

密钥流、掩码、秘密图只依赖 PBKDF2/ChaCha20，与平台无关，期望摘要直接写在本文件中；
.fcw/.fcf 字节摘要与 tests/golden/digests.json 比对，该文件由
scripts/tools/write_golden_digests.py 生成，不存在时只跳过格式比对。
"""

import json
import os
import sys
import unittest

# 添加项目根目录到系统路径
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from flowcrypt.keygen import derive_master
from scripts.tools.write_golden_digests import (
    DEFAULT_OUTPUT,
    GOLDEN_ITERATIONS,
    GOLDEN_PASSWORD,
    golden_digests,
)

# ChaCha20 全零密钥、全零 nonce、计数器0 的第一个64字节块
ZERO_KEY_BLOCK = (
    '76b8e0ada0f13d90405d6ae55386bd28bdd219b8a08ded1aa836efcc8b770dc7'
    'da41597c5157488d7724e03fb8d84a376a43b8f41518a11cc387b669b2ee6586'
)

GOLDEN_MASTER = '8898964243e182ee4949e054044983b1019e068fb7d9c3295098c72d043bdb95'

KEY_SCHEDULE = {
    'zero_key_keystream_64': ZERO_KEY_BLOCK,
    'mask': '11519ee835024691a8b28860f5f65d6645bd5f1e8cd0bd43b81f23007f30c007',
    'secret_map': '161ff7dfa55d9315410a6343aa5fc58348e20e4bc4efcdab8e61e60d618af31b',
}


class TestKeySchedule(unittest.TestCase):
    """
    与平台无关的密钥派生摘要
    """

    @classmethod
    def setUpClass(cls):
        cls.actual = golden_digests()

    def test_master_key(self):
        self.assertEqual(derive_master(GOLDEN_PASSWORD, iterations=GOLDEN_ITERATIONS).hex(), GOLDEN_MASTER)

    def test_digests(self):
        for name, expected in KEY_SCHEDULE.items():
            with self.subTest(name=name):
                self.assertEqual(self.actual[name], expected)


class TestFileFormats(unittest.TestCase):
    """
    比对提交的 .fcw/.fcf 黄金摘要
    """

    @classmethod
    def setUpClass(cls):
        if not os.path.exists(DEFAULT_OUTPUT):
            raise unittest.SkipTest(f'未找到黄金摘要文件 {DEFAULT_OUTPUT}')
        with open(DEFAULT_OUTPUT, 'r', encoding='utf-8') as f:
            cls.expected = json.load(f)
        cls.actual = golden_digests()

    def test_key_schedule_recorded(self):
        for name, expected in KEY_SCHEDULE.items():
            with self.subTest(name=name):
                self.assertEqual(self.expected[name], expected)

    def test_file_formats(self):
        for name in ['model_fcw', 'cipher_fcf']:
            with self.subTest(name=name):
                self.assertEqual(self.actual[name], self.expected[name])


class TestGoldenScript(unittest.TestCase):
    """
    测试摘要生成脚本本身
    """

    def test_deterministic(self):
        self.assertEqual(golden_digests(), golden_digests())


if __name__ == '__main__':
    unittest.main()
