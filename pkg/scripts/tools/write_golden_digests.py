# -*- coding: utf-8 -*-
"""
生成格式稳定性用的黄金摘要

用固定种子构造一个小模型、一幅小图像和一个口令，计算 .fcw/.fcf 字节、
掩码和秘密图的 SHA-256 摘要，写入 tests/golden/digests.json。
实现或格式发生有意变更后重新运行本脚本并提交结果。
"""

import argparse
import hashlib
import os
import sys

import numpy as np

# 添加项目根目录到系统路径，以便导入其他模块
ROOT_DIR = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.append(ROOT_DIR)

from flowcrypt.fed import FedModel, ModelArch, encrypt
from flowcrypt.keygen import KeyMaterial, derive_keys
from utils.file_utils import save_json
from utils.log_utils import setup_logging

DEFAULT_OUTPUT = os.path.join(ROOT_DIR, 'tests', 'golden', 'digests.json')

GOLDEN_PASSWORD = b'golden-password'
GOLDEN_ITERATIONS = 1000
GOLDEN_WIDTH = 8
GOLDEN_HEIGHT = 6


def _sha256(data):
    return hashlib.sha256(data).hexdigest()


def golden_digests():
    """
    计算全部黄金摘要

    返回:
        dict: 名称 -> 十六进制摘要
    """
    model = FedModel.randomize(ModelArch(blocks=1, growth=4), rng=np.random.default_rng(7))
    image = np.random.default_rng(11).random((3, GOLDEN_HEIGHT, GOLDEN_WIDTH)).astype(np.float32)
    _, mask, key_map = derive_keys(GOLDEN_PASSWORD, GOLDEN_WIDTH, GOLDEN_HEIGHT, GOLDEN_ITERATIONS)
    container = encrypt(image, GOLDEN_PASSWORD, model, GOLDEN_ITERATIONS)
    return {
        'zero_key_keystream_64': KeyMaterial.from_master(bytes(32)).keystream(64).hex(),
        'mask': mask.digest(),
        'secret_map': _sha256(key_map.astype('<f4').tobytes()),
        'model_fcw': _sha256(model.to_bytes()),
        'cipher_fcf': _sha256(container.to_bytes()),
    }


def main(argv=None):
    """
    主函数
    """
    parser = argparse.ArgumentParser(description='生成黄金摘要文件')
    parser.add_argument('--out', type=str, default=DEFAULT_OUTPUT, help='输出 JSON 路径')
    args = parser.parse_args(argv)

    logger = setup_logging(log_dir=None)
    digests = golden_digests()
    save_json(args.out, {'schema': 1, **digests})
    logger.info(f'黄金摘要已写入 {args.out}')
    return 0


if __name__ == '__main__':
    sys.exit(main())
