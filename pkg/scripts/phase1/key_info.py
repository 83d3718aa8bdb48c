# -*- coding: utf-8 -*-
"""
第一阶段：查看口令派生的密钥信息

输出掩码摘要、掩码中1的个数、秘密图摘要与均值和口令空间大小，不输出主密钥本身。
"""

import hashlib
import os
import sys

# 添加项目根目录到系统路径，以便导入flowcrypt和utils模块
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from flowcrypt.keygen import SPLIT_STRATEGIES, derive_keys, key_space_bits
from scripts.phase1.encrypt_image import add_password_arguments
from utils.file_utils import read_password

HELP = '查看口令在给定尺寸下派生的掩码与秘密图摘要'

PRINTABLE_ASCII = 95


def add_arguments(parser):
    parser.add_argument('--width', type=int, required=True, help='图像宽度（偶数）')
    parser.add_argument('--height', type=int, required=True, help='图像高度')
    parser.add_argument('--split', type=str, default='pbkdf', choices=SPLIT_STRATEGIES, help='划分策略')
    parser.add_argument('--charset', type=int, default=PRINTABLE_ASCII,
                        help=f'估算口令空间时假设的字符集大小（默认 {PRINTABLE_ASCII}）')
    add_password_arguments(parser)


def key_info(password, width, height, iterations, split='pbkdf', charset=PRINTABLE_ASCII):
    """
    计算密钥信息

    返回:
        dict: mask_digest、popcount、secret_map_digest、secret_map_mean、keystream_bytes、key_space_bits
    """
    material, mask, key_map = derive_keys(password, width, height, iterations, split)
    return {
        'width': width,
        'height': height,
        'split': split,
        'mask_digest': mask.digest(),
        'popcount': mask.popcount(),
        'secret_map_digest': hashlib.sha256(key_map.astype('<f4').tobytes()).hexdigest(),
        'secret_map_mean': float(key_map.mean()),
        'keystream_bytes': material.stream_position,
        'key_space_bits': key_space_bits(charset, len(password)),
    }


def run(args, logger):
    password = read_password(args.password, args.password_file)
    info = key_info(password, args.width, args.height, args.iterations, args.split, args.charset)
    for key, value in info.items():
        print(f'{key}: {value}')
    return 0
