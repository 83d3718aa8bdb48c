# -*- coding: utf-8 -*-
"""
第一阶段：解密单幅图像

读取 .fcf 密文容器，用口令和模型恢复图像。恢复结果截断到[0,1]后以8位格式保存，
也可以额外导出不截断的 float32 数组（.npy）。

口令错误无法被检测：容器中不保存任何密钥校验信息，错误口令同样会得到一幅（杂乱的）图像。
"""

import logging
import os
import sys

import numpy as np

# 添加项目根目录到系统路径，以便导入flowcrypt和utils模块
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from flowcrypt.fed import decrypt, load_model, read_cipher
from flowcrypt.keygen import DEFAULT_ITERATIONS
from scripts.phase1.encrypt_image import add_password_arguments
from utils.file_utils import atomic_path, read_password
from utils.image_utils import save_image

HELP = '解密 .fcf 密文容器，输出恢复图像'


def add_arguments(parser):
    parser.add_argument('--cipher', type=str, required=True, help='输入密文容器 .fcf')
    parser.add_argument('--model', type=str, required=True, help='模型权重文件 .fcw')
    parser.add_argument('--out', type=str, required=True, help='输出图像路径（PNG/PPM）')
    parser.add_argument('--float-out', type=str, help='可选：导出不截断的 float32 恢复结果（.npy）')
    add_password_arguments(parser)


def decrypt_file(cipher_path, model_path, password, out_path, float_out=None, iterations=DEFAULT_ITERATIONS):
    """
    解密密文文件

    参数:
        cipher_path (str): 输入 .fcf
        model_path (str): 模型文件
        password (bytes): 口令
        out_path (str): 输出图像
        float_out (str, optional): float32 导出路径
        iterations (int): PBKDF2 迭代次数

    返回:
        numpy.ndarray: 不截断的恢复结果 3×H×W
    """
    logger = logging.getLogger(__name__)

    container = read_cipher(cipher_path)
    model = load_model(model_path)
    recovered = decrypt(container, password, model, iterations).data
    save_image(recovered, out_path)
    if float_out:
        with atomic_path(float_out) as tmp:
            with open(tmp, 'wb') as f:
                np.save(f, recovered.astype(np.float32))
        logger.info(f'浮点恢复结果已保存: {float_out}')
    logger.info(f'解密完成: {cipher_path} -> {out_path}')
    return recovered


def run(args, logger):
    password = read_password(args.password, args.password_file)
    decrypt_file(args.cipher, args.model, password, args.out, args.float_out, args.iterations)
    print(f'恢复图像已写入 {args.out}')
    return 0
