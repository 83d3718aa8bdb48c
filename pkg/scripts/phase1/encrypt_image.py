# -*- coding: utf-8 -*-
"""
第一阶段：加密单幅图像

读取 PNG/PPM 图像，用口令和模型加密为 .fcf 全精度密文容器，
可选输出8位预览图并报告预览图的熵。
"""

import logging
import os
import sys

# 添加项目根目录到系统路径，以便导入flowcrypt和utils模块
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from flowcrypt.errors import DegenerateRangeError
from flowcrypt.fed import decrypt, encrypt, load_model, write_cipher
from flowcrypt.keygen import DEFAULT_ITERATIONS
from flowcrypt.metrics import entropy8, psnr, render8
from utils.file_utils import read_password
from utils.image_utils import load_image, save_image

HELP = '加密一幅图像，输出 .fcf 密文容器'


def add_password_arguments(parser):
    """口令参数：--password 与 --password-file 二选一且必须提供"""
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument('--password', type=str, help='口令（会留在 shell 历史中）')
    group.add_argument('--password-file', type=str, help='口令文件路径，去掉末尾换行后整体作为口令')
    parser.add_argument('--iterations', type=int, default=DEFAULT_ITERATIONS,
                        help=f'PBKDF2 迭代次数，加解密必须一致（默认 {DEFAULT_ITERATIONS}）')


def add_arguments(parser):
    parser.add_argument('--image', type=str, required=True, help='输入图像路径（PNG/PPM，宽高为偶数）')
    parser.add_argument('--model', type=str, required=True, help='模型权重文件 .fcw')
    parser.add_argument('--out', type=str, required=True, help='输出密文容器 .fcf')
    parser.add_argument('--preview', type=str, help='可选：输出8位密文预览图（PNG）')
    parser.add_argument('--verify', action='store_true', help='加密后立即解密并报告往返 PSNR')
    add_password_arguments(parser)


def encrypt_file(image_path, model_path, password, out_path, preview=None, verify=False,
                 iterations=DEFAULT_ITERATIONS):
    """
    加密图像文件

    参数:
        image_path (str): 输入图像
        model_path (str): 模型文件
        password (bytes): 口令
        out_path (str): 输出 .fcf
        preview (str, optional): 8位预览图路径
        verify (bool): 是否做往返校验
        iterations (int): PBKDF2 迭代次数

    返回:
        dict: 尺寸、预览熵、往返PSNR等摘要信息；密文为常数时不含预览熵
    """
    logger = logging.getLogger(__name__)

    image = load_image(image_path)
    model = load_model(model_path)
    container = encrypt(image, password, model, iterations)

    summary = {'width': container.width, 'height': container.height}
    try:
        rendering = render8(container.payload)
    except DegenerateRangeError:
        rendering = None
        logger.warning('密文画布为常数，跳过预览图和熵统计')
    write_cipher(container, out_path)

    if rendering is not None:
        summary['entropy'] = entropy8(rendering)
        if preview:
            save_image(rendering.values, preview)
            logger.info(f'密文预览图已保存: {preview}')
    if verify:
        recovered = decrypt(container, password, model, iterations)
        summary['roundtrip_psnr'] = psnr(image, recovered.data)[0]
    logger.info(f'加密完成: {image_path} -> {out_path}')
    return summary


def run(args, logger):
    """
    命令入口

    返回:
        int: 退出码
    """
    password = read_password(args.password, args.password_file)
    summary = encrypt_file(args.image, args.model, password, args.out,
                           args.preview, args.verify, args.iterations)
    print(f'密文已写入 {args.out}（{summary["width"]}×{summary["height"]}）')
    if 'entropy' in summary:
        print(f'密文预览熵: {summary["entropy"]:.4f} 比特')
    if 'roundtrip_psnr' in summary:
        print(f'往返 PSNR: {summary["roundtrip_psnr"]:.2f} dB')
    return 0
