# -*- coding: utf-8 -*-
"""
第二阶段：批量评估图像目录

对目录中的每幅图像执行 加密 -> 噪声 -> 解密，计算恢复质量、密文安全性、
密钥敏感性和耗时指标。图像之间相互独立，使用进程池并行处理；
结果按文件名排序后交给第三阶段生成报告。
"""

import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed

import numpy as np
import pandas as pd

# 添加项目根目录到系统路径，以便导入其他模块
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from flowcrypt.errors import DatasetError
from flowcrypt.fed import load_model
from flowcrypt.keygen import DEFAULT_ITERATIONS, SPLIT_STRATEGIES
from flowcrypt.losses import DEFAULT_NUM_PAIRS
from flowcrypt.metrics import cipher_security, quality_metrics
from flowcrypt.noise import NoiseSpec
from flowcrypt.pipeline import backward_pipeline, build_context, forward_pipeline, key_sensitivity
from scripts.phase3.merge_reports import write_reports
from utils.file_utils import read_password
from utils.image_utils import get_image_files, load_image

HELP = '批量评估图像目录，输出 CSV 明细、JSON 汇总和 Excel 报告'

PASSWORD_BYTES = 16


def add_arguments(parser):
    parser.add_argument('--model', type=str, required=True, help='模型权重文件 .fcw')
    parser.add_argument('--images', type=str, required=True, help='图像目录')
    parser.add_argument('--out', type=str, required=True, help='输出 JSON 汇总路径（同名 .csv 为明细）')
    parser.add_argument('--noise', action='append', default=None,
                        help='噪声设置，如 "kind=gaussian_noise sigma=0.01"；可重复，默认 identity')
    parser.add_argument('--password-trials', type=int, default=0, help='每幅图像的一比特扰动口令次数')
    parser.add_argument('--pairs', type=int, default=DEFAULT_NUM_PAIRS, help='相关性抽样像素对数量')
    parser.add_argument('--workers', type=int, default=1, help='并行进程数（默认1，串行）')
    parser.add_argument('--split', type=str, default='pbkdf', choices=SPLIT_STRATEGIES, help='划分策略')
    parser.add_argument('--iterations', type=int, default=DEFAULT_ITERATIONS, help='PBKDF2 迭代次数')
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--password', type=str, help='所有图像共用的口令；缺省时按种子为每幅图像生成随机口令')
    group.add_argument('--password-file', type=str, help='口令文件路径')


def evaluate_single_image(image_path, index, model_path, noises, trials, seed,
                          password=None, iterations=DEFAULT_ITERATIONS, split='pbkdf',
                          pairs=DEFAULT_NUM_PAIRS):
    """
    评估单幅图像在每个噪声设置下的指标

    随机源为 default_rng([seed, index])，与并行顺序无关。

    参数:
        image_path (str): 图像路径
        index (int): 图像在排序后文件列表中的序号
        model_path (str): 模型文件
        noises (list): 噪声配置串列表
        trials (int): 扰动口令次数
        seed (int): 随机种子
        password (bytes, optional): 口令，缺省时随机生成

    返回:
        list: 每个噪声设置一行结果字典
    """
    logger = logging.getLogger(__name__)
    file_name = os.path.basename(image_path)
    specs = [NoiseSpec.parse(text) for text in noises]
    rng = np.random.default_rng([seed, index])
    if password is None:
        password = rng.bytes(PASSWORD_BYTES)

    model = load_model(model_path)
    image = load_image(image_path)
    _, height, width = image.shape
    context = build_context(password, model, width, height, iterations, split)

    start = time.perf_counter()
    clean = forward_pipeline(image, password, model, context=context)
    encrypt_seconds = time.perf_counter() - start
    start = time.perf_counter()
    recovered = backward_pipeline(clean.cipher, password, model, context=context)
    decrypt_seconds = time.perf_counter() - start

    shared = {'encrypt_seconds': encrypt_seconds, 'decrypt_seconds': decrypt_seconds}
    if clean.rendering8 is not None:
        shared.update(cipher_security(clean.rendering8, pairs, rng).to_dict())
    shared.update(key_sensitivity(clean.cipher, password, model, recovered, trials, rng, iterations, split))

    rows = []
    for k, spec in enumerate(specs):
        noise_rng = np.random.default_rng([seed, index, k + 1])
        result = forward_pipeline(image, password, model, spec, noise_rng, context=context)
        restored = backward_pipeline(result.degraded, password, model, context=context)
        quality = quality_metrics(image, np.clip(restored.data, 0.0, 1.0)).to_dict()
        rows.append({'file_name': file_name, 'noise': spec.label(), 'status': 'success', **quality, **shared})
        logger.debug(f'{file_name} [{spec.label()}] PSNR={quality["psnr"]:.2f} dB')
    return rows


def batch_evaluate(image_dir, model_path, noises=None, trials=0, seed=0, password=None,
                   iterations=DEFAULT_ITERATIONS, split='pbkdf', pairs=DEFAULT_NUM_PAIRS, max_workers=1):
    """
    批量评估目录中的所有图像

    参数:
        image_dir (str): 图像目录
        model_path (str): 模型文件
        noises (list, optional): 噪声配置串列表，默认 ['kind=identity']
        max_workers (int): 进程数，1 表示在当前进程串行执行

    返回:
        pandas.DataFrame: 评估明细（每行一个 图像×噪声设置）
    """
    logger = logging.getLogger(__name__)

    noises = noises or ['kind=identity']
    # 提前校验噪声配置，避免每个工作进程重复报错
    labels = [NoiseSpec.parse(text).label() for text in noises]
    image_files = get_image_files(image_dir)
    if not image_files:
        raise DatasetError(f'在目录 {image_dir} 中未找到图像文件')
    logger.info(f'开始评估 {len(image_files)} 幅图像，噪声设置: {labels}')

    jobs = {i: path for i, path in enumerate(image_files)}
    args = (model_path, noises, trials, seed, password, iterations, split, pairs)
    rows = []

    def record_failure(path, error):
        logger.error(f'评估图像 {path} 时发生错误: {error}')
        for label in labels:
            rows.append({'file_name': os.path.basename(path), 'noise': label, 'status': 'error', 'error': str(error)})

    if max_workers == 1:
        for index, path in jobs.items():
            try:
                rows.extend(evaluate_single_image(path, index, *args))
            except Exception as e:
                record_failure(path, e)
    else:
        with ProcessPoolExecutor(max_workers=max_workers) as executor:
            future_to_file = {executor.submit(evaluate_single_image, path, index, *args): path
                              for index, path in jobs.items()}
            for future in as_completed(future_to_file):
                path = future_to_file[future]
                try:
                    rows.extend(future.result())
                    logger.info(f'图像 {os.path.basename(path)} 评估完成')
                except Exception as e:
                    record_failure(path, e)

    details = pd.DataFrame(rows)
    return details.sort_values(['file_name', 'noise'], kind='mergesort').reset_index(drop=True)


def run(args, logger):
    seed = args.seed if args.seed is not None else 0
    password = None
    if args.password is not None or args.password_file is not None:
        password = read_password(args.password, args.password_file)
    details = batch_evaluate(args.images, args.model, args.noise, args.password_trials, seed,
                             password, args.iterations, args.split, args.pairs, args.workers)
    model = load_model(args.model)
    meta = {'model_hash': model.architecture_hash().hex(), 'seed': seed, 'split': args.split}
    summary = write_reports(details, args.out, meta)
    for setting in summary['settings']:
        psnr = setting['metrics'].get('psnr', {})
        if psnr:
            print(f'{setting["noise"]}: PSNR {psnr["mean"]:.2f} ± {psnr["std"]:.2f} dB '
                  f'（{setting["images"]} 幅，失败 {setting["errors"]}）')
    failed = int((details['status'] != 'success').sum())
    if failed:
        logger.warning(f'{failed} 条评估记录失败，详见报告')
    return 0
