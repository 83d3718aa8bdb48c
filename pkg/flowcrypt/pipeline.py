# -*- coding: utf-8 -*-
"""
端到端数据流编排

口令 -> 掩码/秘密图 -> 划分 -> N 个正向块 -> 合并 -> 密文 I_C -> 噪声层 -> I_A
-> 划分 -> 逆序逆向块 -> 合并 -> 恢复图像。
归一化记录（每个密文的 min/max）由本模块维护，训练损失和评估指标看到同一个[0,1]框架。
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from flowcrypt.errors import DegenerateRangeError
from flowcrypt.fed import fed_forward, fed_inverse, validate_image
from flowcrypt.keygen import DEFAULT_ITERATIONS, derive_keys, perturb_key
from flowcrypt.metrics import npcr_uaci, psnr, quantize8, render8
from flowcrypt.noise import NoiseSpec, apply_noise
from flowcrypt.numerics import amax, amin, as_tensor
from flowcrypt.splitmerge import SplitLayout, extract, place

logger = logging.getLogger(__name__)


@dataclass
class PipelineContext:
    """
    单幅图像、单个口令的流水线上下文

    layout 与 secret_map 始终来自同一个 material 实例。上下文很轻，不在线程间共享。
    """

    model: object
    material: object
    layout: SplitLayout
    secret_map: np.ndarray
    width: int
    height: int
    normalization: list = field(default_factory=list)


def build_context(password, model, width, height, iterations=DEFAULT_ITERATIONS, strategy='pbkdf'):
    """按固定顺序消耗密钥流：先掩码，再秘密图"""
    material, mask, key_map = derive_keys(password, width, height, iterations, strategy)
    return PipelineContext(model, material, SplitLayout(mask), key_map, width, height)


@dataclass
class PipelineResult:
    """
    forward_pipeline 的全部中间结果

    属性:
        cipher (Tensor): 密文画布 I_C
        degraded (Tensor): 噪声后的画布 I_A
        rendering (Tensor): 可微的[0,1]归一化密文，供损失使用
        rendering8 (CipherRendering8, optional): 8位渲染；常数画布时为 None
        x_leg (Tensor): FED 输出的 X 部分 3×H×(W/2)
        y_leg (Tensor): FED 输出的 Y 部分 3×H×(W/2)
        context (PipelineContext): 本次使用的上下文
    """

    cipher: object
    degraded: object
    rendering: object
    rendering8: Optional[object]
    x_leg: object
    y_leg: object
    context: PipelineContext
    noise: Optional[NoiseSpec] = None


def normalize_rendering(canvas):
    """
    用画布自身 min/max 做可微归一化

    返回:
        tuple: (归一化张量, (min, max))；常数画布时尺度取1
    """
    lo = amin(canvas)
    hi = amax(canvas)
    span = hi.item() - lo.item()
    if span > 0:
        normalized = (canvas - lo) / (hi - lo)
    else:
        normalized = canvas - lo
    return normalized, (lo.item(), hi.item())


def forward_pipeline(image, password, model, noise_spec=None, rng=None,
                     iterations=DEFAULT_ITERATIONS, strategy='pbkdf', context=None):
    """
    加密并施加噪声，返回损失计算所需的全部中间量

    参数:
        image (Tensor|numpy.ndarray): 明文 3×H×W，取值[0,1]
        password (bytes): 口令
        model (FedModel): 模型
        noise_spec (NoiseSpec, optional): 噪声配置，默认 identity
        rng (numpy.random.Generator, optional): 噪声随机源
        iterations (int): PBKDF2 迭代次数
        strategy (str): 划分策略
        context (PipelineContext, optional): 复用已有上下文

    返回:
        PipelineResult: 中间结果
    """
    image = validate_image(image)
    _, height, width = image.shape
    if context is None:
        context = build_context(password, model, width, height, iterations, strategy)
    x, y = extract(image, context.layout)
    x, y = fed_forward(x, y, as_tensor(context.secret_map), model)
    cipher = place(x, y, context.layout)

    rendering, bracket = normalize_rendering(cipher)
    context.normalization.append(bracket)
    rendering8 = None
    if not np.all(np.isfinite(cipher.data)):
        logger.warning('密文画布含非有限值，跳过8位渲染')
    else:
        try:
            rendering8 = render8(cipher)
        except DegenerateRangeError:
            logger.warning('密文画布为常数，跳过8位渲染')

    noise_spec = noise_spec or NoiseSpec()
    degraded = apply_noise(cipher, noise_spec, rng)
    return PipelineResult(cipher, degraded, rendering, rendering8, x, y, context, noise_spec)


def backward_pipeline(degraded, password, model, iterations=DEFAULT_ITERATIONS,
                      strategy='pbkdf', context=None):
    """
    从（可能退化的）密文画布恢复图像，等价于 fed.decrypt 但接受内存中的画布

    返回:
        Tensor: 恢复图像 3×H×W（不截断）
    """
    degraded = as_tensor(degraded)
    _, height, width = degraded.shape
    if context is None:
        context = build_context(password, model, width, height, iterations, strategy)
    x, y = extract(degraded, context.layout)
    x, y = fed_inverse(x, y, as_tensor(context.secret_map), model)
    return place(x, y, context.layout)


def key_sensitivity(cipher, password, model, correct_recovery, trials, rng,
                    iterations=DEFAULT_ITERATIONS, strategy='pbkdf'):
    """
    密钥敏感性：用 trials 个随机翻转一比特的口令解密同一密文

    错误密钥恢复与正确密钥恢复都量化为8位后计算 NPCR/UACI。

    参数:
        cipher (Tensor): 密文画布
        password (bytes): 正确口令
        model (FedModel): 模型
        correct_recovery (Tensor|numpy.ndarray): 正确口令的恢复图像
        trials (int): 扰动口令个数
        rng (numpy.random.Generator): 选择翻转比特的随机源

    返回:
        dict: key_npcr、key_uaci 以及 wrong_key_psnr（相对正确恢复）的均值；trials 为0时返回空字典
    """
    if trials <= 0:
        return {}
    if isinstance(password, str):
        password = password.encode('utf-8')
    reference8 = quantize8(correct_recovery)
    npcrs, uacis, psnrs = [], [], []
    for _ in range(trials):
        bit = int(rng.integers(0, 8 * len(password)))
        wrong = backward_pipeline(cipher, perturb_key(password, bit), model, iterations, strategy)
        wrong8 = quantize8(wrong)
        npcr, uaci = npcr_uaci(wrong8, reference8)
        npcrs.append(npcr)
        uacis.append(uaci)
        psnrs.append(psnr(reference8 / 255.0, wrong8 / 255.0)[0])
    return {
        'key_npcr': float(np.mean(npcrs)),
        'key_uaci': float(np.mean(uacis)),
        'wrong_key_psnr': float(np.mean(psnrs)),
    }
