# -*- coding: utf-8 -*-
"""
训练目标：三元组恢复损失、密文均匀性损失、密文去相关损失及加权总损失

L_total = λ₁·(L_uniform + L_corr) + λ₂·L_triplet
"""

import logging
from dataclasses import dataclass

import numpy as np

from flowcrypt.errors import InvalidArgumentError
from flowcrypt.numerics import (
    HISTOGRAM_BINS,
    absolute,
    clip_min,
    gather,
    log,
    mean,
    pearson,
    reduce_sum,
    relu,
    soft_histogram,
    square,
)

logger = logging.getLogger(__name__)

TRIPLET_MARGIN = 1.0
PROBABILITY_FLOOR = 1e-8
DEFAULT_NUM_PAIRS = 5000
DEFAULT_LAMBDA = 5.0

# 方向 -> (dy, dx)
PAIR_DIRECTIONS = {'H': (0, 1), 'V': (1, 0), 'D': (1, 1)}


@dataclass(frozen=True)
class LossWeights:
    """总损失的权重：cipher 为 λ₁，recovery 为 λ₂"""

    cipher: float = DEFAULT_LAMBDA
    recovery: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.cipher < 0 or self.recovery < 0:
            raise InvalidArgumentError(f'损失权重必须非负，实际为 λ₁={self.cipher}, λ₂={self.recovery}')


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise InvalidArgumentError(f'张量形状不一致: {a.shape} 与 {b.shape}')


def mse(a, b):
    """均方误差：所有元素 (a−b)² 的平均"""
    _check_same_shape(a, b)
    return mean(square(a - b))


def triplet_recover_loss(anchor, positive, negative, margin=TRIPLET_MARGIN):
    """
    三元组恢复损失 max{0, MSE(A,P) − MSE(A,N) + margin}

    参数:
        anchor (Tensor): 明文图像 I_P
        positive (Tensor): 正确密钥的恢复图像 I'_P
        negative (Tensor): 错误密钥的恢复图像 I''_P
        margin (float): 间隔，默认1.0

    返回:
        Tensor: 标量损失；平坦区的次梯度取0
    """
    _check_same_shape(anchor, positive)
    _check_same_shape(anchor, negative)
    return relu(mse(anchor, positive) - mse(anchor, negative) + margin)


def recovery_loss(anchor, positive, negative, use_triplet=True):
    """恢复项：默认三元组损失；关闭三元组时退化为 MSE(I_P, I'_P)"""
    if use_triplet:
        return triplet_recover_loss(anchor, positive, negative)
    return mse(anchor, positive)


def uniform_hist_loss(rendering, bins=HISTOGRAM_BINS):
    """
    直方图与均匀分布的KL散度 Σ p·ln(p/(1/256))

    所有通道合并为一个256箱的软直方图，p 以1e-8为下限。

    参数:
        rendering (Tensor): 归一化到[0,1]的密文渲染

    返回:
        Tensor: 标量损失，非负
    """
    if rendering.size == 0:
        raise InvalidArgumentError('直方图损失的输入不能为空')
    hist = soft_histogram(rendering, bins)
    p = clip_min(hist / float(rendering.size), PROBABILITY_FLOOR)
    return reduce_sum(p * log(p * float(bins)))


def sample_adjacent_pairs(shape, num_pairs, rng, direction=None):
    """
    随机抽取相邻像素对的扁平下标

    参数:
        shape (tuple): 画布形状 C×H×W
        num_pairs (int): 像素对数量
        rng (numpy.random.Generator): 随机源
        direction (str, optional): H / V / D；缺省时每对在三个方向中均匀选择

    返回:
        tuple: (first, second) 两个长度为 num_pairs 的 int64 下标数组
    """
    channels, height, width = shape
    if direction is not None and direction not in PAIR_DIRECTIONS:
        raise InvalidArgumentError(f'未知的相邻方向: {direction}，可选 H/V/D')
    if num_pairs < 2:
        raise InvalidArgumentError(f'像素对数量至少为2，实际为 {num_pairs}')
    needs = [direction] if direction else list(PAIR_DIRECTIONS)
    for name in needs:
        dy, dx = PAIR_DIRECTIONS[name]
        if height - dy < 1 or width - dx < 1:
            raise InvalidArgumentError(f'画布尺寸 {height}×{width} 过小，无法抽取 {name} 方向相邻像素对')

    if direction is None:
        codes = rng.integers(0, len(PAIR_DIRECTIONS), size=num_pairs)
    else:
        codes = np.full(num_pairs, list(PAIR_DIRECTIONS).index(direction))
    offsets = np.array(list(PAIR_DIRECTIONS.values()))
    dy = offsets[codes, 0]
    dx = offsets[codes, 1]
    c = rng.integers(0, channels, size=num_pairs)
    y = (rng.random(num_pairs) * (height - dy)).astype(np.int64)
    x = (rng.random(num_pairs) * (width - dx)).astype(np.int64)
    first = c * height * width + y * width + x
    second = first + dy * width + dx
    return first.astype(np.int64), second.astype(np.int64)


def corr_loss(cipher, num_pairs=DEFAULT_NUM_PAIRS, rng=None, direction=None):
    """
    相邻像素相关性损失 |ρ(x, y)|

    参数:
        cipher (Tensor): 密文渲染 C×H×W
        num_pairs (int): 抽样像素对数量，默认5000
        rng (numpy.random.Generator, optional): 随机源
        direction (str, optional): 限定方向，缺省时混合三个方向

    返回:
        Tensor: 标量损失；任一方差低于1e-12时为0
    """
    if cipher.ndim != 3:
        raise InvalidArgumentError(f'相关性损失的输入必须为 C×H×W，实际形状 {cipher.shape}')
    rng = rng if rng is not None else np.random.default_rng(0)
    first, second = sample_adjacent_pairs(cipher.shape, num_pairs, rng, direction)
    return absolute(pearson(gather(cipher, first), gather(cipher, second)))


def cipher_loss(rendering, num_pairs=DEFAULT_NUM_PAIRS, rng=None):
    """L_cipher = L_uniform + L_corr，两项作用在同一渲染上"""
    return uniform_hist_loss(rendering) + corr_loss(rendering, num_pairs, rng)


def weighted_total(cipher_term, recover_term, weights):
    """λ₁·L_cipher + λ₂·L_recover"""
    return cipher_term * weights.cipher + recover_term * weights.recovery


def total_loss(rendering, triple, weights=None, num_pairs=DEFAULT_NUM_PAIRS, rng=None, use_triplet=True):
    """
    加权总损失

    参数:
        rendering (Tensor): 归一化到[0,1]的密文渲染
        triple (tuple): (明文, 正确密钥恢复, 错误密钥恢复)
        weights (LossWeights, optional): 默认 λ₁=λ₂=5.0

    返回:
        Tensor: 标量损失，梯度同时流向两个分支
    """
    weights = weights or LossWeights()
    anchor, positive, negative = triple
    return weighted_total(
        cipher_loss(rendering, num_pairs, rng),
        recovery_loss(anchor, positive, negative, use_triplet),
        weights,
    )
