# -*- coding: utf-8 -*-
"""
评估指标

恢复质量：PSNR、SSIM、MAE、RMSE（[0,1]尺度）；
密文安全性：8位熵、H/V/D 相邻像素相关性；
差分与密钥敏感性：NPCR、UACI。
"""

import logging
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from skimage.metrics import structural_similarity

from flowcrypt.errors import DegenerateRangeError, InvalidArgumentError
from flowcrypt.losses import DEFAULT_NUM_PAIRS, sample_adjacent_pairs
from flowcrypt.numerics import Tensor, pearson

logger = logging.getLogger(__name__)

PSNR_CAP = 200.0
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
LEVELS = 256


@dataclass
class CipherRendering8:
    """
    密文的8位渲染，仅用于分析和可视化，从不参与解密

    属性:
        values (numpy.ndarray): uint8 数组 3×H×W
        lo (float): 映射使用的最小值
        hi (float): 映射使用的最大值
    """

    values: np.ndarray
    lo: float
    hi: float

    def to_float(self):
        """按存储的 min/max 反映射回浮点值"""
        return self.lo + self.values.astype(np.float64) / 255.0 * (self.hi - self.lo)


@dataclass
class MetricsReport:
    """单次比较的指标集合，未计算的项为 None"""

    psnr: Optional[float] = None
    psnr_infinite: Optional[bool] = None
    ssim: Optional[float] = None
    mae: Optional[float] = None
    rmse: Optional[float] = None
    entropy: Optional[float] = None
    corr_h: Optional[float] = None
    corr_v: Optional[float] = None
    corr_d: Optional[float] = None
    npcr: Optional[float] = None
    uaci: Optional[float] = None

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


def _as_array(value):
    if isinstance(value, Tensor):
        return value.data.astype(np.float64)
    if isinstance(value, CipherRendering8):
        return value.values
    return np.asarray(value)


def render8(canvas):
    """
    把浮点密文画布线性映射为8位图像：v -> round(255·(v−min)/(max−min))，四舍五入取半进一

    参数:
        canvas (Tensor|numpy.ndarray): 密文画布

    返回:
        CipherRendering8: 8位渲染及映射所用的 min/max
    """
    data = _as_array(canvas).astype(np.float64)
    if data.size == 0 or not np.all(np.isfinite(data)):
        raise InvalidArgumentError('渲染输入必须非空且全部为有限值')
    lo = float(data.min())
    hi = float(data.max())
    if hi <= lo:
        raise DegenerateRangeError(f'画布为常数 {lo}，无法做min/max映射')
    scaled = np.floor(255.0 * (data - lo) / (hi - lo) + 0.5)
    return CipherRendering8(np.clip(scaled, 0, 255).astype(np.uint8), lo, hi)


def quantize8(image):
    """恢复图像量化：先截断到[0,1]，再四舍五入取半进一到8位"""
    data = np.clip(_as_array(image).astype(np.float64), 0.0, 1.0)
    return np.floor(data * 255.0 + 0.5).astype(np.uint8)


def psnr(reference, test):
    """
    [0,1]尺度的PSNR

    返回:
        tuple: (psnr, 是否为无穷)；无穷时返回上限200 dB
    """
    ref = _as_array(reference).astype(np.float64)
    tst = _as_array(test).astype(np.float64)
    if ref.shape != tst.shape:
        raise InvalidArgumentError(f'图像形状不一致: {ref.shape} 与 {tst.shape}')
    err = float(np.mean((ref - tst) ** 2))
    if err == 0:
        return PSNR_CAP, True
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / err)), False


def ssim(reference, test):
    """
    逐通道SSIM后取平均：11×11 高斯窗 σ=1.5，K₁=0.01，K₂=0.03

    空间尺寸小于窗口时返回 NaN 并给出警告。
    """
    ref = _as_array(reference).astype(np.float64)
    tst = _as_array(test).astype(np.float64)
    if ref.shape != tst.shape:
        raise InvalidArgumentError(f'图像形状不一致: {ref.shape} 与 {tst.shape}')
    if min(ref.shape[-2:]) < SSIM_WINDOW:
        warnings.warn(f'图像尺寸 {ref.shape[-2:]} 小于SSIM窗口 {SSIM_WINDOW}，SSIM记为NaN')
        return float('nan')
    return float(structural_similarity(
        ref, tst,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        data_range=1.0,
        channel_axis=0 if ref.ndim == 3 else None,
    ))


def quality_metrics(reference, test):
    """
    恢复质量指标

    参数:
        reference (Tensor|numpy.ndarray): 参考图像，取值[0,1]
        test (Tensor|numpy.ndarray): 待测图像

    返回:
        MetricsReport: 含 psnr、psnr_infinite、ssim、mae、rmse
    """
    ref = _as_array(reference).astype(np.float64)
    tst = _as_array(test).astype(np.float64)
    if ref.shape != tst.shape:
        raise InvalidArgumentError(f'图像形状不一致: {ref.shape} 与 {tst.shape}')
    value, infinite = psnr(ref, tst)
    diff = ref - tst
    return MetricsReport(
        psnr=value,
        psnr_infinite=infinite,
        ssim=ssim(ref, tst),
        mae=float(np.mean(np.abs(diff))),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
    )


def entropy8(rendering):
    """所有通道合并的256级香农熵（比特），取值[0,8]"""
    values = _as_array(rendering).astype(np.int64).reshape(-1)
    if values.size == 0:
        return 0.0
    counts = np.bincount(values, minlength=LEVELS)
    p = counts[counts > 0] / values.size
    return float(-(p * np.log2(p)).sum()) + 0.0


def adjacent_correlation(rendering, direction, n_pairs=DEFAULT_NUM_PAIRS, rng=None):
    """
    指定方向（H/V/D）的相邻像素皮尔逊相关系数

    参数:
        rendering (CipherRendering8|numpy.ndarray): 8位图像 C×H×W
        direction (str): H、V 或 D
        n_pairs (int): 抽样像素对数量
        rng (numpy.random.Generator, optional): 随机源

    返回:
        float: 相关系数；方差低于1e-12时为0
    """
    values = _as_array(rendering).astype(np.float64)
    if values.ndim == 2:
        values = values[None]
    rng = rng if rng is not None else np.random.default_rng(0)
    first, second = sample_adjacent_pairs(values.shape, n_pairs, rng, direction)
    flat = values.reshape(-1)
    return pearson(Tensor(flat[first]), Tensor(flat[second])).item()


def npcr_uaci(a, b):
    """
    NPCR 与 UACI（百分比）

    返回:
        tuple: (npcr, uaci)
    """
    av = _as_array(a).astype(np.float64)
    bv = _as_array(b).astype(np.float64)
    if av.shape != bv.shape:
        raise InvalidArgumentError(f'图像形状不一致: {av.shape} 与 {bv.shape}')
    npcr = 100.0 * float(np.mean(av != bv))
    uaci = 100.0 * float(np.mean(np.abs(av - bv) / 255.0))
    return npcr, uaci


def cipher_security(rendering, n_pairs=DEFAULT_NUM_PAIRS, rng=None):
    """密文安全性指标：熵与三个方向的相关系数"""
    rng = rng if rng is not None else np.random.default_rng(0)
    return MetricsReport(
        entropy=entropy8(rendering),
        corr_h=adjacent_correlation(rendering, 'H', n_pairs, rng),
        corr_v=adjacent_correlation(rendering, 'V', n_pairs, rng),
        corr_d=adjacent_correlation(rendering, 'D', n_pairs, rng),
    )
