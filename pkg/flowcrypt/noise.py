# -*- coding: utf-8 -*-
"""
可微噪声层：作用在密文画布 I_C 上，得到退化图像 I_A

支持 identity、jpeg_ss、gaussian_noise、gaussian_blur、median_blur、
cropout、dropout、salt_pepper、random_crop。各噪声通过 register_noise
注册到 NOISE_LAYERS，apply_noise 按 NoiseSpec.kind 分派。
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from flowcrypt.errors import InvalidArgumentError
from flowcrypt.numerics import (
    DCT_BLOCK,
    amax,
    amin,
    as_tensor,
    block_dct_filter,
    depthwise_conv2d,
    median_filter,
)

logger = logging.getLogger(__name__)

DEFAULT_QUALITY = 50
DEFAULT_NOISE_SIGMA = 0.03
DEFAULT_BLUR_SIGMA = 1.0
DEFAULT_WINDOW = 3
DEFAULT_RATIOS = {
    'cropout': 0.1,
    'dropout': 0.3,
    'salt_pepper': 0.05,
    'random_crop': 0.1,
}

# 每种噪声使用的参数字段
KIND_PARAMS = {
    'identity': (),
    'jpeg_ss': ('quality',),
    'gaussian_noise': ('sigma',),
    'gaussian_blur': ('sigma',),
    'median_blur': ('window',),
    'cropout': ('ratio',),
    'dropout': ('ratio',),
    'salt_pepper': ('ratio',),
    'random_crop': ('ratio',),
}
CONFIG_KEYS = ('kind', 'quality', 'sigma', 'window', 'ratio', 'weight', 'seed')

NOISE_LAYERS = {}


def register_noise(kind):
    """噪声层注册装饰器，层函数签名为 layer(image, spec, rng) -> Tensor"""

    def decorator(fn):
        NOISE_LAYERS[kind] = fn
        return fn

    return decorator


@dataclass
class NoiseSpec:
    """
    噪声配置

    属性:
        kind (str): 噪声类型
        quality (int): JPEG 质量 Q，范围[10,100]
        sigma (float): 高斯噪声/模糊的标准差，>0
        window (int): 中值滤波窗口，奇数且 >= 3
        ratio (float): 裁剪/丢弃/椒盐比例，范围[0,1)
        weight (float): 训练时的抽样权重
        seed (int, optional): 未显式传入随机源时使用的种子
    """

    kind: str = 'identity'
    quality: Optional[int] = None
    sigma: Optional[float] = None
    window: Optional[int] = None
    ratio: Optional[float] = None
    weight: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KIND_PARAMS:
            raise InvalidArgumentError(f'未知的噪声类型: {self.kind}，可选 {tuple(KIND_PARAMS)}')
        if self.quality is None:
            self.quality = DEFAULT_QUALITY
        if self.sigma is None:
            self.sigma = DEFAULT_BLUR_SIGMA if self.kind == 'gaussian_blur' else DEFAULT_NOISE_SIGMA
        if self.window is None:
            self.window = DEFAULT_WINDOW
        if self.ratio is None:
            self.ratio = DEFAULT_RATIOS.get(self.kind, 0.0)
        self.validate()

    def validate(self):
        params = KIND_PARAMS[self.kind]
        if 'quality' in params and not 10 <= self.quality <= 100:
            raise InvalidArgumentError(f'JPEG质量必须在[10,100]内，实际为 {self.quality}')
        if 'sigma' in params and not self.sigma > 0:
            raise InvalidArgumentError(f'sigma 必须为正数，实际为 {self.sigma}')
        if 'window' in params and (self.window < 3 or self.window % 2 == 0):
            raise InvalidArgumentError(f'中值滤波窗口必须为 >= 3 的奇数，实际为 {self.window}')
        if 'ratio' in params and not 0.0 <= self.ratio < 1.0:
            raise InvalidArgumentError(f'比例必须在[0,1)内，实际为 {self.ratio}')
        if self.weight < 0 or not math.isfinite(self.weight):
            raise InvalidArgumentError(f'抽样权重必须为非负有限数，实际为 {self.weight}')

    @classmethod
    def parse(cls, text):
        """
        解析 "kind=gaussian_noise sigma=0.03" 形式的配置串

        首个不含等号的词视为 kind，例如 "dropout ratio=0.3"。

        参数:
            text (str): 配置串

        返回:
            NoiseSpec: 噪声配置
        """
        fields = {}
        for i, token in enumerate(text.split()):
            if '=' not in token:
                if i == 0:
                    fields['kind'] = token
                    continue
                raise InvalidArgumentError(f'噪声配置项格式错误: {token!r}，应为 key=value')
            key, value = token.split('=', 1)
            key = key.strip()
            if key not in CONFIG_KEYS:
                raise InvalidArgumentError(f'未知的噪声配置键: {key}，可选 {CONFIG_KEYS}')
            fields[key] = value.strip()
        if 'kind' not in fields:
            raise InvalidArgumentError(f'噪声配置缺少 kind: {text!r}')
        try:
            converted = {
                'kind': fields['kind'],
                'quality': int(fields['quality']) if 'quality' in fields else None,
                'sigma': float(fields['sigma']) if 'sigma' in fields else None,
                'window': int(fields['window']) if 'window' in fields else None,
                'ratio': float(fields['ratio']) if 'ratio' in fields else None,
                'weight': float(fields.get('weight', 1.0)),
                'seed': int(fields['seed']) if 'seed' in fields else None,
            }
        except ValueError as e:
            raise InvalidArgumentError(f'噪声配置数值无法解析: {text!r} ({e})')
        return cls(**converted)

    def to_config(self):
        """序列化为可被 parse 读回的配置串"""
        parts = [f'kind={self.kind}']
        for name in KIND_PARAMS[self.kind]:
            parts.append(f'{name}={getattr(self, name)}')
        if self.weight != 1.0:
            parts.append(f'weight={self.weight}')
        if self.seed is not None:
            parts.append(f'seed={self.seed}')
        return ' '.join(parts)

    def label(self):
        """报告中使用的简短标签，例如 gaussian_noise(sigma=0.03)"""
        params = ', '.join(f'{name}={getattr(self, name)}' for name in KIND_PARAMS[self.kind])
        return f'{self.kind}({params})' if params else self.kind


def apply_noise(image, spec, rng=None):
    """
    对密文画布施加一次噪声

    参数:
        image (Tensor): 密文画布 3×H×W
        spec (NoiseSpec): 噪声配置
        rng (numpy.random.Generator, optional): 随机源，缺省时由 spec.seed 构造

    返回:
        Tensor: 退化画布 3×H×W
    """
    image = as_tensor(image)
    if image.ndim != 3:
        raise InvalidArgumentError(f'噪声层输入必须为 C×H×W，实际形状 {image.shape}')
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    return NOISE_LAYERS[spec.kind](image, spec, rng)


def sample_noise_for_training(config, rng):
    """
    按权重为一个训练步抽取噪声配置

    参数:
        config (list): NoiseSpec 列表，权重取自 spec.weight
        rng (numpy.random.Generator): 随机源

    返回:
        NoiseSpec: 抽中的配置
    """
    if not config:
        raise InvalidArgumentError('噪声配置列表不能为空')
    weights = np.array([spec.weight for spec in config], dtype=np.float64)
    if np.any(weights < 0) or weights.sum() <= 0:
        raise InvalidArgumentError(f'噪声权重必须非负且和为正，实际为 {weights.tolist()}')
    index = int(rng.choice(len(config), p=weights / weights.sum()))
    return config[index]


# ---------------------------------------------------------------------------
# 辅助函数
# ---------------------------------------------------------------------------

def _normalize_bracket(image):
    """用画布自身的最小/最大值把画布仿射归一化到[0,1]；常数画布的尺度取1"""
    lo = amin(image)
    hi = amax(image)
    if hi.item() - lo.item() > 0:
        scale = hi - lo
    else:
        scale = as_tensor(1.0, like=image)
    return lo, hi, scale


def zigzag_keep_mask(quality, n=DCT_BLOCK):
    """
    JPEG 之字形顺序的前缀系数掩码，保留 max(1, round(n²·Q/100)) 个系数

    返回:
        numpy.ndarray: n×n 的0/1数组
    """
    keep = max(1, int(round(n * n * quality / 100.0)))
    positions = [(i, j) for i in range(n) for j in range(n)]
    positions.sort(key=lambda p: (p[0] + p[1], p[0] if (p[0] + p[1]) % 2 else -p[0]))
    mask = np.zeros((n, n))
    for i, j in positions[:keep]:
        mask[i, j] = 1.0
    return mask


def gaussian_kernel(sigma):
    """归一化二维高斯核，尺寸 2·⌈3σ⌉+1"""
    radius = int(math.ceil(3 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    line = np.exp(-offsets ** 2 / (2 * sigma ** 2))
    kernel = np.outer(line, line)
    return kernel / kernel.sum()


def _spatial_mask(image, keep):
    """把 H×W 的0/1保留掩码扩展为可与画布相乘的 1×H×W 常量"""
    return as_tensor(keep[None, :, :].astype(image.dtype))


def _rectangle(height, width, fraction, rng):
    """随机位置的矩形，面积约为 fraction·H·W"""
    rect_h = min(height, max(1, int(round(height * math.sqrt(fraction)))))
    rect_w = min(width, max(1, int(round(fraction * height * width / rect_h))))
    top = int(rng.integers(0, height - rect_h + 1))
    left = int(rng.integers(0, width - rect_w + 1))
    return top, left, rect_h, rect_w


def _pick_pixels(height, width, ratio, rng):
    count = int(math.floor(ratio * height * width))
    chosen = np.zeros(height * width, dtype=bool)
    chosen[rng.choice(height * width, size=count, replace=False)] = True
    return chosen.reshape(height, width)


# ---------------------------------------------------------------------------
# 各类噪声层
# ---------------------------------------------------------------------------

@register_noise('identity')
def identity(image, spec, rng):
    return image


@register_noise('jpeg_ss')
def jpeg_ss(image, spec, rng):
    """可微 JPEG 近似：在[0,1]框架下做8×8分块DCT并保留之字形前缀系数"""
    lo, _, scale = _normalize_bracket(image)
    normalized = (image - lo) / scale
    filtered = block_dct_filter(normalized, zigzag_keep_mask(spec.quality))
    return filtered * scale + lo


@register_noise('gaussian_noise')
def gaussian_noise(image, spec, rng):
    noise = rng.normal(0.0, spec.sigma, size=image.shape).astype(image.dtype)
    return image + as_tensor(noise)


@register_noise('gaussian_blur')
def gaussian_blur(image, spec, rng):
    return depthwise_conv2d(image, gaussian_kernel(spec.sigma))


@register_noise('median_blur')
def median_blur(image, spec, rng):
    return median_filter(image, spec.window)


@register_noise('cropout')
def cropout(image, spec, rng):
    """把一个面积占比为 r 的随机矩形置零"""
    if spec.ratio == 0:
        return image
    _, height, width = image.shape
    top, left, rect_h, rect_w = _rectangle(height, width, spec.ratio, rng)
    keep = np.ones((height, width))
    keep[top:top + rect_h, left:left + rect_w] = 0.0
    return image * _spatial_mask(image, keep)


@register_noise('dropout')
def dropout(image, spec, rng):
    """均匀随机选出 ⌊r·H·W⌋ 个像素位置（全部通道）置零"""
    if spec.ratio == 0:
        return image
    _, height, width = image.shape
    keep = (~_pick_pixels(height, width, spec.ratio, rng)).astype(np.float64)
    return image * _spatial_mask(image, keep)


@register_noise('salt_pepper')
def salt_pepper(image, spec, rng):
    """⌊r·H·W⌋ 个像素等概率替换为画布最小值或最大值，被替换处梯度为0"""
    if spec.ratio == 0:
        return image
    _, height, width = image.shape
    chosen = _pick_pixels(height, width, spec.ratio, rng)
    salt = chosen & (rng.random((height, width)) < 0.5)
    pepper = chosen & ~salt
    lo, hi, _ = _normalize_bracket(image)
    keep = _spatial_mask(image, (~chosen).astype(np.float64))
    return image * keep + lo * _spatial_mask(image, pepper.astype(np.float64)) \
        + hi * _spatial_mask(image, salt.astype(np.float64))


@register_noise('random_crop')
def random_crop(image, spec, rng):
    """保留一个面积占比为 1−r 的随机矩形，其余位置置零"""
    if spec.ratio == 0:
        return image
    _, height, width = image.shape
    top, left, rect_h, rect_w = _rectangle(height, width, 1.0 - spec.ratio, rng)
    keep = np.zeros((height, width))
    keep[top:top + rect_h, left:left + rect_w] = 1.0
    return image * _spatial_mask(image, keep)
