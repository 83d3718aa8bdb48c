# -*- coding: utf-8 -*-
"""
训练配置

配置文件为纯文本 key = value 格式，# 开头为注释。可以重复出现 noise 行构成噪声混合，例如:

    steps = 2000
    image_size = 32
    noise = kind=gaussian_noise sigma=0.03 weight=1
    noise = kind=identity weight=1
"""

import logging
from dataclasses import dataclass, field, fields
from typing import List, Optional

from flowcrypt.errors import InvalidArgumentError
from flowcrypt.fed import DEFAULT_BLOCKS, DEFAULT_GROWTH
from flowcrypt.keygen import DEFAULT_ITERATIONS, SPLIT_STRATEGIES
from flowcrypt.losses import DEFAULT_LAMBDA, DEFAULT_NUM_PAIRS
from flowcrypt.noise import NoiseSpec

logger = logging.getLogger(__name__)

DEFAULT_LEARNING_RATE = 10 ** -4.5
DEFAULT_STEPS = 2000
DEFAULT_IMAGE_SIZE = 32
DEFAULT_BATCH_SIZE = 4


def _parse_bool(value):
    text = str(value).strip().lower()
    if text in ('1', 'true', 'yes', 'on'):
        return True
    if text in ('0', 'false', 'no', 'off'):
        return False
    raise InvalidArgumentError(f'无法解析的布尔值: {value!r}')


@dataclass
class TrainConfig:
    """
    训练配置

    属性:
        image_size (int): 训练裁剪边长，必须为偶数
        batch_size (int): 每步图像数
        steps (int): 训练步数，0 表示只初始化
        learning_rate (float): Adam 学习率，默认 10^(−4.5)
        beta1 (float): Adam β₁
        beta2 (float): Adam β₂
        adam_eps (float): Adam ε
        lambda_cipher (float): 密文损失权重 λ₁
        lambda_recovery (float): 恢复损失权重 λ₂
        noise (list): 噪声混合，NoiseSpec 列表
        seed (int): 随机种子
        dataset (str): 图像目录
        use_triplet (bool): 是否使用三元组恢复损失
        split_strategy (str): 划分策略 pbkdf / fixed_seed / chessboard
        kdf_iterations (int): PBKDF2 迭代次数
        checkpoint_every (int): 每隔多少步保存一次检查点，0 表示不保存
        log_every (int): 每隔多少步输出一次 INFO 日志
        num_pairs (int): 相关性损失的像素对数量
        blocks (int): 可逆块数 N
        growth (int): 子网增长宽度 g
        out_dir (str, optional): 输出目录，None 时不写文件
    """

    image_size: int = DEFAULT_IMAGE_SIZE
    batch_size: int = DEFAULT_BATCH_SIZE
    steps: int = DEFAULT_STEPS
    learning_rate: float = DEFAULT_LEARNING_RATE
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_cipher: float = DEFAULT_LAMBDA
    lambda_recovery: float = DEFAULT_LAMBDA
    noise: List[NoiseSpec] = field(default_factory=lambda: [NoiseSpec('identity')])
    seed: int = 0
    dataset: Optional[str] = None
    use_triplet: bool = True
    split_strategy: str = 'pbkdf'
    kdf_iterations: int = DEFAULT_ITERATIONS
    checkpoint_every: int = 500
    log_every: int = 50
    num_pairs: int = DEFAULT_NUM_PAIRS
    blocks: int = DEFAULT_BLOCKS
    growth: int = DEFAULT_GROWTH
    out_dir: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ('image_size', 'batch_size', 'learning_rate', 'kdf_iterations',
                     'log_every', 'num_pairs', 'blocks', 'growth'):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f'配置项 {name} 必须为正数，实际为 {getattr(self, name)}')
        for name in ('steps', 'checkpoint_every', 'lambda_cipher', 'lambda_recovery', 'seed'):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f'配置项 {name} 不能为负数，实际为 {getattr(self, name)}')
        if self.image_size % 2 != 0:
            raise InvalidArgumentError(f'image_size 必须为偶数，实际为 {self.image_size}')
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1) or self.adam_eps <= 0:
            raise InvalidArgumentError(f'Adam 参数不合法: β₁={self.beta1}, β₂={self.beta2}, ε={self.adam_eps}')
        if self.split_strategy not in SPLIT_STRATEGIES:
            raise InvalidArgumentError(f'未知的划分策略: {self.split_strategy}，可选 {SPLIT_STRATEGIES}')
        if not self.noise:
            raise InvalidArgumentError('噪声配置不能为空')

    @classmethod
    def from_dict(cls, values):
        """由字符串字典构造配置，按字段类型转换取值"""
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, raw in values.items():
            if key not in known:
                raise InvalidArgumentError(f'未知的配置项: {key}')
            if key == 'noise':
                kwargs[key] = [spec if isinstance(spec, NoiseSpec) else NoiseSpec.parse(spec) for spec in raw]
                continue
            kwargs[key] = _convert(known[key], raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path):
        """
        读取 key = value 格式的配置文件

        参数:
            path (str): 配置文件路径

        返回:
            TrainConfig: 训练配置
        """
        values = {}
        noise = []
        with open(path, 'r', encoding='utf-8') as f:
            for number, line in enumerate(f, start=1):
                line = line.split('#', 1)[0].strip()
                if not line:
                    continue
                if '=' not in line:
                    raise InvalidArgumentError(f'{path} 第 {number} 行格式错误，应为 key = value')
                key, value = line.split('=', 1)
                key = key.strip()
                if key == 'noise':
                    noise.append(value.strip())
                else:
                    values[key] = value.strip()
        if noise:
            values['noise'] = noise
        logger.info(f'已读取训练配置: {path}')
        return cls.from_dict(values)

    def to_text(self):
        """序列化为可被 from_file 读回的文本"""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == 'noise':
                lines.extend(f'noise = {spec.to_config()}' for spec in value)
            elif value is not None:
                lines.append(f'{f.name} = {value}')
        return '\n'.join(lines) + '\n'


def _convert(f, raw):
    if not isinstance(raw, str):
        return raw
    if f.default is None and raw.lower() in ('', 'none'):
        return None
    converter = {bool: _parse_bool, int: int, float: float}.get(f.type, str)
    try:
        return converter(raw)
    except ValueError:
        raise InvalidArgumentError(f'配置项 {f.name} 的取值无法解析: {raw!r}')
