# -*- coding: utf-8 -*-
"""
基于流的加密/解密模块（FED）

N 个可逆神经块（INB），每块含四个条件子网 η、ρ、φ、ω。加密走正向，
解密走逆向，两者共享同一组参数；秘密图 K 作为额外通道拼接到每个子网输入。
"""

import hashlib
import logging
import struct
from dataclasses import dataclass

import numpy as np

from flowcrypt.errors import FormatError, IncompatibleModelError, InvalidArgumentError
from flowcrypt.keygen import DEFAULT_ITERATIONS, derive_keys
from flowcrypt.numerics import (
    DEFAULT_SLOPE,
    Tensor,
    as_tensor,
    concat,
    conv2d,
    exp,
    leaky_relu,
    neg,
    sigmoid,
)
from flowcrypt.splitmerge import SplitLayout, extract, place

logger = logging.getLogger(__name__)

DEFAULT_BLOCKS = 4
DEFAULT_GROWTH = 32
SUBNET_LAYERS = 5
IMAGE_CHANNELS = 3
# 3个图像通道 + 1个秘密图通道
SUBNET_INPUT_CHANNELS = IMAGE_CHANNELS + 1
SUBNET_NAMES = ('eta', 'rho', 'phi', 'omega')

INIT_STD = 0.02
FINAL_LAYER_DAMPING = 0.1

WEIGHT_MAGIC = b'FCW1'
CIPHER_MAGIC = b'FCF1'
CIPHER_VERSION = 1
_ARCH_STRUCT = struct.Struct('<IIf')
_CIPHER_HEADER = struct.Struct('<4sBII32s')


@dataclass(frozen=True)
class ModelArch:
    """网络结构描述：块数 N、增长宽度 g、LeakyReLU 斜率"""

    blocks: int = DEFAULT_BLOCKS
    growth: int = DEFAULT_GROWTH
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        if self.blocks < 1 or self.growth < 1:
            raise InvalidArgumentError(f'块数与增长宽度必须为正数: N={self.blocks}, g={self.growth}')

    def layer_shapes(self):
        """
        单个子网5层卷积的 (权重形状, 偏置形状)

        第 i 层输入通道为 4 + (i−1)·g（稠密连接），第5层输出3通道。
        """
        shapes = []
        for i in range(SUBNET_LAYERS):
            in_ch = SUBNET_INPUT_CHANNELS + i * self.growth
            out_ch = IMAGE_CHANNELS if i == SUBNET_LAYERS - 1 else self.growth
            shapes.append(((out_ch, in_ch, 3, 3), (out_ch,)))
        return shapes

    def descriptor(self):
        return _ARCH_STRUCT.pack(self.blocks, self.growth, self.slope)


class FedModel:
    """
    FED 模型参数

    参数按 块1..N × (η,ρ,φ,ω) × 第1..5层 的顺序保存，名称形如
    "block0.eta.conv1.weight"。加载后视为不可变，训练时在副本上修改。
    """

    def __init__(self, arch, params):
        self.arch = arch
        self._params = params
        expected = list(self._names())
        if list(params.keys()) != expected:
            raise InvalidArgumentError('模型参数名称或顺序与结构描述不一致')

    def _names(self):
        for block in range(self.arch.blocks):
            for subnet in SUBNET_NAMES:
                for layer in range(1, SUBNET_LAYERS + 1):
                    yield f'block{block}.{subnet}.conv{layer}.weight'
                    yield f'block{block}.{subnet}.conv{layer}.bias'

    @classmethod
    def _build(cls, arch, fill, dtype):
        params = {}
        for block in range(arch.blocks):
            for subnet in SUBNET_NAMES:
                for layer, (w_shape, b_shape) in enumerate(arch.layer_shapes(), start=1):
                    prefix = f'block{block}.{subnet}.conv{layer}'
                    weight, bias = fill(layer, w_shape, b_shape)
                    params[f'{prefix}.weight'] = Tensor(
                        np.asarray(weight, dtype=dtype), requires_grad=True, name=f'{prefix}.weight')
                    params[f'{prefix}.bias'] = Tensor(
                        np.asarray(bias, dtype=dtype), requires_grad=True, name=f'{prefix}.bias')
        return cls(arch, params)

    @classmethod
    def zeros(cls, arch=None, dtype=np.float32):
        """全零参数模型"""
        arch = arch or ModelArch()
        return cls._build(arch, lambda layer, ws, bs: (np.zeros(ws), np.zeros(bs)), dtype)

    @classmethod
    def initialize(cls, arch=None, rng=None, dtype=np.float32):
        """
        训练初始化：权重 ~ N(0, 0.02²)，最后一层再乘0.1，偏置为0

        初始时 exp(σ(·)) 接近 e^0.5。
        """
        arch = arch or ModelArch()
        rng = rng if rng is not None else np.random.default_rng(0)

        def fill(layer, w_shape, b_shape):
            weight = rng.normal(0.0, INIT_STD, size=w_shape)
            if layer == SUBNET_LAYERS:
                weight = weight * FINAL_LAYER_DAMPING
            return weight, np.zeros(b_shape)

        return cls._build(arch, fill, dtype)

    @classmethod
    def randomize(cls, arch=None, rng=None, scale=0.1, dtype=np.float32):
        """随机参数（测试用）：权重 N(0,1)·scale/√fan_in，偏置 N(0,1)·scale"""
        arch = arch or ModelArch()
        rng = rng if rng is not None else np.random.default_rng(0)

        def fill(layer, w_shape, b_shape):
            fan_in = w_shape[1] * w_shape[2] * w_shape[3]
            weight = rng.standard_normal(w_shape) * scale / np.sqrt(fan_in)
            return weight, rng.standard_normal(b_shape) * scale

        return cls._build(arch, fill, dtype)

    def copy(self):
        params = {name: Tensor(p.data.copy(), requires_grad=True, name=name)
                  for name, p in self._params.items()}
        return FedModel(self.arch, params)

    def named_parameters(self):
        return list(self._params.items())

    def parameters(self):
        return list(self._params.values())

    def subnet(self, block, name):
        """返回某个子网5层的 [(weight, bias), ...]"""
        prefix = f'block{block}.{name}'
        return [(self._params[f'{prefix}.conv{layer}.weight'], self._params[f'{prefix}.conv{layer}.bias'])
                for layer in range(1, SUBNET_LAYERS + 1)]

    def block(self, index):
        return {name: self.subnet(index, name) for name in SUBNET_NAMES}

    def parameter_count(self):
        return int(sum(p.size for p in self._params.values()))

    def parameter_bytes(self):
        """按文件顺序（每层先权重后偏置）拼接的小端float32字节"""
        return b''.join(p.data.astype('<f4').tobytes() for p in self._params.values())

    def architecture_hash(self):
        """
        结构哈希：SHA-256(N, g, slope, 参数摘要)

        返回:
            bytes: 32字节摘要，写入密文容器用于模型匹配校验
        """
        digest = hashlib.sha256(self.parameter_bytes()).digest()
        return hashlib.sha256(self.arch.descriptor() + digest).digest()

    def to_bytes(self):
        return WEIGHT_MAGIC + self.arch.descriptor() + self.parameter_bytes()

    @classmethod
    def from_bytes(cls, raw):
        """解析 .fcw 权重文件内容"""
        header = len(WEIGHT_MAGIC) + _ARCH_STRUCT.size
        if len(raw) < header or raw[:4] != WEIGHT_MAGIC:
            raise FormatError('权重文件魔数不正确或文件过短')
        blocks, growth, slope = _ARCH_STRUCT.unpack(raw[4:header])
        try:
            arch = ModelArch(blocks, growth, slope)
        except InvalidArgumentError as e:
            raise FormatError(f'权重文件结构描述不合法: {e}')
        sizes = [(int(np.prod(ws)), ws, int(np.prod(bs)), bs) for ws, bs in arch.layer_shapes()]
        per_subnet = sum(4 * (wn + bn) for wn, _, bn, _ in sizes)
        expected = header + per_subnet * len(SUBNET_NAMES) * blocks
        if len(raw) != expected:
            raise FormatError(f'权重文件长度 {len(raw)} 与结构描述要求的 {expected} 不一致')
        offset = [header]

        def take(count, shape):
            start = offset[0]
            offset[0] = start + 4 * count
            return np.frombuffer(raw, dtype='<f4', count=count, offset=start).astype(np.float32).reshape(shape)

        def fill(layer, w_shape, b_shape):
            wn, _, bn, _ = sizes[layer - 1]
            return take(wn, w_shape), take(bn, b_shape)

        return cls._build(arch, fill, np.float32)


def save_model(model, path):
    """把模型写入 .fcw 文件（先写临时文件再改名）"""
    from utils.file_utils import atomic_write_bytes

    atomic_write_bytes(path, model.to_bytes())
    logger.info(f'模型已保存: {path}（参数量 {model.parameter_count()}）')


def load_model(path):
    with open(path, 'rb') as f:
        raw = f.read()
    model = FedModel.from_bytes(raw)
    logger.debug(f'已加载模型 {path}: N={model.arch.blocks}, g={model.arch.growth}')
    return model


# ---------------------------------------------------------------------------
# 子网与可逆块
# ---------------------------------------------------------------------------

def subnet_forward(inputs, layers, slope=DEFAULT_SLOPE):
    """
    稠密连接子网：第 i 层输入为 concat(输入, out1, …, out_{i−1})

    前4层为 Conv-LeakyReLU，第5层只有卷积（线性输出头）。

    参数:
        inputs (Tensor): 形状 4×H×W2
        layers (list): 5个 (weight, bias)
        slope (float): LeakyReLU 斜率

    返回:
        Tensor: 形状 3×H×W2
    """
    if inputs.ndim != 3 or inputs.shape[0] != SUBNET_INPUT_CHANNELS:
        raise InvalidArgumentError(f'子网输入必须为 {SUBNET_INPUT_CHANNELS} 通道，实际形状 {inputs.shape}')
    if len(layers) != SUBNET_LAYERS:
        raise InvalidArgumentError(f'子网应有 {SUBNET_LAYERS} 层，实际为 {len(layers)}')
    features = [inputs]
    out = None
    for i, (weight, bias) in enumerate(layers):
        x = features[0] if len(features) == 1 else concat(features, axis=0)
        out = conv2d(x, weight, bias)
        if i < SUBNET_LAYERS - 1:
            out = leaky_relu(out, slope)
            features.append(out)
    return out


def _check_pair(x, y, k):
    if x.ndim != 3 or x.shape != y.shape or x.shape[0] != IMAGE_CHANNELS:
        raise InvalidArgumentError(f'X/Y 形状不合法: {x.shape}, {y.shape}')
    if k.shape != (1,) + x.shape[1:]:
        raise InvalidArgumentError(f'秘密图形状 {k.shape} 与数据空间尺寸 {x.shape[1:]} 不一致')


def inb_forward(x, y, k, block, slope=DEFAULT_SLOPE):
    """
    单个可逆块的正向（加密）变换

    X' = X·exp(σ(η(Y‖K))) + ρ(Y‖K)
    Y' = Y·exp(σ(φ(X'‖K))) + ω(X'‖K)   （Y 的更新使用已更新的 X'）
    """
    _check_pair(x, y, k)
    yk = concat([y, k], axis=0)
    x_next = x * exp(sigmoid(subnet_forward(yk, block['eta'], slope))) + subnet_forward(yk, block['rho'], slope)
    xk = concat([x_next, k], axis=0)
    y_next = y * exp(sigmoid(subnet_forward(xk, block['phi'], slope))) + subnet_forward(xk, block['omega'], slope)
    return x_next, y_next


def inb_inverse(x_next, y_next, k, block, slope=DEFAULT_SLOPE):
    """
    单个可逆块的逆向（解密）变换，先恢复 Y 再恢复 X

    Y = (Y' − ω(X'‖K))·exp(−σ(φ(X'‖K)))
    X = (X' − ρ(Y‖K))·exp(−σ(η(Y‖K)))
    """
    _check_pair(x_next, y_next, k)
    xk = concat([x_next, k], axis=0)
    y = (y_next - subnet_forward(xk, block['omega'], slope)) * exp(neg(sigmoid(subnet_forward(xk, block['phi'], slope))))
    yk = concat([y, k], axis=0)
    x = (x_next - subnet_forward(yk, block['rho'], slope)) * exp(neg(sigmoid(subnet_forward(yk, block['eta'], slope))))
    return x, y


def fed_forward(x, y, k, model):
    """依次通过 N 个可逆块"""
    for index in range(model.arch.blocks):
        x, y = inb_forward(x, y, k, model.block(index), model.arch.slope)
    return x, y


def fed_inverse(x, y, k, model, order=None):
    """
    逆序通过 N 个可逆块

    参数:
        order (list, optional): 自定义块顺序（仅用于验证顺序敏感性），默认 N−1..0
    """
    order = list(range(model.arch.blocks - 1, -1, -1)) if order is None else order
    for index in order:
        x, y = inb_inverse(x, y, k, model.block(index), model.arch.slope)
    return x, y


def encrypt_canvas(image, layout, key_map, model):
    """划分 -> N 个正向块 -> 合并，返回密文画布张量"""
    x, y = extract(image, layout)
    x, y = fed_forward(x, y, as_tensor(key_map), model)
    return place(x, y, layout)


def decrypt_canvas(canvas, layout, key_map, model, order=None):
    """划分 -> 逆序 N 个逆向块 -> 合并，返回恢复图像张量（不截断）"""
    x, y = extract(canvas, layout)
    x, y = fed_inverse(x, y, as_tensor(key_map), model, order)
    return place(x, y, layout)


# ---------------------------------------------------------------------------
# 密文容器
# ---------------------------------------------------------------------------

@dataclass
class CipherContainer:
    """
    全精度密文容器：魔数+版本、W、H、模型哈希、float32 平面密文 3×H×W

    不包含任何密钥材料，也不包含明文统计信息。
    """

    width: int
    height: int
    model_hash: bytes
    payload: np.ndarray
    version: int = CIPHER_VERSION

    def to_bytes(self):
        header = _CIPHER_HEADER.pack(CIPHER_MAGIC, self.version, self.width, self.height, self.model_hash)
        return header + np.ascontiguousarray(self.payload, dtype='<f4').tobytes()

    @classmethod
    def from_bytes(cls, raw):
        if len(raw) < _CIPHER_HEADER.size:
            raise FormatError('密文文件过短，缺少文件头')
        magic, version, width, height, model_hash = _CIPHER_HEADER.unpack(raw[:_CIPHER_HEADER.size])
        if magic != CIPHER_MAGIC:
            raise FormatError(f'密文文件魔数不正确: {magic!r}')
        if version != CIPHER_VERSION:
            raise FormatError(f'不支持的密文版本: {version}')
        if width == 0 or height == 0 or width % 2 != 0:
            raise FormatError(f'密文尺寸不合法: {width}×{height}')
        expected = _CIPHER_HEADER.size + 4 * IMAGE_CHANNELS * width * height
        if len(raw) != expected:
            raise FormatError(f'密文文件长度 {len(raw)} 与尺寸要求的 {expected} 不一致')
        payload = np.frombuffer(raw, dtype='<f4', offset=_CIPHER_HEADER.size)
        payload = payload.astype(np.float32).reshape(IMAGE_CHANNELS, height, width)
        return cls(width, height, model_hash, payload, version)


def write_cipher(container, path):
    from utils.file_utils import atomic_write_bytes

    atomic_write_bytes(path, container.to_bytes())
    logger.info(f'密文已保存: {path}')


def read_cipher(path):
    with open(path, 'rb') as f:
        return CipherContainer.from_bytes(f.read())


def validate_image(image):
    """
    检查明文图像：形状 3×H×W，W 为偶数，取值在[0,1]

    返回:
        Tensor: 图像张量
    """
    image = as_tensor(image)
    if image.ndim != 3 or image.shape[0] != IMAGE_CHANNELS:
        raise InvalidArgumentError(f'图像必须为 3×H×W，实际形状 {image.shape}')
    if image.shape[2] % 2 != 0:
        raise InvalidArgumentError(f'图像宽度必须为偶数，实际为 {image.shape[2]}')
    data = image.data
    if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
        raise InvalidArgumentError('图像取值必须在[0,1]范围内')
    return image


def encrypt(image, password, model, iterations=DEFAULT_ITERATIONS):
    """
    加密：口令派生掩码与秘密图 -> 划分 -> N 个正向块 -> 合并 -> float32 容器

    参数:
        image (Tensor|numpy.ndarray): 明文图像 3×H×W，取值[0,1]，W为偶数
        password (bytes): 口令
        model (FedModel): 模型
        iterations (int): PBKDF2迭代次数

    返回:
        CipherContainer: 密文容器，对相同输入结果逐位相同
    """
    image = validate_image(image)
    _, height, width = image.shape
    _, mask, key_map = derive_keys(password, width, height, iterations)
    canvas = encrypt_canvas(image, SplitLayout(mask), key_map, model)
    payload = canvas.data.astype(np.float32)
    return CipherContainer(width, height, model.architecture_hash(), payload)


def decrypt(container, password, model, iterations=DEFAULT_ITERATIONS):
    """
    解密：重新派生掩码与秘密图 -> 划分 -> 逆序逆向块 -> 合并

    口令错误无法被检测，总会得到一幅图像；输出不截断。

    返回:
        Tensor: 恢复图像 3×H×W
    """
    if container.model_hash != model.architecture_hash():
        raise IncompatibleModelError('密文记录的模型哈希与当前模型不一致')
    _, mask, key_map = derive_keys(password, container.width, container.height, iterations)
    canvas = Tensor(container.payload)
    return decrypt_canvas(canvas, SplitLayout(mask), key_map, model)
