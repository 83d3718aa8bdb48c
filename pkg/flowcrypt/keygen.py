# -*- coding: utf-8 -*-
"""
密钥生成：由用户口令派生均衡划分掩码 M 与秘密图 K

流程：PBKDF2-HMAC-SHA256(口令, 固定盐, 迭代次数) 得到32字节主密钥，
再以主密钥驱动 ChaCha20 密钥流（nonce全零、计数器从0开始）。
密钥流消耗顺序固定：先生成掩码，再生成秘密图。
"""

import hashlib
import logging
import math
import struct

import numpy as np
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms
from cryptography.hazmat.primitives.kdf.pbkdf2 import PBKDF2HMAC

from flowcrypt.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

FIXED_SALT = b'FlowCryptSalt-01'
DEFAULT_ITERATIONS = 100000
MASTER_LENGTH = 32
# 固定种子划分（消融实验）使用的主密钥来源
FIXED_SEED_MASTER = hashlib.sha256(b'FlowCrypt fixed-seed split').digest()

SPLIT_STRATEGIES = ('pbkdf', 'fixed_seed', 'chessboard')

_UINT32_RANGE = 1 << 32


def derive_master(password, salt=FIXED_SALT, iterations=DEFAULT_ITERATIONS):
    """
    由口令派生32字节主密钥

    参数:
        password (bytes): 用户口令，任意长度但不能为空
        salt (bytes): 16字节盐，默认固定盐 "FlowCryptSalt-01"
        iterations (int): 迭代次数，默认100000

    返回:
        bytes: 32字节主密钥
    """
    if isinstance(password, str):
        password = password.encode('utf-8')
    if not password:
        raise InvalidArgumentError('口令不能为空')
    if len(salt) != 16:
        raise InvalidArgumentError(f'盐必须为16字节，实际为 {len(salt)} 字节')
    if iterations < 1:
        raise InvalidArgumentError(f'迭代次数必须为正整数，实际为 {iterations}')
    kdf = PBKDF2HMAC(algorithm=hashes.SHA256(), length=MASTER_LENGTH, salt=salt, iterations=iterations)
    return kdf.derive(password)


class KeyMaterial:
    """
    口令派生的密钥材料

    持有主密钥和一个带游标的ChaCha20密钥流。游标可变，单个实例只能单线程使用。
    主密钥从不写入任何密文容器。
    """

    def __init__(self, master, password=None, salt=FIXED_SALT, iterations=None):
        if len(master) != MASTER_LENGTH:
            raise InvalidArgumentError(f'主密钥必须为{MASTER_LENGTH}字节')
        self.password = password
        self.salt = salt
        self.iterations = iterations
        self.master = bytes(master)
        self.stream_position = 0
        cipher = Cipher(algorithms.ChaCha20(self.master, b'\x00' * 16), mode=None)
        self._encryptor = cipher.encryptor()

    @classmethod
    def from_password(cls, password, salt=FIXED_SALT, iterations=DEFAULT_ITERATIONS):
        if isinstance(password, str):
            password = password.encode('utf-8')
        master = derive_master(password, salt, iterations)
        return cls(master, password=password, salt=salt, iterations=iterations)

    @classmethod
    def from_master(cls, master):
        return cls(master)

    def keystream(self, n):
        """
        读取接下来的 n 个密钥流字节并推进游标

        参数:
            n (int): 字节数，n >= 0

        返回:
            bytes: 密钥流片段；连续调用的结果首尾相接
        """
        if n < 0:
            raise InvalidArgumentError(f'密钥流长度不能为负数: {n}')
        if n == 0:
            return b''
        self.stream_position += n
        return self._encryptor.update(b'\x00' * n)

    def __repr__(self):
        # 不输出主密钥
        return f'KeyMaterial(iterations={self.iterations}, stream_position={self.stream_position})'


def keystream(material, n):
    """模块级便捷函数，等价于 material.keystream(n)"""
    return material.keystream(n)


def _uniform_index(byte_source, bound):
    # 拒绝采样：丢弃落在 2^32 不能整除部分的抽样，保证 [0, bound) 上均匀
    limit = _UINT32_RANGE - (_UINT32_RANGE % bound)
    while True:
        (value,) = struct.unpack('<I', byte_source(4))
        if value < limit:
            return value % bound


def fisher_yates_shuffle(values, byte_source):
    """
    以字节源驱动的无偏Fisher–Yates洗牌（原地）

    每次抽取4字节小端无符号整数，用拒绝采样得到 [0, i] 上的均匀下标。

    参数:
        values (numpy.ndarray): 一维数组，原地打乱
        byte_source (callable): byte_source(n) 返回 n 个字节

    返回:
        numpy.ndarray: 打乱后的同一数组
    """
    for i in range(len(values) - 1, 0, -1):
        j = _uniform_index(byte_source, i + 1)
        values[i], values[j] = values[j], values[i]
    return values


class BalancedMask:
    """
    严格均衡的二值掩码，形状 H×W，恰好一半为1

    参数:
        bits (numpy.ndarray): uint8 数组，取值0/1
    """

    def __init__(self, bits):
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.ndim != 2:
            raise InvalidArgumentError(f'掩码必须是二维数组，实际形状 {bits.shape}')
        self.bits = bits

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]

    def popcount(self):
        return int(self.bits.sum())

    def digest(self):
        """掩码按行优先字节序的SHA-256十六进制摘要"""
        return hashlib.sha256(self.bits.tobytes()).hexdigest()


def _check_dims(width, height):
    if width <= 0 or height <= 0:
        raise InvalidArgumentError(f'尺寸必须为正数，实际为 {width}×{height}')
    if width % 2 != 0:
        raise InvalidArgumentError(f'图像宽度必须为偶数，实际为 {width}')


def balanced_mask(material, width, height):
    """
    生成均衡掩码

    先构造 [1]·(WH/2) ‖ [0]·(WH/2)，再用密钥流驱动Fisher–Yates洗牌，按行优先重排为 H×W。

    参数:
        material (KeyMaterial): 密钥材料（消耗其密钥流）
        width (int): 宽度W，必须为偶数
        height (int): 高度H

    返回:
        BalancedMask: 均衡掩码
    """
    _check_dims(width, height)
    total = width * height
    vector = np.zeros(total, dtype=np.uint8)
    vector[:total // 2] = 1

    # 预取最少所需字节，拒绝时再逐次补取，保证密钥流消耗量精确
    buffer = bytearray(material.keystream(4 * (total - 1)))
    cursor = [0]

    def byte_source(n):
        start = cursor[0]
        if start + n > len(buffer):
            buffer.extend(material.keystream(start + n - len(buffer)))
        cursor[0] = start + n
        return bytes(buffer[start:start + n])

    fisher_yates_shuffle(vector, byte_source)
    return BalancedMask(vector.reshape(height, width))


def chessboard_mask(width, height):
    """棋盘划分掩码：(x+y) 为偶数处取1（消融实验用）"""
    _check_dims(width, height)
    ys, xs = np.indices((height, width))
    return BalancedMask(((xs + ys) % 2 == 0).astype(np.uint8))


def fixed_seed_mask(width, height):
    """与口令无关的固定种子随机划分掩码（消融实验用）"""
    return balanced_mask(KeyMaterial.from_master(FIXED_SEED_MASTER), width, height)


def secret_map(material, width, height):
    """
    生成秘密图 K

    读取 H·W/2 个密钥流字节，b -> b/255，按行优先排为 1×H×(W/2)。
    必须在 balanced_mask 之后调用，使用紧随掩码之后的密钥流片段。

    参数:
        material (KeyMaterial): 密钥材料
        width (int): 图像宽度W（偶数）
        height (int): 图像高度H

    返回:
        numpy.ndarray: float32 数组，形状 1×H×(W/2)，取值[0,1]
    """
    _check_dims(width, height)
    raw = np.frombuffer(material.keystream(height * width // 2), dtype=np.uint8)
    return (raw.astype(np.float32) / 255.0).reshape(1, height, width // 2)


def derive_keys(password, width, height, iterations=DEFAULT_ITERATIONS, strategy='pbkdf'):
    """
    从口令一次性派生掩码与秘密图

    参数:
        password (bytes): 用户口令
        width (int): 图像宽度
        height (int): 图像高度
        iterations (int): PBKDF2迭代次数
        strategy (str): 划分策略 pbkdf / fixed_seed / chessboard

    返回:
        tuple: (KeyMaterial, BalancedMask, numpy.ndarray 秘密图)
    """
    if strategy not in SPLIT_STRATEGIES:
        raise InvalidArgumentError(f'未知的划分策略: {strategy}，可选 {SPLIT_STRATEGIES}')
    material = KeyMaterial.from_password(password, iterations=iterations)
    if strategy == 'pbkdf':
        mask = balanced_mask(material, width, height)
    elif strategy == 'fixed_seed':
        mask = fixed_seed_mask(width, height)
    else:
        mask = chessboard_mask(width, height)
    return material, mask, secret_map(material, width, height)


def perturb_key(password, bit_index):
    """
    翻转口令中的指定比特（比特0为第0字节的最低位）

    参数:
        password (bytes): 原口令
        bit_index (int): 比特下标，0 <= bit_index < 8·len(password)

    返回:
        bytes: 恰好翻转一个比特后的口令
    """
    if isinstance(password, str):
        password = password.encode('utf-8')
    if not 0 <= bit_index < 8 * len(password):
        raise InvalidArgumentError(f'比特下标越界: {bit_index}，口令长度 {len(password)} 字节')
    flipped = bytearray(password)
    flipped[bit_index // 8] ^= 1 << (bit_index % 8)
    return bytes(flipped)


def key_space_bits(charset_size, length):
    """
    口令空间大小（比特）：length·log2(charset_size)

    例如95个可打印ASCII字符、16位口令约为105.12比特（约10^31.64）。
    """
    if charset_size < 2 or length < 1:
        raise InvalidArgumentError(f'字符集大小需 >= 2 且长度需 >= 1，实际为 {charset_size}, {length}')
    return length * math.log2(charset_size)
