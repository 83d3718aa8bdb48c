# -*- coding: utf-8 -*-
"""
掩码驱动的图像划分与合并

X 部分：按行优先扫描 mask==1 的位置，按行优先填入 3×H×(W/2)；
Y 部分：按列优先扫描 mask==0 的位置，按列优先填入 3×H×(W/2)。
三个通道共用同一个空间掩码。划分与合并都用 gather 实现，逐位精确且可求导。
"""

import numpy as np

from flowcrypt.errors import InvalidArgumentError
from flowcrypt.numerics import as_tensor, concat, gather


class SplitLayout:
    """
    由均衡掩码导出的位置映射

    属性:
        x_index (numpy.ndarray): H×(W/2)，X 每个位置对应的画布扁平下标
        y_index (numpy.ndarray): H×(W/2)，Y 每个位置对应的画布扁平下标
        merge_index (numpy.ndarray): H×W，画布每个位置在 [X | Y] 拼接张量中的扁平下标
    """

    def __init__(self, mask):
        bits = mask.bits
        height, width = bits.shape
        if width % 2 != 0:
            raise InvalidArgumentError(f'图像宽度必须为偶数，实际为 {width}')
        half = width // 2
        if int(bits.sum()) != height * half:
            raise InvalidArgumentError('掩码不是严格均衡的，无法划分为两个等大张量')
        self.mask = mask
        self.height = height
        self.width = width

        x_positions = np.flatnonzero(bits.reshape(-1) == 1)
        self.x_index = x_positions.reshape(height, half)

        # 在转置网格上按行扫描即为原网格上的列优先扫描
        cols, rows = np.nonzero(bits.T == 0)
        y_positions = rows * width + cols
        # 列优先填充：第k个值落在 (k % H, k // H)
        self.y_index = y_positions.reshape(half, height).T.copy()

        merged = np.empty(height * width, dtype=np.int64)
        ys, xs = np.indices((height, half))
        merged[self.x_index.reshape(-1)] = (ys * width + xs).reshape(-1)
        merged[self.y_index.reshape(-1)] = (ys * width + xs + half).reshape(-1)
        self.merge_index = merged.reshape(height, width)

    def _channel_index(self, index, channels, plane):
        offsets = (np.arange(channels) * plane)[:, None, None]
        return index[None, :, :] + offsets


def _check_canvas(canvas, layout):
    if canvas.ndim != 3 or canvas.shape[1:] != (layout.height, layout.width):
        raise InvalidArgumentError(
            f'画布尺寸 {canvas.shape} 与掩码尺寸 {layout.height}×{layout.width} 不一致')


def extract(canvas, layout):
    """
    把完整画布划分为 X、Y 两个半宽张量

    参数:
        canvas (Tensor): 形状 C×H×W
        layout (SplitLayout): 划分布局

    返回:
        tuple: (X, Y)，形状均为 C×H×(W/2)
    """
    canvas = as_tensor(canvas)
    _check_canvas(canvas, layout)
    channels = canvas.shape[0]
    plane = layout.height * layout.width
    x = gather(canvas, layout._channel_index(layout.x_index, channels, plane))
    y = gather(canvas, layout._channel_index(layout.y_index, channels, plane))
    return x, y


def place(x, y, layout):
    """
    extract 的精确逆：把 X、Y 放回完整画布，每个位置恰好写一次

    参数:
        x (Tensor): 形状 C×H×(W/2)
        y (Tensor): 形状 C×H×(W/2)
        layout (SplitLayout): 划分布局

    返回:
        Tensor: 形状 C×H×W
    """
    x = as_tensor(x)
    y = as_tensor(y)
    half = layout.width // 2
    expected = (layout.height, half)
    if x.ndim != 3 or x.shape[1:] != expected or y.shape != x.shape:
        raise InvalidArgumentError(f'X/Y 形状 {x.shape}/{y.shape} 与布局 {expected} 不一致')
    joined = concat([x, y], axis=2)
    channels = x.shape[0]
    plane = layout.height * layout.width
    return gather(joined, layout._channel_index(layout.merge_index, channels, plane))

