# -*- coding: utf-8 -*-
"""
图像读写工具函数

读取 PNG/PPM 等常见格式为 3×H×W 的 float32 数组（取值[0,1]），
保存时把[0,1]图像截断并四舍五入为8位。
"""

import os

import numpy as np
from PIL import Image

from flowcrypt.errors import DatasetError, InvalidArgumentError
from flowcrypt.metrics import quantize8

IMAGE_EXTENSIONS = ('.png', '.ppm', '.pnm', '.bmp', '.jpg', '.jpeg', '.tif', '.tiff')


def get_image_files(directory, pattern=None):
    """
    获取指定目录下的所有图像文件（按文件名排序）

    参数:
        directory (str): 目录路径
        pattern (str, optional): 文件名需包含的子串，默认为None表示全部

    返回:
        list: 图像文件路径列表
    """
    if not os.path.isdir(directory):
        raise DatasetError(f'图像目录不存在: {directory}')
    image_files = []
    for file in sorted(os.listdir(directory)):
        if file.lower().endswith(IMAGE_EXTENSIONS):
            if pattern is None or pattern in file:
                image_files.append(os.path.join(directory, file))
    return image_files


def load_image(path, require_even=True):
    """
    读取图像为 RGB 的 3×H×W float32 数组

    参数:
        path (str): 图像路径
        require_even (bool): 是否要求宽高为偶数

    返回:
        numpy.ndarray: 取值[0,1]的 float32 数组
    """
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert('RGB'), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except OSError as e:
        raise DatasetError(f'无法解码图像 {path}: {e}')
    height, width = rgb.shape[:2]
    if require_even and (width % 2 != 0 or height % 2 != 0):
        raise InvalidArgumentError(f'图像宽高必须为偶数，{path} 的尺寸为 {width}×{height}')
    return (rgb.transpose(2, 0, 1).astype(np.float32) / 255.0)


def to_pil(image):
    """把 3×H×W 的[0,1]图像或 uint8 数组转换为 PIL 图像"""
    data = np.asarray(image)
    if data.dtype != np.uint8:
        data = quantize8(data)
    return Image.fromarray(np.ascontiguousarray(data.transpose(1, 2, 0)))


def save_image(image, path):
    """
    保存图像，格式由扩展名决定（.png 或 .ppm 等）

    先写临时文件再改名，出错时不会留下残缺的输出文件。

    参数:
        image (numpy.ndarray): 3×H×W 图像，float 取值[0,1] 或 uint8
        path (str): 输出路径
    """
    from utils.file_utils import atomic_path

    fmt = Image.registered_extensions().get(os.path.splitext(path)[1].lower(), 'PNG')
    with atomic_path(path) as tmp:
        to_pil(image).save(tmp, format=fmt)
