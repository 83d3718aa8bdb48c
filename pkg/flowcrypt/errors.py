# -*- coding: utf-8 -*-
"""
异常类型定义

库代码只负责抛出异常，由命令行入口和工作流脚本统一捕获、记录日志并转换为退出码。
"""


class FlowCryptError(Exception):
    """所有FlowCrypt异常的基类"""


class InvalidArgumentError(FlowCryptError, ValueError):
    """参数或输入数据不合法（形状、取值范围、尺寸奇偶等）"""


class DegenerateRangeError(InvalidArgumentError):
    """数值范围退化，例如常数画布无法做min/max映射"""


class UnsupportedOperationError(FlowCryptError):
    """梯度带上出现未注册反向规则的运算"""


class FormatError(FlowCryptError):
    """权重文件或密文文件格式错误（魔数、版本、长度不符）"""


class IncompatibleModelError(FlowCryptError):
    """密文记录的模型哈希与当前模型不一致"""


class DatasetError(FlowCryptError, OSError):
    """训练或评估数据集不可读或为空"""


class NonFiniteLossError(FlowCryptError):
    """
    训练过程中出现非有限损失值

    参数:
        step (int): 出错的训练步
        components (dict): 各损失分量的取值
    """

    def __init__(self, step, components):
        self.step = step
        self.components = dict(components)
        detail = ', '.join(f'{k}={v}' for k, v in self.components.items())
        super().__init__(f'第 {step} 步出现非有限损失: {detail}')
