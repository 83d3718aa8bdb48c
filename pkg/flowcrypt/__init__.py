# -*- coding: utf-8 -*-
"""
FlowCrypt 图像加密工具包

基于可逆神经网络（仿射耦合块）的图像加密/解密、噪声模拟、训练与评估。
"""

__version__ = '1.0.0'
