# -*- coding: utf-8 -*-
"""
桌面规模训练

每步对批内每幅图像：随机抽取16字节口令 -> 加密 -> 密文损失 -> 噪声 -> 正确口令解密
-> 翻转一比特的错误口令解密 -> 三元组损失；批平均后反向传播，做一次 Adam 更新。
单线程执行，给定种子时完全确定。
"""

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from flowcrypt.errors import DatasetError, InvalidArgumentError, NonFiniteLossError
from flowcrypt.fed import FedModel, ModelArch, save_model
from flowcrypt.keygen import perturb_key
from flowcrypt.losses import LossWeights, cipher_loss, recovery_loss, weighted_total
from flowcrypt.noise import sample_noise_for_training
from flowcrypt.numerics import GradientTape, as_tensor
from flowcrypt.pipeline import backward_pipeline, build_context, forward_pipeline

logger = logging.getLogger(__name__)

GRAD_CLIP_NORM = 1e4
PASSWORD_BYTES = 16
LOG_COLUMNS = ['step', 'cipher_loss', 'triplet_loss', 'total', 'grad_norm', 'clip_flag']


@dataclass
class AdamState:
    """Adam 的一阶矩 m、二阶矩 v（按参数名索引）与步数 t"""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    带偏差修正的 Adam 更新

    m ← β₁m + (1−β₁)g；v ← β₂v + (1−β₂)g²；θ ← θ − lr·m̂/(√v̂ + ε)

    参数:
        params (dict): 参数名 -> Tensor，原地更新其 data
        grads (dict): 参数名 -> 梯度数组
        state (AdamState): 优化器状态，原地更新
        lr (float): 学习率

    返回:
        AdamState: 更新后的状态
    """
    for name, param in params.items():
        if name not in grads or grads[name].shape != param.shape:
            got = None if name not in grads else grads[name].shape
            raise InvalidArgumentError(f'参数 {name} 的梯度形状 {got} 与参数形状 {param.shape} 不一致')
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, param in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if name not in state.m:
            state.m[name] = np.zeros(param.shape)
            state.v[name] = np.zeros(param.shape)
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        update = lr * (state.m[name] / bc1) / (np.sqrt(state.v[name] / bc2) + eps)
        param.data = (param.data - update).astype(param.dtype)
    return state


def load_dataset(directory, image_size):
    """
    读取训练图像目录（按文件名排序）

    返回:
        list: 3×H×W 的 float32 数组，H、W 都不小于 image_size
    """
    from utils.image_utils import get_image_files, load_image

    files = get_image_files(directory)
    if not files:
        raise DatasetError(f'训练目录中没有图像文件: {directory}')
    images = []
    for path in files:
        image = load_image(path, require_even=False)
        if min(image.shape[1:]) < image_size:
            logger.warning(f'图像 {path} 小于裁剪尺寸 {image_size}，已跳过')
            continue
        images.append(image)
    if not images:
        raise DatasetError(f'训练目录中没有不小于 {image_size}×{image_size} 的图像: {directory}')
    logger.info(f'已加载训练图像 {len(images)} 张')
    return images


def sample_batch(images, batch_size, image_size, rng):
    """按随机源确定地选图并裁剪 image_size×image_size"""
    batch = []
    for index in rng.integers(0, len(images), size=batch_size):
        image = images[int(index)]
        _, height, width = image.shape
        top = int(rng.integers(0, height - image_size + 1))
        left = int(rng.integers(0, width - image_size + 1))
        batch.append(np.ascontiguousarray(image[:, top:top + image_size, left:left + image_size]))
    return batch


def train_step(batch, model, config, rng, state, step=0):
    """
    单个训练步

    参数:
        batch (list): 明文图像（3×H×W，取值[0,1]，边长为偶数）
        model (FedModel): 待训练模型，参数原地更新
        config (TrainConfig): 训练配置
        rng (numpy.random.Generator): 随机源（口令、噪声、像素对抽样）
        state (AdamState): 优化器状态
        step (int): 当前步号，用于日志和错误诊断

    返回:
        dict: cipher_loss、triplet_loss、total、grad_norm、clip_flag
    """
    if not batch:
        raise InvalidArgumentError('训练批次不能为空')
    weights = LossWeights(config.lambda_cipher, config.lambda_recovery)
    named = dict(model.named_parameters())
    scale = 1.0 / len(batch)

    with GradientTape() as tape:
        cipher_terms = []
        recover_terms = []
        for image in batch:
            plain = as_tensor(image)
            password = rng.bytes(PASSWORD_BYTES)
            wrong = perturb_key(password, int(rng.integers(0, 8 * PASSWORD_BYTES)))
            _, height, width = plain.shape
            context = build_context(password, model, width, height, config.kdf_iterations, config.split_strategy)
            noise = sample_noise_for_training(config.noise, rng)
            result = forward_pipeline(plain, password, model, noise, rng, context=context)
            positive = backward_pipeline(result.degraded, password, model, context=context)
            negative = backward_pipeline(result.degraded, wrong, model, config.kdf_iterations, config.split_strategy)
            cipher_terms.append(cipher_loss(result.rendering, config.num_pairs, rng))
            recover_terms.append(recovery_loss(plain, positive, negative, config.use_triplet))

        cipher_term = cipher_terms[0]
        recover_term = recover_terms[0]
        for c, r in zip(cipher_terms[1:], recover_terms[1:]):
            cipher_term = cipher_term + c
            recover_term = recover_term + r
        cipher_term = cipher_term * scale
        recover_term = recover_term * scale
        total = weighted_total(cipher_term, recover_term, weights)

    components = {
        'cipher_loss': cipher_term.item(),
        'triplet_loss': recover_term.item(),
        'total': total.item(),
    }
    if not all(math.isfinite(v) for v in components.values()):
        logger.error(f'第 {step} 步出现非有限损失: {components}')
        raise NonFiniteLossError(step, components)

    grads = dict(zip(named, tape.gradient(total, list(named.values()))))
    grad_norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    clipped = grad_norm > GRAD_CLIP_NORM
    if clipped:
        logger.warning(f'第 {step} 步梯度范数 {grad_norm:.3e} 超过 {GRAD_CLIP_NORM:.0e}，已裁剪')
        factor = GRAD_CLIP_NORM / grad_norm
        grads = {name: g * factor for name, g in grads.items()}

    adam_step(named, grads, state, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    components['grad_norm'] = grad_norm
    components['clip_flag'] = int(clipped)
    return components


def train(config, images=None):
    """
    完整训练流程

    参数:
        config (TrainConfig): 训练配置
        images (list, optional): 内存中的训练图像；为None时从 config.dataset 读取

    返回:
        tuple: (FedModel, 损失日志 DataFrame)
    """
    arch = ModelArch(config.blocks, config.growth)
    model = FedModel.initialize(arch, rng=np.random.default_rng([config.seed, 0]))
    logger.info(f'初始化模型: N={arch.blocks}, g={arch.growth}, 参数量 {model.parameter_count()}')

    records = []
    if config.steps > 0:
        if images is None:
            if not config.dataset:
                raise DatasetError('未指定训练图像目录')
            images = load_dataset(config.dataset, config.image_size)
        rng = np.random.default_rng([config.seed, 1])
        state = AdamState()
        for step in range(config.steps):
            batch = sample_batch(images, config.batch_size, config.image_size, rng)
            components = train_step(batch, model, config, rng, state, step)
            records.append({'step': step, **components})
            logger.debug(f'第 {step} 步: {components}')
            if step % config.log_every == 0 or step == config.steps - 1:
                logger.info(f'第 {step}/{config.steps} 步: 总损失 {components["total"]:.4f}, '
                            f'密文损失 {components["cipher_loss"]:.4f}, 恢复损失 {components["triplet_loss"]:.4f}')
            done = step + 1
            if config.out_dir and config.checkpoint_every and done % config.checkpoint_every == 0:
                save_model(model, os.path.join(config.out_dir, f'checkpoint_{done}.fcw'))

    log = pd.DataFrame(records, columns=LOG_COLUMNS)
    if config.out_dir:
        from utils.file_utils import atomic_write_text, save_csv

        save_model(model, os.path.join(config.out_dir, 'model.fcw'))
        save_csv(log, os.path.join(config.out_dir, 'loss_log.csv'))
        atomic_write_text(os.path.join(config.out_dir, 'train_config.txt'), config.to_text())
        logger.info(f'训练输出已写入 {config.out_dir}')
    return model, log
