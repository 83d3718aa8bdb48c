# -*- coding: utf-8 -*-
"""
第二阶段：训练模型

读取 key = value 格式的训练配置文件，命令行参数覆盖文件中的取值，
训练结束后在输出目录写出 model.fcw、checkpoint_<步数>.fcw 和 loss_log.csv。
"""

import os
import sys

# 添加项目根目录到系统路径，以便导入其他模块
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from flowcrypt.config import TrainConfig
from flowcrypt.keygen import SPLIT_STRATEGIES
from flowcrypt.training import train

HELP = '训练模型，输出 .fcw 权重和损失日志'

# 命令行参数 -> 配置项
OVERRIDES = {
    'dataset': 'dataset',
    'out_dir': 'out_dir',
    'steps': 'steps',
    'image_size': 'image_size',
    'batch_size': 'batch_size',
    'learning_rate': 'learning_rate',
    'kdf_iterations': 'kdf_iterations',
    'split': 'split_strategy',
    'checkpoint_every': 'checkpoint_every',
    'log_every': 'log_every',
    'blocks': 'blocks',
    'growth': 'growth',
}


def add_arguments(parser):
    parser.add_argument('--config', type=str, help='训练配置文件（key = value）')
    parser.add_argument('--dataset', type=str, help='训练图像目录')
    parser.add_argument('--out-dir', dest='out_dir', type=str, help='输出目录')
    parser.add_argument('--steps', type=int, help='训练步数')
    parser.add_argument('--image-size', dest='image_size', type=int, help='训练裁剪边长（偶数）')
    parser.add_argument('--batch-size', dest='batch_size', type=int, help='每步图像数')
    parser.add_argument('--learning-rate', dest='learning_rate', type=float, help='Adam 学习率')
    parser.add_argument('--kdf-iterations', dest='kdf_iterations', type=int, help='PBKDF2 迭代次数')
    parser.add_argument('--split', type=str, choices=SPLIT_STRATEGIES, help='划分策略')
    parser.add_argument('--checkpoint-every', dest='checkpoint_every', type=int, help='检查点间隔步数')
    parser.add_argument('--log-every', dest='log_every', type=int, help='INFO 日志间隔步数')
    parser.add_argument('--blocks', type=int, help='可逆块数 N')
    parser.add_argument('--growth', type=int, help='子网增长宽度 g')
    parser.add_argument('--noise', action='append', default=None, help='噪声设置，可重复，覆盖配置文件中的全部 noise 行')
    parser.add_argument('--no-triplet', dest='no_triplet', action='store_true',
                        help='恢复项只用 MSE(I_P, I\'_P)，不用三元组损失')


def build_config(args):
    """配置文件取值打底，命令行参数覆盖"""
    values = {}
    if args.config:
        base = TrainConfig.from_file(args.config)
        values = {name: getattr(base, name) for name in base.__dataclass_fields__}
    for flag, name in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    if args.noise:
        values['noise'] = args.noise
    if args.no_triplet:
        values['use_triplet'] = False
    if args.seed is not None:
        values['seed'] = args.seed
    return TrainConfig.from_dict(values)


def run(args, logger):
    config = build_config(args)
    logger.info(f'训练配置: steps={config.steps}, image_size={config.image_size}, '
                f'batch_size={config.batch_size}, noise={[spec.label() for spec in config.noise]}')
    model, log = train(config)
    if not log.empty:
        first = log['total'].iloc[0]
        last = log['total'].iloc[-1]
        print(f'训练完成: {len(log)} 步，总损失 {first:.4f} -> {last:.4f}')
    else:
        print('训练步数为0，仅输出初始化模型')
    if config.out_dir:
        print(f'模型已写入 {os.path.join(config.out_dir, "model.fcw")}')
    return 0
