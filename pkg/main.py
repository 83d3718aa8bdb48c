# -*- coding: utf-8 -*-
"""
FlowCrypt 图像加密工作流主程序

子命令:
    encrypt   加密一幅图像为 .fcf 密文容器
    decrypt   从 .fcf 密文容器恢复图像
    keyinfo   查看口令派生的掩码/秘密图摘要
    evaluate  批量评估图像目录并生成报告
    train     训练模型

退出码: 0 成功，2 参数错误，3 读写错误，4 格式或模型不匹配。
"""

import argparse
import importlib
import sys

from flowcrypt import __version__
from flowcrypt.errors import (
    DatasetError,
    FlowCryptError,
    FormatError,
    IncompatibleModelError,
    InvalidArgumentError,
)
from utils.log_utils import setup_logging

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4

# 子命令 -> 实现模块
COMMAND_MODULES = {
    'encrypt': 'scripts.phase1.encrypt_image',
    'decrypt': 'scripts.phase1.decrypt_image',
    'keyinfo': 'scripts.phase1.key_info',
    'evaluate': 'scripts.phase2.batch_evaluate',
    'train': 'scripts.phase2.train_model',
}


def build_parser():
    """
    构建命令行解析器

    返回:
        argparse.ArgumentParser: 解析器
    """
    parser = argparse.ArgumentParser(prog='flowcrypt', description='基于可逆神经网络的口令图像加密工作流')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--seed', type=int, default=None, help='随机种子（评估和训练使用）')
    parser.add_argument('--verbose', action='store_true', help='输出 DEBUG 级别日志')
    parser.add_argument('--log-dir', type=str, default='logs', help='日志目录，传空字符串则只输出到控制台')

    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True
    for command, module_name in COMMAND_MODULES.items():
        module = importlib.import_module(module_name)
        sub = subparsers.add_parser(command, help=module.HELP, description=module.HELP)
        module.add_arguments(sub)
    return parser


def exit_code_for(error):
    """异常 -> 退出码"""
    if isinstance(error, InvalidArgumentError):
        return EXIT_USAGE
    if isinstance(error, (FormatError, IncompatibleModelError)):
        return EXIT_FORMAT
    if isinstance(error, (DatasetError, OSError)):
        return EXIT_IO
    if isinstance(error, FlowCryptError):
        return EXIT_FORMAT
    return 1


def main(argv=None):
    """
    主函数

    参数:
        argv (list, optional): 命令行参数，默认读取 sys.argv

    返回:
        int: 退出码
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse 在参数错误时以2退出，--help/--version 以0退出
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    logger = setup_logging(args.verbose, args.log_dir or None)
    module = importlib.import_module(COMMAND_MODULES[args.command])
    logger.info(f'运行命令: {args.command}')
    try:
        return module.run(args, logger)
    except Exception as e:
        code = exit_code_for(e)
        if code == 1:
            logger.exception(f'命令 {args.command} 发生未预期的错误: {e}')
        else:
            logger.error(f'命令 {args.command} 失败: {e}')
        return code


if __name__ == '__main__':
    sys.exit(main())
