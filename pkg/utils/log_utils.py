# -*- coding: utf-8 -*-
"""
日志配置工具

控制台使用 colorlog 彩色输出，文件使用 ConcurrentRotatingFileHandler，
批量评估的多个工作进程可以安全地写入同一个日志文件。
"""

import logging
import os
from datetime import datetime

import colorlog
from concurrent_log_handler import ConcurrentRotatingFileHandler

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_COLORS = {
    'DEBUG': 'cyan',
    'INFO': 'green',
    'WARNING': 'yellow',
    'ERROR': 'red',
    'CRITICAL': 'bold_red',
}
MAX_LOG_BYTES = 10 * 1024 * 1024
BACKUP_COUNT = 5


def setup_logging(verbose=False, log_dir='logs', name='flowcrypt'):
    """
    设置日志配置

    参数:
        verbose (bool): True 时输出 DEBUG 级别日志
        log_dir (str, optional): 日志目录，None 表示只输出到控制台
        name (str): 返回的日志记录器名称

    返回:
        logging.Logger: 日志记录器
    """
    level = logging.DEBUG if verbose else logging.INFO
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    root.setLevel(level)

    console = colorlog.StreamHandler()
    console.setFormatter(colorlog.ColoredFormatter('%(log_color)s' + LOG_FORMAT, log_colors=LOG_COLORS))
    root.addHandler(console)

    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        log_file = os.path.join(log_dir, f'flowcrypt_{datetime.now().strftime("%Y%m%d_%H%M%S")}.log')
        file_handler = ConcurrentRotatingFileHandler(
            log_file, maxBytes=MAX_LOG_BYTES, backupCount=BACKUP_COUNT, encoding='utf-8')
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(file_handler)

    return logging.getLogger(name)
