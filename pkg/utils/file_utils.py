# -*- coding: utf-8 -*-
"""
文件读写工具函数

所有输出文件都先写入同目录下的临时文件，成功后再原子改名，
命令出错时不会留下残缺的输出文件。
"""

import json
import logging
import os
import tempfile
from contextlib import contextmanager

import pandas as pd

from flowcrypt.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


@contextmanager
def atomic_path(file_path):
    """
    产出一个临时文件路径，with 块正常结束后改名为 file_path，异常时删除临时文件

    参数:
        file_path (str): 最终输出路径
    """
    directory = os.path.dirname(os.path.abspath(file_path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix='.tmp_', suffix=os.path.splitext(file_path)[1], dir=directory)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, file_path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def atomic_write_bytes(file_path, data):
    with atomic_path(file_path) as tmp:
        with open(tmp, 'wb') as f:
            f.write(data)


def atomic_write_text(file_path, text):
    with atomic_path(file_path) as tmp:
        with open(tmp, 'w', encoding='utf-8') as f:
            f.write(text)


def save_json(file_path, payload):
    atomic_write_text(file_path, json.dumps(payload, ensure_ascii=False, indent=2, allow_nan=True))


def save_csv(df, file_path):
    """DataFrame 保存为 UTF-8 CSV（不含索引）"""
    with atomic_path(file_path) as tmp:
        df.to_csv(tmp, index=False, encoding='utf-8')


def read_password(password=None, password_file=None):
    """
    获取口令：命令行参数或口令文件二选一

    口令文件只去掉末尾的换行符，其余字节原样保留。

    返回:
        bytes: 口令
    """
    if password is not None:
        value = password.encode('utf-8')
    elif password_file is not None:
        with open(password_file, 'rb') as f:
            value = f.read().rstrip(b'\r\n')
    else:
        raise InvalidArgumentError('必须提供 --password 或 --password-file')
    if not value:
        raise InvalidArgumentError('口令不能为空')
    return value


def save_report_excel(sheets, file_path):
    """
    将多个DataFrame保存到同一个Excel文件的不同表单

    参数:
        sheets (dict): 表单名 -> DataFrame
        file_path (str): 保存路径

    返回:
        bool: 保存成功返回True，失败返回False
    """
    try:
        with atomic_path(file_path) as tmp:
            with pd.ExcelWriter(tmp, engine='openpyxl') as writer:
                for sheet_name, df in sheets.items():
                    df.to_excel(writer, sheet_name=sheet_name, index=False)
        logger.info(f'报告已保存到 {file_path}')
        return True
    except PermissionError:
        logger.error(f'没有权限写入文件 {file_path}，请检查文件权限')
        return False
    except Exception as e:
        logger.error(f'保存报告时发生错误: {e}')
        return False
