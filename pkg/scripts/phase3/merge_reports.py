# -*- coding: utf-8 -*-
"""
第三阶段：汇总评估结果

把逐图像、逐噪声设置的评估明细汇总为均值±标准差，写出 CSV 明细、JSON 汇总
和 Excel 报告（"总体统计"、"详细结果"两个表单）。也可以把多次评估得到的
CSV 明细合并后重新汇总。
"""

import argparse
import logging
import math
import os
import sys

import pandas as pd

# 添加项目根目录到系统路径，以便导入其他模块
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from utils.file_utils import save_csv, save_json, save_report_excel
from utils.log_utils import setup_logging

SCHEMA_VERSION = 1
METRIC_COLUMNS = [
    'psnr', 'ssim', 'mae', 'rmse',
    'entropy', 'corr_h', 'corr_v', 'corr_d',
    'key_npcr', 'key_uaci', 'wrong_key_psnr',
    'encrypt_seconds', 'decrypt_seconds',
]
DETAIL_COLUMNS = ['schema', 'file_name', 'noise', 'status', 'psnr_infinite'] + METRIC_COLUMNS + ['error']
REPORT_NAME = 'evaluation_report.xlsx'


def _clean(value):
    # JSON 中用 null 表示 NaN
    if value is None:
        return None
    value = float(value)
    return None if math.isnan(value) else value


def summarize(details):
    """
    按噪声设置汇总每个指标的均值和标准差（总体标准差）

    参数:
        details (pandas.DataFrame): 评估明细

    返回:
        list: 每个噪声设置一个字典 {noise, images, errors, metrics}
    """
    settings = []
    if details.empty:
        return settings
    for noise, group in details.groupby('noise', sort=False):
        ok = group[group['status'] == 'success']
        metrics = {}
        for column in METRIC_COLUMNS:
            if column not in ok.columns:
                continue
            values = pd.to_numeric(ok[column], errors='coerce').dropna()
            if values.empty:
                continue
            metrics[column] = {
                'mean': _clean(values.mean()),
                'std': _clean(values.std(ddof=0)),
            }
        settings.append({
            'noise': noise,
            'images': int(len(group)),
            'errors': int((group['status'] != 'success').sum()),
            'metrics': metrics,
        })
    return settings


def summary_frame(settings):
    """把汇总结果展开为 "总体统计" 表单"""
    rows = []
    for setting in settings:
        for metric, stats in setting['metrics'].items():
            rows.append({
                '噪声设置': setting['noise'],
                '指标': metric,
                '均值': stats['mean'],
                '标准差': stats['std'],
                '图像数': setting['images'],
                '失败数': setting['errors'],
            })
    return pd.DataFrame(rows, columns=['噪声设置', '指标', '均值', '标准差', '图像数', '失败数'])


def write_reports(details, out_json, meta=None):
    """
    写出评估报告

    参数:
        details (pandas.DataFrame): 评估明细
        out_json (str): JSON 汇总路径，CSV 明细使用同名 .csv，Excel 报告写在同一目录
        meta (dict, optional): 写入 JSON 的附加信息（模型哈希、种子等）

    返回:
        dict: JSON 汇总内容
    """
    logger = logging.getLogger(__name__)

    details = details.copy()
    details['schema'] = SCHEMA_VERSION
    details = details.reindex(columns=DETAIL_COLUMNS)
    details = details.sort_values(['file_name', 'noise'], kind='mergesort').reset_index(drop=True)
    settings = summarize(details)

    base = os.path.splitext(out_json)[0]
    out_csv = base + '.csv'
    summary = {'schema': SCHEMA_VERSION, **(meta or {}), 'images': int(details['file_name'].nunique()),
               'settings': settings}
    save_csv(details, out_csv)
    save_json(out_json, summary)
    report = os.path.join(os.path.dirname(os.path.abspath(out_json)), REPORT_NAME)
    save_report_excel({'总体统计': summary_frame(settings), '详细结果': details}, report)
    logger.info(f'评估报告已生成: {out_csv}, {out_json}, {report}')
    return summary


def merge_reports(csv_files, out_json):
    """
    合并多份评估明细 CSV 后重新汇总

    参数:
        csv_files (list): 明细 CSV 路径列表
        out_json (str): 输出 JSON 汇总路径

    返回:
        dict: JSON 汇总内容；没有可用数据时返回 None
    """
    logger = logging.getLogger(__name__)

    frames = []
    for file in csv_files:
        try:
            df = pd.read_csv(file)
            if df.empty:
                logger.warning(f'文件 {file} 为空，跳过')
                continue
            frames.append(df)
            logger.info(f'成功读取文件 {file}，共 {len(df)} 行数据')
        except Exception as e:
            logger.error(f'读取文件 {file} 时发生错误: {e}')
    if not frames:
        logger.warning('没有找到有效的评估明细')
        return None
    merged = pd.concat(frames, ignore_index=True)
    merged.drop_duplicates(subset=['file_name', 'noise'], keep='first', inplace=True)
    return write_reports(merged, out_json, {'merged_from': [os.path.basename(f) for f in csv_files]})


def main(argv=None):
    """
    主函数
    """
    parser = argparse.ArgumentParser(description='合并多份评估明细并重新汇总')
    parser.add_argument('--inputs', nargs='+', required=True, help='评估明细 CSV 文件')
    parser.add_argument('--out', type=str, required=True, help='输出 JSON 汇总路径')
    args = parser.parse_args(argv)

    setup_logging(log_dir=None)
    return 0 if merge_reports(args.inputs, args.out) is not None else 3


if __name__ == '__main__':
    sys.exit(main())
