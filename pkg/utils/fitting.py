#!/usr/bin/env python3
"""
对数-对数斜率拟合与单侧判定
"""

import math
from typing import Dict, Sequence

import numpy as np
from scipy import stats

# 单侧判定结果
PASS = 'PASS'
FAIL = 'FAIL'
DEGENERATE = 'DEGENERATE'


def loglog_fit(x: Sequence[float], y: Sequence[float], floor: float = 0.0) -> Dict:
    """
    拟合 log y = slope·log x + intercept

    Args:
        x: 正自变量 (ε 或 ν)
        y: 非负因变量
        floor: y <= floor 视为零, 全部为零时标记 degenerate

    Returns:
        {'slope', 'intercept', 'r2', 'n', 'degenerate'}
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("fit needs two 1-D sequences of equal length")
    if np.any(x <= 0):
        raise ValueError("log-log fit needs positive abscissae")

    positive = y > floor
    if not np.any(positive):
        return {'slope': math.nan, 'intercept': math.nan, 'r2': math.nan,
                'n': int(len(x)), 'degenerate': True}
    if np.sum(positive) < 2 or np.unique(x[positive]).size < 2:
        raise ValueError("log-log fit needs at least two distinct non-zero points")

    result = stats.linregress(np.log(x[positive]), np.log(y[positive]))
    return {
        'slope': float(result.slope),
        'intercept': float(result.intercept),
        'r2': float(result.rvalue ** 2),
        'n': int(np.sum(positive)),
        'degenerate': False,
    }


def slope_verdict(slope: float, predicted: float, slack: float) -> str:
    """测得衰减至少与预测一样快 (slope >= predicted - slack) 即 PASS"""
    if math.isnan(slope):
        return DEGENERATE
    return PASS if slope >= predicted - slack else FAIL
