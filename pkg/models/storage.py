#!/usr/bin/env python3
"""
结果持久化
- 场快照二进制格式: 魔数 + (n_per_axis, components) + 小端 float64, x1 最快
- 各模块的 CSV 行格式
- JSON 报告 {config, rows, fits, verdicts} 与运行配置文件
"""

import csv
import json
import logging
import math
import os
import struct
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from core.field import GridSpec, PhysicalField

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b'TFLD'
_HEADER = struct.Struct('<4sII')

# 固定的 CSV 列
BUDGET_COLUMNS = ['t', 'kinetic', 'dissipation_cum', 'residual']
FLUX_COLUMNS = ['eps', 'I1', 'I2', 'trilinear', 'identity_residual', 'lattice_discrepancy']
BESOV_COLUMNS = ['beta', 'q', 'value', 'argmax_shift_x', 'argmax_shift_y', 'argmax_shift_z']
SWEEP_COLUMNS = ['nu', 'eps', 'status', 'defect', 'dissipation', 'dissipation_proxy',
                 'besov_time_norm', 'budget_residual']


def write_snapshot(path: str, field: PhysicalField):
    """写入场快照"""
    _ensure_parent(path)
    n = field.grid.n
    # 每个分量按 x1 最快的顺序展开
    flat = np.concatenate([np.ravel(c, order='F') for c in field.values]).astype('<f8')
    with open(path, 'wb') as f:
        f.write(_HEADER.pack(SNAPSHOT_MAGIC, n, field.components))
        f.write(flat.tobytes())


def read_snapshot(path: str) -> PhysicalField:
    """
    读取场快照

    Raises:
        ValueError: 魔数不符或数据长度不符
    """
    with open(path, 'rb') as f:
        header = f.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"{path}: truncated snapshot header")
        magic, n, components = _HEADER.unpack(header)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a field snapshot")
        data = np.frombuffer(f.read(), dtype='<f8')

    grid = GridSpec(int(n))
    count = components * n ** 3
    if data.size != count:
        raise ValueError(f"{path}: expected {count} values, found {data.size}")
    values = np.stack([
        np.reshape(chunk, grid.shape, order='F') for chunk in np.split(data, components)
    ])
    return PhysicalField(grid, values)


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _format(value: Any) -> Any:
    # repr 保证浮点数逐位可复现
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_csv(path: str, columns: Sequence[str], rows: Iterable[Dict], append: bool = False):
    """
    写 CSV, 列顺序固定, 多余键忽略

    Args:
        append: True 时追加行(文件不存在时写表头)
    """
    _ensure_parent(path)
    exists = os.path.exists(path)
    mode = 'a' if append else 'w'
    with open(path, mode, newline='') as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction='ignore')
        if not (append and exists):
            writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(row.get(k)) for k in columns})


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, newline='') as f:
        return list(csv.DictReader(f))


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if hasattr(value, 'as_dict'):
        return _jsonable(value.as_dict())
    if hasattr(value, 'as_row'):
        return _jsonable(value.as_row())
    return value


def write_json_report(path: str, config: Dict, rows: List[Dict], fits: Dict, verdicts: Dict,
                      extra: Optional[Dict] = None):
    """JSON 报告 {config, rows, fits, verdicts}"""
    _ensure_parent(path)
    report = {'config': config, 'rows': rows, 'fits': fits, 'verdicts': verdicts}
    if extra:
        report.update(extra)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(_jsonable(report), f, indent=2, sort_keys=True, ensure_ascii=False)


def to_jsonable(value: Any) -> Any:
    return _jsonable(value)


def load_config(path: Optional[str], overrides: Optional[Dict] = None) -> Dict:
    """
    读取 JSON 运行配置, 用非 None 的覆盖值替换对应键

    Raises:
        ValueError: 文件不是 JSON 对象
    """
    config: Dict = {}
    if path:
        with open(path, encoding='utf-8') as f:
            config = json.load(f)
        if not isinstance(config, dict):
            raise ValueError(f"{path}: run configuration must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            config[key] = value
    return config
