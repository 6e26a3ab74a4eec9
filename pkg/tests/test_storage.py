#!/usr/bin/env python3
"""
持久化测试 - 快照格式、CSV 与 JSON 报告、运行配置
"""

import json
import math
import os
import struct
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.field import GridSpec, PhysicalField
from core.solver import taylor_green
from models.storage import (
    BUDGET_COLUMNS, SNAPSHOT_MAGIC, load_config, read_csv, read_snapshot, write_csv,
    write_json_report, write_snapshot,
)


class TestSnapshot:
    """场快照测试"""

    def setup_method(self):
        self.grid = GridSpec(8)

    def test_write_then_read(self, tmp_path):
        field = taylor_green(self.grid, amplitude=0.7)
        path = str(tmp_path / 'snap' / 'v_00000.bin')
        write_snapshot(path, field)
        loaded = read_snapshot(path)
        assert loaded.grid.n == 8
        assert np.array_equal(loaded.values, field.values)

    def test_header_and_layout(self, tmp_path):
        """头部为魔数 + n + 分量数, 数据 x1 最快"""
        values = np.arange(8 ** 3, dtype=float).reshape(self.grid.shape)
        field = PhysicalField(self.grid, values)
        path = str(tmp_path / 'scalar.bin')
        write_snapshot(path, field)
        with open(path, 'rb') as f:
            raw = f.read()
        magic, n, components = struct.unpack('<4sII', raw[:12])
        assert (magic, n, components) == (SNAPSHOT_MAGIC, 8, 1)
        data = np.frombuffer(raw[12:], dtype='<f8')
        assert data.size == 8 ** 3
        # 第二个值是 x1 方向的下一个点
        assert data[1] == values[1, 0, 0]
        assert os.path.getsize(path) == 12 + 8 * 8 ** 3

    def test_bad_magic(self, tmp_path):
        path = tmp_path / 'bad.bin'
        path.write_bytes(struct.pack('<4sII', b'XXXX', 8, 3) + b'\0' * (8 * 3 * 8 ** 3))
        with pytest.raises(ValueError, match='not a field snapshot'):
            read_snapshot(str(path))

    def test_truncated_data(self, tmp_path):
        path = tmp_path / 'short.bin'
        path.write_bytes(struct.pack('<4sII', SNAPSHOT_MAGIC, 8, 3) + b'\0' * 64)
        with pytest.raises(ValueError, match='expected'):
            read_snapshot(str(path))


class TestCsv:
    """CSV 输出测试"""

    def test_fixed_columns_and_repr(self, tmp_path):
        path = str(tmp_path / 'budget.csv')
        write_csv(path, BUDGET_COLUMNS, [{'t': 0.1, 'kinetic': 1 / 3, 'dissipation_cum': 0.0,
                                          'residual': -1e-17, 'extra': 'ignored'}])
        rows = read_csv(path)
        assert list(rows[0]) == BUDGET_COLUMNS
        assert float(rows[0]['kinetic']) == 1 / 3
        assert rows[0]['kinetic'] == repr(1 / 3)

    def test_append_writes_header_once(self, tmp_path):
        path = str(tmp_path / 'besov.csv')
        for value in (1.0, 2.0):
            write_csv(path, ['beta', 'value'], [{'beta': 0.5, 'value': value}], append=True)
        with open(path) as f:
            lines = f.read().splitlines()
        assert lines == ['beta,value', '0.5,1.0', '0.5,2.0']


class TestJsonReport:
    """JSON 报告测试"""

    def test_structure_and_non_finite(self, tmp_path):
        path = str(tmp_path / 'report.json')
        write_json_report(path, {'alpha': 0.4}, [{'nu': 0.1, 'defect': math.nan}],
                          {'slope': np.float64(0.3)}, {'overall': 'PASS'}, extra={'notes': []})
        with open(path, encoding='utf-8') as f:
            report = json.load(f)
        assert set(report) == {'config', 'rows', 'fits', 'verdicts', 'notes'}
        assert report['rows'][0]['defect'] == 'nan'
        assert report['fits']['slope'] == 0.3


class TestLoadConfig:
    """运行配置测试"""

    def test_overrides_replace_non_none(self, tmp_path):
        path = tmp_path / 'run.json'
        path.write_text(json.dumps({'grid': 32, 'nu': 0.01, 'dt': 0.001}))
        config = load_config(str(path), {'nu': 0.02, 'dt': None})
        assert config == {'grid': 32, 'nu': 0.02, 'dt': 0.001}

    def test_no_file(self):
        assert load_config(None, {'grid': 16}) == {'grid': 16}

    def test_rejects_non_object(self, tmp_path):
        path = tmp_path / 'list.json'
        path.write_text('[1, 2]')
        with pytest.raises(ValueError):
            load_config(str(path))


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
