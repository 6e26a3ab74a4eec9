#!/usr/bin/env python3
"""
gnuplot 脚本生成 - 亏损 vs ν 与 能流 vs ε 的双对数图, 附参考斜率线
输出只依赖输入参数, 可做逐字节比对
"""

from typing import Dict, List, Optional

from models.storage import read_csv


def _reference_anchor(path: str, x_key: str, *y_keys: str) -> Optional[Dict[str, float]]:
    """取 CSV 中第一个有效行作为参考线锚点, y 为各列之和"""
    for row in read_csv(path):
        try:
            x, y = float(row[x_key]), sum(float(row[k]) for k in y_keys)
        except (KeyError, ValueError):
            continue
        if x > 0 and y > 0:
            return {'x': x, 'y': y}
    return None


def _panel(lines: List[str], title: str, xlabel: str, ylabel: str, data_path: str,
           x_col: int, y_col: int, label: str, slopes: Dict[str, float],
           anchor: Optional[Dict[str, float]]):
    lines.append(f"set title '{title}'")
    lines.append(f"set xlabel '{xlabel}'")
    lines.append(f"set ylabel '{ylabel}'")
    plots = [f"'{data_path}' using {x_col}:{y_col} with linespoints pt 7 title '{label}'"]
    for name in sorted(slopes):
        slope = slopes[name]
        if anchor is None:
            continue
        plots.append(
            f"{anchor['y']!r}*(x/{anchor['x']!r})**({slope!r}) with lines dt 2 "
            f"title 'slope {slope:.3g} ({name})'"
        )
    lines.append("plot " + ", \\\n     ".join(plots))


def emit_plots(sweep_csv: Optional[str] = None, flux_csv: Optional[str] = None,
               defect_slopes: Optional[Dict[str, float]] = None,
               flux_slopes: Optional[Dict[str, float]] = None,
               output: str = 'scaling.png') -> str:
    """
    生成 gnuplot 脚本文本

    Args:
        sweep_csv: 扫描 CSV (列 nu=1, defect=4)
        flux_csv: 能流 CSV (列 eps=1, I1=2, I2=3)
        defect_slopes / flux_slopes: 参考斜率 {名称: 斜率}
        output: 图片文件名

    Returns:
        脚本文本
    """
    if not sweep_csv and not flux_csv:
        raise ValueError("nothing to plot: give a sweep CSV, a flux CSV, or both")

    panels = int(bool(sweep_csv)) + int(bool(flux_csv))
    lines = [
        "# generated by speclab plot",
        "set terminal pngcairo size %d,480" % (640 * panels),
        f"set output '{output}'",
        "set datafile separator ','",
        "set key top left",
        "set logscale xy",
        "set format xy '%g'",
        "set grid",
        f"set multiplot layout 1,{panels}",
    ]
    if sweep_csv:
        _panel(lines, 'energy defect vs viscosity', 'nu', 'defect', sweep_csv, 1, 4,
               'defect', defect_slopes or {}, _reference_anchor(sweep_csv, 'nu', 'defect'))
    if flux_csv:
        lines.append("# total flux I1+I2")
        _panel(lines, 'flux vs mollification scale', 'eps', 'I1+I2', flux_csv, 1, '($2+$3)',
               'I1+I2', flux_slopes or {}, _reference_anchor(flux_csv, 'eps', 'I1', 'I2'))
    lines.append("unset multiplot")
    return "\n".join(lines) + "\n"
