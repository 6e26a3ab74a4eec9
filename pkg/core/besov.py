#!/usr/bin/env python3
"""
Besov / Nikol'skiĭ 半范数模块
- 有限平移集上的差分半范数 [u]_{B^β_{q,∞}} = sup ||u(·+y) - u||_q / |y|^β
- Sobolev 范数、时间 L^r 范数
- 指定谱斜率的随机无散合成场
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from core.field import (
    Field, GridSpec, PhysicalField, SpectralField,
    _coefficients, gradient, leray_project, lebesgue_norm, shift_phase,
    spectral_l2_norm, to_physical,
)
from utils.fitting import loglog_fit

logger = logging.getLogger(__name__)

# 轴向 3 + 面对角 6 + 体对角 4
_RAW_DIRECTIONS = np.array([
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1),
    (1, 1, 1), (1, 1, -1), (1, -1, 1), (-1, 1, 1),
], dtype=float)
DIRECTIONS = _RAW_DIRECTIONS / np.linalg.norm(_RAW_DIRECTIONS, axis=1)[:, None]

# 判定 |y| >= h 时的相对容差
_MAGNITUDE_RTOL = 1e-12


@dataclass
class BesovEstimate:
    """采样半范数及产生它的平移集"""
    beta: float
    q: float
    value: float
    shift_set: np.ndarray
    argmax_shift: np.ndarray
    ratios: np.ndarray
    notes: List[str] = dataclass_field(default_factory=list)

    def as_row(self) -> Dict:
        return {
            'beta': self.beta,
            'q': self.q,
            'value': self.value,
            'argmax_shift_x': float(self.argmax_shift[0]),
            'argmax_shift_y': float(self.argmax_shift[1]),
            'argmax_shift_z': float(self.argmax_shift[2]),
        }


def dyadic_magnitudes(grid: GridSpec) -> np.ndarray:
    """π·2^-j, j = 0..J, 最小值不低于网格间距"""
    levels = int(math.floor(math.log2(math.pi / grid.h) + _MAGNITUDE_RTOL))
    return math.pi * 2.0 ** -np.arange(levels + 1)


def dyadic_shift_set(grid: GridSpec) -> np.ndarray:
    """13 个方向 × 二进幅值, 形状 (M, 3)"""
    magnitudes = dyadic_magnitudes(grid)
    return (magnitudes[:, None, None] * DIRECTIONS[None]).reshape(-1, 3)


def _resolve_shifts(grid: GridSpec, shift_policy) -> Tuple[np.ndarray, List[str]]:
    if shift_policy is None or (isinstance(shift_policy, str) and shift_policy == 'dyadic'):
        return dyadic_shift_set(grid), []
    if isinstance(shift_policy, str):
        raise ValueError(f"unknown shift policy: {shift_policy!r}")

    shifts = np.asarray(shift_policy, dtype=float).reshape(-1, 3)
    magnitudes = np.linalg.norm(shifts, axis=1)
    keep = magnitudes >= grid.h * (1.0 - _MAGNITUDE_RTOL)
    notes = []
    if not np.all(keep):
        dropped = int(np.sum(~keep))
        notes.append(f"excluded {dropped} shift(s) shorter than the grid spacing h={grid.h:.4g}")
        logger.warning(f"[Besov] 排除 {dropped} 个小于网格间距的平移")
    if not np.any(keep):
        raise ValueError("no admissible shift left after excluding |y| < h")
    return shifts[keep], notes


def difference_norms(u: Field, shifts: np.ndarray, q: float, workers: int = 1) -> np.ndarray:
    """
    ||u(·+y) - u||_q 对每个平移 y

    Args:
        u: 场
        shifts: 形状 (M, 3)
        q: Lebesgue 指数
        workers: 线程数, 每个平移独立

    Returns:
        长度 M 的数组
    """
    grid = u.grid
    F = _coefficients(u)
    base = to_physical(u)

    def one(y):
        # u(x + y) = (平移 -y)
        moved = to_physical(SpectralField(grid, F * shift_phase(grid, -np.asarray(y))[None]))
        return lebesgue_norm(moved - base, q)

    shifts = np.asarray(shifts, dtype=float).reshape(-1, 3)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return np.array(list(executor.map(one, shifts)))
    return np.array([one(y) for y in shifts])


def _check_beta(beta: float):
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")


def besov_seminorm(u: Field, beta: float, q: float = 2.0, shift_policy=None,
                   workers: int = 1) -> BesovEstimate:
    """
    采样 Besov 半范数

    Args:
        u: 场
        beta: 光滑指数 (0, 1]
        q: Lebesgue 指数 [1, ∞]
        shift_policy: None/'dyadic' 使用默认平移集, 或显式 (M, 3) 平移数组

    Returns:
        BesovEstimate (值是真实半范数的下界)
    """
    beta = float(beta)
    _check_beta(beta)
    q = float(q)
    if q < 1:
        raise ValueError(f"Lebesgue exponent must satisfy q >= 1, got {q}")

    shifts, notes = _resolve_shifts(u.grid, shift_policy)
    norms = difference_norms(u, shifts, q, workers)
    magnitudes = np.linalg.norm(shifts, axis=1)
    ratios = norms / magnitudes ** beta
    best = int(np.argmax(ratios))
    return BesovEstimate(
        beta=beta,
        q=q,
        value=float(ratios[best]),
        shift_set=shifts,
        argmax_shift=shifts[best].copy(),
        ratios=ratios,
        notes=notes,
    )


def besov_norm(u: Field, beta: float, q: float = 2.0, shift_policy=None) -> float:
    """完整 Besov 范数 ||u||_q + [u]"""
    return lebesgue_norm(u, q) + besov_seminorm(u, beta, q, shift_policy).value


def sobolev_norm(u: Field, q: float = 2.0) -> float:
    """W^{1,q} 范数 ||u||_q + ||∇u||_q"""
    return lebesgue_norm(u, q) + lebesgue_norm(gradient(u), q)


def fit_regularity(u: Field, q: float = 2.0, r_min: Optional[float] = None,
                   r_max: Optional[float] = None) -> Dict:
    """
    拟合 log ||u(·+y) - u||_q 对 log |y| 的斜率 β̂

    每个二进幅值上对 13 个方向的差分范数取平均; 默认区间 [2h, π/4]

    Returns:
        {'beta_hat', 'r2', 'magnitudes', 'norms', 'intercept'}
    """
    grid = u.grid
    r_min = 2.0 * grid.h if r_min is None else float(r_min)
    r_max = math.pi / 4.0 if r_max is None else float(r_max)
    magnitudes = dyadic_magnitudes(grid)
    chosen = magnitudes[(magnitudes >= r_min * (1.0 - _MAGNITUDE_RTOL))
                        & (magnitudes <= r_max * (1.0 + _MAGNITUDE_RTOL))]
    if len(chosen) < 2:
        raise ValueError(f"need at least two dyadic magnitudes in [{r_min:.4g}, {r_max:.4g}]")

    averaged = []
    for magnitude in chosen:
        averaged.append(float(np.mean(difference_norms(u, magnitude * DIRECTIONS, q))))
    fit = loglog_fit(chosen, averaged, floor=1e-12 * lebesgue_norm(u, q))
    return {
        'beta_hat': fit['slope'],
        'intercept': fit['intercept'],
        'r2': fit['r2'],
        'degenerate': fit['degenerate'],
        'magnitudes': [float(m) for m in chosen],
        'norms': averaged,
    }


# ==================== 合成场 ====================

@dataclass
class SyntheticFieldSpec:
    """
    随机相位无散场参数

    shell 能谱 E(k) ~ k^-s, s 默认 2β+1
    """
    target_beta: float = 0.5
    spectral_slope: Optional[float] = None
    seed: int = 0
    k_min: int = 1
    k_max: Optional[int] = None

    @property
    def slope(self) -> float:
        if self.spectral_slope is not None:
            return float(self.spectral_slope)
        return 2.0 * self.target_beta + 1.0

    @classmethod
    def from_dict(cls, data: Dict) -> 'SyntheticFieldSpec':
        return cls(
            target_beta=float(data.get('target_beta', data.get('beta', 0.5))),
            spectral_slope=data.get('spectral_slope'),
            seed=int(data.get('seed', 0)),
            k_min=int(data.get('k_min', 1)),
            k_max=None if data.get('k_max') is None else int(data['k_max']),
        )


def _reflect(values: np.ndarray) -> np.ndarray:
    """数组在 -k 处的取值"""
    out = values
    for axis in (-3, -2, -1):
        out = np.roll(np.flip(out, axis=axis), 1, axis=axis)
    return out


def make_synthetic_field(grid: GridSpec, spec: SyntheticFieldSpec) -> PhysicalField:
    """
    生成随机相位的无散向量场

    每个分量系数幅值 |k|^{-(s+2)/2}, 相位取 θ(k) - θ(-k) 保证厄米对称;
    Leray 投影后均值为零, 归一化到单位 L² 范数

    Raises:
        ValueError: 频带为空或 k_max > n/3
    """
    k_max = grid.n // 3 if spec.k_max is None else int(spec.k_max)
    k_min = int(spec.k_min)
    if k_max > grid.n / 3.0:
        raise ValueError(f"k_max={k_max} exceeds the dealias limit n/3={grid.n / 3.0:.4g}")
    if k_min < 1 or k_min > k_max:
        raise ValueError(f"empty wavenumber band [{k_min}, {k_max}]")

    kmag = grid.k_magnitude
    band = (kmag >= k_min) & (kmag <= k_max)
    if not np.any(band):
        raise ValueError(f"no wavevector with {k_min} <= |k| <= {k_max}")

    rng = np.random.default_rng(spec.seed)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=(3,) + grid.shape)
    phases = theta - _reflect(theta)
    amplitude = np.zeros(grid.shape)
    amplitude[band] = kmag[band] ** (-(spec.slope + 2.0) / 2.0)

    coefficients = amplitude[None] * np.exp(1j * phases)
    projected = leray_project(SpectralField(grid, coefficients))
    norm = spectral_l2_norm(projected)
    if norm == 0.0:
        raise ValueError("synthetic band carries no solenoidal energy")
    return to_physical(projected * (1.0 / norm))


# ==================== 时间范数 ====================

def time_lebesgue_norm(series: Sequence[Tuple[float, float]], r: float) -> float:
    """
    ||·||_{L^r(0,T)}, 梯形公式

    Args:
        series: (t, value) 序列
        r: 时间指数 >= 1 或 ∞

    Returns:
        (∫ |v|^r dt)^{1/r}; r = ∞ 时为样本最大值
    """
    if len(series) < 2:
        raise ValueError("time norm needs at least two samples")
    r = float(r)
    if math.isnan(r) or r < 1:
        raise ValueError(f"time exponent must satisfy r >= 1, got {r}")
    ordered = sorted(series, key=lambda item: item[0])
    t = np.array([item[0] for item in ordered], dtype=float)
    v = np.abs(np.array([item[1] for item in ordered], dtype=float))
    if math.isinf(r):
        return float(np.max(v))
    return float(integrate.trapezoid(v ** r, t) ** (1.0 / r))
