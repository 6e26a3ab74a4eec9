#!/usr/bin/env python3
"""
周期场模块 - T³ = (R/2πZ)³ 上的离散场
- 均匀配点网格, 物理值 <-> 傅里叶系数 互相转换
- 谱微分(梯度/散度)、Leray 投影、2/3 去混叠
- 任意实数平移(谱相位因子)与 L^q 范数求积
"""

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
import scipy.fft as sfft

# 导入并行配置
try:
    from config import PARALLEL_RUNS
    FFT_WORKERS = PARALLEL_RUNS['fft_workers']
except ImportError:
    FFT_WORKERS = 1

DOMAIN_LENGTH = 2.0 * math.pi
AXES = 3
_SPATIAL = (-3, -2, -1)


@dataclass(frozen=True)
class GridSpec:
    """
    三维周期网格, 每轴 n_per_axis 个均匀节点, 周期 2π

    n_per_axis 必须为偶数且 >= 4 (厄米对称谱与去混叠都需要)
    """
    n_per_axis: int

    def __post_init__(self):
        n = self.n_per_axis
        if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
            raise ValueError(f"n_per_axis must be an integer, got {n!r}")
        if n < 4 or n % 2:
            raise ValueError(f"n_per_axis must be even and >= 4, got {n}")

    @property
    def n(self) -> int:
        return int(self.n_per_axis)

    @property
    def domain_length(self) -> float:
        return DOMAIN_LENGTH

    @property
    def axes(self) -> int:
        return AXES

    @property
    def h(self) -> float:
        """网格间距"""
        return DOMAIN_LENGTH / self.n

    @property
    def cell_volume(self) -> float:
        return self.h ** 3

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    @cached_property
    def nodes_1d(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    @cached_property
    def nodes(self) -> np.ndarray:
        """节点坐标, 形状 (3, n, n, n), 下标顺序 (x1, x2, x3)"""
        x = self.nodes_1d
        return np.stack(np.meshgrid(x, x, x, indexing='ij'))

    @cached_property
    def wavenumbers_1d(self) -> np.ndarray:
        """整数波数 0, 1, ..., n/2-1, -n/2, ..., -1"""
        return sfft.fftfreq(self.n, d=1.0 / self.n)

    @cached_property
    def nyquist_1d(self) -> np.ndarray:
        return np.abs(self.wavenumbers_1d) == self.n // 2

    @cached_property
    def derivative_wavenumbers_1d(self) -> np.ndarray:
        """微分用波数, Nyquist 置零以保持实场"""
        k = self.wavenumbers_1d.copy()
        k[self.nyquist_1d] = 0.0
        return k

    @cached_property
    def k(self) -> np.ndarray:
        """微分波数向量, 形状 (3, n, n, n)"""
        k = self.derivative_wavenumbers_1d
        return np.stack(np.meshgrid(k, k, k, indexing='ij'))

    @cached_property
    def k_squared(self) -> np.ndarray:
        return np.sum(self.k ** 2, axis=0)

    @cached_property
    def k_magnitude(self) -> np.ndarray:
        """完整波数模 |k| (含 Nyquist), 用于径向乘子"""
        k = self.wavenumbers_1d
        kk = np.meshgrid(k, k, k, indexing='ij')
        return np.sqrt(kk[0] ** 2 + kk[1] ** 2 + kk[2] ** 2)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3 规则: 任一 |k_i| > n/3 的系数置零"""
        keep = np.abs(self.wavenumbers_1d) <= self.n / 3.0
        return keep[:, None, None] & keep[None, :, None] & keep[None, None, :]


def _as_component_array(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    values = np.asarray(values)
    if values.shape == grid.shape:
        values = values[None]
    if values.ndim != 4 or values.shape[1:] != grid.shape:
        raise ValueError(
            f"field values must have shape (c, {grid.n}, {grid.n}, {grid.n}), got {values.shape}"
        )
    if values.shape[0] not in (1, 3, 9):
        raise ValueError(f"components must be 1, 3 or 9, got {values.shape[0]}")
    return values


class PhysicalField:
    """
    节点值表示的场
    - components: 1 (标量), 3 (向量), 9 (张量, 下标 3*i+j)
    - 值只读, 所有算子返回新对象
    """

    def __init__(self, grid: GridSpec, values: np.ndarray):
        values = _as_component_array(values, grid)
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.grid = grid
        self.values = np.array(values, dtype=float)
        self.values.flags.writeable = False

    @classmethod
    def from_function(cls, grid: GridSpec, func: Callable) -> 'PhysicalField':
        """按节点坐标 func(x1, x2, x3) 采样"""
        x = grid.nodes
        values = np.asarray(func(x[0], x[1], x[2]), dtype=float)
        if values.ndim == 3:
            values = values[None]
        return cls(grid, np.broadcast_to(values, (values.shape[0],) + grid.shape))

    @classmethod
    def zeros(cls, grid: GridSpec, components: int = 3) -> 'PhysicalField':
        return cls(grid, np.zeros((components,) + grid.shape))

    @property
    def components(self) -> int:
        return self.values.shape[0]

    @property
    def scale(self) -> float:
        """最大节点幅值"""
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def __add__(self, other: 'PhysicalField') -> 'PhysicalField':
        _check_same_layout(self, other)
        return PhysicalField(self.grid, self.values + other.values)

    def __sub__(self, other: 'PhysicalField') -> 'PhysicalField':
        _check_same_layout(self, other)
        return PhysicalField(self.grid, self.values - other.values)

    def __mul__(self, factor: float) -> 'PhysicalField':
        return PhysicalField(self.grid, self.values * float(factor))

    __rmul__ = __mul__

    def __neg__(self) -> 'PhysicalField':
        return PhysicalField(self.grid, -self.values)

    def __repr__(self):
        return f"PhysicalField(n={self.grid.n}, components={self.components})"


class SpectralField:
    """
    傅里叶系数表示的场, 前向归一化: c_k = N^-3 Σ f(x) e^{-ik·x}
    常数 c 只有 k=0 系数 c; sin(x1) 在 k=(±1,0,0) 处为 ∓i/2
    """

    def __init__(self, grid: GridSpec, coefficients: np.ndarray):
        coefficients = _as_component_array(coefficients, grid)
        if not np.all(np.isfinite(coefficients)):
            raise ValueError("spectral coefficients must be finite")
        self.grid = grid
        self.coefficients = np.array(coefficients, dtype=complex)
        self.coefficients.flags.writeable = False

    @property
    def components(self) -> int:
        return self.coefficients.shape[0]

    def coefficient(self, k, component: int = 0) -> complex:
        """按整数波数读取系数"""
        n = self.grid.n
        idx = tuple(int(ki) % n for ki in k)
        return complex(self.coefficients[(component,) + idx])

    def hermitian_defect(self) -> float:
        """max |c(-k) - conj(c(k))|, 实场应为 0"""
        c = self.coefficients
        flipped = c
        for axis in _SPATIAL:
            flipped = np.roll(np.flip(flipped, axis=axis), 1, axis=axis)
        return float(np.max(np.abs(flipped - np.conj(c))))

    def __add__(self, other: 'SpectralField') -> 'SpectralField':
        _check_same_layout(self, other)
        return SpectralField(self.grid, self.coefficients + other.coefficients)

    def __sub__(self, other: 'SpectralField') -> 'SpectralField':
        _check_same_layout(self, other)
        return SpectralField(self.grid, self.coefficients - other.coefficients)

    def __mul__(self, factor) -> 'SpectralField':
        return SpectralField(self.grid, self.coefficients * factor)

    __rmul__ = __mul__

    def __repr__(self):
        return f"SpectralField(n={self.grid.n}, components={self.components})"


Field = Union[PhysicalField, SpectralField]


def _check_same_layout(a: Field, b: Field):
    if a.grid != b.grid or a.components != b.components:
        raise ValueError("fields live on different grids or have different components")


# ==================== 变换 ====================

def to_spectral(f: PhysicalField) -> SpectralField:
    """物理值 -> 傅里叶系数"""
    if isinstance(f, SpectralField):
        return f
    coefficients = sfft.fftn(f.values, axes=_SPATIAL, norm='forward', workers=FFT_WORKERS)
    return SpectralField(f.grid, coefficients)


def to_physical(F: SpectralField) -> PhysicalField:
    """傅里叶系数 -> 物理值(取实部)"""
    if isinstance(F, PhysicalField):
        return F
    values = sfft.ifftn(F.coefficients, axes=_SPATIAL, norm='forward', workers=FFT_WORKERS)
    return PhysicalField(F.grid, values.real)


def _coefficients(f: Field) -> np.ndarray:
    return to_spectral(f).coefficients


def _same_kind(template: Field, grid: GridSpec, coefficients: np.ndarray) -> Field:
    spectral = SpectralField(grid, coefficients)
    if isinstance(template, SpectralField):
        return spectral
    return to_physical(spectral)


# ==================== 微分算子 ====================

def gradient(f: Field) -> Field:
    """
    谱梯度, 乘以 i·k

    标量 -> 向量; 向量 -> 张量, 分量 3*i+j 为 ∂_j u_i
    返回与输入同类(物理/谱)的场
    """
    if f.components == 9:
        raise ValueError("gradient of a tensor field is not supported")
    F = _coefficients(f)
    k = f.grid.k
    G = 1j * k[None, :] * F[:, None]
    return _same_kind(f, f.grid, G.reshape((-1,) + f.grid.shape))


def divergence(v: Field) -> Field:
    """散度 Σ_j ∂_j v_j (向量 -> 标量)"""
    if v.components != 3:
        raise ValueError(f"divergence needs a vector field, got {v.components} components")
    F = _coefficients(v)
    D = np.sum(1j * v.grid.k * F, axis=0)
    return _same_kind(v, v.grid, D[None])


def laplacian(f: Field) -> Field:
    F = _coefficients(f)
    return _same_kind(f, f.grid, -f.grid.k_squared[None] * F)


def leray_project(v: Field) -> Field:
    """
    Leray 投影 P v = v - k (k·v) / |k|^2, k=0 模态不变

    投影幂等, 输出无散, 不动点恰为无散场
    """
    if v.components != 3:
        raise ValueError(f"leray_project needs a vector field, got {v.components} components")
    F = _coefficients(v)
    k = v.grid.k
    k2 = v.grid.k_squared
    safe = np.where(k2 == 0, 1.0, k2)
    k_dot = np.sum(k * F, axis=0) / safe
    P = F - k * k_dot[None]
    return _same_kind(v, v.grid, P)


def dealias(F: Field) -> Field:
    """2/3 规则截断, 幂等"""
    coefficients = _coefficients(F) * F.grid.dealias_mask[None]
    return _same_kind(F, F.grid, coefficients)


# ==================== 平移 ====================

def shift_phase(grid: GridSpec, y) -> np.ndarray:
    """
    平移 f(x) -> f(x - y) 的谱乘子 e^{-ik·y}, 形状 (n, n, n)

    Nyquist 模态按余弦模态处理(因子 cos(n/2·y_a)), 保持厄米对称;
    整数平移等于 np.roll。平移的复合 shift(shift(f, a), b) = shift(f, a+b)
    只对没有 Nyquist 分量的场(去混叠场、求解器和合成场)精确成立
    """
    y = np.asarray(y, dtype=float).reshape(3)
    k = grid.wavenumbers_1d
    factors = []
    for axis in range(3):
        phase = np.exp(-1j * k * y[axis])
        phase[grid.nyquist_1d] = math.cos(grid.n / 2 * y[axis])
        factors.append(phase)
    return factors[0][:, None, None] * factors[1][None, :, None] * factors[2][None, None, :]


def shift(f: Field, y) -> Field:
    """返回 f(x - y), y 为任意实三维向量"""
    y = np.asarray(y, dtype=float).reshape(3)
    if not np.any(y):
        return f
    F = _coefficients(f)
    return _same_kind(f, f.grid, F * shift_phase(f.grid, y)[None])


# ==================== 范数与积分 ====================

def pointwise_magnitude(f: PhysicalField) -> np.ndarray:
    """逐点欧氏/Frobenius 模"""
    values = to_physical(f).values
    if values.shape[0] == 1:
        return np.abs(values[0])
    return np.sqrt(np.sum(values ** 2, axis=0))


def lebesgue_norm(f: Field, q: float) -> float:
    """
    L^q 范数的节点求积 (h^3 Σ |f|^q)^{1/q}; q = ∞ 取节点最大值
    (∞ 情形只是真实上确界的下界)
    """
    q = float(q)
    if math.isnan(q) or q < 1:
        raise ValueError(f"Lebesgue exponent must satisfy q >= 1, got {q}")
    magnitude = pointwise_magnitude(to_physical(f))
    if math.isinf(q):
        return float(np.max(magnitude))
    total = np.sum(magnitude ** q) * f.grid.cell_volume
    return float(total ** (1.0 / q))


def spectral_l2_norm(F: SpectralField) -> float:
    """Parseval: ||f||_2^2 = (2π)^3 Σ |c_k|^2"""
    c = _coefficients(F)
    return float(math.sqrt(DOMAIN_LENGTH ** 3 * np.sum(np.abs(c) ** 2)))


def integrate(values: np.ndarray, grid: GridSpec) -> float:
    """节点值在 T³ 上的积分"""
    return float(np.sum(values) * grid.cell_volume)


def contract(tensor: PhysicalField, grad: PhysicalField) -> float:
    """∫ A : G dx, 两者都是 9 分量张量场"""
    if tensor.components != 9 or grad.components != 9:
        raise ValueError("contract needs two tensor fields")
    return integrate(np.sum(tensor.values * grad.values, axis=0), tensor.grid)


def outer(a: PhysicalField, b: Optional[PhysicalField] = None) -> PhysicalField:
    """逐点外积 a ⊗ b, 分量 3*i+j = a_i b_j"""
    b = a if b is None else b
    if a.components != 3 or b.components != 3:
        raise ValueError("outer product needs two vector fields")
    values = a.values[:, None] * b.values[None, :]
    return PhysicalField(a.grid, values.reshape((9,) + a.grid.shape))


def mean(f: Field) -> np.ndarray:
    """各分量的空间平均 (k=0 系数)"""
    return np.real(_coefficients(f)[(slice(None), 0, 0, 0)])
