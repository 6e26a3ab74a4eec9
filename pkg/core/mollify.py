#!/usr/bin/env python3
"""
光滑化模块 - 径向紧支核 ρ_ε(y) = ε^-3 ρ(|y|/ε)
- 谱路径: 乘以核的傅里叶变换 ρ̂(ε|k|)
- 求积路径: 在 ε 球内的 y 格点上对平移副本加权求和
- 卷积不等式 (conv1-conv7) 的数值核验
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator
from scipy.special import roots_legendre

from core.field import (
    Field, GridSpec, PhysicalField,
    _coefficients, _same_kind, gradient, lebesgue_norm,
)
from core.memory_cache import MultiplierCache, get_multiplier_cache

try:
    from config import MOLLIFIER_DEFAULTS, TOLERANCES
except ImportError:
    MOLLIFIER_DEFAULTS = {
        'profile': 'bump', 'guard': 1e-14, 'radial_nodes': 256,
        'quadrature_steps_per_radius': 16, 'warn_factor': 4.0, 'refuse_factor': 2.0,
    }
    TOLERANCES = {'unit_constant_slack': 5e-2, 'stability_factor': 1.5}

logger = logging.getLogger(__name__)

# 求积乘子按点分块, 控制 (chunk, n^2) 复数中间数组的内存
_LATTICE_CHUNK = 512


def _bump(r: np.ndarray, guard: float) -> np.ndarray:
    r2 = np.asarray(r, dtype=float) ** 2
    out = np.zeros_like(r2)
    inside = r2 < 1.0 - guard
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


class MollifierKernel:
    """
    径向核剖面 ρ(r), 支撑在 r < 1

    Args:
        profile: 'bump' (默认 exp(-1/(1-r²))), 可调用对象 φ(r),
                 或 (r_samples, values) 径向采样表 (PCHIP 插值)
        amplitude: 剖面前的常数因子; None 表示归一化到单位质量
        guard: bump 剖面在 r² >= 1 - guard 处截断
    """

    def __init__(self, profile: Union[str, Callable, Tuple[Sequence[float], Sequence[float]]] = None,
                 amplitude: Optional[float] = None, guard: Optional[float] = None):
        profile = MOLLIFIER_DEFAULTS['profile'] if profile is None else profile
        self.guard = MOLLIFIER_DEFAULTS['guard'] if guard is None else float(guard)

        if isinstance(profile, str):
            if profile != 'bump':
                raise ValueError(f"unknown kernel profile: {profile!r}")
            self._shape = lambda r: _bump(r, self.guard)
            self._signature = f"bump:{self.guard!r}"
            self.name = 'bump'
        elif callable(profile):
            fn = profile
            self._shape = lambda r: np.where(np.asarray(r) < 1.0, fn(np.asarray(r, dtype=float)), 0.0)
            self._signature = f"callable:{getattr(fn, '__qualname__', repr(fn))}"
            self.name = getattr(fn, '__name__', 'callable')
        else:
            r_samples, values = (np.asarray(a, dtype=float) for a in profile)
            self._shape, self._signature = self._tabulated(r_samples, values)
            self.name = 'tabulated'

        self.shape_mass = self._shape_mass()
        if self.shape_mass <= 0:
            raise ValueError("kernel profile has zero mass")
        self.amplitude = 1.0 / self.shape_mass if amplitude is None else float(amplitude)
        if self.amplitude < 0:
            raise ValueError("kernel amplitude must be non-negative")

    @staticmethod
    def _tabulated(r_samples: np.ndarray, values: np.ndarray):
        if r_samples.ndim != 1 or r_samples.shape != values.shape or r_samples.size < 2:
            raise ValueError("tabulated profile needs matching 1-D sample arrays")
        if np.any(np.diff(r_samples) <= 0) or r_samples[0] < 0 or r_samples[-1] > 1:
            raise ValueError("tabulated radii must increase within [0, 1]")
        if np.any(values < 0):
            raise ValueError("kernel profile must be non-negative")
        interp = PchipInterpolator(r_samples, values, extrapolate=False)

        def shape(r):
            r = np.asarray(r, dtype=float)
            out = np.nan_to_num(interp(r), nan=0.0)
            return np.where(r < 1.0, np.maximum(out, 0.0), 0.0)

        digest = hashlib.md5(r_samples.tobytes() + values.tobytes()).hexdigest()
        return shape, f"tabulated:{digest}"

    def _shape_mass(self) -> float:
        value, _ = integrate.quad(lambda r: 4.0 * math.pi * r * r * float(self._shape(r)),
                                  0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)
        return float(value)

    def __call__(self, r) -> np.ndarray:
        """单位尺度核值 ρ(r)"""
        return self.amplitude * self._shape(r)

    def density(self, y: np.ndarray, eps: float) -> np.ndarray:
        """ρ_ε(y) = ε^-3 ρ(|y|/ε), y 形状 (..., 3)"""
        r = np.linalg.norm(np.asarray(y, dtype=float), axis=-1) / eps
        return self(r) / eps ** 3

    def scaled(self, factor: float) -> 'MollifierKernel':
        clone = object.__new__(MollifierKernel)
        clone.__dict__.update({k: v for k, v in self.__dict__.items() if k != '_nodes'})
        clone.amplitude = self.amplitude * float(factor)
        return clone

    @property
    def profile_hash(self) -> str:
        return hashlib.md5(f"{self._signature}:{self.amplitude!r}".encode()).hexdigest()

    @cached_property
    def _nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        x, w = roots_legendre(MOLLIFIER_DEFAULTS['radial_nodes'])
        r = 0.5 * (x + 1.0)
        return r, 0.5 * w * 4.0 * math.pi * r * r * self(r)

    def fourier(self, s) -> np.ndarray:
        """
        径向傅里叶变换 ρ̂(s) = 4π ∫_0^1 r² ρ(r) sin(sr)/(sr) dr

        Args:
            s: 波数模(可为数组)

        Returns:
            与 s 同形状的实数组, ρ̂(0) 为核质量
        """
        s = np.asarray(s, dtype=float)
        r, weighted = self._nodes
        flat = s.reshape(-1)
        # np.sinc(x) = sin(πx)/(πx)
        values = np.sinc(np.outer(flat, r) / math.pi) @ weighted
        return values.reshape(s.shape)

    def __repr__(self):
        return f"MollifierKernel({self.name}, amplitude={self.amplitude:.6g})"


_default_kernel = None


def default_kernel() -> MollifierKernel:
    """默认归一化 bump 核(单例)"""
    global _default_kernel
    if _default_kernel is None:
        _default_kernel = MollifierKernel()
    return _default_kernel


def kernel_mass(kernel: MollifierKernel) -> float:
    """∫ ρ = 4π ∫_0^1 r² ρ(r) dr, 自适应 Gauss-Kronrod"""
    return kernel.amplitude * kernel.shape_mass


def check_epsilon(eps: float, grid: GridSpec) -> float:
    """
    校验光滑化尺度

    Raises:
        ValueError: ε <= 0, ε > 1, 或 ε < refuse_factor·h (核分辨不足)
    """
    eps = float(eps)
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if eps > 1.0:
        raise ValueError(f"eps must not exceed 1, got {eps}")
    if eps < MOLLIFIER_DEFAULTS['refuse_factor'] * grid.h:
        raise ValueError(
            f"eps={eps:.4g} is below {MOLLIFIER_DEFAULTS['refuse_factor']:g}h "
            f"(h={grid.h:.4g}); the kernel is not resolved on this grid"
        )
    if eps < MOLLIFIER_DEFAULTS['warn_factor'] * grid.h:
        logger.warning(f"[光滑化] eps={eps:.4g} < {MOLLIFIER_DEFAULTS['warn_factor']:g}h, 核只有少量格点")
    return eps


def is_resolved(eps: float, grid: GridSpec) -> bool:
    return 0 < eps <= 1.0 and eps >= MOLLIFIER_DEFAULTS['refuse_factor'] * grid.h


# ==================== 乘子 ====================

def spectral_multiplier(grid: GridSpec, eps: float, kernel: Optional[MollifierKernel] = None,
                        cache: Optional[MultiplierCache] = None) -> np.ndarray:
    """谱路径乘子 ρ̂(ε|k|), 只在不同的 |k|² 上求值"""
    kernel = kernel or default_kernel()
    cache = cache or get_multiplier_cache()
    key = cache.generate_key('spectral', grid.n, kernel.profile_hash, float(eps))
    cached = cache.get(key)
    if cached is not None:
        return cached

    k2 = np.rint(grid.k_magnitude ** 2).astype(np.int64)
    unique, inverse = np.unique(k2, return_inverse=True)
    values = kernel.fourier(eps * np.sqrt(unique.astype(float)))
    # k=0 处取精确质量
    values *= kernel_mass(kernel) / kernel.fourier(0.0)
    multiplier = values[inverse].reshape(grid.shape)
    return cache.set(key, multiplier)


class QuadratureLattice:
    """
    ε 球内的平移格点 y = (h/refine)·j, j ∈ Z³, |y| < ε

    权重 w_j = ρ_ε(y_j)·(h/refine)³ 再归一化为离散单位质量
    refine=1 时平移都是整格点, 平移副本可用 np.roll 精确得到
    """

    def __init__(self, grid: GridSpec, eps: float, kernel: Optional[MollifierKernel] = None,
                 refine: int = 1):
        if int(refine) < 1:
            raise ValueError(f"refine must be >= 1, got {refine}")
        self.grid = grid
        self.eps = float(eps)
        self.kernel = kernel or default_kernel()
        self.refine = int(refine)
        self.step = grid.h / self.refine

        radius = int(math.floor(self.eps / self.step))
        j = np.arange(-radius, radius + 1)
        offsets = np.stack(np.meshgrid(j, j, j, indexing='ij'), axis=-1).reshape(-1, 3)
        shifts = offsets * self.step
        density = self.kernel.density(shifts, self.eps)
        keep = density > 0
        if not np.any(keep):
            raise ValueError(f"no lattice point carries kernel weight at eps={self.eps}")

        self.offsets = offsets[keep]
        self.shifts = shifts[keep]
        raw = density[keep] * self.step ** 3
        self.raw_mass = float(np.sum(raw))
        self.weights = raw / self.raw_mass * kernel_mass(self.kernel)

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def is_grid_aligned(self) -> bool:
        return self.refine == 1

    def __iter__(self) -> Iterator[Tuple[np.ndarray, float]]:
        return iter(zip(self.offsets, self.weights))

    def multiplier(self, cache: Optional[MultiplierCache] = None) -> np.ndarray:
        """
        m(k) = Σ_j w_j e^{-ik·y_j}, 与平移副本加权和等价

        每轴一张相位表, 按点分块用矩阵乘法累加
        """
        cache = cache or get_multiplier_cache()
        key = cache.generate_key('lattice', self.grid.n, self.kernel.profile_hash,
                                 self.eps, self.refine)
        cached = cache.get(key)
        if cached is not None:
            return cached

        n = self.grid.n
        tables = []
        for axis in range(3):
            table = np.exp(-1j * np.outer(self.shifts[:, axis], self.grid.wavenumbers_1d))
            table[:, self.grid.nyquist_1d] = np.cos(n / 2 * self.shifts[:, axis])[:, None]
            tables.append(table)

        total = np.zeros((n, n * n), dtype=complex)
        for start in range(0, self.size, _LATTICE_CHUNK):
            part = slice(start, start + _LATTICE_CHUNK)
            ex = self.weights[part, None] * tables[0][part]
            eyz = (tables[1][part][:, :, None] * tables[2][part][:, None, :]).reshape(-1, n * n)
            total += ex.T @ eyz
        return cache.set(key, total.real.reshape(self.grid.shape))

    def apply_direct(self, f: PhysicalField) -> PhysicalField:
        """逐点求和 Σ_j w_j f(x - y_j)(只用于整格点)"""
        if not self.is_grid_aligned:
            raise ValueError("direct summation needs a grid-aligned lattice (refine=1)")
        values = f.values
        out = np.zeros_like(values)
        for offset, weight in self:
            out += weight * np.roll(values, tuple(int(o) for o in offset), axis=(1, 2, 3))
        return PhysicalField(f.grid, out)


def quadrature_refine(grid: GridSpec, eps: float) -> int:
    """自动细化倍数, 保证 ε 半径内约 quadrature_steps_per_radius 步"""
    steps = MOLLIFIER_DEFAULTS['quadrature_steps_per_radius']
    return max(1, int(math.ceil(steps * grid.h / eps)))


def mollify(f: Field, eps: float, kernel: Optional[MollifierKernel] = None,
            method: str = 'spectral', refine: Optional[int] = None) -> Field:
    """
    f_ε = ρ_ε * f

    Args:
        f: 物理或谱场(任意分量数)
        eps: 光滑化尺度, 0 < ε <= 1
        kernel: 径向核, 默认归一化 bump
        method: 'spectral' 或 'quadrature'
        refine: 求积格点细化倍数, None 时自动选取

    Returns:
        与输入同类的场
    """
    eps = check_epsilon(eps, f.grid)
    kernel = kernel or default_kernel()
    if method == 'spectral':
        multiplier = spectral_multiplier(f.grid, eps, kernel)
    elif method == 'quadrature':
        refine = quadrature_refine(f.grid, eps) if refine is None else refine
        multiplier = QuadratureLattice(f.grid, eps, kernel, refine).multiplier()
    else:
        raise ValueError(f"unknown mollification method: {method!r}")
    return _same_kind(f, f.grid, _coefficients(f) * multiplier[None])


def mollify_with_lattice(f: Field, lattice: QuadratureLattice) -> Field:
    """按给定格点求积光滑化(交换子分解用)"""
    return _same_kind(f, f.grid, _coefficients(f) * lattice.multiplier()[None])


# ==================== 卷积不等式核验 ====================

UNIT_BOUNDS = ('conv1', 'conv2', 'conv4', 'conv5')
MEASURED_BOUNDS = ('conv3', 'conv6', 'conv7')


def _ratio(numerator: float, denominator: float, floor: float) -> float:
    if numerator <= floor:
        return 0.0
    if denominator <= floor:
        return math.inf
    return numerator / denominator


def verify_convolution_bounds(f: PhysicalField, beta: float, q: float, eps_list: Sequence[float],
                              kernel: Optional[MollifierKernel] = None, r: Optional[float] = None,
                              shift_policy=None) -> Dict:
    """
    对一组 ε 计算七个卷积不等式的比值

    conv1/conv2/conv4/conv5 的常数为 1, 要求比值 <= 1 + slack;
    conv3/conv6/conv7 报告测得常数及其在 ε 上的稳定性 (max/min)
    带限场上 conv6/conv7 的比值随 ε 缩小, 其 stable 只作参考, 不计入 all_unit_ok

    Args:
        f: 物理场
        beta: Besov 指数 (0, 1]
        q: Lebesgue 指数 >= 1
        eps_list: 光滑化尺度列表
        r: conv7 的目标指数, 默认 2q

    Returns:
        {'bounds': {...}, 'eps': [...], 'seminorm': ..., 'all_unit_ok': bool}
    """
    # 延迟导入, besov 不依赖本模块
    from core.besov import besov_seminorm, difference_norms

    kernel = kernel or default_kernel()
    grid = f.grid
    q = float(q)
    r = (2.0 * q if not math.isinf(q) else math.inf) if r is None else float(r)
    if not len(eps_list):
        raise ValueError("eps_list must not be empty")
    if r < q:
        raise ValueError(f"conv7 target exponent r must satisfy r >= q, got r={r}, q={q}")
    slack = TOLERANCES['unit_constant_slack']

    estimate = besov_seminorm(f, beta, q, shift_policy)
    seminorm = estimate.value
    norm_q = lebesgue_norm(f, q)
    grad_q = lebesgue_norm(gradient(f), q)
    floor = 1e-12 * max(norm_q, 1e-300)
    spatial = 0.0 if math.isinf(q) else 3.0 * (1.0 / q - (0.0 if math.isinf(r) else 1.0 / r))

    magnitudes = np.linalg.norm(estimate.shift_set, axis=1)
    diffs = difference_norms(f, estimate.shift_set, q)
    conv1 = max(_ratio(d, seminorm * m ** beta, floor) for d, m in zip(diffs, magnitudes))
    conv4 = max(_ratio(d, grad_q * m, floor) for d, m in zip(diffs, magnitudes))

    rows: Dict[str, List[float]] = {name: [] for name in ('conv2', 'conv3', 'conv5', 'conv6', 'conv7')}
    resolved = []
    for eps in eps_list:
        eps = check_epsilon(eps, grid)
        resolved.append(eps)
        f_eps = mollify(f, eps, kernel)
        err = lebesgue_norm(f - f_eps, q)
        grad_eps = lebesgue_norm(gradient(f_eps), q)
        rows['conv2'].append(_ratio(err, seminorm * eps ** beta, floor))
        rows['conv3'].append(_ratio(grad_eps, seminorm * eps ** (beta - 1.0), floor))
        rows['conv5'].append(_ratio(err, grad_q * eps, floor))
        rows['conv6'].append(_ratio(grad_eps * eps, norm_q, floor))
        rows['conv7'].append(_ratio(lebesgue_norm(f_eps, r) * eps ** spatial, norm_q, floor))

    bounds = {
        'conv1': {'ratios': [conv1], 'max': conv1},
        'conv4': {'ratios': [conv4], 'max': conv4},
    }
    for name, ratios in rows.items():
        bounds[name] = {'ratios': ratios, 'max': max(ratios) if ratios else 0.0}

    for name in UNIT_BOUNDS:
        bounds[name]['kind'] = 'unit'
        bounds[name]['ok'] = bounds[name]['max'] <= 1.0 + slack
    for name in MEASURED_BOUNDS:
        finite = [c for c in bounds[name]['ratios'] if 0 < c < math.inf]
        stability = (max(finite) / min(finite)) if finite else 1.0
        bounds[name]['kind'] = 'measured'
        bounds[name]['stability'] = stability
        bounds[name]['stable'] = stability <= TOLERANCES['stability_factor']

    return {
        'eps': resolved,
        'beta': float(beta),
        'q': q,
        'r': r,
        'seminorm': seminorm,
        'norm': norm_q,
        'gradient_norm': grad_q,
        'bounds': bounds,
        'all_unit_ok': all(bounds[name]['ok'] for name in UNIT_BOUNDS),
    }


def quadrature_discrepancy(f: PhysicalField, eps: float, kernel: Optional[MollifierKernel] = None,
                           refine: Optional[int] = None) -> float:
    """谱路径与求积路径的最大节点差(相对于场幅值)"""
    spectral = mollify(f, eps, kernel, 'spectral')
    quadrature = mollify(f, eps, kernel, 'quadrature', refine)
    scale = max(f.scale, 1e-300)
    return float(np.max(np.abs(spectral.values - quadrature.values)) / scale)
