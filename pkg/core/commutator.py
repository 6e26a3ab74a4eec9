#!/usr/bin/env python3
"""
交换子模块 - (u⊗u)_ε = u_ε⊗u_ε + r_ε(u,u) - (u-u_ε)⊗(u-u_ε)
- 四个张量共用同一个整格点求积格子, 恒等式精确到舍入误差
- 单时间片的能流 I1, I2 与三线性项
- 能流标度拟合与光滑化能量平衡残差
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from core.field import (
    PhysicalField, contract, divergence, gradient, lebesgue_norm, outer, to_physical,
)
from core.mollify import (
    MollifierKernel, QuadratureLattice, check_epsilon, default_kernel,
    is_resolved, mollify, mollify_with_lattice,
)
from utils.fitting import DEGENERATE, loglog_fit, slope_verdict

try:
    from config import PARALLEL_RUNS, TOLERANCES
except ImportError:
    PARALLEL_RUNS = {'max_workers': 2}
    TOLERANCES = {'cet_identity': 1e-11, 'trilinear': 1e-10, 'flux_slope_slack': 0.15,
                  'min_scaling_points': 4, 'divergence': 1e-10}

logger = logging.getLogger(__name__)

# 对称张量的上三角分量 (i, j)
_UPPER = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]

# 通量相对于 ||u||_2^2·max(1, ||∇u||_∞) 低于该值视为零
_FLUX_FLOOR = 1e-13


@dataclass
class CommutatorBundle:
    """交换子分解的四个张量场 (9 分量, 下标 3*i+j)"""
    eps: float
    uu_eps: PhysicalField
    ueps_ueps: PhysicalField
    remainder: PhysicalField
    rough_part: PhysicalField
    identity_residual: float
    u_eps: PhysicalField

    @property
    def scale(self) -> float:
        return max(self.uu_eps.scale, self.ueps_ueps.scale, self.remainder.scale,
                   self.rough_part.scale)

    @property
    def relative_residual(self) -> float:
        scale = self.scale
        return self.identity_residual / scale if scale > 0 else self.identity_residual


@dataclass
class FluxReport:
    """单时间片的能流积分"""
    eps: float
    I1: float
    I2: float
    trilinear: float
    identity_residual: float
    lattice_discrepancy: float
    trilinear_scale: float

    @property
    def total(self) -> float:
        return self.I1 + self.I2

    def as_row(self) -> Dict:
        row = asdict(self)
        row.pop('trilinear_scale')
        return row


def _symmetric_from_upper(upper: np.ndarray) -> np.ndarray:
    full = np.empty((3, 3) + upper.shape[1:])
    for t, (i, j) in enumerate(_UPPER):
        full[i, j] = upper[t]
        full[j, i] = upper[t]
    return full.reshape((9,) + upper.shape[1:])


def remainder_direct(u: PhysicalField, lattice: QuadratureLattice) -> PhysicalField:
    """
    r_ε(u,u)(x) = Σ_j w_j δ_y u(x) ⊗ δ_y u(x), δ_y u(x) = u(x - y) - u(x)

    逐个整格点平移累加, 结果逐点对称半正定
    """
    if not lattice.is_grid_aligned:
        raise ValueError("the remainder is summed on a grid-aligned lattice")
    values = u.values
    upper = np.zeros((len(_UPPER),) + u.grid.shape)
    for offset, weight in lattice:
        delta = np.roll(values, tuple(int(o) for o in offset), axis=(1, 2, 3)) - values
        for t, (i, j) in enumerate(_UPPER):
            upper[t] += weight * delta[i] * delta[j]
    return PhysicalField(u.grid, _symmetric_from_upper(upper))


def cet_decompose(u: PhysicalField, eps: float, kernel: Optional[MollifierKernel] = None,
                  remainder_method: str = 'direct') -> CommutatorBundle:
    """
    交换子分解

    Args:
        u: 向量场(不要求无散, 恒等式是代数的)
        eps: 光滑化尺度
        kernel: 径向核
        remainder_method: 'direct' 逐平移求和, 'expanded' 用
                          (u⊗u)_ε - u⊗u_ε - u_ε⊗u + u⊗u 展开

    Returns:
        CommutatorBundle
    """
    u = to_physical(u)
    if u.components != 3:
        raise ValueError(f"cet_decompose needs a vector field, got {u.components} components")
    eps = check_epsilon(eps, u.grid)
    lattice = QuadratureLattice(u.grid, eps, kernel or default_kernel(), refine=1)

    u_eps = mollify_with_lattice(u, lattice)
    uu = outer(u)
    uu_eps = mollify_with_lattice(uu, lattice)
    ueps_ueps = outer(u_eps)
    rough = outer(u - u_eps)

    if remainder_method == 'direct':
        remainder = remainder_direct(u, lattice)
    elif remainder_method == 'expanded':
        remainder = uu_eps - outer(u, u_eps) - outer(u_eps, u) + uu
    else:
        raise ValueError(f"unknown remainder method: {remainder_method!r}")

    residual = float(np.max(np.abs(
        uu_eps.values - ueps_ueps.values - remainder.values + rough.values)))
    return CommutatorBundle(
        eps=eps,
        uu_eps=uu_eps,
        ueps_ueps=ueps_ueps,
        remainder=remainder,
        rough_part=rough,
        identity_residual=residual,
        u_eps=u_eps,
    )


def min_eigenvalue(tensor: PhysicalField) -> float:
    """逐点对称张量的最小特征值"""
    values = tensor.values.reshape((3, 3, -1))
    matrices = np.moveaxis(values, -1, 0)
    return float(np.min(np.linalg.eigvalsh(0.5 * (matrices + np.swapaxes(matrices, 1, 2)))))


def check_solenoidal(u: PhysicalField, tol: Optional[float] = None) -> float:
    """
    Raises:
        ValueError: max|div u| 超过 tol·max(1, max|∇u|)
    """
    tol = TOLERANCES['divergence'] if tol is None else tol
    div_max = divergence(u).scale
    grad_scale = gradient(u).scale
    if div_max > tol * max(1.0, grad_scale):
        raise ValueError(
            f"input is not divergence-free: max|div u| = {div_max:.3e} "
            f"(tolerance {tol:.1e} x max(1, max|grad u|))"
        )
    return div_max


def flux_terms(u: PhysicalField, eps: float, kernel: Optional[MollifierKernel] = None,
               bundle: Optional[CommutatorBundle] = None) -> FluxReport:
    """
    I1 = |∫ (u-u_ε)⊗(u-u_ε) : ∇u_ε|, I2 = |∫ r_ε : ∇u_ε|, 三线性项 ∫ u_ε⊗u_ε : ∇u_ε

    lattice_discrepancy: 整格点 u_ε 与谱路径 mollify(u, ε) 的相对 L² 差

    Raises:
        ValueError: 输入非无散
    """
    u = to_physical(u)
    check_solenoidal(u)
    bundle = bundle or cet_decompose(u, eps, kernel)
    grad = gradient(bundle.u_eps)
    trilinear = contract(bundle.ueps_ueps, grad)
    l2 = lebesgue_norm(bundle.u_eps, 2)
    spectral = mollify(u, bundle.eps, kernel)
    discrepancy = lebesgue_norm(bundle.u_eps - spectral, 2) / max(lebesgue_norm(spectral, 2), 1e-300)
    return FluxReport(
        eps=bundle.eps,
        I1=abs(contract(bundle.rough_part, grad)),
        I2=abs(contract(bundle.remainder, grad)),
        trilinear=trilinear,
        identity_residual=bundle.identity_residual,
        lattice_discrepancy=discrepancy,
        trilinear_scale=l2 * l2 * lebesgue_norm(grad, 2),
    )


def signed_fluxes(u: PhysicalField, eps: float,
                  kernel: Optional[MollifierKernel] = None) -> Tuple[float, float]:
    """带符号的 (∫ (u-u_ε)⊗(u-u_ε):∇u_ε, ∫ r_ε:∇u_ε), 供时间积分"""
    bundle = cet_decompose(u, eps, kernel)
    grad = gradient(bundle.u_eps)
    return contract(bundle.rough_part, grad), contract(bundle.remainder, grad)


def holder_check(bundle: CommutatorBundle) -> Dict:
    """|∫ r_ε:∇u_ε| <= max 迹(r_ε) · ||∇u_ε||_1"""
    grad = gradient(bundle.u_eps)
    lhs = abs(contract(bundle.remainder, grad))
    rhs = float(np.max(trace_field(bundle.remainder))) * lebesgue_norm(grad, 1)
    return {'lhs': lhs, 'rhs': rhs, 'ok': lhs <= rhs * (1.0 + 1e-12) + 1e-300}


def flux_floor(u: PhysicalField) -> float:
    l2 = lebesgue_norm(u, 2)
    return _FLUX_FLOOR * l2 * l2 * max(1.0, gradient(u).scale)


def flux_scaling(u: PhysicalField, beta: float, eps_list: Sequence[float],
                 alpha: Optional[float] = None, kernel: Optional[MollifierKernel] = None,
                 max_workers: Optional[int] = None) -> Dict:
    """
    拟合 log(I1+I2) 对 log ε 的斜率, 与 (β-α)/α 和 3β-1 比较

    Args:
        u: 无散向量场
        beta: 正则性 (测得或假设)
        eps_list: 至少 4 个已分辨的 ε
        alpha: 时间可积性指数, None 时只比较 3β-1

    Returns:
        {'slope', 'intercept', 'r2', 'predicted', 'threshold', 'verdict', 'reports'}
    """
    u = to_physical(u)
    check_solenoidal(u)
    resolved = sorted({float(e) for e in eps_list if is_resolved(float(e), u.grid)}, reverse=True)
    minimum = TOLERANCES['min_scaling_points']
    if len(resolved) < minimum:
        raise ValueError(f"flux scaling needs at least {minimum} resolved eps values, got {len(resolved)}")

    workers = max_workers or PARALLEL_RUNS['max_workers']
    with ThreadPoolExecutor(max_workers=min(workers, len(resolved))) as executor:
        reports = list(executor.map(lambda e: flux_terms(u, e, kernel), resolved))

    predicted = {'direct': 3.0 * beta - 1.0}
    if alpha is not None:
        predicted['besov'] = (beta - alpha) / alpha
    threshold = min(predicted.values())
    slack = TOLERANCES['flux_slope_slack']

    totals = [r.total for r in reports]
    fit = loglog_fit(resolved, totals, floor=flux_floor(u))
    verdict = DEGENERATE if fit['degenerate'] else slope_verdict(fit['slope'], threshold, slack)
    logger.info(f"[能流标度] slope={fit['slope']:.4f}, 阈值={threshold - slack:.4f}, 结论={verdict}")
    return {
        'eps': resolved,
        'totals': totals,
        'slope': fit['slope'],
        'intercept': fit['intercept'],
        'r2': fit['r2'],
        'predicted': predicted,
        'threshold': threshold,
        'slack': slack,
        'verdict': verdict,
        'reports': reports,
    }


def energy_transfer(u: PhysicalField, eps: float, kernel: Optional[MollifierKernel] = None) -> Tuple[float, float]:
    """
    单时间片的 (½||u_ε||², ∫ r_ε:∇u_ε - ∫ (u-u_ε)⊗(u-u_ε):∇u_ε)

    第二项是 d/dt ½||u_ε||² 在 Euler 方程下的值
    """
    bundle = cet_decompose(u, eps, kernel)
    grad = gradient(bundle.u_eps)
    l2 = lebesgue_norm(bundle.u_eps, 2)
    transfer = contract(bundle.remainder, grad) - contract(bundle.rough_part, grad)
    return 0.5 * l2 * l2, transfer


def mollified_energy_residual(trajectory: Sequence[Tuple[float, PhysicalField]], eps: float,
                              kernel: Optional[MollifierKernel] = None) -> Dict:
    """
    光滑化能量平衡残差

    |½||v_ε(T)||² - ½||v_ε(0)||² - ∫∫ r_ε:∇v_ε + ∫∫ (v-v_ε)⊗(v-v_ε):∇v_ε|,
    时间积分用梯形公式, 相对于 ½||v_ε(0)||² 报告

    Args:
        trajectory: (t, 速度场) 样本, 至少 2 个

    Returns:
        {'residual', 'absolute', 'energy_change', 'transfer_integral', 'times', 'energies', 'transfers'}
    """
    if len(trajectory) < 2:
        raise ValueError("energy residual needs a trajectory with at least two samples")
    ordered = sorted(trajectory, key=lambda item: item[0])
    times = np.array([t for t, _ in ordered], dtype=float)
    energies: List[float] = []
    transfers: List[float] = []
    for _, field in ordered:
        energy, transfer = energy_transfer(to_physical(field), eps, kernel)
        energies.append(energy)
        transfers.append(transfer)

    change = energies[-1] - energies[0]
    transfer_integral = float(integrate.trapezoid(transfers, times))
    absolute = abs(change - transfer_integral)
    if energies[0] > 0:
        residual = absolute / energies[0]
    else:
        residual = 0.0 if absolute == 0.0 else math.inf
    return {
        'residual': residual,
        'absolute': absolute,
        'energy_change': change,
        'transfer_integral': transfer_integral,
        'times': times.tolist(),
        'energies': energies,
        'transfers': transfers,
    }


def galilean_offset(u: PhysicalField, velocity: Sequence[float]) -> PhysicalField:
    """u + c, c 为常速度"""
    c = np.asarray(velocity, dtype=float).reshape(3, 1, 1, 1)
    return PhysicalField(u.grid, u.values + c)


def psd_violation(bundle: CommutatorBundle) -> float:
    """r_ε 与粗糙部分的最小特征值(负数即违反), 相对于张量尺度"""
    scale = bundle.scale
    worst = min(min_eigenvalue(bundle.remainder), min_eigenvalue(bundle.rough_part))
    return worst / scale if scale > 0 else worst


def trace_field(tensor: PhysicalField) -> np.ndarray:
    values = tensor.values
    return values[0] + values[4] + values[8]
