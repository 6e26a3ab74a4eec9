#!/usr/bin/env python3
"""
伪谱不可压 Navier-Stokes / Euler 求解器
- 状态为无散的傅里叶系数, 压力由 Leray 投影消去
- 积分因子 RK4, 黏性项精确处理; 二次项 2/3 去混叠
- 在线能量收支: 动能 + 累积耗散 - 初始动能
"""

import logging
import math
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.fft as sfft

from core.besov import SyntheticFieldSpec, make_synthetic_field
from core.field import (
    DOMAIN_LENGTH, Field, GridSpec, PhysicalField, SpectralField,
    lebesgue_norm, to_spectral,
)

try:
    from config import PARALLEL_RUNS, SOLVER_DEFAULTS
    FFT_WORKERS = PARALLEL_RUNS['fft_workers']
except ImportError:
    FFT_WORKERS = 1
    SOLVER_DEFAULTS = {
        'dt': 1e-3, 'T': 1.0, 'output_stride': 10, 'cfl_factor': 0.5,
        'energy_growth_tol': 1e-6, 'divergence_tol': 1e-10,
    }

logger = logging.getLogger(__name__)

_SPATIAL = (-3, -2, -1)
_UPPER = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
_VOLUME = DOMAIN_LENGTH ** 3


class SolverAbort(RuntimeError):
    """时间推进中止(CFL、NaN、能量增长), 携带步号"""

    def __init__(self, step: int, reason: str):
        super().__init__(f"solver aborted at step {step}: {reason}")
        self.step = step
        self.reason = reason


@dataclass
class SolverConfig:
    """
    求解器参数

    nu = 0 为 Euler; T 必须是 dt 的整数倍
    """
    nu: float = 0.0
    dt: float = SOLVER_DEFAULTS['dt']
    T: float = SOLVER_DEFAULTS['T']
    output_stride: int = SOLVER_DEFAULTS['output_stride']
    cfl_factor: float = SOLVER_DEFAULTS['cfl_factor']
    energy_growth_tol: float = SOLVER_DEFAULTS['energy_growth_tol']
    dealias: bool = True
    integrator: str = 'if-rk4'

    def __post_init__(self):
        if not self.nu >= 0:
            raise ValueError(f"viscosity must be non-negative, got {self.nu}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if int(self.output_stride) < 1:
            raise ValueError(f"output_stride must be >= 1, got {self.output_stride}")
        if not self.dealias:
            raise ValueError("dealiasing cannot be switched off")
        if self.integrator != 'if-rk4':
            raise ValueError(f"unknown integrator: {self.integrator!r}")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"T={self.T} is not a multiple of dt={self.dt}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @classmethod
    def from_dict(cls, data: Dict) -> 'SolverConfig':
        keys = ('nu', 'dt', 'T', 'output_stride', 'cfl_factor', 'energy_growth_tol')
        kwargs = {k: data[k] for k in keys if data.get(k) is not None}
        if 'output_stride' in kwargs:
            kwargs['output_stride'] = int(kwargs['output_stride'])
        return cls(**kwargs)


@dataclass
class BudgetSample:
    t: float
    kinetic: float
    dissipation_cum: float
    residual: float


@dataclass
class EnergyBudget:
    """能量收支时间序列, residual = kinetic + dissipation_cum - 初始动能"""
    initial_kinetic: float
    samples: List[BudgetSample] = dataclass_field(default_factory=list)

    def record(self, t: float, kinetic: float, dissipation_cum: float):
        residual = kinetic + dissipation_cum - self.initial_kinetic
        self.samples.append(BudgetSample(t, kinetic, dissipation_cum, residual))

    @property
    def max_relative_residual(self) -> float:
        if not self.samples:
            return 0.0
        worst = max(abs(s.residual) for s in self.samples)
        if self.initial_kinetic > 0:
            return worst / self.initial_kinetic
        return worst

    def energy_inequality_holds(self, tol: float = 1e-6) -> bool:
        """½||v(t)||² + ν∫||∇v||² <= ½||v0||² + tol·½||v0||² 在每个样本成立"""
        slack = tol * max(self.initial_kinetic, 1e-300)
        return all(s.residual <= slack for s in self.samples)

    def rows(self) -> List[Dict]:
        return [
            {'t': s.t, 'kinetic': s.kinetic, 'dissipation_cum': s.dissipation_cum, 'residual': s.residual}
            for s in self.samples
        ]


@dataclass
class Trajectory:
    """采样时刻的速度场与能量收支"""
    grid: GridSpec
    config: SolverConfig
    times: List[float]
    fields: List[PhysicalField]
    budget: EnergyBudget
    initial_attainment: float = 0.0

    def samples(self) -> List[Tuple[float, PhysicalField]]:
        return list(zip(self.times, self.fields))

    @property
    def final(self) -> PhysicalField:
        return self.fields[-1]


class SpectralNavierStokes:
    """
    dU/dt = -P D(i k_j (u_i u_j)^) - ν|k|² U

    D 为 2/3 截断, P 为 Leray 投影; 所有数组为 (3, n, n, n) 复系数
    """

    def __init__(self, grid: GridSpec, nu: float = 0.0):
        self.grid = grid
        self.nu = float(nu)
        self.k = grid.k
        self.k2 = grid.k_squared
        self.mask = grid.dealias_mask
        self.k_over_k2 = self.k / np.where(self.k2 == 0, 1.0, self.k2)

    def velocity(self, U: np.ndarray) -> np.ndarray:
        return sfft.ifftn(U, axes=_SPATIAL, norm='forward', workers=FFT_WORKERS).real

    def project(self, W: np.ndarray) -> np.ndarray:
        return W - self.k * np.sum(self.k_over_k2 * W, axis=0)[None]

    def nonlinear(self, U: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        -P ∇·(u⊗u), 返回 (非线性项, 物理速度)
        """
        u = self.velocity(U * self.mask[None])
        W = np.zeros_like(U, dtype=complex)
        for i, j in _UPPER:
            product = sfft.fftn(u[i] * u[j], norm='forward', workers=FFT_WORKERS) * self.mask
            W[i] += 1j * self.k[j] * product
            if i != j:
                W[j] += 1j * self.k[i] * product
        return -self.project(W), u

    def rhs(self, U: np.ndarray) -> np.ndarray:
        N, _ = self.nonlinear(U)
        return N - self.nu * self.k2[None] * U

    def step(self, U: np.ndarray, k1: np.ndarray, dt: float) -> np.ndarray:
        """
        积分因子 RK4, E = exp(-ν|k|² dt/2)

        k1 是 U 处已算好的非线性项
        """
        E = np.exp(-self.nu * self.k2 * dt / 2.0)[None]
        E2 = E * E
        k2, _ = self.nonlinear(E * (U + 0.5 * dt * k1))
        k3, _ = self.nonlinear(E * U + 0.5 * dt * k2)
        k4, _ = self.nonlinear(E2 * U + dt * E * k3)
        return E2 * U + dt / 6.0 * (E2 * k1 + 2.0 * E * (k2 + k3) + k4)

    # ----- 收支量 -----

    @staticmethod
    def kinetic(U: np.ndarray) -> float:
        """½||v||² (Parseval)"""
        return float(0.5 * _VOLUME * np.sum(np.abs(U) ** 2))

    def gradient_energy(self, U: np.ndarray) -> float:
        """||∇v||²"""
        return float(_VOLUME * np.sum(self.k2[None] * np.abs(U) ** 2))

    def gradient_energy_rate(self, U: np.ndarray, N: np.ndarray) -> float:
        """d/dt ||∇v||², 用精确的时间导数 N - ν|k|²U"""
        Ut = N - self.nu * self.k2[None] * U
        return float(2.0 * _VOLUME * np.sum(self.k2[None] * np.real(np.conj(U) * Ut)))

    def divergence_defect(self, U: np.ndarray) -> float:
        """max|k·U| / max(1, max|k||U|)"""
        div = np.abs(np.sum(self.k * U, axis=0))
        scale = float(np.max(np.sqrt(self.k2)[None] * np.abs(U))) if U.size else 0.0
        return float(np.max(div)) / max(1.0, scale)


def _vector_coefficients(v: Field) -> np.ndarray:
    F = to_spectral(v)
    if F.components != 3:
        raise ValueError(f"velocity must be a vector field, got {F.components} components")
    return np.array(F.coefficients)


def rhs(v: Field, nu: float = 0.0) -> SpectralField:
    """
    -P∇·(v⊗v) + ν Δv 的谱系数

    Raises:
        ValueError: 输入散度超过 divergence_tol
    """
    if nu < 0:
        raise ValueError(f"viscosity must be non-negative, got {nu}")
    U = _vector_coefficients(v)
    solver = SpectralNavierStokes(v.grid, nu)
    defect = solver.divergence_defect(U)
    if defect > SOLVER_DEFAULTS['divergence_tol']:
        raise ValueError(f"velocity is not divergence-free: relative divergence {defect:.3e}")
    return SpectralField(v.grid, solver.rhs(U))


def run(v0: Field, config: SolverConfig, keep_fields: bool = True,
        progress: Optional[Callable[[int, float], None]] = None) -> Trajectory:
    """
    从 v0 推进到 T

    Args:
        v0: 无散、零均值的速度场
        config: 求解器参数
        keep_fields: False 时只保留首末两个速度场(长扫描节省内存)
        progress: 回调 progress(step, t)

    Returns:
        Trajectory (每 output_stride 步采样一次, 末步总被采样)

    Raises:
        ValueError: v0 非无散或均值非零
        SolverAbort: CFL 违反、NaN、单步动能增长超过 energy_growth_tol
    """
    grid = v0.grid
    solver = SpectralNavierStokes(grid, config.nu)
    U = _vector_coefficients(v0)

    defect = solver.divergence_defect(U)
    if defect > SOLVER_DEFAULTS['divergence_tol']:
        raise ValueError(f"initial datum is not divergence-free: relative divergence {defect:.3e}")
    mean_scale = max(1.0, float(np.max(np.abs(U))))
    if np.max(np.abs(U[:, 0, 0, 0])) > 1e-12 * mean_scale:
        raise ValueError("initial datum must have zero mean (k=0 mode)")

    truncated = U * solver.mask[None]
    lost = solver.kinetic(U) - solver.kinetic(truncated)
    if lost > 1e-12 * max(solver.kinetic(U), 1e-300):
        logger.warning(f"[求解器] 初值含 2/3 截断以外的模态, 截断丢失动能 {lost:.3e}")
    U = truncated

    dt = config.dt
    h = grid.h
    budget = EnergyBudget(initial_kinetic=solver.kinetic(U))
    U0 = U.copy()

    N, u = solver.nonlinear(U)
    kinetic = budget.initial_kinetic
    G = solver.gradient_energy(U)
    Gp = solver.gradient_energy_rate(U, N)
    dissipation = 0.0

    times = [0.0]
    fields = [PhysicalField(grid, u)]
    budget.record(0.0, kinetic, 0.0)
    attainment = None

    n_steps = config.n_steps
    for step in range(1, n_steps + 1):
        vmax = float(np.max(np.sqrt(np.sum(u ** 2, axis=0))))
        if vmax > 0 and dt > config.cfl_factor * h / vmax:
            raise SolverAbort(step, f"CFL violated: dt={dt:.3e} > {config.cfl_factor}*h/max|v|="
                                    f"{config.cfl_factor * h / vmax:.3e}")

        U_next = solver.step(U, N, dt)
        if not np.all(np.isfinite(U_next)):
            raise SolverAbort(step, "non-finite values detected")
        kinetic_next = solver.kinetic(U_next)
        if kinetic_next > kinetic * (1.0 + config.energy_growth_tol) and kinetic_next > 0:
            raise SolverAbort(step, f"kinetic energy grew from {kinetic:.12e} to {kinetic_next:.12e}")

        N_next, u_next = solver.nonlinear(U_next)
        G_next = solver.gradient_energy(U_next)
        Gp_next = solver.gradient_energy_rate(U_next, N_next)
        # 梯形 + 端点导数修正
        dissipation += config.nu * (0.5 * dt * (G + G_next) + dt * dt / 12.0 * (Gp - Gp_next))

        U, N, u = U_next, N_next, u_next
        kinetic, G, Gp = kinetic_next, G_next, Gp_next
        t = step * dt

        if step % config.output_stride == 0 or step == n_steps:
            budget.record(t, kinetic, dissipation)
            field = PhysicalField(grid, u)
            if attainment is None:
                attainment = math.sqrt(2.0 * solver.kinetic(U - U0))
            if keep_fields or step == n_steps:
                times.append(t)
                fields.append(field)
            if progress:
                progress(step, t)

    logger.info(f"[求解器] 完成 {n_steps} 步, nu={config.nu:g}, "
                f"收支相对残差={budget.max_relative_residual:.3e}")
    return Trajectory(
        grid=grid,
        config=config,
        times=times,
        fields=fields,
        budget=budget,
        initial_attainment=attainment or 0.0,
    )


# ==================== 初值 ====================

def taylor_green(grid: GridSpec, amplitude: float = 1.0) -> PhysicalField:
    """A(sin x cos y cos z, -cos x sin y cos z, 0), 动能 A²π³"""
    return PhysicalField.from_function(grid, lambda x, y, z: amplitude * np.stack([
        np.sin(x) * np.cos(y) * np.cos(z),
        -np.cos(x) * np.sin(y) * np.cos(z),
        np.zeros_like(x),
    ]))


def shear_flow(grid: GridSpec, amplitude: float = 1.0) -> PhysicalField:
    """(A sin x2, 0, 0), Navier-Stokes 的精确解 e^{-νt} v0"""
    return PhysicalField.from_function(grid, lambda x, y, z: amplitude * np.stack([
        np.sin(y), np.zeros_like(y), np.zeros_like(y),
    ]))


def random_leray_hopf_data(grid: GridSpec, spec: SyntheticFieldSpec) -> PhysicalField:
    return make_synthetic_field(grid, spec)


def initial_field(grid: GridSpec, init: str, amplitude: float = 1.0,
                  synthetic: Optional[SyntheticFieldSpec] = None) -> PhysicalField:
    """按名称构造初值: taylor_green | shear | synthetic"""
    if init == 'taylor_green':
        return taylor_green(grid, amplitude)
    if init == 'shear':
        return shear_flow(grid, amplitude)
    if init == 'synthetic':
        field = random_leray_hopf_data(grid, synthetic or SyntheticFieldSpec())
        return field * amplitude
    raise ValueError(f"unknown initial datum: {init!r}")


def l2_distance(a: PhysicalField, b: PhysicalField) -> float:
    return lebesgue_norm(a - b, 2)
