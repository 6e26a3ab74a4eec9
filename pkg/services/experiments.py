#!/usr/bin/env python3
"""
实验编排
- 能流标度 (I1+I2 随 ε 的衰减)
- 梯度条件标度 (I1 随 ε 的衰减, p 取容许区间中点)
- 消失黏性扫描 (亏损随 ν 的衰减, ε(ν) 耦合)
"""

import concurrent.futures
import logging
import math
import time
from dataclasses import asdict, dataclass, field as dataclass_field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from core.besov import (
    SyntheticFieldSpec, besov_norm, fit_regularity, sobolev_norm, time_lebesgue_norm,
)
from core.commutator import check_solenoidal, flux_floor, flux_scaling, flux_terms, signed_fluxes
from core.exponents import coupling_exponent, thm1_parameters, thm2_midpoint, thm3_rates
from core.field import GridSpec, PhysicalField, gradient, lebesgue_norm
from core.mollify import MollifierKernel, is_resolved, mollify
from core.solver import SolverConfig, Trajectory, initial_field, run
from models.storage import read_snapshot
from utils.fitting import DEGENERATE, FAIL, PASS, loglog_fit, slope_verdict

try:
    from config import PARALLEL_RUNS, TOLERANCES
    MAX_WORKERS = PARALLEL_RUNS['max_workers']
except ImportError:
    MAX_WORKERS = 2
    TOLERANCES = {'flux_slope_slack': 0.15, 'defect_slope_slack': 0.2, 'min_scaling_points': 4}

logger = logging.getLogger(__name__)

HYPOTHESIS_NOT_MET = 'HYPOTHESIS_NOT_MET'


# ==================== 场族 ====================

@dataclass
class FieldSpec:
    """
    实验用的场

    family: taylor_green | evolved_taylor_green | shear | synthetic | snapshot
    """
    family: str = 'synthetic'
    n: int = 32
    amplitude: float = 1.0
    synthetic: SyntheticFieldSpec = dataclass_field(default_factory=SyntheticFieldSpec)
    path: Optional[str] = None
    evolve_time: float = 1.0
    evolve_dt: float = 1e-2

    @classmethod
    def from_dict(cls, data: Dict) -> 'FieldSpec':
        return cls(
            family=data.get('family', data.get('init', 'synthetic')),
            n=int(data.get('n', data.get('grid', 32))),
            amplitude=float(data.get('amplitude', 1.0)),
            synthetic=SyntheticFieldSpec.from_dict(data.get('synthetic', data)),
            path=data.get('path'),
            evolve_time=float(data.get('evolve_time', 1.0)),
            evolve_dt=float(data.get('evolve_dt', 1e-2)),
        )


def build_field(spec: FieldSpec) -> PhysicalField:
    """
    构造实验场

    evolved_taylor_green: Taylor-Green 初值在 Euler 下推进 evolve_time,
    离开单一波壳, 能流不再恒为零
    """
    if spec.family == 'snapshot':
        if not spec.path:
            raise ValueError("snapshot family needs a path")
        return read_snapshot(spec.path)

    grid = GridSpec(spec.n)
    if spec.family == 'evolved_taylor_green':
        v0 = initial_field(grid, 'taylor_green', spec.amplitude)
        config = SolverConfig(nu=0.0, dt=spec.evolve_dt, T=spec.evolve_time, output_stride=10 ** 9)
        return run(v0, config, keep_fields=False).final
    return initial_field(grid, spec.family, spec.amplitude, spec.synthetic)


# ==================== 能流标度 ====================

def _trajectory_fluxes(trajectory: Trajectory, eps_list: Sequence[float],
                       kernel: Optional[MollifierKernel]) -> List[Dict]:
    rows = []
    times = np.array(trajectory.times, dtype=float)
    for eps in eps_list:
        rough, remainder = zip(*(signed_fluxes(v, eps, kernel) for v in trajectory.fields))
        I1 = abs(float(integrate.trapezoid(rough, times)))
        I2 = abs(float(integrate.trapezoid(remainder, times)))
        rows.append({'eps': eps, 'I1': I1, 'I2': I2, 'total': I1 + I2})
    return rows


def run_flux_scaling(alpha: float, beta: float, field: Union[PhysicalField, FieldSpec],
                     eps_list: Sequence[float], kernel: Optional[MollifierKernel] = None,
                     trajectory: Optional[Trajectory] = None) -> Dict:
    """
    能流标度实验

    Args:
        alpha, beta: 假设的指数 (1/3 < α < β < 1)
        field: 场或场族描述
        eps_list: 光滑化尺度
        trajectory: 可选的求解器轨迹, 用于时间复合范数与时间积分能流

    Returns:
        报告 dict, verdict ∈ {PASS, FAIL, DEGENERATE, HYPOTHESIS_NOT_MET}
    """
    params = thm1_parameters(alpha, beta)
    u = build_field(field) if isinstance(field, FieldSpec) else field
    check_solenoidal(u)

    regularity = fit_regularity(u, q=params.q)
    beta_hat = regularity['beta_hat']
    report = {
        'alpha': params.alpha,
        'beta': params.beta,
        'q': params.q,
        'eta': params.eta,
        'beta_hat': beta_hat,
        'regularity_r2': regularity['r2'],
    }

    if regularity['degenerate'] or math.isnan(beta_hat):
        # 常数场: 所有差分为零
        report.update({'verdict': DEGENERATE, 'slope': math.nan, 'rows': []})
        return report
    if beta_hat <= params.alpha:
        logger.info(f"[能流标度] beta_hat={beta_hat:.3f} <= alpha={params.alpha}, 假设不成立")
        report.update({'verdict': HYPOTHESIS_NOT_MET, 'slope': math.nan, 'rows': []})
        return report

    effective_beta = min(beta_hat, 1.0)
    scaling = flux_scaling(u, effective_beta, eps_list, alpha=params.alpha, kernel=kernel)
    report.update({
        'slope': scaling['slope'],
        'intercept': scaling['intercept'],
        'r2': scaling['r2'],
        'predicted': scaling['predicted'],
        'threshold': scaling['threshold'] - scaling['slack'],
        'verdict': scaling['verdict'],
        'rows': [r.as_row() for r in scaling['reports']],
    })

    if trajectory is not None:
        series = [(t, besov_norm(v, params.beta, params.q)) for t, v in trajectory.samples()]
        report['time_norm'] = time_lebesgue_norm(series, params.time_exponent)
        time_rows = _trajectory_fluxes(trajectory, scaling['eps'], kernel)
        time_fit = loglog_fit([r['eps'] for r in time_rows], [r['total'] for r in time_rows],
                              floor=flux_floor(u) * trajectory.times[-1])
        report['time_integrated'] = {
            'rows': time_rows,
            'slope': time_fit['slope'],
            'r2': time_fit['r2'],
            'verdict': DEGENERATE if time_fit['degenerate'] else slope_verdict(
                time_fit['slope'], scaling['threshold'], scaling['slack']),
        }
    return report


# ==================== 梯度条件标度 ====================

def run_gradient_scaling(q: float, field: Union[PhysicalField, FieldSpec], eps_list: Sequence[float],
                         kernel: Optional[MollifierKernel] = None) -> Dict:
    """
    I1 随 ε 的衰减与 p 取区间中点时的预测指数比较

    Raises:
        ValueError: q <= 2, 或已分辨的 ε 少于 min_scaling_points
    """
    params = thm2_midpoint(q)
    u = build_field(field) if isinstance(field, FieldSpec) else field
    check_solenoidal(u)

    resolved = sorted({float(e) for e in eps_list if is_resolved(float(e), u.grid)}, reverse=True)
    minimum = TOLERANCES['min_scaling_points']
    if len(resolved) < minimum:
        raise ValueError(f"gradient scaling needs at least {minimum} resolved eps values, got {len(resolved)}")

    workers = min(MAX_WORKERS, len(resolved))
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        reports = list(executor.map(lambda e: flux_terms(u, e, kernel), resolved))

    fit = loglog_fit(resolved, [r.I1 for r in reports], floor=flux_floor(u))
    slack = TOLERANCES['flux_slope_slack']
    verdict = DEGENERATE if fit['degenerate'] else slope_verdict(fit['slope'], params.eps_exponent, slack)
    return {
        'q': params.q,
        'p': params.p,
        'p_lower': params.p_lower,
        'p_upper': params.p_upper,
        'theta': params.theta,
        'r_critical': params.r_critical,
        'predicted': params.eps_exponent,
        'gradient_norm': lebesgue_norm(gradient(u), q),
        'slope': fit['slope'],
        'r2': fit['r2'],
        'threshold': params.eps_exponent - slack,
        'verdict': verdict,
        'rows': [r.as_row() for r in reports],
    }


# ==================== 消失黏性扫描 ====================

@dataclass
class SweepConfig:
    """
    ν 扫描配置

    coupling: 'auto' | 'low' | 'high' | 显式 ε 指数
    eps_prefactor: ε(ν) = c ν^e 中的 c, 默认使 ε(ν_max) = 1
    measurement_floor: 亏损低于 floor·½||v0||² 视为不可测
    hypothesis: 'besov' 测 L^{1/α}(B^β_{q,∞}), 'gradient' 测 L^r(W^{1,q})
    """
    alpha: float
    beta: float
    nu_list: List[float]
    coupling: Union[str, float] = 'auto'
    n: int = 32
    dt: float = 1e-3
    T: float = 1.0
    init: str = 'taylor_green'
    amplitude: float = 1.0
    seed: int = 0
    synthetic: Dict = dataclass_field(default_factory=dict)
    output_stride: int = 10
    eps_prefactor: Optional[float] = None
    uniform_bound_C: Optional[float] = None
    measurement_floor: float = 1e-10
    besov_stride: int = 1
    hypothesis: str = 'besov'
    gradient_q: float = 3.0
    gradient_r: Optional[float] = None
    max_workers: Optional[int] = None

    def __post_init__(self):
        self.nu_list = [float(nu) for nu in self.nu_list]
        if len(self.nu_list) < TOLERANCES['min_scaling_points']:
            raise ValueError(
                f"nu_list needs at least {TOLERANCES['min_scaling_points']} values, got {len(self.nu_list)}")
        if any(nu <= 0 for nu in self.nu_list):
            raise ValueError("viscosities must be positive")
        if any(b >= a for a, b in zip(self.nu_list, self.nu_list[1:])):
            raise ValueError("nu_list must be strictly decreasing")
        if self.hypothesis not in ('besov', 'gradient'):
            raise ValueError(f"unknown hypothesis: {self.hypothesis!r}")
        if int(self.besov_stride) < 1:
            raise ValueError("besov_stride must be >= 1")

    @classmethod
    def from_dict(cls, data: Dict) -> 'SweepConfig':
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in data.items() if k in known and v is not None}
        if 'grid' in data and 'n' not in kwargs:
            kwargs['n'] = int(data['grid'])
        return cls(**kwargs)

    def as_dict(self) -> Dict:
        return asdict(self)


@dataclass
class SweepResult:
    config: SweepConfig
    rates: Dict
    coupling_exponent: float
    eps_prefactor: float
    rows: List[Dict]
    fit: Dict
    verdicts: Dict
    notes: List[str]
    max_time_norm: Optional[float]

    @property
    def usable_rows(self) -> List[Dict]:
        return [r for r in self.rows if r['status'] == 'ok']

    def as_dict(self) -> Dict:
        return {
            'config': self.config.as_dict(),
            'rates': self.rates,
            'coupling_exponent': self.coupling_exponent,
            'eps_prefactor': self.eps_prefactor,
            'rows': self.rows,
            'fit': self.fit,
            'verdicts': self.verdicts,
            'notes': self.notes,
            'max_time_norm': self.max_time_norm,
        }


def _mollified_dissipation(trajectory: Trajectory, nu: float, eps: float,
                           kernel: Optional[MollifierKernel]) -> float:
    """ν ∫ ||∇v_ε||² dt, 梯形公式"""
    values = []
    for v in trajectory.fields:
        g = lebesgue_norm(gradient(mollify(v, eps, kernel)), 2)
        values.append(g * g)
    return nu * float(integrate.trapezoid(values, trajectory.times))


def _hypothesis_norm(trajectory: Trajectory, config: SweepConfig, params) -> float:
    samples = trajectory.samples()
    # 末样本总参与时间积分
    chosen = samples[::config.besov_stride]
    if chosen[-1][0] != samples[-1][0]:
        chosen.append(samples[-1])
    if config.hypothesis == 'besov':
        series = [(t, besov_norm(v, config.beta, params.q)) for t, v in chosen]
        return time_lebesgue_norm(series, params.time_exponent)
    q = config.gradient_q
    r = config.gradient_r or 1.1 * thm2_midpoint(q).r_critical
    series = [(t, sobolev_norm(v, q)) for t, v in chosen]
    return time_lebesgue_norm(series, r)


def run_viscosity_sweep(config: SweepConfig, kernel: Optional[MollifierKernel] = None,
                        progress=None) -> SweepResult:
    """
    消失黏性扫描

    所有 ν 共用同一初值; ε(ν) 分辨不足的 ν 跳过并记录;
    亏损斜率 >= defect_exponent - slack, 或亏损低于测量下限, 判为 PASS

    Raises:
        ValueError: 可用 ν 少于 min_scaling_points
    """
    rates = thm3_rates(config.alpha, config.beta)
    params = thm1_parameters(config.alpha, config.beta)
    exponent = coupling_exponent(config.alpha, config.beta, config.coupling)
    prefactor = config.eps_prefactor or config.nu_list[0] ** (-exponent)
    grid = GridSpec(config.n)
    notes: List[str] = []

    synthetic = SyntheticFieldSpec.from_dict({'seed': config.seed, **config.synthetic})
    v0 = initial_field(grid, config.init, config.amplitude, synthetic)
    kinetic0 = 0.5 * lebesgue_norm(v0, 2) ** 2

    plan = []
    for nu in config.nu_list:
        eps = prefactor * nu ** exponent
        if is_resolved(eps, grid):
            plan.append((nu, eps))
        else:
            notes.append(f"nu={nu:g} skipped: eps={eps:.4g} outside [2h, 1] (h={grid.h:.4g})")
            logger.warning(f"[扫描] 跳过 nu={nu:g}, eps={eps:.4g} 分辨不足")

    minimum = TOLERANCES['min_scaling_points']
    if len(plan) < minimum:
        raise ValueError(f"only {len(plan)} usable viscosities (need {minimum}); "
                         f"raise the resolution or lower the coupling exponent")

    def one_run(nu: float, eps: float) -> Dict:
        solver_config = SolverConfig(nu=nu, dt=config.dt, T=config.T, output_stride=config.output_stride)
        trajectory = run(v0, solver_config)
        kinetic_T = trajectory.budget.samples[-1].kinetic
        norm = _hypothesis_norm(trajectory, config, params)
        return {
            'nu': nu,
            'eps': eps,
            'status': 'ok',
            'defect': abs(kinetic_T - kinetic0),
            'dissipation': _mollified_dissipation(trajectory, nu, eps, kernel),
            'dissipation_proxy': nu ** rates.dissipation['nu'] * eps ** rates.dissipation['eps'],
            'besov_time_norm': norm,
            'budget_residual': trajectory.budget.max_relative_residual,
        }

    results: Dict[float, Dict] = {}
    workers = min(len(plan), config.max_workers or MAX_WORKERS)
    logger.info(f"[扫描] {len(plan)} 个 nu, 使用 {workers} 个线程")
    start_time = time.time()
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(one_run, nu, eps): nu for nu, eps in plan}
        for future in concurrent.futures.as_completed(futures):
            nu = futures[future]
            results[nu] = future.result()
            if progress:
                progress(nu, results[nu])
            logger.info(f"[扫描] nu={nu:g} 完成, defect={results[nu]['defect']:.4e}")
    logger.info(f"[扫描] 耗时 {time.time() - start_time:.1f} 秒")

    rows = []
    for nu in config.nu_list:
        if nu in results:
            rows.append(results[nu])
        else:
            rows.append({'nu': nu, 'eps': prefactor * nu ** exponent, 'status': 'skipped',
                         'defect': math.nan, 'dissipation': math.nan, 'dissipation_proxy': math.nan,
                         'besov_time_norm': math.nan, 'budget_residual': math.nan})

    usable = [r for r in rows if r['status'] == 'ok']
    floor = config.measurement_floor * kinetic0
    fit = loglog_fit([r['nu'] for r in usable], [r['defect'] for r in usable], floor=floor)
    slack = TOLERANCES['defect_slope_slack']
    if fit['degenerate']:
        defect_verdict = PASS
        notes.append("all defects below the measurement floor")
    else:
        defect_verdict = slope_verdict(fit['slope'], rates.defect_exponent, slack)

    max_norm = max(r['besov_time_norm'] for r in usable)
    if config.uniform_bound_C is None:
        bound_verdict = 'UNCHECKED'
    else:
        bound_verdict = PASS if max_norm <= config.uniform_bound_C else FAIL

    verdicts = {
        'defect': defect_verdict,
        'uniform_bound': bound_verdict,
        'overall': defect_verdict,
    }
    fit = {**fit, 'predicted': rates.defect_exponent, 'threshold': rates.defect_exponent - slack}
    return SweepResult(
        config=config,
        rates=rates.as_dict(),
        coupling_exponent=exponent,
        eps_prefactor=prefactor,
        rows=rows,
        fit=fit,
        verdicts=verdicts,
        notes=notes,
        max_time_norm=max_norm,
    )


def verdict_exit_code(verdict: str) -> int:
    """PASS/完成 -> 0, FAIL -> 2"""
    return 2 if verdict == FAIL else 0
