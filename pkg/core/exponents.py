#!/usr/bin/env python3
"""
指数计算器
- 能流定理: 约束系统 {βη+β-1>0, η<q-1, (2-η)q/(q-(1+η))=2} 及其解
- 梯度条件定理: p 的容许区间、插值指数 θ、临界时间指数
- 消失黏性定理: ε(ν) 耦合与亏损速率

双精度求值, 并用 fractions.Fraction 做精确有理数复核
"""

import logging
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Dict, Optional, Union

logger = logging.getLogger(__name__)

Number = Union[float, int, Fraction]

# 浮点与精确值之间允许的相对偏差
_CROSS_CHECK_RTOL = 1e-12


def _exact(x: Number) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def _cross_check(name: str, approx: float, exact: Fraction) -> float:
    """浮点结果与精确值比对, 偏差过大时告警并采用精确值的舍入"""
    rounded = float(exact)
    if abs(approx - rounded) > _CROSS_CHECK_RTOL * max(1.0, abs(rounded)):
        logger.warning(f"[指数] {name}: 浮点 {approx!r} 与精确值 {rounded!r} 不一致, 使用精确值")
    return rounded


def _check_alpha_beta(alpha: Number, beta: Number):
    a, b = _exact(alpha), _exact(beta)
    if not a > Fraction(1, 3):
        raise ValueError(f"constraint alpha > 1/3 violated: alpha={float(a)}")
    if not a < 1:
        raise ValueError(f"constraint alpha < 1 violated: alpha={float(a)}")
    if not b > a:
        raise ValueError(f"constraint beta > alpha violated: alpha={float(a)}, beta={float(b)}")
    if not b < 1:
        raise ValueError(f"constraint beta < 1 violated: beta={float(b)}")


# ==================== 能流定理 ====================

@dataclass(frozen=True)
class Thm1Params:
    alpha: float
    beta: float
    eta: float
    q: float
    flux_exponent: float        # βη + β - 1 = (β-α)/α
    eta_margin: float           # q - 1 - η > 0
    balance: float              # (2-η)q/(q-(1+η)), 恒为 2
    time_exponent: float        # 1/α
    space_exponent: float       # 2/(1-α)
    besov_power: float          # 半范数在时间积分中的幂 η+1 = 1/α

    def as_dict(self) -> Dict:
        return asdict(self)


def thm1_constraints(beta: Number, eta: Number, q: Number) -> Dict:
    """
    对任意候选 (β, η, q) 求约束系统的三项

    Returns:
        {'flux': βη+β-1, 'eta_margin': q-1-η, 'balance': (2-η)q/(q-(1+η)), 'feasible': bool}
    """
    b, e, qq = _exact(beta), _exact(eta), _exact(q)
    flux = b * e + b - 1
    margin = qq - 1 - e
    denominator = qq - (1 + e)
    balance = (2 - e) * qq / denominator if denominator != 0 else None
    return {
        'flux': float(flux),
        'eta_margin': float(margin),
        'balance': None if balance is None else float(balance),
        'feasible': flux > 0 and margin > 0 and balance == 2,
    }


def thm1_parameters(alpha: Number, beta: Number) -> Thm1Params:
    """
    η = (1-α)/α, q = 2/(1-α)

    Raises:
        ValueError: α <= 1/3, β <= α 或 β >= 1
    """
    _check_alpha_beta(alpha, beta)
    a, b = _exact(alpha), _exact(beta)
    eta = (1 - a) / a
    q = 2 / (1 - a)
    checks = thm1_constraints(b, eta, q)

    af, bf = float(alpha), float(beta)
    return Thm1Params(
        alpha=af,
        beta=bf,
        eta=_cross_check('eta', (1.0 - af) / af, eta),
        q=_cross_check('q', 2.0 / (1.0 - af), q),
        flux_exponent=_cross_check('flux_exponent', (bf - af) / af, b * eta + b - 1),
        eta_margin=checks['eta_margin'],
        balance=checks['balance'],
        time_exponent=_cross_check('time_exponent', 1.0 / af, 1 / a),
        space_exponent=float(q),
        besov_power=float(eta + 1),
    )


# ==================== 梯度条件定理 ====================

@dataclass(frozen=True)
class Thm2Params:
    q: float
    p_lower: float
    p_upper: float
    r_critical: float
    p: Optional[float] = None
    p_conjugate: Optional[float] = None
    theta: Optional[float] = None
    eps_exponent: Optional[float] = None
    time_exponent: Optional[float] = None

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.p_lower + self.p_upper)

    def as_dict(self) -> Dict:
        data = asdict(self)
        data['midpoint'] = self.midpoint
        return data


def _thm2_interval(q: Fraction):
    lower = (5 * q - 6) * q / (5 * q * q - 9 * q + 6)
    upper = min(q / 2, q / (q - 1))
    return lower, upper


def thm2_parameters(q: Number, p: Optional[Number] = None) -> Thm2Params:
    """
    p 的容许区间 ((5q-6)q/(5q²-9q+6), min{q/2, q/(q-1)}) 与临界指数 r = 5q/(5q-6)

    给定 p 时另返回 θ, p', ε 指数 2q(p-1)/(p(q-2)) - 3(1/q - 1/p') 与时间指数

    Raises:
        ValueError: q <= 2, 或 p 不在区间内
    """
    qq = _exact(q)
    if not qq > 2:
        raise ValueError(f"constraint q > 2 violated: q={float(qq)}")
    lower, upper = _thm2_interval(qq)
    r_critical = 5 * qq / (5 * qq - 6)
    qf = float(q)
    base = dict(
        q=qf,
        p_lower=_cross_check('p_lower', (5 * qf - 6) * qf / (5 * qf * qf - 9 * qf + 6), lower),
        p_upper=_cross_check('p_upper', min(qf / 2, qf / (qf - 1)), upper),
        r_critical=_cross_check('r_critical', 5 * qf / (5 * qf - 6), r_critical),
    )
    if p is None:
        return Thm2Params(**base)

    pp = _exact(p)
    if not pp > lower:
        raise ValueError(f"p={float(pp)} violates the lower bound p > {float(lower)}")
    if not pp < upper:
        raise ValueError(f"p={float(pp)} violates the upper bound p < {float(upper)}")

    conjugate = pp / (pp - 1)
    theta = (1 / (2 * pp) - 1 / qq) / (Fraction(1, 2) - 1 / qq)
    gradient_power = 2 * qq * (pp - 1) / (pp * (qq - 2))
    eps_exponent = gradient_power - 3 * (1 / qq - 1 / conjugate)
    return Thm2Params(
        **base,
        p=float(p),
        p_conjugate=float(conjugate),
        theta=float(theta),
        eps_exponent=float(eps_exponent),
        time_exponent=float(gradient_power + 1),
    )


def thm2_midpoint(q: Number) -> Thm2Params:
    """区间中点处的参数(梯度标度实验默认值)"""
    thm2_parameters(q)
    lower, upper = _thm2_interval(_exact(q))
    return thm2_parameters(q, (lower + upper) / 2)


# ==================== 消失黏性定理 ====================

@dataclass(frozen=True)
class Thm3Rates:
    alpha: float
    beta: float
    branch: str                     # 'low' (β <= 1/2) 或 'high'
    eps_exponent: float             # ε ~ ν^eps_exponent
    defect_exponent: float
    flux_exponent: float            # (β-α)/α
    dissipation: Dict[str, float]   # ν^a ε^b 的 {'nu': a, 'eps': b}
    straddles_half: bool

    @property
    def dissipation_nu_exponent(self) -> float:
        """把 ε = ν^e 代入耗散代理后的 ν 指数"""
        return self.dissipation['nu'] + self.dissipation['eps'] * self.eps_exponent

    def as_dict(self) -> Dict:
        data = asdict(self)
        data['dissipation_nu_exponent'] = self.dissipation_nu_exponent
        return data


def thm3_rates(alpha: Number, beta: Number) -> Thm3Rates:
    """
    β <= 1/2: ε ~ ν^{α/(α+β-2αβ)}, 亏损 O(ν^{(β-α)/(α-2αβ+β)}), 耗散代理 ν ε^{2(β-1)}
    β > 1/2:  ε ~ ν^{α/β},          亏损 O(ν^{(β-α)/β}),        耗散代理 ν ε^{-1}
    """
    _check_alpha_beta(alpha, beta)
    a, b = _exact(alpha), _exact(beta)
    half = Fraction(1, 2)
    straddles = a <= half < b
    if straddles:
        logger.warning(
            f"[指数] alpha={float(a)} 与 beta={float(b)} 位于 1/2 两侧, 按 beta 选择分支"
        )

    af, bf = float(alpha), float(beta)
    if b <= half:
        branch = 'low'
        eps_exponent = _cross_check('eps_exponent', af / (af + bf - 2 * af * bf), a / (a + b - 2 * a * b))
        defect = _cross_check('defect_exponent', (bf - af) / (af - 2 * af * bf + bf), (b - a) / (a - 2 * a * b + b))
        dissipation = {'nu': 1.0, 'eps': float(2 * (b - 1))}
    else:
        branch = 'high'
        eps_exponent = _cross_check('eps_exponent', af / bf, a / b)
        defect = _cross_check('defect_exponent', (bf - af) / bf, (b - a) / b)
        dissipation = {'nu': 1.0, 'eps': -1.0}

    return Thm3Rates(
        alpha=af,
        beta=bf,
        branch=branch,
        eps_exponent=eps_exponent,
        defect_exponent=defect,
        flux_exponent=float((b - a) / a),
        dissipation=dissipation,
        straddles_half=straddles,
    )


def coupling_exponent(alpha: Number, beta: Number, coupling: Union[str, float] = 'auto') -> float:
    """
    ε(ν) = c·ν^e 的指数 e

    Args:
        coupling: 'auto' 按 β 选分支, 'low'/'high' 强制分支公式, 或显式数值
    """
    if not isinstance(coupling, str):
        value = float(coupling)
        if not value > 0:
            raise ValueError(f"explicit coupling exponent must be positive, got {value}")
        return value
    rates = thm3_rates(alpha, beta)
    if coupling == 'auto':
        return rates.eps_exponent
    a, b = float(alpha), float(beta)
    if coupling == 'low':
        return a / (a + b - 2 * a * b)
    if coupling == 'high':
        return a / b
    raise ValueError(f"unknown coupling: {coupling!r}")
