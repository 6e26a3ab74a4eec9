#!/usr/bin/env python3
"""
光滑化测试 - 核质量、谱/求积两条路径、卷积不等式
"""

import math
import os
import sys

import numpy as np
import pytest
from scipy import integrate

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.besov import SyntheticFieldSpec, make_synthetic_field
from core.field import GridSpec, PhysicalField, divergence, gradient, lebesgue_norm, shift
from core.mollify import (
    MollifierKernel, QuadratureLattice, check_epsilon, default_kernel, kernel_mass,
    mollify, mollify_with_lattice, quadrature_discrepancy, verify_convolution_bounds,
)


def _sin_x1(grid):
    return PhysicalField.from_function(grid, lambda x, y, z: np.sin(x))


class TestKernel:
    """核测试"""

    def test_default_kernel_unit_mass(self):
        """归一化 bump 核质量为 1"""
        assert abs(kernel_mass(default_kernel()) - 1.0) < 1e-10

    def test_unnormalized_mass_matches_radial_integral(self):
        """未归一化核的质量等于 4π∫r²ρ(r)dr"""
        kernel = MollifierKernel(amplitude=1.0)
        oracle, _ = integrate.quad(lambda r: 4 * math.pi * r * r * math.exp(-1 / (1 - r * r)), 0, 1)
        assert math.isclose(kernel_mass(kernel), oracle, rel_tol=1e-10)

    def test_scaled_kernel_mass(self):
        assert abs(kernel_mass(default_kernel().scaled(2.0)) - 2.0) < 2e-10

    def test_tabulated_profile(self):
        """采样剖面同样归一化"""
        r = np.linspace(0.0, 1.0, 33)
        kernel = MollifierKernel((r, (1 - r ** 2) ** 2))
        assert abs(kernel_mass(kernel) - 1.0) < 1e-10
        assert kernel(1.5) == 0.0

    def test_rejects_unknown_profile(self):
        with pytest.raises(ValueError):
            MollifierKernel('gaussian')

    def test_fourier_at_zero_is_mass(self):
        kernel = default_kernel()
        assert abs(kernel.fourier(0.0) - 1.0) < 1e-12

    def test_profile_hash_depends_on_amplitude(self):
        kernel = default_kernel()
        assert kernel.profile_hash != kernel.scaled(2.0).profile_hash


class TestEpsilonGuard:
    """ε 范围检查"""

    def setup_method(self):
        self.grid = GridSpec(16)

    def test_rejects_out_of_range(self):
        for eps in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                check_epsilon(eps, self.grid)

    def test_rejects_unresolved(self):
        """ε < 2h 拒绝"""
        with pytest.raises(ValueError):
            check_epsilon(1.5 * self.grid.h, self.grid)

    def test_accepts_resolved(self):
        assert check_epsilon(1.0, self.grid) == 1.0


class TestMollify:
    """光滑化算子测试"""

    def setup_method(self):
        self.grid = GridSpec(16)

    def test_constant_is_fixed_point(self):
        c = PhysicalField(self.grid, np.full(self.grid.shape, 2.5))
        out = mollify(c, 0.8)
        assert np.max(np.abs(out.values - 2.5)) < 1e-12

    def test_single_mode_multiplier(self):
        """sin(x1) 乘以 ∫ρ(z)cos(εz1)dz"""
        eps = 0.8
        kernel = default_kernel()
        oracle, _ = integrate.quad(
            lambda r: 4 * math.pi * r * r * float(kernel(r)) * math.sin(eps * r) / (eps * r), 0, 1,
            epsabs=1e-14, epsrel=1e-12)
        f = _sin_x1(self.grid)
        out = mollify(f, eps)
        assert np.max(np.abs(out.values - oracle * f.values)) < 1e-10

    def test_preserves_divergence_free(self):
        u = make_synthetic_field(self.grid, SyntheticFieldSpec(seed=2))
        u_eps = mollify(u, 0.8)
        assert np.max(np.abs(divergence(u_eps).values)) < 1e-12

    def test_linear(self):
        u = make_synthetic_field(self.grid, SyntheticFieldSpec(seed=0))
        v = make_synthetic_field(self.grid, SyntheticFieldSpec(seed=1))
        lhs = mollify(u * 2.0 - v * 3.0, 0.8)
        rhs = mollify(u, 0.8) * 2.0 - mollify(v, 0.8) * 3.0
        assert np.max(np.abs(lhs.values - rhs.values)) < 1e-12 * max(u.scale, v.scale)

    def test_commutes_with_shift_and_gradient(self):
        u = make_synthetic_field(self.grid, SyntheticFieldSpec(seed=4))
        y = (0.3, -0.2, 0.5)
        a = mollify(shift(u, y), 0.8)
        b = shift(mollify(u, 0.8), y)
        assert np.max(np.abs(a.values - b.values)) < 1e-12
        g1 = mollify(gradient(u), 0.8)
        g2 = gradient(mollify(u, 0.8))
        assert np.max(np.abs(g1.values - g2.values)) < 1e-12 * max(1.0, g1.scale)

    def test_young_contraction(self):
        """||f_ε||_2 <= ||f||_2"""
        u = make_synthetic_field(self.grid, SyntheticFieldSpec(seed=5))
        assert lebesgue_norm(mollify(u, 0.8), 2) <= lebesgue_norm(u, 2) + 1e-12

    def test_error_decreases_with_eps(self):
        """光滑场上 ||f - f_ε||_2 随 ε 减小而减小"""
        grid = GridSpec(32)
        f = PhysicalField.from_function(grid, lambda x, y, z: np.sin(x) + 0.5 * np.cos(2 * y))
        errors = [lebesgue_norm(f - mollify(f, eps), 2) for eps in (1.0, 0.8, 0.5)]
        assert errors[0] >= errors[1] - 1e-12
        assert errors[1] >= errors[2] - 1e-12

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            mollify(_sin_x1(self.grid), 0.8, method='fft')


class TestQuadraturePath:
    """求积路径测试"""

    def setup_method(self):
        self.grid = GridSpec(16)

    def test_lattice_weights_have_kernel_mass(self):
        lattice = QuadratureLattice(self.grid, 1.0)
        assert abs(lattice.weights.sum() - 1.0) < 1e-12
        assert np.all(np.linalg.norm(lattice.shifts, axis=1) < 1.0)

    def test_grid_aligned_direct_sum_matches_multiplier(self):
        """整格点直接求和与乘子路径一致"""
        lattice = QuadratureLattice(self.grid, 1.0, refine=1)
        u = make_synthetic_field(self.grid, SyntheticFieldSpec(seed=3))
        direct = lattice.apply_direct(u)
        spectral = mollify_with_lattice(u, lattice)
        assert np.max(np.abs(direct.values - spectral.values)) < 1e-12 * max(1.0, u.scale)

    def test_direct_sum_needs_aligned_lattice(self):
        lattice = QuadratureLattice(self.grid, 1.0, refine=2)
        with pytest.raises(ValueError):
            lattice.apply_direct(_sin_x1(self.grid))

    def test_paths_agree_on_resolved_mode(self):
        """ε 足够大时两条路径几乎一致"""
        assert quadrature_discrepancy(_sin_x1(self.grid), 0.8) < 1e-6


class TestConvolutionBounds:
    """卷积不等式核验测试"""

    def test_constant_field_ratios_zero(self):
        grid = GridSpec(16)
        c = PhysicalField(grid, np.ones((3,) + grid.shape))
        report = verify_convolution_bounds(c, 0.5, 2.0, [1.0, 0.8])
        assert report['bounds']['conv2']['max'] == 0.0
        assert report['all_unit_ok']

    def test_single_mode_unit_bounds(self):
        """sin(x1), β=1: ||f - f_ε||/ε 不超过 ||∇f||"""
        grid = GridSpec(16)
        f = _sin_x1(grid)
        report = verify_convolution_bounds(f, 1.0, 2.0, [1.0, 0.8])
        assert report['bounds']['conv2']['max'] <= 1.05
        assert report['bounds']['conv5']['max'] <= 1.05
        assert report['all_unit_ok'], f"unit bounds violated: {report['bounds']}"

    def test_synthetic_field_conv2(self):
        grid = GridSpec(32)
        u = make_synthetic_field(grid, SyntheticFieldSpec(target_beta=0.4, seed=1))
        report = verify_convolution_bounds(u, 0.4, 2.0, [0.8, 0.6, 0.5])
        assert report['bounds']['conv2']['max'] <= 1.05
        assert report['all_unit_ok'], f"unit bounds violated: {report['bounds']}"

    @pytest.mark.parametrize('beta', [0.4, 0.6, 0.8])
    def test_synthetic_field_measured_constants(self, beta):
        """
        64³ 合成场: conv3 常数在 ε 上稳定;
        conv6/conv7 只保证不超过 Young 常数 ||∇ρ||_1 与 ||ρ||_{4/3}
        """
        grid = GridSpec(64)
        u = make_synthetic_field(grid, SyntheticFieldSpec(target_beta=beta, seed=0))
        report = verify_convolution_bounds(u, beta, 2.0, [0.8, 0.6, 0.5, 0.4])
        bounds = report['bounds']
        assert report['r'] == 4.0
        assert report['all_unit_ok'], f"unit bounds violated: {bounds}"
        assert bounds['conv3']['stable'], f"conv3 stability {bounds['conv3']['stability']:.3f}"

        kernel = default_kernel()
        gradient_mass, _ = integrate.quad(lambda r: 8 * math.pi * r * float(kernel(r)), 0, 1)
        power_mass, _ = integrate.quad(lambda r: 4 * math.pi * r * r * float(kernel(r)) ** (4 / 3), 0, 1)
        young = {'conv6': gradient_mass, 'conv7': power_mass ** 0.75}
        for name, constant in young.items():
            ratios = bounds[name]['ratios']
            assert all(0 < c < math.inf for c in ratios)
            assert bounds[name]['max'] <= 1.05 * constant
            assert bounds[name]['stability'] >= 1.0

    def test_empty_eps_list_rejected(self):
        grid = GridSpec(16)
        with pytest.raises(ValueError):
            verify_convolution_bounds(_sin_x1(grid), 0.5, 2.0, [])


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
